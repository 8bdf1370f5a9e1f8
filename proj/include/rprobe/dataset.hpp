#pragma once

// Retrieval corpora and probe instances.
//
// A raw corpus record holds one query with its positive and hard-negative
// passages. Probe instances fix the negative count at exactly four; probe
// variants pick N-1 of those negatives plus the positive at a random slot.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace rprobe {

inline constexpr std::size_t kHardNegativesPerInstance = 4;
inline constexpr int kMinProbePassages = 2;
inline constexpr int kMaxProbePassages = 5;

struct RawQueryRecord {
    std::string query_text;
    std::vector<std::string> positive_passages;
    std::vector<std::string> hard_negative_passages;
    std::string source_id;
};

struct ProbeInstance {
    std::string instance_id;
    std::string query_text;
    std::string positive_passage;
    std::vector<std::string> hard_negatives;  // always 4, duplicates allowed

    bool operator==(const ProbeInstance&) const = default;
};

struct ProbeVariant {
    std::string instance_id;
    std::string query_text;
    std::vector<std::string> passages;
    int label = 0;
    int n = 0;

    bool operator==(const ProbeVariant&) const = default;
};

struct DatasetSplit {
    std::vector<ProbeInstance> train;
    std::vector<ProbeInstance> validation;
    std::vector<ProbeInstance> test;
    std::uint64_t seed = 0;
    double ratio = 0.0;
};

enum class CorpusFormat { dpr_json, tsv_triples };

CorpusFormat parse_corpus_format(const std::string& name);

// DPR JSON: a top-level array (or a stream / JSONL) of objects with
// "question", "positive_ctxs" and "hard_negative_ctxs". TSV: one
// query<TAB>positive[<TAB>negative] line per triple; consecutive lines
// sharing query and positive fold into one record.
std::vector<RawQueryRecord> parse_retrieval_corpus(const std::filesystem::path& path,
                                                   CorpusFormat format);

struct InstanceBuildResult {
    std::vector<ProbeInstance> instances;
    std::size_t removed_count = 0;
};

// Samples exactly four hard negatives per record: without replacement when
// at least four exist, with replacement when one to three exist. Records
// with no usable negative are dropped and counted. Negatives identical to
// the positive are not usable.
InstanceBuildResult build_probe_instances(const std::vector<RawQueryRecord>& records,
                                          std::uint64_t seed);

DatasetSplit split_train_validation(const std::vector<ProbeInstance>& instances, double ratio,
                                    std::uint64_t seed);

ProbeVariant derive_probe_variant(const ProbeInstance& instance, int n, std::uint64_t seed);

nlohmann::json to_json(const ProbeInstance& instance);
ProbeInstance instance_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ProbeVariant& variant);
ProbeVariant variant_from_json(const nlohmann::json& j);

std::string trim(std::string_view s);

}  // namespace rprobe
