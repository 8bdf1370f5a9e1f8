#include "rprobe/dataset.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <unordered_set>

#include "rprobe/error.hpp"
#include "rprobe/rng.hpp"

namespace rprobe {

using nlohmann::json;

std::string trim(std::string_view s) {
    const auto* ws = " \t\r\n\f\v";
    auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(ws);
    return std::string(s.substr(b, e - b + 1));
}

CorpusFormat parse_corpus_format(const std::string& name) {
    if (name == "dpr_json") return CorpusFormat::dpr_json;
    if (name == "tsv_triples") return CorpusFormat::tsv_triples;
    throw ArgumentError("unknown corpus format '" + name + "' (expected dpr_json or tsv_triples)");
}

namespace {

// Splits a JSON array (or a stream of concatenated objects) into the text of
// its top-level objects without materializing the whole document.
class ObjectStream {
public:
    explicit ObjectStream(std::istream& in) : in_(in) {}

    bool next(std::string& out) {
        out.clear();
        int depth = 0;
        bool in_string = false;
        bool escape = false;
        char c;
        while (in_.get(c)) {
            if (depth == 0) {
                if (c == '{') {
                    depth = 1;
                    out += c;
                } else if (c == '[' && !array_opened_) {
                    array_opened_ = true;
                } else if (c == ']' || c == ',' || std::isspace(static_cast<unsigned char>(c))) {
                    continue;
                } else {
                    throw ParseError(index_, "", std::string("unexpected character '") + c +
                                                     "' between records near record " +
                                                     std::to_string(index_));
                }
                continue;
            }
            out += c;
            if (in_string) {
                if (escape) {
                    escape = false;
                } else if (c == '\\') {
                    escape = true;
                } else if (c == '"') {
                    in_string = false;
                }
            } else if (c == '"') {
                in_string = true;
            } else if (c == '{' || c == '[') {
                ++depth;
            } else if (c == '}' || c == ']') {
                if (--depth == 0) {
                    ++index_;
                    return true;
                }
            }
        }
        if (depth != 0) throw ParseError(index_, "", "truncated record " + std::to_string(index_));
        return false;
    }

private:
    std::istream& in_;
    std::size_t index_ = 0;
    bool array_opened_ = false;
};

std::string context_text(const json& ctx, std::size_t record, const std::string& field, std::size_t k) {
    if (ctx.is_string()) return trim(ctx.get<std::string>());
    const std::string name = field + "[" + std::to_string(k) + "].text";
    if (!ctx.is_object() || !ctx.contains("text") || !ctx["text"].is_string()) {
        throw ParseError(record, name,
                         "record " + std::to_string(record) + ": missing field '" + name + "'");
    }
    return trim(ctx["text"].get<std::string>());
}

std::string record_id(const json& obj, std::size_t index) {
    for (const char* key : {"id", "qid", "query_id"}) {
        if (obj.contains(key)) {
            const auto& v = obj[key];
            if (v.is_string()) return v.get<std::string>();
            if (v.is_number_integer()) return std::to_string(v.get<long long>());
        }
    }
    return std::to_string(index);
}

RawQueryRecord record_from_dpr(const json& obj, std::size_t index) {
    auto fail = [&](const std::string& field) {
        throw ParseError(index, field,
                         "record " + std::to_string(index) + ": missing field '" + field + "'");
    };
    if (!obj.is_object()) fail("question");
    RawQueryRecord rec;
    if (!obj.contains("question") || !obj["question"].is_string()) fail("question");
    rec.query_text = trim(obj["question"].get<std::string>());
    if (rec.query_text.empty()) {
        throw ParseError(index, "question",
                         "record " + std::to_string(index) + ": field 'question' is empty");
    }
    if (!obj.contains("positive_ctxs") || !obj["positive_ctxs"].is_array()) fail("positive_ctxs");
    const auto& pos = obj["positive_ctxs"];
    for (std::size_t k = 0; k < pos.size(); ++k) {
        rec.positive_passages.push_back(context_text(pos[k], index, "positive_ctxs", k));
    }
    if (rec.positive_passages.empty()) {
        throw ParseError(index, "positive_ctxs",
                         "record " + std::to_string(index) + ": field 'positive_ctxs' is empty");
    }
    if (obj.contains("hard_negative_ctxs")) {
        const auto& neg = obj["hard_negative_ctxs"];
        if (!neg.is_array()) fail("hard_negative_ctxs");
        for (std::size_t k = 0; k < neg.size(); ++k) {
            rec.hard_negative_passages.push_back(context_text(neg[k], index, "hard_negative_ctxs", k));
        }
    }
    rec.source_id = record_id(obj, index);
    return rec;
}

std::vector<RawQueryRecord> parse_dpr(std::istream& in) {
    std::vector<RawQueryRecord> out;
    ObjectStream stream(in);
    std::string text;
    std::size_t index = 0;
    while (stream.next(text)) {
        json obj;
        try {
            obj = json::parse(text);
        } catch (const json::parse_error& e) {
            throw ParseError(index, "", "record " + std::to_string(index) + ": " + e.what());
        }
        out.push_back(record_from_dpr(obj, index));
        ++index;
    }
    return out;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto tab = line.find('\t', start);
        out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
    }
    return out;
}

std::vector<RawQueryRecord> parse_tsv(std::istream& in) {
    std::vector<RawQueryRecord> out;
    std::string line;
    std::size_t index = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) {
            ++index;
            continue;
        }
        auto fields = split_tabs(line);
        std::string query = trim(fields[0]);
        if (query.empty()) {
            throw ParseError(index, "query", "record " + std::to_string(index) + ": missing field 'query'");
        }
        if (fields.size() < 2 || trim(fields[1]).empty()) {
            throw ParseError(index, "positive",
                             "record " + std::to_string(index) + ": missing field 'positive'");
        }
        std::string positive = trim(fields[1]);
        if (out.empty() || out.back().query_text != query || out.back().positive_passages[0] != positive) {
            RawQueryRecord rec;
            rec.query_text = query;
            rec.positive_passages.push_back(positive);
            rec.source_id = std::to_string(out.size());
            out.push_back(std::move(rec));
        }
        for (std::size_t k = 2; k < fields.size(); ++k) {
            std::string neg = trim(fields[k]);
            if (!neg.empty()) out.back().hard_negative_passages.push_back(std::move(neg));
        }
        ++index;
    }
    return out;
}

}  // namespace

std::vector<RawQueryRecord> parse_retrieval_corpus(const std::filesystem::path& path,
                                                   CorpusFormat format) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArgumentError("cannot open corpus " + path.string());
    auto records = format == CorpusFormat::dpr_json ? parse_dpr(in) : parse_tsv(in);
    if (records.empty()) throw EmptyCorpusError("corpus " + path.string() + " contains no records");
    return records;
}

InstanceBuildResult build_probe_instances(const std::vector<RawQueryRecord>& records,
                                          std::uint64_t seed) {
    InstanceBuildResult result;
    std::unordered_set<std::string> seen_ids;
    for (std::size_t idx = 0; idx < records.size(); ++idx) {
        const auto& rec = records[idx];
        if (rec.positive_passages.empty()) {
            throw ArgumentError("record " + std::to_string(idx) + " has no positive passage");
        }
        const std::string& positive = rec.positive_passages.front();
        std::vector<std::string> pool;
        for (const auto& neg : rec.hard_negative_passages) {
            if (neg != positive) pool.push_back(neg);
        }
        if (pool.empty()) {
            ++result.removed_count;
            continue;
        }

        std::string id = rec.source_id.empty() ? std::to_string(idx) : rec.source_id;
        if (!seen_ids.insert(id).second) {
            id += "#" + std::to_string(idx);
            seen_ids.insert(id);
        }

        Rng rng(derive_seed(seed, id, idx));
        ProbeInstance inst;
        inst.instance_id = id;
        inst.query_text = rec.query_text;
        inst.positive_passage = positive;
        if (pool.size() >= kHardNegativesPerInstance) {
            // Partial Fisher-Yates: the first four slots form a uniform sample.
            for (std::size_t i = 0; i < kHardNegativesPerInstance; ++i) {
                std::size_t j = i + static_cast<std::size_t>(uniform_index(rng, pool.size() - i));
                std::swap(pool[i], pool[j]);
            }
            pool.resize(kHardNegativesPerInstance);
            inst.hard_negatives = std::move(pool);
        } else {
            for (std::size_t i = 0; i < kHardNegativesPerInstance; ++i) {
                inst.hard_negatives.push_back(pool[uniform_index(rng, pool.size())]);
            }
        }
        result.instances.push_back(std::move(inst));
    }
    return result;
}

DatasetSplit split_train_validation(const std::vector<ProbeInstance>& instances, double ratio,
                                    std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) {
        throw ArgumentError("train-validation ratio must lie in (0, 1), got " + std::to_string(ratio));
    }
    std::vector<std::size_t> order(instances.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, "train-validation-split"));
    shuffle(std::span<std::size_t>(order), rng);

    const auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(instances.size())));
    DatasetSplit split;
    split.seed = seed;
    split.ratio = ratio;
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i < n_train ? split.train : split.validation).push_back(instances[order[i]]);
    }
    return split;
}

ProbeVariant derive_probe_variant(const ProbeInstance& instance, int n, std::uint64_t seed) {
    if (n < kMinProbePassages || n > kMaxProbePassages) {
        throw ArgumentError("probe passage count N must be in {2,3,4,5}, got " + std::to_string(n));
    }
    if (instance.hard_negatives.size() != kHardNegativesPerInstance) {
        throw ArgumentError("instance " + instance.instance_id + " does not hold exactly 4 hard negatives");
    }
    Rng rng(derive_seed(seed, instance.instance_id, static_cast<std::uint64_t>(n)));
    std::vector<std::string> negatives = instance.hard_negatives;
    shuffle(std::span<std::string>(negatives), rng);
    negatives.resize(static_cast<std::size_t>(n - 1));

    const auto label = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(n)));
    ProbeVariant v;
    v.instance_id = instance.instance_id;
    v.query_text = instance.query_text;
    v.n = n;
    v.label = label;
    v.passages = std::move(negatives);
    v.passages.insert(v.passages.begin() + label, instance.positive_passage);
    return v;
}

json to_json(const ProbeInstance& instance) {
    return json{{"instance_id", instance.instance_id},
                {"query", instance.query_text},
                {"positive", instance.positive_passage},
                {"negatives", instance.hard_negatives}};
}

ProbeInstance instance_from_json(const json& j) {
    ProbeInstance inst;
    try {
        inst.instance_id = j.at("instance_id").get<std::string>();
        inst.query_text = j.at("query").get<std::string>();
        inst.positive_passage = j.at("positive").get<std::string>();
        inst.hard_negatives = j.at("negatives").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw ParseError(0, "", std::string("malformed probe instance: ") + e.what());
    }
    if (inst.hard_negatives.size() != kHardNegativesPerInstance) {
        throw ParseError(0, "negatives", "instance " + inst.instance_id + " does not hold 4 negatives");
    }
    return inst;
}

json to_json(const ProbeVariant& variant) {
    return json{{"instance_id", variant.instance_id},
                {"N", variant.n},
                {"query", variant.query_text},
                {"passages", variant.passages},
                {"label", variant.label}};
}

ProbeVariant variant_from_json(const json& j) {
    ProbeVariant v;
    try {
        v.instance_id = j.at("instance_id").get<std::string>();
        v.n = j.at("N").get<int>();
        v.query_text = j.at("query").get<std::string>();
        v.passages = j.at("passages").get<std::vector<std::string>>();
        v.label = j.at("label").get<int>();
    } catch (const json::exception& e) {
        throw ParseError(0, "", std::string("malformed probe variant: ") + e.what());
    }
    if (static_cast<int>(v.passages.size()) != v.n || v.label < 0 || v.label >= v.n) {
        throw ParseError(0, "label", "variant " + v.instance_id + " is inconsistent (N/label/passages)");
    }
    return v;
}

}  // namespace rprobe
