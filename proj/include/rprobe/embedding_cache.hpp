#pragma once

// On-disk store of pooled per-layer embeddings for one (model, pooling) pair.
//
// <dir>/embeddings.rpec, little-endian:
//   "RPEC1" | str model_id | str pooling | u32 L | u32 d | u32 layer_id[L]
//   then records: u32 payload_bytes | str text_hash | f32[L*d]
// where str = u32 length + bytes. A record whose payload is cut short by an
// interrupted write is ignored on read and overwritten by the next append.
// <dir>/manifest.json carries the same metadata in readable form.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace rprobe {

inline constexpr std::string_view kEmbeddingCacheMagic = "RPEC1";
inline constexpr const char* kEmbeddingCacheFile = "embeddings.rpec";
inline constexpr const char* kEmbeddingManifestFile = "manifest.json";

struct EmbeddingCacheHeader {
    std::string model_id;
    std::string pooling;
    std::vector<std::uint32_t> layer_ids;
    std::uint32_t dim = 0;

    bool operator==(const EmbeddingCacheHeader&) const = default;
};

class EmbeddingCache {
public:
    // Opens an existing cache for appending after validating its header, or
    // creates a new one. A header mismatch (other model, other pooling, other
    // layers) is an ArgumentError: caches never mix configurations.
    static EmbeddingCache open_for_write(const std::filesystem::path& dir, const EmbeddingCacheHeader& header);

    static EmbeddingCache open_for_read(const std::filesystem::path& dir);

    const EmbeddingCacheHeader& header() const { return header_; }
    std::size_t num_layers() const { return header_.layer_ids.size(); }
    std::size_t dim() const { return header_.dim; }
    std::size_t size() const { return records_.size(); }

    bool contains(const std::string& hash) const { return records_.count(hash) != 0; }

    // L*d floats, layer-major. Throws CacheMissError naming the hash.
    const std::vector<float>& get(const std::string& hash) const;

    // Position of a stored layer id, or npos.
    std::size_t layer_slot(std::uint32_t layer_id) const;

    void append(const std::string& hash, std::span<const float> values);

    void write_manifest(const nlohmann::json& extra = {}) const;

    const std::filesystem::path& dir() const { return dir_; }

private:
    EmbeddingCache() = default;
    void load_records(std::ifstream& in, std::uint64_t data_start);

    std::filesystem::path dir_;
    EmbeddingCacheHeader header_;
    std::unordered_map<std::string, std::vector<float>> records_;
    std::vector<std::string> order_;
    std::uint64_t valid_end_ = 0;
    std::unique_ptr<std::ofstream> writer_;
};

}  // namespace rprobe
