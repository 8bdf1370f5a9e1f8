#include "rprobe/embedding_cache.hpp"

#include <sstream>

#include "rprobe/error.hpp"
#include "rprobe/io.hpp"

namespace rprobe {

namespace fs = std::filesystem;

namespace {

std::string encode_header(const EmbeddingCacheHeader& h) {
    std::ostringstream out(std::ios::binary);
    out.write(kEmbeddingCacheMagic.data(), kEmbeddingCacheMagic.size());
    io::put_string(out, h.model_id);
    io::put_string(out, h.pooling);
    io::put_u32(out, static_cast<std::uint32_t>(h.layer_ids.size()));
    io::put_u32(out, h.dim);
    for (auto id : h.layer_ids) io::put_u32(out, id);
    return out.str();
}

bool decode_header(std::istream& in, EmbeddingCacheHeader& h) {
    std::string magic(kEmbeddingCacheMagic.size(), '\0');
    if (!in.read(magic.data(), static_cast<std::streamsize>(magic.size())) || magic != kEmbeddingCacheMagic) {
        return false;
    }
    std::uint32_t layers = 0;
    if (!io::get_string(in, h.model_id) || !io::get_string(in, h.pooling) || !io::get_u32(in, layers) ||
        !io::get_u32(in, h.dim) || layers > 4096) {
        return false;
    }
    h.layer_ids.resize(layers);
    for (auto& id : h.layer_ids) {
        if (!io::get_u32(in, id)) return false;
    }
    return true;
}

}  // namespace

void EmbeddingCache::load_records(std::ifstream& in, std::uint64_t data_start) {
    const std::size_t floats = header_.layer_ids.size() * header_.dim;
    valid_end_ = data_start;
    while (true) {
        std::uint32_t payload = 0;
        if (!io::get_u32(in, payload)) break;
        std::string hash;
        std::vector<float> values(floats);
        if (!io::get_string(in, hash, 1024) || payload != 4 + hash.size() + floats * sizeof(float) ||
            !io::get_f32s(in, values.data(), floats)) {
            break;  // torn tail record
        }
        if (records_.emplace(hash, std::move(values)).second) order_.push_back(hash);
        valid_end_ = static_cast<std::uint64_t>(in.tellg());
    }
}

EmbeddingCache EmbeddingCache::open_for_read(const fs::path& dir) {
    EmbeddingCache cache;
    cache.dir_ = dir;
    std::ifstream in(dir / kEmbeddingCacheFile, std::ios::binary);
    if (!in) throw ArgumentError("no embedding cache at " + dir.string());
    if (!decode_header(in, cache.header_)) {
        throw StorageError("embedding cache " + (dir / kEmbeddingCacheFile).string() + " has a bad header");
    }
    cache.load_records(in, static_cast<std::uint64_t>(in.tellg()));
    return cache;
}

EmbeddingCache EmbeddingCache::open_for_write(const fs::path& dir, const EmbeddingCacheHeader& header) {
    fs::create_directories(dir);
    const fs::path file = dir / kEmbeddingCacheFile;
    EmbeddingCache cache;
    if (fs::exists(file)) {
        cache = open_for_read(dir);
        if (!(cache.header_ == header)) {
            throw ArgumentError("embedding cache at " + dir.string() + " holds model '" +
                                cache.header_.model_id + "' / pooling '" + cache.header_.pooling +
                                "' with a different layout; refusing to mix configurations");
        }
        fs::resize_file(file, cache.valid_end_);
    } else {
        cache.dir_ = dir;
        cache.header_ = header;
        std::ofstream out(file, std::ios::binary);
        const std::string head = encode_header(header);
        out.write(head.data(), static_cast<std::streamsize>(head.size()));
        if (!out.flush()) throw StorageError("cannot write embedding cache header at " + file.string());
        cache.valid_end_ = head.size();
    }
    cache.writer_ = std::make_unique<std::ofstream>(file, std::ios::binary | std::ios::app);
    if (!*cache.writer_) throw StorageError("cannot open " + file.string() + " for appending");
    return cache;
}

const std::vector<float>& EmbeddingCache::get(const std::string& hash) const {
    auto it = records_.find(hash);
    if (it == records_.end()) {
        throw CacheMissError(hash, "embedding cache " + dir_.string() + " (model '" + header_.model_id +
                                       "') has no entry for text hash " + hash);
    }
    return it->second;
}

std::size_t EmbeddingCache::layer_slot(std::uint32_t layer_id) const {
    for (std::size_t i = 0; i < header_.layer_ids.size(); ++i) {
        if (header_.layer_ids[i] == layer_id) return i;
    }
    return static_cast<std::size_t>(-1);
}

void EmbeddingCache::append(const std::string& hash, std::span<const float> values) {
    if (!writer_) throw StorageError("embedding cache opened read-only");
    if (values.size() != header_.layer_ids.size() * header_.dim) {
        throw ArgumentError("embedding record has " + std::to_string(values.size()) + " floats, expected " +
                            std::to_string(header_.layer_ids.size() * header_.dim));
    }
    if (contains(hash)) return;
    std::ostringstream rec(std::ios::binary);
    io::put_u32(rec, static_cast<std::uint32_t>(4 + hash.size() + values.size() * sizeof(float)));
    io::put_string(rec, hash);
    io::put_f32s(rec, values.data(), values.size());
    const std::string bytes = rec.str();
    writer_->write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    writer_->flush();
    if (!*writer_) throw StorageError("write failed while appending to " + (dir_ / kEmbeddingCacheFile).string());
    valid_end_ += bytes.size();
    records_.emplace(hash, std::vector<float>(values.begin(), values.end()));
    order_.push_back(hash);
}

void EmbeddingCache::write_manifest(const nlohmann::json& extra) const {
    nlohmann::json m = {{"format", "RPEC1"},
                        {"model_id", header_.model_id},
                        {"pooling", header_.pooling},
                        {"layers", header_.layer_ids},
                        {"dim", header_.dim},
                        {"dtype", "float32-le"},
                        {"records", records_.size()}};
    if (extra.is_object()) m.update(extra);
    io::write_file_atomic(dir_ / kEmbeddingManifestFile, m.dump(2) + "\n");
}

}  // namespace rprobe
