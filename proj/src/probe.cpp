#include "rprobe/probe.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "rprobe/embedding_cache.hpp"
#include "rprobe/encoder.hpp"
#include "rprobe/error.hpp"
#include "rprobe/io.hpp"
#include "rprobe/rng.hpp"
#include "rprobe/simd.hpp"

namespace rprobe {

namespace fs = std::filesystem;

ProbeFeatures assemble_features(std::span<const float> query, const std::vector<std::span<const float>>& passages,
                                int label, int layer) {
    const std::size_t d = query.size();
    const int n = static_cast<int>(passages.size());
    if (d == 0) throw ArgumentError("query embedding is empty");
    if (label < 0 || label >= n) {
        throw ArgumentError("label " + std::to_string(label) + " outside [0, " + std::to_string(n) + ")");
    }
    ProbeFeatures f;
    f.label = label;
    f.layer = layer;
    f.n = n;
    f.z.reserve(static_cast<std::size_t>(n + 1) * d);
    f.z.insert(f.z.end(), query.begin(), query.end());
    for (std::size_t i = 0; i < passages.size(); ++i) {
        if (passages[i].size() != d) {
            throw ArgumentError("passage " + std::to_string(i) + " has dimension " +
                                std::to_string(passages[i].size()) + ", expected " + std::to_string(d));
        }
        f.z.insert(f.z.end(), passages[i].begin(), passages[i].end());
    }
    return f;
}

void FeatureSet::add(const ProbeFeatures& f) {
    if (f.n != n_ || f.z.size() != feature_width()) {
        throw ArgumentError("feature row does not match the set's N and dimension");
    }
    z_.insert(z_.end(), f.z.begin(), f.z.end());
    labels_.push_back(f.label);
}

void FeatureSet::add(std::span<const float> query, const std::vector<std::span<const float>>& passages, int label) {
    if (static_cast<int>(passages.size()) != n_ || query.size() != dim_) {
        throw ArgumentError("feature row does not match the set's N and dimension");
    }
    if (label < 0 || label >= n_) throw ArgumentError("label outside [0, N)");
    z_.insert(z_.end(), query.begin(), query.end());
    for (const auto& p : passages) {
        if (p.size() != dim_) throw ArgumentError("passage dimension mismatch");
        z_.insert(z_.end(), p.begin(), p.end());
    }
    labels_.push_back(label);
}

std::vector<float> probe_logits(const LinearProbe& probe, std::span<const float> z) {
    if (z.size() != probe.feature_width()) {
        throw ArgumentError("feature width " + std::to_string(z.size()) + " does not match probe width " +
                            std::to_string(probe.feature_width()));
    }
    std::vector<float> u(static_cast<std::size_t>(probe.n));
    simd::kernels().gemv_f32(probe.weight.data(), u.size(), probe.feature_width(), z.data(), z.size(), u.data());
    for (std::size_t j = 0; j < u.size(); ++j) u[j] += probe.bias[j];
    return u;
}

int probe_predict(const LinearProbe& probe, std::span<const float> z) {
    const auto u = probe_logits(probe, z);
    return static_cast<int>(std::max_element(u.begin(), u.end()) - u.begin());
}

namespace {

void check_compatible(const LinearProbe& probe, const FeatureSet& data) {
    if (data.empty()) return;
    if (data.n() != probe.n || data.dim() != probe.dim || data.layer() != probe.layer) {
        throw ArgumentError("probe (N=" + std::to_string(probe.n) + ", d=" + std::to_string(probe.dim) +
                            ", layer=" + std::to_string(probe.layer) + ") does not match features (N=" +
                            std::to_string(data.n()) + ", d=" + std::to_string(data.dim()) +
                            ", layer=" + std::to_string(data.layer()) + ")");
    }
}

}  // namespace

double probe_accuracy(const LinearProbe& probe, const FeatureSet& data) {
    if (data.empty()) return std::nan("");
    check_compatible(probe, data);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data.size(); ++i) hits += probe_predict(probe, data.row(i)) == data.label(i);
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

LinearProbe train_probe(const FeatureSet& train, const FeatureSet& validation, const Hyperparameters& hp) {
    if (train.empty()) throw ArgumentError("training set is empty");
    if (!validation.empty() &&
        (validation.n() != train.n() || validation.dim() != train.dim() || validation.layer() != train.layer())) {
        throw ArgumentError("training and validation features disagree on N, d or layer");
    }
    if (hp.batch_size == 0 || hp.max_epochs < 1 || !(hp.learning_rate > 0.0)) {
        throw ArgumentError("invalid probe hyperparameters");
    }

    const auto& k = simd::kernels();
    const int n = train.n();
    const std::size_t width = train.feature_width();
    const std::size_t nw = static_cast<std::size_t>(n) * width;

    LinearProbe probe;
    probe.n = n;
    probe.dim = train.dim();
    probe.layer = train.layer();
    probe.weight.resize(nw);
    probe.bias.assign(static_cast<std::size_t>(n), 0.0f);
    probe.meta.seed = hp.seed;
    probe.meta.learning_rate = hp.learning_rate;
    probe.meta.batch_size = hp.batch_size;

    Rng init_rng(derive_seed(hp.seed, "probe-init", static_cast<std::uint64_t>(n) * 4096 + probe.layer));
    const double bound = 1.0 / std::sqrt(static_cast<double>(width));
    for (auto& w : probe.weight) w = static_cast<float>(uniform_real(init_rng, -bound, bound));

    std::vector<float> m_w(nw, 0.0f), v_w(nw, 0.0f), g_w(nw);
    std::vector<float> m_b(n, 0.0f), v_b(n, 0.0f), g_b(n);
    std::vector<float> logits(n);
    std::vector<double> prob(n);

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(hp.seed, "probe-shuffle", static_cast<std::uint64_t>(n) * 4096 + probe.layer));

    LinearProbe best = probe;
    double best_acc = -1.0;
    long long step = 0;

    auto adam = [&](float* p, float* m, float* v, const float* g, std::size_t count) {
        const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(step));
        const double step_size = hp.learning_rate / bc1;
        const double sqrt_bc2 = std::sqrt(bc2);
        for (std::size_t i = 0; i < count; ++i) {
            m[i] = static_cast<float>(hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i]);
            v[i] = static_cast<float>(hp.beta2 * v[i] + (1.0 - hp.beta2) * static_cast<double>(g[i]) * g[i]);
            const double denom = std::sqrt(static_cast<double>(v[i])) / sqrt_bc2 + hp.epsilon;
            p[i] = static_cast<float>(p[i] - step_size * m[i] / denom);
        }
    };

    for (int epoch = 1; epoch <= hp.max_epochs; ++epoch) {
        shuffle(std::span<std::size_t>(order), shuffle_rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += hp.batch_size) {
            const std::size_t end = std::min(order.size(), start + hp.batch_size);
            std::fill(g_w.begin(), g_w.end(), 0.0f);
            std::fill(g_b.begin(), g_b.end(), 0.0f);
            const float inv_b = 1.0f / static_cast<float>(end - start);
            for (std::size_t idx = start; idx < end; ++idx) {
                const auto z = train.row(order[idx]);
                const int y = train.label(order[idx]);
                k.gemv_f32(probe.weight.data(), n, width, z.data(), width, logits.data());
                double mx = -INFINITY;
                for (int j = 0; j < n; ++j) mx = std::max(mx, static_cast<double>(logits[j] + probe.bias[j]));
                double total = 0.0;
                for (int j = 0; j < n; ++j) {
                    prob[j] = std::exp(logits[j] + probe.bias[j] - mx);
                    total += prob[j];
                }
                loss_sum += -(logits[y] + probe.bias[y] - mx - std::log(total));
                for (int j = 0; j < n; ++j) {
                    const float g = static_cast<float>(prob[j] / total - (j == y ? 1.0 : 0.0)) * inv_b;
                    g_b[j] += g;
                    k.axpy_f32(g, z.data(), g_w.data() + static_cast<std::size_t>(j) * width, width);
                }
            }
            ++step;
            adam(probe.weight.data(), m_w.data(), v_w.data(), g_w.data(), nw);
            adam(probe.bias.data(), m_b.data(), v_b.data(), g_b.data(), static_cast<std::size_t>(n));
        }
        const double train_loss = loss_sum / static_cast<double>(order.size());
        if (!std::isfinite(train_loss)) {
            throw TrainingError(epoch, "probe training diverged at epoch " + std::to_string(epoch) +
                                           " (non-finite loss)");
        }
        probe.meta.epochs_run = epoch;
        const double val_acc = validation.empty() ? std::nan("") : probe_accuracy(probe, validation);
        probe.meta.history.push_back({epoch, train_loss, val_acc});
        if (!validation.empty() && val_acc > best_acc) {
            best_acc = val_acc;
            best.weight = probe.weight;
            best.bias = probe.bias;
            best.meta.best_epoch = epoch;
        }
    }

    if (validation.empty()) {
        probe.meta.validation_fallback = true;
        probe.meta.best_epoch = probe.meta.epochs_run;
        probe.meta.best_val_accuracy = std::nan("");
        return probe;
    }
    const int best_epoch = best.meta.best_epoch;
    best.meta = probe.meta;
    best.meta.best_epoch = best_epoch;
    best.meta.best_val_accuracy = best_acc;
    return best;
}

ProbeResult evaluate_probe(const LinearProbe& probe, const FeatureSet& test) {
    check_compatible(probe, test);
    ProbeResult r;
    r.n = probe.n;
    r.layer = probe.layer;
    r.correct.resize(test.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        r.correct[i] = probe_predict(probe, test.row(i)) == test.label(i) ? 1 : 0;
        hits += r.correct[i];
    }
    r.accuracy = test.empty() ? std::nan("") : static_cast<double>(hits) / static_cast<double>(test.size());
    return r;
}

namespace {
constexpr std::string_view kProbeMagic = "RPLP1";
constexpr std::string_view kFlagsMagic = "RPFL1";
}  // namespace

void save_probe(const LinearProbe& probe, const fs::path& path) {
    std::ostringstream out(std::ios::binary);
    out.write(kProbeMagic.data(), kProbeMagic.size());
    io::put_u32(out, static_cast<std::uint32_t>(probe.n));
    io::put_u64(out, probe.dim);
    io::put_u32(out, static_cast<std::uint32_t>(probe.layer));
    nlohmann::json meta = {{"seed", probe.meta.seed},
                           {"learning_rate", probe.meta.learning_rate},
                           {"batch_size", probe.meta.batch_size},
                           {"epochs_run", probe.meta.epochs_run},
                           {"best_epoch", probe.meta.best_epoch},
                           {"best_val_accuracy", io::format_double(probe.meta.best_val_accuracy)},
                           {"validation_fallback", probe.meta.validation_fallback}};
    io::put_string(out, meta.dump());
    io::put_f32s(out, probe.weight.data(), probe.weight.size());
    io::put_f32s(out, probe.bias.data(), probe.bias.size());
    io::write_file_atomic(path, out.str());
}

LinearProbe load_probe(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArgumentError("cannot open probe " + path.string());
    std::string magic(kProbeMagic.size(), '\0');
    in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
    LinearProbe p;
    std::uint32_t n = 0, layer = 0;
    std::uint64_t dim = 0;
    std::string meta;
    if (magic != kProbeMagic || !io::get_u32(in, n) || !io::get_u64(in, dim) || !io::get_u32(in, layer) ||
        !io::get_string(in, meta) || n < 1 || n > 64) {
        throw StorageError("bad probe file " + path.string());
    }
    p.n = static_cast<int>(n);
    p.dim = static_cast<std::size_t>(dim);
    p.layer = static_cast<int>(layer);
    auto j = nlohmann::json::parse(meta);
    p.meta.seed = j.at("seed").get<std::uint64_t>();
    p.meta.learning_rate = j.at("learning_rate").get<double>();
    p.meta.batch_size = j.at("batch_size").get<std::size_t>();
    p.meta.epochs_run = j.at("epochs_run").get<int>();
    p.meta.best_epoch = j.at("best_epoch").get<int>();
    p.meta.best_val_accuracy = std::stod(j.at("best_val_accuracy").get<std::string>());
    p.meta.validation_fallback = j.at("validation_fallback").get<bool>();
    p.weight.resize(static_cast<std::size_t>(p.n) * p.feature_width());
    p.bias.resize(static_cast<std::size_t>(p.n));
    if (!io::get_f32s(in, p.weight.data(), p.weight.size()) || !io::get_f32s(in, p.bias.data(), p.bias.size())) {
        throw StorageError("truncated probe file " + path.string());
    }
    return p;
}

FeatureSet gather_features(const EmbeddingCache& query_cache, const EmbeddingCache& passage_cache,
                           const std::vector<ProbeVariant>& variants, int n, std::uint32_t layer) {
    const std::size_t d = query_cache.dim();
    if (passage_cache.dim() != d) throw ArgumentError("query and passage caches have different dimensions");
    const std::size_t qs = query_cache.layer_slot(layer);
    const std::size_t ps = passage_cache.layer_slot(layer);
    if (qs == static_cast<std::size_t>(-1) || ps == static_cast<std::size_t>(-1)) {
        throw ArgumentError("layer " + std::to_string(layer) + " missing from an embedding cache");
    }
    FeatureSet set(n, d, static_cast<int>(layer));
    std::vector<std::span<const float>> passages(static_cast<std::size_t>(n));
    for (const auto& v : variants) {
        if (v.n != n) throw ArgumentError("variant " + v.instance_id + " has N=" + std::to_string(v.n));
        const auto& q = query_cache.get(text_hash(v.query_text));
        for (int i = 0; i < n; ++i) {
            const auto& p = passage_cache.get(text_hash(v.passages[static_cast<std::size_t>(i)]));
            passages[static_cast<std::size_t>(i)] = std::span<const float>(p.data() + ps * d, d);
        }
        set.add(std::span<const float>(q.data() + qs * d, d), passages, v.label);
    }
    return set;
}

std::uint64_t test_fingerprint(const std::vector<ProbeVariant>& test) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& v : test) {
        h = fnv1a64(v.instance_id, h);
        h = fnv1a64(std::string_view("\x1f", 1), h);
    }
    return h;
}

std::vector<SweepCell> run_probe_sweep(const EmbeddingCache& query_cache, const EmbeddingCache& passage_cache,
                                       const std::map<int, VariantSplits>& variants, const SweepOptions& options) {
    const auto& qh = query_cache.header();
    const auto& ph = passage_cache.header();
    const std::string model_id = !options.model_label.empty() ? options.model_label
                                 : qh.model_id == ph.model_id  ? qh.model_id
                                                               : qh.model_id + "+" + ph.model_id;
    const std::string pooling = qh.pooling == ph.pooling ? qh.pooling : qh.pooling + "+" + ph.pooling;

    std::vector<std::uint32_t> layers = options.layers;
    if (layers.empty()) {
        for (auto l : qh.layer_ids) {
            if (passage_cache.layer_slot(l) != static_cast<std::size_t>(-1)) layers.push_back(l);
        }
    }

    struct Task {
        int n;
        std::uint32_t layer;
    };
    std::vector<Task> tasks;
    for (int n : options.n_values) {
        if (!variants.count(n)) throw ArgumentError("no variants supplied for N=" + std::to_string(n));
        for (auto l : layers) tasks.push_back({n, l});
    }

    // Resolve every referenced text up front so a cache miss surfaces before training.
    for (const auto& [n, splits] : variants) {
        for (const auto* part : {&splits.train, &splits.validation, &splits.test}) {
            for (const auto& v : *part) {
                query_cache.get(text_hash(v.query_text));
                for (const auto& p : v.passages) passage_cache.get(text_hash(p));
            }
        }
    }

    std::vector<SweepCell> cells(tasks.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            try {
                const auto& task = tasks[i];
                const auto& splits = variants.at(task.n);
                FeatureSet train = gather_features(query_cache, passage_cache, splits.train, task.n, task.layer);
                FeatureSet val = gather_features(query_cache, passage_cache, splits.validation, task.n, task.layer);
                FeatureSet test = gather_features(query_cache, passage_cache, splits.test, task.n, task.layer);
                SweepCell& cell = cells[i];
                cell.probe = train_probe(train, val, options.hp);
                ProbeResult r = evaluate_probe(cell.probe, test);
                cell.model_id = model_id;
                cell.pooling = pooling;
                cell.dataset = options.dataset;
                cell.n = task.n;
                cell.layer = static_cast<int>(task.layer);
                cell.best_epoch = cell.probe.meta.best_epoch;
                cell.val_accuracy = cell.probe.meta.best_val_accuracy;
                cell.test_accuracy = r.accuracy;
                cell.n_test = test.size();
                cell.test_fingerprint = test_fingerprint(splits.test);
                cell.correct = std::move(r.correct);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next.store(tasks.size());
                return;
            }
        }
    };
    const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(tasks.size())));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);
    return cells;
}

void write_flags(const fs::path& path, const FlagSidecar& flags) {
    std::ostringstream out(std::ios::binary);
    out.write(kFlagsMagic.data(), kFlagsMagic.size());
    io::put_u32(out, static_cast<std::uint32_t>(flags.n));
    io::put_u32(out, static_cast<std::uint32_t>(flags.layer));
    io::put_u64(out, flags.fingerprint);
    io::put_u64(out, flags.correct.size());
    std::string bits((flags.correct.size() + 7) / 8, '\0');
    for (std::size_t i = 0; i < flags.correct.size(); ++i) {
        if (flags.correct[i]) bits[i / 8] = static_cast<char>(bits[i / 8] | (1 << (i % 8)));
    }
    out.write(bits.data(), static_cast<std::streamsize>(bits.size()));
    io::write_file_atomic(path, out.str());
}

FlagSidecar read_flags(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArgumentError("cannot open flags sidecar " + path.string());
    std::string magic(kFlagsMagic.size(), '\0');
    in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
    FlagSidecar f;
    std::uint32_t n = 0, layer = 0;
    std::uint64_t count = 0;
    if (magic != kFlagsMagic || !io::get_u32(in, n) || !io::get_u32(in, layer) || !io::get_u64(in, f.fingerprint) ||
        !io::get_u64(in, count)) {
        throw StorageError("bad flags sidecar " + path.string());
    }
    f.n = static_cast<int>(n);
    f.layer = static_cast<int>(layer);
    std::string bits((count + 7) / 8, '\0');
    if (!in.read(bits.data(), static_cast<std::streamsize>(bits.size()))) {
        throw StorageError("truncated flags sidecar " + path.string());
    }
    f.correct.resize(count);
    for (std::size_t i = 0; i < count; ++i) f.correct[i] = (static_cast<unsigned char>(bits[i / 8]) >> (i % 8)) & 1;
    return f;
}

void write_sweep(const fs::path& out_dir, const std::vector<SweepCell>& cells) {
    fs::create_directories(out_dir / "flags");
    fs::create_directories(out_dir / "probes");
    std::string results = io::csv_line(std::vector<std::string>(std::begin(kResultsColumns), std::end(kResultsColumns)));
    std::string history = io::csv_line({"model_id", "N", "layer", "epoch", "train_loss", "val_accuracy"});
    for (const auto& c : cells) {
        results += io::csv_line({c.model_id, c.pooling, c.dataset, std::to_string(c.n), std::to_string(c.layer),
                                 std::to_string(c.best_epoch), io::format_double(c.val_accuracy),
                                 io::format_double(c.test_accuracy), std::to_string(c.n_test)});
        for (const auto& h : c.probe.meta.history) {
            history += io::csv_line({c.model_id, std::to_string(c.n), std::to_string(c.layer), std::to_string(h.epoch),
                                     io::format_double(h.train_loss), io::format_double(h.val_accuracy)});
        }
        const std::string stem = "N" + std::to_string(c.n) + "_L" + std::to_string(c.layer);
        write_flags(out_dir / "flags" / (stem + ".rpfl"), FlagSidecar{c.n, c.layer, c.test_fingerprint, c.correct});
        save_probe(c.probe, out_dir / "probes" / (stem + ".rplp"));
    }
    io::write_file_atomic(out_dir / "results.csv", results);
    io::write_file_atomic(out_dir / "history.csv", history);
}

}  // namespace rprobe
