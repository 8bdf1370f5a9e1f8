#include "rprobe/attribution.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <new>
#include <sstream>
#include <thread>

#include "rprobe/error.hpp"
#include "rprobe/io.hpp"
#include "rprobe/simd.hpp"

namespace rprobe {

std::string to_string(Sublayer s) { return s == Sublayer::intermediate ? "intermediate" : "output"; }

Sublayer parse_sublayer(const std::string& s) {
    if (s == "intermediate") return Sublayer::intermediate;
    if (s == "output") return Sublayer::output;
    throw ArgumentError("unknown sub-layer '" + s + "' (expected intermediate or output)");
}

std::string to_string(ScalarTarget t) { return t == ScalarTarget::frozen_dot ? "frozen_dot" : "embedding_norm"; }

ScalarTarget parse_scalar_target(const std::string& s) {
    if (s == "frozen_dot") return ScalarTarget::frozen_dot;
    if (s == "embedding_norm") return ScalarTarget::embedding_norm;
    throw ArgumentError("unknown scalar target '" + s + "' (expected frozen_dot or embedding_norm)");
}

Topology topology_of(const Transformer& model) {
    return {model.num_layers(), model.intermediate_dim(), model.hidden_dim()};
}

namespace {

std::string describe(const NeuronAddress& a) {
    return "layer " + std::to_string(a.layer) + " " + to_string(a.sublayer) + " neuron " +
           std::to_string(a.index);
}

void check_address(const Topology& topo, const NeuronAddress& a) {
    if (a.layer < 1 || a.layer > topo.num_layers) {
        throw ArgumentError("neuron layer " + std::to_string(a.layer) + " outside 1.." +
                            std::to_string(topo.num_layers));
    }
    if (a.index >= topo.width(a.sublayer)) {
        throw ArgumentError(describe(a) + " outside sub-layer width " + std::to_string(topo.width(a.sublayer)));
    }
}

}  // namespace

double AttributionRecord::score(const NeuronAddress& a) const {
    check_address(topology, a);
    const auto& table = a.sublayer == Sublayer::intermediate ? intermediate : output;
    return table[a.layer - 1][a.index];
}

double& AttributionRecord::score(const NeuronAddress& a) {
    check_address(topology, a);
    auto& table = a.sublayer == Sublayer::intermediate ? intermediate : output;
    return table[a.layer - 1][a.index];
}

AttributionRecord make_empty_record(const Topology& topology) {
    AttributionRecord r;
    r.topology = topology;
    r.intermediate.assign(topology.num_layers, std::vector<double>(topology.intermediate_width, 0.0));
    r.output.assign(topology.num_layers, std::vector<double>(topology.output_width, 0.0));
    return r;
}

// ---------------------------------------------------------------------------

AttributionEngine::AttributionEngine(std::shared_ptr<const Transformer> model, Pooling pooling,
                                     AttributionOptions options)
    : model_(std::move(model)), pooling_(pooling), options_(options) {
    if (!model_) throw ArgumentError("attribution engine needs a model");
    if (options_.n_steps < 1) throw ArgumentError("n_steps must be at least 1");
    if (pooling_ == Pooling::first_token && model_->causal()) {
        throw PoolingMismatchError("first_token pooling requires an encoder_only model (leading [CLS] token)");
    }
    if (options_.threads == 0) options_.threads = 1;
}

void AttributionEngine::validate(const NeuronAddress& address) const { check_address(topology(), address); }

ExampleContext AttributionEngine::prepare(std::vector<int> tokens) const {
    if (tokens.empty()) throw ArgumentError("cannot attribute an empty token sequence");
    ExampleContext ctx;
    ctx.tokens = std::move(tokens);
    ctx.base = model_->forward(ctx.tokens, true);
    ctx.frozen_embedding = pool_matrix(ctx.base.hidden.back(), {}, pooling_);
    return ctx;
}

std::vector<double> AttributionEngine::neuron_weights(const NeuronAddress& address) const {
    validate(address);
    const TransformerBlock& b = model_->block(address.layer - 1);
    const Matrix& w = address.sublayer == Sublayer::intermediate ? b.ffn_in.weight : b.ffn_out.weight;
    auto r = w.row(address.index);
    return {r.begin(), r.end()};
}

double AttributionEngine::target_value(std::span<const double> e, std::span<const double> frozen) const {
    const auto& k = simd::kernels();
    if (options_.scalar_target == ScalarTarget::frozen_dot) return k.dot_f64(e.data(), frozen.data(), e.size());
    return k.dot_f64(e.data(), e.data(), e.size());
}

std::size_t AttributionEngine::batch_limit(const ExampleContext& ctx, std::size_t layer0) const {
    if (options_.max_batch_sequences > 0) return options_.max_batch_sequences;
    const std::size_t T = ctx.base.seq_len;
    const std::size_t d = model_->hidden_dim();
    const std::size_t F = model_->intermediate_dim();
    const std::size_t heads = model_->config().num_heads;
    const std::size_t tail = model_->num_layers() - layer0;
    const std::size_t per_layer = T * (12 * d + 3 * F) + heads * T * T;
    const std::size_t per_sequence = std::max<std::size_t>(1, tail * per_layer * sizeof(double));
    return std::max<std::size_t>(1, options_.memory_budget_mb * (1u << 20) / per_sequence);
}

void AttributionEngine::run_batch(const ExampleContext& ctx, std::size_t layer0, Sublayer sublayer,
                                  const std::vector<PathJob>& jobs, std::vector<double>* outputs,
                                  std::vector<std::vector<double>>* gradient_sums) const {
    const auto& kern = simd::kernels();
    const Transformer& m = *model_;
    const std::size_t T = ctx.base.seq_len;
    const std::size_t d = m.hidden_dim();
    const std::size_t F = m.intermediate_dim();
    const std::size_t L = m.num_layers();
    const std::size_t B = jobs.size();
    const BlockCache& bc = ctx.base.blocks.at(layer0);
    const TransformerBlock& blk = m.block(layer0);
    const bool inter = sublayer == Sublayer::intermediate;

    Matrix residual(B * T, d);
    Matrix fout(B * T, d);
    // Perturbed pre-activations of the addressed intermediate neuron.
    std::vector<double> pre_perturbed(inter ? B * T : 0);
    std::vector<double> column(d);

    for (std::size_t b = 0; b < B; ++b) {
        const PathJob& job = jobs[b];
        std::copy(bc.residual.data(), bc.residual.data() + T * d, residual.data() + b * T * d);
        std::copy(bc.ffn_out.data(), bc.ffn_out.data() + T * d, fout.data() + b * T * d);
        if (inter) {
            const double* w = blk.ffn_in.weight.row(job.index).data();
            for (std::size_t j = 0; j < d; ++j) column[j] = blk.ffn_out.weight(j, job.index);
            for (std::size_t t = 0; t < T; ++t) {
                const double p =
                    job.alpha * kern.dot_f64(w, bc.ffn_input.row(t).data(), d) + blk.ffn_in.bias[job.index];
                pre_perturbed[b * T + t] = p;
                const double delta = nn::gelu(p) - bc.act(t, job.index);
                kern.axpy_f64(delta, column.data(), fout.row(b * T + t).data(), d);
            }
        } else {
            const double* w = blk.ffn_out.weight.row(job.index).data();
            for (std::size_t t = 0; t < T; ++t) {
                fout(b * T + t, job.index) =
                    job.alpha * kern.dot_f64(w, bc.act.row(t).data(), F) + blk.ffn_out.bias[job.index];
            }
        }
    }

    const bool backward = gradient_sums != nullptr;
    nn::LayerNormCache finish_cache;
    Matrix y = m.block_finish(layer0, residual, fout, backward ? &finish_cache : nullptr);
    residual = Matrix();
    fout = Matrix();

    std::vector<BlockCache> caches(backward ? L - layer0 - 1 : 0);
    for (std::size_t l = layer0 + 1; l < L; ++l) {
        y = m.block_forward(l, y, T, {}, backward ? &caches[l - layer0 - 1] : nullptr);
    }
    nn::LayerNormCache final_cache;
    if (m.has_final_norm()) y = m.apply_final_norm(y, backward ? &final_cache : nullptr);

    Matrix dy(backward ? B * T : 0, d);
    Matrix seq(T, d);
    for (std::size_t b = 0; b < B; ++b) {
        std::copy(y.data() + b * T * d, y.data() + (b + 1) * T * d, seq.data());
        const std::vector<double> e = pool_matrix(seq, {}, pooling_);
        const double value = target_value(e, ctx.frozen_embedding);
        if (!std::isfinite(value)) {
            throw AttributionError("non-finite scalar output for " +
                                   describe({layer0 + 1, sublayer, jobs[b].index}) +
                                   " at alpha=" + std::to_string(jobs[b].alpha));
        }
        if (outputs) outputs->push_back(value);
        if (!backward) continue;
        std::vector<double> de = options_.scalar_target == ScalarTarget::frozen_dot ? ctx.frozen_embedding : e;
        if (options_.scalar_target == ScalarTarget::embedding_norm) {
            for (double& v : de) v *= 2.0;
        }
        const Matrix dh = pool_backward(de, T, {}, pooling_);
        std::copy(dh.data(), dh.data() + T * d, dy.data() + b * T * d);
    }
    if (!backward) return;
    y = Matrix();

    if (m.has_final_norm()) dy = m.final_norm_backward(dy, final_cache);
    for (std::size_t l = L; l-- > layer0 + 1;) {
        dy = m.block_backward(l, dy, T, caches[l - layer0 - 1]).d_input;
        caches.pop_back();
    }
    const Matrix dfout = m.block_finish_backward(layer0, dy, finish_cache);

    for (std::size_t b = 0; b < B; ++b) {
        const PathJob& job = jobs[b];
        std::vector<double>& sum = (*gradient_sums)[job.neuron_slot];
        if (inter) {
            for (std::size_t j = 0; j < d; ++j) column[j] = blk.ffn_out.weight(j, job.index);
            for (std::size_t t = 0; t < T; ++t) {
                const double dact = kern.dot_f64(dfout.row(b * T + t).data(), column.data(), d);
                const double dpre = dact * nn::gelu_grad(pre_perturbed[b * T + t]);
                kern.axpy_f64(job.weight * dpre, bc.ffn_input.row(t).data(), sum.data(), d);
            }
        } else {
            for (std::size_t t = 0; t < T; ++t) {
                kern.axpy_f64(job.weight * dfout(b * T + t, job.index), bc.act.row(t).data(), sum.data(), F);
            }
        }
    }
}

double AttributionEngine::scalar_output(const ExampleContext& ctx, const NeuronAddress& address,
                                        double alpha) const {
    validate(address);
    std::vector<double> out;
    run_batch(ctx, address.layer - 1, address.sublayer, {{0, address.index, alpha, 1.0}}, &out, nullptr);
    return out.at(0);
}

std::vector<double> AttributionEngine::neuron_gradient(const ExampleContext& ctx, const NeuronAddress& address,
                                                       double alpha) const {
    validate(address);
    const std::size_t width = address.sublayer == Sublayer::intermediate ? model_->hidden_dim()
                                                                          : model_->intermediate_dim();
    std::vector<std::vector<double>> sums(1, std::vector<double>(width, 0.0));
    run_batch(ctx, address.layer - 1, address.sublayer, {{0, address.index, alpha, 1.0}}, nullptr, &sums);
    return std::move(sums[0]);
}

double AttributionEngine::integrated_gradient_attribution(const ExampleContext& ctx,
                                                          const NeuronAddress& address) const {
    return attribute_neurons(ctx, address.layer, address.sublayer, {address.index}).at(0);
}

std::vector<double> AttributionEngine::attribute_neurons(const ExampleContext& ctx, std::size_t layer,
                                                         Sublayer sublayer,
                                                         const std::vector<std::size_t>& indices) const {
    for (std::size_t i : indices) validate({layer, sublayer, i});
    const QuadratureGrid grid = make_grid(options_.n_steps, options_.scheme);
    const std::size_t layer0 = layer - 1;
    const std::size_t width = sublayer == Sublayer::intermediate ? model_->hidden_dim() : model_->intermediate_dim();

    std::vector<PathJob> jobs;
    jobs.reserve(indices.size() * grid.alphas.size());
    for (std::size_t s = 0; s < indices.size(); ++s) {
        for (std::size_t k = 0; k < grid.alphas.size(); ++k) {
            jobs.push_back({s, indices[s], grid.alphas[k], grid.weights[k]});
        }
    }

    std::vector<std::vector<double>> sums(indices.size(), std::vector<double>(width, 0.0));
    std::size_t limit = batch_limit(ctx, layer0);
    std::size_t pos = 0;
    while (pos < jobs.size()) {
        const std::size_t count = std::min(limit, jobs.size() - pos);
        const std::vector<PathJob> chunk(jobs.begin() + pos, jobs.begin() + pos + count);
        try {
            run_batch(ctx, layer0, sublayer, chunk, nullptr, &sums);
        } catch (const std::bad_alloc&) {
            if (count == 1) {
                throw AttributionError("out of memory attributing " + describe({layer, sublayer, chunk[0].index}));
            }
            // Gradients are accumulated only after the batch completes, so the
            // chunk can simply be retried at a smaller size.
            limit = std::max<std::size_t>(1, count / 2);
            continue;
        }
        pos += count;
    }

    std::vector<double> out(indices.size());
    for (std::size_t s = 0; s < indices.size(); ++s) {
        const NeuronAddress a{layer, sublayer, indices[s]};
        for (double g : sums[s]) {
            if (!std::isfinite(g)) throw AttributionError("non-finite gradient for " + describe(a));
        }
        const std::vector<double> w = neuron_weights(a);
        out[s] = reduce_attribution(w, sums[s], options_.reduction);
    }
    return out;
}

AttributionRecord AttributionEngine::attribute_example(const std::string& example_id,
                                                       const ExampleContext& ctx) const {
    const Topology topo = topology();
    AttributionRecord rec = make_empty_record(topo);
    rec.example_id = example_id;
    rec.n_steps = options_.n_steps;
    rec.scalar_target = options_.scalar_target;

    struct Unit {
        std::size_t layer;
        Sublayer sublayer;
        std::vector<std::size_t> indices;
    };
    const std::size_t points = make_grid(options_.n_steps, options_.scheme).alphas.size();
    std::vector<Unit> units;
    for (std::size_t l = 1; l <= topo.num_layers; ++l) {
        const std::size_t per_unit = std::max<std::size_t>(1, batch_limit(ctx, l - 1) / points);
        for (Sublayer s : {Sublayer::intermediate, Sublayer::output}) {
            const std::size_t width = topo.width(s);
            for (std::size_t i = 0; i < width; i += per_unit) {
                Unit u{l, s, {}};
                for (std::size_t j = i; j < std::min(width, i + per_unit); ++j) u.indices.push_back(j);
                units.push_back(std::move(u));
            }
        }
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t u = next.fetch_add(1);
            if (u >= units.size()) return;
            try {
                const Unit& unit = units[u];
                const std::vector<double> vals = attribute_neurons(ctx, unit.layer, unit.sublayer, unit.indices);
                auto& table = unit.sublayer == Sublayer::intermediate ? rec.intermediate : rec.output;
                for (std::size_t j = 0; j < vals.size(); ++j) {
                    table[unit.layer - 1][unit.indices[j]] = static_cast<double>(static_cast<float>(vals[j]));
                }
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = units.size();
                return;
            }
        }
    };
    const unsigned threads = std::min<unsigned>(options_.threads, static_cast<unsigned>(units.size()));
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    return rec;
}

// ---------------------------------------------------------------------------

std::vector<NeuronAddress> normalize_and_threshold(const AttributionRecord& record, double tau) {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ArgumentError("threshold must be positive");
    if (record.size() == 0) throw ArgumentError("attribution record is empty");
    double max_score = -std::numeric_limits<double>::infinity();
    for (const auto& table : {&record.intermediate, &record.output}) {
        for (const auto& row : *table) {
            for (double v : row) max_score = std::max(max_score, v);
        }
    }
    std::vector<NeuronAddress> active;
    if (!(max_score > 0.0)) return active;
    const double cutoff = tau * max_score;
    for (std::size_t l = 0; l < record.topology.num_layers; ++l) {
        for (Sublayer s : {Sublayer::intermediate, Sublayer::output}) {
            const auto& row = (s == Sublayer::intermediate ? record.intermediate : record.output)[l];
            for (std::size_t i = 0; i < row.size(); ++i) {
                if (row[i] >= cutoff) active.push_back({l + 1, s, i});
            }
        }
    }
    return active;
}

double ActivationSummary::frequency(const NeuronAddress& a) const {
    check_address(topology, a);
    const auto& table = a.sublayer == Sublayer::intermediate ? intermediate_frequency : output_frequency;
    return table[a.layer - 1][a.index];
}

double ActivationSummary::layer_percentage(std::size_t layer, Sublayer s) const {
    if (layer < 1 || layer > topology.num_layers) throw ArgumentError("layer outside the summary topology");
    const auto& row = (s == Sublayer::intermediate ? intermediate_frequency : output_frequency)[layer - 1];
    if (row.empty()) return 0.0;
    double total = 0.0;
    for (double f : row) total += f;
    return 100.0 * total / static_cast<double>(row.size());
}

ActivationSummary aggregate_activation_frequency(const std::vector<std::vector<NeuronAddress>>& active_sets,
                                                 const Topology& topology, double threshold) {
    if (active_sets.empty()) throw ArgumentError("no attribution records to aggregate");
    ActivationSummary s;
    s.topology = topology;
    s.threshold = threshold;
    s.example_count = active_sets.size();
    std::vector<std::vector<std::size_t>> ci(topology.num_layers, std::vector<std::size_t>(topology.intermediate_width));
    std::vector<std::vector<std::size_t>> co(topology.num_layers, std::vector<std::size_t>(topology.output_width));
    s.intermediate_active_total.assign(topology.num_layers, 0);
    s.output_active_total.assign(topology.num_layers, 0);
    for (const auto& set : active_sets) {
        std::vector<NeuronAddress> unique(set);
        std::sort(unique.begin(), unique.end());
        unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
        for (const NeuronAddress& a : unique) {
            check_address(topology, a);
            if (a.sublayer == Sublayer::intermediate) {
                ++ci[a.layer - 1][a.index];
                ++s.intermediate_active_total[a.layer - 1];
            } else {
                ++co[a.layer - 1][a.index];
                ++s.output_active_total[a.layer - 1];
            }
        }
    }
    const double n = static_cast<double>(s.example_count);
    auto to_freq = [n](const std::vector<std::vector<std::size_t>>& counts) {
        std::vector<std::vector<double>> f(counts.size());
        for (std::size_t l = 0; l < counts.size(); ++l) {
            f[l].reserve(counts[l].size());
            for (std::size_t c : counts[l]) f[l].push_back(static_cast<double>(c) / n);
        }
        return f;
    };
    s.intermediate_frequency = to_freq(ci);
    s.output_frequency = to_freq(co);
    return s;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kRecordMagic[] = "RPAT1";

}  // namespace

void write_attribution_record(const std::filesystem::path& path, const AttributionRecord& record) {
    std::ostringstream os(std::ios::binary);
    os.write(kRecordMagic, 5);
    io::put_string(os, record.example_id);
    io::put_u32(os, static_cast<std::uint32_t>(record.n_steps));
    io::put_string(os, to_string(record.scalar_target));
    io::put_u32(os, static_cast<std::uint32_t>(record.topology.num_layers));
    io::put_u32(os, static_cast<std::uint32_t>(record.topology.intermediate_width));
    io::put_u32(os, static_cast<std::uint32_t>(record.topology.output_width));
    std::vector<float> buf;
    for (const auto* table : {&record.intermediate, &record.output}) {
        for (const auto& row : *table) {
            buf.assign(row.begin(), row.end());
            io::put_f32s(os, buf.data(), buf.size());
        }
    }
    io::write_file_atomic(path, os.str());
}

AttributionRecord read_attribution_record(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw StorageError("cannot open attribution record " + path.string());
    char magic[5];
    if (!is.read(magic, 5) || std::string(magic, 5) != kRecordMagic) {
        throw ParseError(0, "magic", "not an attribution record: " + path.string());
    }
    AttributionRecord r;
    std::uint32_t steps = 0, L = 0, F = 0, d = 0;
    std::string target;
    if (!io::get_string(is, r.example_id) || !io::get_u32(is, steps) || !io::get_string(is, target) ||
        !io::get_u32(is, L) || !io::get_u32(is, F) || !io::get_u32(is, d)) {
        throw ParseError(0, "header", "truncated attribution record " + path.string());
    }
    const std::string id = r.example_id;
    r = make_empty_record({L, F, d});
    r.example_id = id;
    r.n_steps = static_cast<int>(steps);
    r.scalar_target = parse_scalar_target(target);
    std::vector<float> buf;
    for (auto* table : {&r.intermediate, &r.output}) {
        for (auto& row : *table) {
            buf.resize(row.size());
            if (!io::get_f32s(is, buf.data(), buf.size())) {
                throw ParseError(0, "scores", "truncated attribution record " + path.string());
            }
            std::copy(buf.begin(), buf.end(), row.begin());
        }
    }
    return r;
}

void write_activation_summary(const std::filesystem::path& summary_csv, const std::filesystem::path& rollup_csv,
                              const ActivationSummary& summary, const std::string& model_id) {
    std::string detail = io::csv_line({std::begin(kSummaryColumns), std::end(kSummaryColumns)});
    std::string rollup = io::csv_line({std::begin(kRollupColumns), std::end(kRollupColumns)});
    for (std::size_t l = 1; l <= summary.topology.num_layers; ++l) {
        for (Sublayer s : {Sublayer::intermediate, Sublayer::output}) {
            const auto& freq = (s == Sublayer::intermediate ? summary.intermediate_frequency
                                                            : summary.output_frequency)[l - 1];
            for (std::size_t i = 0; i < freq.size(); ++i) {
                detail += io::csv_line({std::to_string(l), to_string(s), std::to_string(i),
                                        io::format_double(freq[i])});
            }
            const std::size_t active = (s == Sublayer::intermediate ? summary.intermediate_active_total
                                                                    : summary.output_active_total)[l - 1];
            rollup += io::csv_line({model_id, std::to_string(l), to_string(s), std::to_string(freq.size()),
                                    std::to_string(summary.example_count), std::to_string(active),
                                    io::format_double(summary.layer_percentage(l, s))});
        }
    }
    io::write_file_atomic(summary_csv, detail);
    io::write_file_atomic(rollup_csv, rollup);
}

}  // namespace rprobe
