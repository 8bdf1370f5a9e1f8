#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include "rprobe/attribution.hpp"
#include "rprobe/dataset.hpp"
#include "rprobe/embedding_cache.hpp"
#include "rprobe/encoder.hpp"
#include "rprobe/error.hpp"
#include "rprobe/io.hpp"
#include "rprobe/model.hpp"
#include "rprobe/probe.hpp"
#include "rprobe/report.hpp"
#include "rprobe/simd.hpp"
#include "rprobe/stats.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rprobe;

namespace {

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<std::size_t> parse_layers(const std::string& s) {
    std::vector<std::size_t> out;
    if (s == "all" || s.empty()) return out;
    for (const auto& item : split_list(s)) {
        try {
            out.push_back(static_cast<std::size_t>(std::stoul(item)));
        } catch (const std::exception&) {
            throw ArgumentError("bad layer '" + item + "'");
        }
    }
    return out;
}

std::vector<int> parse_ints(const std::string& s) {
    std::vector<int> out;
    for (const auto& item : split_list(s)) {
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw ArgumentError("bad integer '" + item + "'");
        }
    }
    return out;
}

void set_deterministic(bool on, unsigned& threads) {
    if (!on) return;
    simd::set_backend(simd::Backend::scalar);
    threads = 1;
}

// ---------------------------------------------------------------------------
// build-dataset

struct BuildDatasetArgs {
    std::string input, test_input, format = "dpr_json", out;
    std::uint64_t seed = 42;
    double ratio = 0.99;
};

int run_build_dataset(const BuildDatasetArgs& a) {
    const CorpusFormat format = parse_corpus_format(a.format);
    const auto records = parse_retrieval_corpus(a.input, format);
    const InstanceBuildResult built = build_probe_instances(records, a.seed);
    DatasetSplit split = split_train_validation(built.instances, a.ratio, a.seed);
    std::size_t test_removed = 0;
    if (!a.test_input.empty()) {
        const InstanceBuildResult test = build_probe_instances(parse_retrieval_corpus(a.test_input, format), a.seed);
        split.test = test.instances;
        test_removed = test.removed_count;
    }

    fs::create_directories(a.out);
    std::vector<json> rows;
    auto emit = [&](const std::vector<ProbeInstance>& xs, const char* name) {
        for (const auto& x : xs) {
            json j = to_json(x);
            j["split"] = name;
            rows.push_back(std::move(j));
        }
    };
    emit(split.train, "train");
    emit(split.validation, "validation");
    emit(split.test, "test");
    io::write_jsonl(fs::path(a.out) / "instances.jsonl", rows);

    for (int n = kMinProbePassages; n <= kMaxProbePassages; ++n) {
        std::vector<json> vrows;
        auto emit_variants = [&](const std::vector<ProbeInstance>& xs, const char* name) {
            for (const auto& x : xs) {
                json j = to_json(derive_probe_variant(x, n, a.seed));
                j["split"] = name;
                vrows.push_back(std::move(j));
            }
        };
        emit_variants(split.train, "train");
        emit_variants(split.validation, "validation");
        emit_variants(split.test, "test");
        io::write_jsonl(fs::path(a.out) / ("variants-N" + std::to_string(n) + ".jsonl"), vrows);
    }

    const json manifest{{"seed", a.seed},
                        {"ratio", a.ratio},
                        {"input", a.input},
                        {"test_input", a.test_input},
                        {"records", records.size()},
                        {"removed_count", built.removed_count},
                        {"test_removed_count", test_removed},
                        {"train", split.train.size()},
                        {"validation", split.validation.size()},
                        {"test", split.test.size()}};
    io::write_file_atomic(fs::path(a.out) / "dataset.json", manifest.dump(2) + "\n");
    std::cout << "build-dataset: " << split.train.size() << " train, " << split.validation.size()
              << " validation, " << split.test.size() << " test; removed " << built.removed_count
              << " record(s) without hard negatives\n";
    return 0;
}

// ---------------------------------------------------------------------------
// Text collection shared by embed and attribute.

struct TextItem {
    std::string id;
    std::string text;
};

// Accepts {"text": ...} rows, instance rows (query/positive/negatives) and
// variant rows (query/passages). field: all | query | passage.
std::vector<TextItem> collect_texts(const fs::path& path, const std::string& field, const std::string& split) {
    if (field != "all" && field != "query" && field != "passage") {
        throw ArgumentError("--field must be all, query or passage");
    }
    std::vector<TextItem> out;
    io::for_each_jsonl(path, [&](std::size_t idx, const json& j) {
        if (!j.is_object()) throw ParseError(idx, "record", "expected a JSON object on line " + std::to_string(idx + 1));
        if (split != "all" && j.contains("split") && j.at("split") != split) return;
        const std::string id = j.contains("instance_id") ? j.at("instance_id").get<std::string>()
                               : j.contains("id")        ? j.at("id").get<std::string>()
                                                         : std::to_string(idx);
        if (j.contains("text")) {
            out.push_back({id, j.at("text").get<std::string>()});
            return;
        }
        if (!j.contains("query")) throw ParseError(idx, "query", "record " + std::to_string(idx) + " has no text or query");
        if (field != "passage") out.push_back({id + ":query", j.at("query").get<std::string>()});
        if (field == "query") return;
        if (j.contains("positive")) {
            out.push_back({id + ":positive", j.at("positive").get<std::string>()});
            if (field == "all") {
                for (const auto& n : j.value("negatives", json::array())) out.push_back({id + ":negative", n.get<std::string>()});
            }
        } else if (j.contains("passages")) {
            const auto& ps = j.at("passages");
            const int label = j.value("label", 0);
            for (std::size_t k = 0; k < ps.size(); ++k) {
                if (field == "passage" && static_cast<int>(k) != label) continue;
                out.push_back({id + ":passage" + std::to_string(k), ps[k].get<std::string>()});
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// embed

struct EmbedArgs {
    std::string model, pooling = "first_token", input, field = "all", split = "all", cache, layers = "all";
    bool include_embeddings = false;
    bool deterministic = false;
};

int run_embed(const EmbedArgs& a) {
    unsigned threads = 1;
    set_deterministic(a.deterministic, threads);
    const EncoderHandle handle = EncoderHandle::load(a.model);
    const auto items = collect_texts(a.input, a.field, a.split);
    std::vector<std::string> texts;
    std::set<std::string> seen;
    for (const auto& it : items) {
        if (seen.insert(it.text).second) texts.push_back(it.text);
    }
    PrecomputeOptions opt;
    opt.include_embedding_layer = a.include_embeddings;
    opt.layers = parse_layers(a.layers);
    const PrecomputeReport r = precompute_embeddings(handle, texts, parse_pooling(a.pooling), a.cache, opt);
    std::cout << "embed: " << r.requested << " unique text(s), " << r.already_cached << " already cached, "
              << r.model_invocations << " encoded, " << r.truncated << " truncated\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train-probe

struct TrainArgs {
    std::string query_cache, passage_cache, variants, out, n_values = "2,3,4,5", layers = "all";
    std::string dataset = "dataset", model_label;
    Hyperparameters hp;
    unsigned threads = 1;
    bool deterministic = false;
};

std::map<int, VariantSplits> load_variants(const fs::path& dir, const std::vector<int>& n_values) {
    std::map<int, VariantSplits> out;
    for (int n : n_values) {
        const fs::path p = fs::is_directory(dir) ? dir / ("variants-N" + std::to_string(n) + ".jsonl") : dir;
        if (!fs::exists(p)) throw ArgumentError("variant file not found: " + p.string());
        VariantSplits& s = out[n];
        io::for_each_jsonl(p, [&](std::size_t idx, const json& j) {
            ProbeVariant v = variant_from_json(j);
            if (v.n != n) return;
            const std::string split = j.value("split", "train");
            if (split == "train") {
                s.train.push_back(std::move(v));
            } else if (split == "validation") {
                s.validation.push_back(std::move(v));
            } else if (split == "test") {
                s.test.push_back(std::move(v));
            } else {
                throw ParseError(idx, "split", "unknown split '" + split + "' in " + p.string());
            }
        });
        if (s.train.empty()) throw InsufficientDataError("no training variants for N=" + std::to_string(n));
        if (s.test.empty()) {
            throw InsufficientDataError("no test variants for N=" + std::to_string(n) +
                                        " (build the dataset with --test-input)");
        }
    }
    return out;
}

int run_train_probe(TrainArgs a) {
    set_deterministic(a.deterministic, a.threads);
    const EmbeddingCache qc = EmbeddingCache::open_for_read(a.query_cache);
    const EmbeddingCache pc = EmbeddingCache::open_for_read(a.passage_cache.empty() ? a.query_cache : a.passage_cache);
    SweepOptions opt;
    opt.n_values = parse_ints(a.n_values);
    for (auto l : parse_layers(a.layers)) opt.layers.push_back(static_cast<std::uint32_t>(l));
    opt.hp = a.hp;
    opt.model_label = a.model_label;
    opt.dataset = a.dataset;
    opt.threads = a.threads;
    const auto variants = load_variants(a.variants, opt.n_values);
    const auto cells = run_probe_sweep(qc, pc, variants, opt);
    write_sweep(a.out, cells);
    for (const auto& c : cells) {
        std::cout << c.model_id << " N=" << c.n << " layer " << c.layer << ": val " << c.val_accuracy << " test "
                  << c.test_accuracy << " (best epoch " << c.best_epoch << ")\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// significance

struct SignificanceArgs {
    std::string baseline_results, baseline_id, scope = "layers", out;
    std::vector<std::string> results;
};

int run_significance(const SignificanceArgs& a) {
    std::vector<CellFlags> all = load_cell_flags(a.baseline_results);
    std::string baseline = a.baseline_id;
    if (baseline.empty()) {
        std::set<std::string> ids;
        for (const auto& c : all) ids.insert(c.model_id);
        if (ids.size() != 1) throw ArgumentError("baseline results hold several models; pass --baseline-id");
        baseline = *ids.begin();
    }
    for (const auto& dir : a.results) {
        auto more = load_cell_flags(dir);
        all.insert(all.end(), more.begin(), more.end());
    }
    const auto cells = significance_table(all, baseline, parse_correction_scope(a.scope));
    write_significance_csv(a.out, cells);
    std::size_t sig = 0;
    for (const auto& c : cells) sig += c.significant;
    std::cout << "significance: " << cells.size() << " cell(s), " << sig << " significant\n";
    return 0;
}

// ---------------------------------------------------------------------------
// attribute

struct AttributeArgs {
    std::string model, pooling = "first_token", input, out, field = "query", split = "all";
    std::string scalar_target = "frozen_dot", mode = "weighted", scheme = "right";
    int n_steps = 20;
    double threshold = 0.1;
    std::size_t limit = 0;
    std::size_t max_batch = 0;
    std::size_t memory_mb = 1024;
    unsigned threads = 1;
    bool deterministic = false;
};

std::string record_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06zu.rpat", i);
    return buf;
}

int run_attribute(AttributeArgs a) {
    set_deterministic(a.deterministic, a.threads);
    if (!(a.threshold > 0.0)) throw ArgumentError("--threshold must be positive");
    const EncoderHandle handle = EncoderHandle::load(a.model);
    AttributionOptions opt;
    opt.n_steps = a.n_steps;
    opt.scheme = parse_riemann_scheme(a.scheme);
    opt.reduction = parse_ig_reduction(a.mode);
    opt.scalar_target = parse_scalar_target(a.scalar_target);
    opt.max_batch_sequences = a.max_batch;
    opt.memory_budget_mb = a.memory_mb;
    opt.threads = a.threads;
    const Pooling pooling = parse_pooling(a.pooling);
    const AttributionEngine engine(handle.model_ptr(), pooling, opt);

    auto items = collect_texts(a.input, a.field, a.split);
    if (a.limit > 0 && items.size() > a.limit) items.resize(a.limit);
    if (items.empty()) throw InsufficientDataError("no texts to attribute in " + a.input);

    const fs::path out(a.out);
    fs::create_directories(out / "records");
    const json params{{"model_id", handle.model_id()},  {"pooling", to_string(pooling)},
                      {"n_steps", a.n_steps},           {"scheme", to_string(opt.scheme)},
                      {"reduction", to_string(opt.reduction)}, {"scalar_target", to_string(opt.scalar_target)},
                      {"field", a.field},               {"input", a.input}};
    const fs::path manifest_path = out / "manifest.json";
    if (fs::exists(manifest_path)) {
        const json old = json::parse(io::read_file(manifest_path));
        if (old.value("params", json{}) != params) {
            throw ArgumentError("output directory holds attributions made with different settings: " + a.out);
        }
    }

    const Topology topo = engine.topology();
    std::vector<std::vector<NeuronAddress>> active;
    std::size_t reused = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const fs::path rec_path = out / "records" / record_name(i);
        AttributionRecord rec;
        bool have = false;
        if (fs::exists(rec_path)) {
            try {
                rec = read_attribution_record(rec_path);
                have = rec.example_id == items[i].id && rec.topology == topo;
            } catch (const Error&) {
                have = false;
            }
        }
        if (have) {
            ++reused;
        } else {
            const ExampleContext ctx = engine.prepare(handle.encode(items[i].text));
            rec = engine.attribute_example(items[i].id, ctx);
            write_attribution_record(rec_path, rec);
        }
        active.push_back(normalize_and_threshold(rec, a.threshold));
        io::write_file_atomic(manifest_path, json{{"params", params}, {"threshold", a.threshold},
                                                  {"completed", i + 1}, {"total", items.size()},
                                                  {"complete", i + 1 == items.size()}}
                                                 .dump(2) + "\n");
    }
    const ActivationSummary summary = aggregate_activation_frequency(active, topo, a.threshold);
    write_activation_summary(out / "summary.csv", out / "activation_rollup.csv", summary, handle.model_id());
    std::cout << "attribute: " << items.size() << " example(s), " << reused << " reused, "
              << topo.neuron_count() << " neurons each\n";
    for (std::size_t l = 1; l <= topo.num_layers; ++l) {
        std::cout << "  layer " << l << ": intermediate " << summary.layer_percentage(l, Sublayer::intermediate)
                  << "%, output " << summary.layer_percentage(l, Sublayer::output) << "%\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// report

struct ReportArgs {
    std::string results, figures = "all", out, style;
};

int run_report(const ReportArgs& a) {
    const Style style = a.style.empty() ? Style{} : load_style(a.style);
    const auto outputs = render_report(a.results, parse_figure_selection(a.figures), a.out, style);
    for (const auto& o : outputs) {
        std::cout << "report: " << o.figure.string() << " (+ " << o.sidecar.filename().string() << ")\n";
        for (const auto& w : o.warnings) std::cerr << "warning: " << w << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// toy models

struct ToyArgs {
    std::string out, model_id = "toy-encoder", architecture = "encoder_only";
    std::size_t vocab = 1024, hidden = 32, layers = 2, heads = 4, intermediate = 64, max_len = 64;
    std::uint64_t seed = 7;
};

int run_make_toy(const ToyArgs& a) {
    TransformerConfig c;
    c.model_id = a.model_id;
    c.architecture = parse_architecture(a.architecture);
    c.vocab_size = a.vocab;
    c.hidden_dim = a.hidden;
    c.num_layers = a.layers;
    c.num_heads = a.heads;
    c.intermediate_dim = a.intermediate;
    c.max_position = a.max_len;
    c.max_sequence_length = a.max_len;
    Transformer::random(c, a.seed).save(a.out);
    std::cout << "make-toy-model: wrote " << a.out << "\n";
    return 0;
}

struct PerturbArgs {
    std::string model, out, model_id;
    double scale = 0.05;
    std::uint64_t seed = 11;
};

int run_perturb(const PerturbArgs& a) {
    const Transformer base = Transformer::load(a.model);
    const std::string id = a.model_id.empty() ? base.config().model_id + "-ft" : a.model_id;
    base.perturbed(a.scale, a.seed, id).save(a.out);
    if (fs::exists(fs::path(a.model) / "vocab.txt")) {
        fs::copy_file(fs::path(a.model) / "vocab.txt", fs::path(a.out) / "vocab.txt",
                      fs::copy_options::overwrite_existing);
    }
    std::cout << "perturb-model: wrote " << a.out << " (" << id << ")\n";
    return 0;
}

int exit_code(const std::exception& e) {
    if (dynamic_cast<const ArgumentError*>(&e)) return 2;
    if (dynamic_cast<const ParseError*>(&e)) return 3;
    if (dynamic_cast<const EnvironmentError*>(&e)) return 4;
    if (dynamic_cast<const StorageError*>(&e)) return 5;
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Layer-wise linear probing and neuron attribution for transformer text encoders"};
    app.require_subcommand(1);

    BuildDatasetArgs bd;
    auto* c_bd = app.add_subcommand("build-dataset", "Build probe instances, splits and N-way variants");
    c_bd->add_option("--input", bd.input, "Retrieval corpus (DPR JSON/JSONL or TSV)")->required();
    c_bd->add_option("--format", bd.format, "dpr_json or tsv_triples")->capture_default_str();
    c_bd->add_option("--test-input", bd.test_input, "Held-out corpus used as the test split");
    c_bd->add_option("--seed", bd.seed)->capture_default_str();
    c_bd->add_option("--ratio", bd.ratio, "Train fraction of the train/validation split")->capture_default_str();
    c_bd->add_option("--out", bd.out)->required();

    EmbedArgs em;
    auto* c_em = app.add_subcommand("embed", "Precompute pooled per-layer embeddings");
    c_em->add_option("--model", em.model, "Model directory")->required();
    c_em->add_option("--pooling", em.pooling, "first_token, mean or last_token")->capture_default_str();
    c_em->add_option("--input", em.input, "JSONL of texts, instances or variants")->required();
    c_em->add_option("--field", em.field, "all, query or passage")->capture_default_str();
    c_em->add_option("--split", em.split, "Only rows of this split (all = every row)")->capture_default_str();
    c_em->add_option("--cache", em.cache, "Cache directory")->required();
    c_em->add_option("--layers", em.layers, "Comma-separated layer ids or all")->capture_default_str();
    c_em->add_flag("--include-embeddings", em.include_embeddings, "Also cache layer 0");
    c_em->add_flag("--deterministic", em.deterministic, "Scalar kernels, single thread");

    TrainArgs tr;
    auto* c_tr = app.add_subcommand("train-probe", "Train and evaluate probes for every (N, layer) cell");
    c_tr->add_option("--query-cache", tr.query_cache)->required();
    c_tr->add_option("--passage-cache", tr.passage_cache, "Defaults to the query cache");
    c_tr->add_option("--variants", tr.variants, "Directory of variants-N*.jsonl or one variant file")->required();
    c_tr->add_option("--N", tr.n_values)->capture_default_str();
    c_tr->add_option("--layers", tr.layers)->capture_default_str();
    c_tr->add_option("--out", tr.out)->required();
    c_tr->add_option("--dataset", tr.dataset)->capture_default_str();
    c_tr->add_option("--model-label", tr.model_label);
    c_tr->add_option("--lr", tr.hp.learning_rate)->capture_default_str();
    c_tr->add_option("--batch-size", tr.hp.batch_size)->capture_default_str();
    c_tr->add_option("--max-epochs,--epochs", tr.hp.max_epochs)->capture_default_str();
    c_tr->add_option("--seed", tr.hp.seed)->capture_default_str();
    c_tr->add_option("--threads", tr.threads)->capture_default_str();
    c_tr->add_flag("--deterministic", tr.deterministic);

    SignificanceArgs sg;
    auto* c_sg = app.add_subcommand("significance", "Paired t-tests against the backbone with Bonferroni correction");
    c_sg->add_option("--baseline-results", sg.baseline_results, "train-probe output of the backbone")->required();
    c_sg->add_option("--baseline-id", sg.baseline_id);
    c_sg->add_option("--results", sg.results, "train-probe outputs of fine-tuned models")->required();
    c_sg->add_option("--correction-scope", sg.scope, "layers or layers_x_n")->capture_default_str();
    c_sg->add_option("--out", sg.out, "Output CSV")->required();

    AttributeArgs at;
    auto* c_at = app.add_subcommand("attribute", "Integrated-gradient neuron attribution");
    c_at->add_option("--model", at.model, "Model directory")->required();
    c_at->add_option("--pooling", at.pooling)->capture_default_str();
    c_at->add_option("--input", at.input)->required();
    c_at->add_option("--field", at.field, "query or passage (positive passage)")->capture_default_str();
    c_at->add_option("--split", at.split)->capture_default_str();
    c_at->add_option("--n-steps", at.n_steps)->capture_default_str();
    c_at->add_option("--threshold", at.threshold)->capture_default_str();
    c_at->add_option("--scalar-target", at.scalar_target, "frozen_dot or embedding_norm")->capture_default_str();
    c_at->add_option("--mode", at.mode, "weighted or raw_integral")->capture_default_str();
    c_at->add_option("--scheme", at.scheme, "right or trapezoid")->capture_default_str();
    c_at->add_option("--limit", at.limit, "Attribute at most this many texts (0 = all)");
    c_at->add_option("--max-batch", at.max_batch, "Perturbed sequences per pass (0 = from --memory-mb)");
    c_at->add_option("--memory-mb", at.memory_mb)->capture_default_str();
    c_at->add_option("--threads", at.threads)->capture_default_str();
    c_at->add_option("--out", at.out)->required();
    c_at->add_flag("--deterministic", at.deterministic);

    ReportArgs rp;
    auto* c_rp = app.add_subcommand("report", "Render figures and their sidecar CSVs");
    c_rp->add_option("--results", rp.results)->required();
    c_rp->add_option("--figures", rp.figures, "probe, activation or all")->capture_default_str();
    c_rp->add_option("--out", rp.out)->required();
    c_rp->add_option("--style", rp.style, "Style JSON");

    ToyArgs ty;
    auto* c_ty = app.add_subcommand("make-toy-model", "Write a randomly initialized model");
    c_ty->add_option("--out", ty.out)->required();
    c_ty->add_option("--model-id", ty.model_id)->capture_default_str();
    c_ty->add_option("--architecture", ty.architecture)->capture_default_str();
    c_ty->add_option("--vocab", ty.vocab)->capture_default_str();
    c_ty->add_option("--hidden", ty.hidden)->capture_default_str();
    c_ty->add_option("--layers", ty.layers)->capture_default_str();
    c_ty->add_option("--heads", ty.heads)->capture_default_str();
    c_ty->add_option("--intermediate", ty.intermediate)->capture_default_str();
    c_ty->add_option("--max-len", ty.max_len)->capture_default_str();
    c_ty->add_option("--seed", ty.seed)->capture_default_str();

    PerturbArgs pt;
    auto* c_pt = app.add_subcommand("perturb-model", "Write a noisy copy of a model");
    c_pt->add_option("--model", pt.model)->required();
    c_pt->add_option("--out", pt.out)->required();
    c_pt->add_option("--model-id", pt.model_id);
    c_pt->add_option("--scale", pt.scale)->capture_default_str();
    c_pt->add_option("--seed", pt.seed)->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*c_bd) return run_build_dataset(bd);
        if (*c_em) return run_embed(em);
        if (*c_tr) return run_train_probe(tr);
        if (*c_sg) return run_significance(sg);
        if (*c_at) return run_attribute(at);
        if (*c_rp) return run_report(rp);
        if (*c_ty) return run_make_toy(ty);
        if (*c_pt) return run_perturb(pt);
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << " (record " << e.record_index() << ", field " << e.field() << ")\n";
        return exit_code(e);
    } catch (const TrainingError& e) {
        std::cerr << "error: " << e.what() << " (epoch " << e.epoch() << ")\n";
        return exit_code(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e);
    }
    return 0;
}
