// ragprobe: corpus augmentation + causal tracing + attention probes over a
// GPT-2-style decoder, driven by one JSON config with flag overrides.
//
// Exit codes: 0 success, 1 config error, 2 data error, 3 runtime error.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ragprobe/attention_probes.hpp"
#include "ragprobe/corpus.hpp"
#include "ragprobe/errors.hpp"
#include "ragprobe/model.hpp"
#include "ragprobe/reports.hpp"
#include "ragprobe/rng.hpp"
#include "ragprobe/tokenizer.hpp"
#include "ragprobe/tracing.hpp"
#include "ragprobe/weights_io.hpp"

namespace {

using nlohmann::json;
using namespace ragprobe;

struct Options {
    std::string config_path;
    std::string corpus_path;
    std::string out_dir;
    std::string weights_path;
    std::string model_config_path;
    std::string vocab_path;
    std::string merges_path;
    std::string tokenizer_type;
    std::string positions;
    std::string knock_layers; // "all", or comma-separated layer list
    std::string knock_source;
    std::string attribute_position;
    std::optional<uint64_t> tiny_seed;
    std::optional<uint64_t> seed;
    std::optional<double> sigma_mult;
    std::optional<int> noise_samples;
    std::optional<int> window;
    std::optional<int> knock_window;
    std::optional<int> segment_length;
    std::optional<int> n_segments;
    std::optional<bool> include_attribute;
    std::optional<int> threads;
    bool include_incorrect = false;
};

struct Experiment {
    uint64_t seed = 0;
    std::string corpus_path;
    std::string out_dir;
    int threads = 1;
    bool include_incorrect = false;

    // model: weights file + config JSON, or a seeded tiny model
    std::string weights_path;
    std::optional<uint64_t> tiny_seed;
    ModelConfig model_config;
    bool vocab_auto = false; // tiny mode with vocab sized by the tokenizer

    std::string tokenizer_type = "whitespace";
    std::string vocab_path;
    std::string merges_path;

    TraceConfig trace;
    ContextSpec context;

    KnockSource knock_source = KnockSource::subject_span;
    std::vector<int> knock_explicit_layers;
    bool knock_all_layers = true;
    int knock_window = 0; // >0 adds a sliding-window sweep

    json echo; // full resolved config, embedded in outputs
};

ModelConfig model_config_from_json(const json& j, bool tiny_defaults) {
    ModelConfig c;
    if (tiny_defaults) {
        c.n_layers = 2;
        c.n_heads = 4;
        c.d_model = 64;
        c.d_head = 16;
        c.d_mlp = 256;
        c.vocab_size = 0; // sized by the tokenizer
        c.max_seq_len = 128;
    }
    if (j.contains("n_layers")) c.n_layers = j["n_layers"].get<int>();
    if (j.contains("n_heads")) c.n_heads = j["n_heads"].get<int>();
    if (j.contains("d_model")) c.d_model = j["d_model"].get<int>();
    if (j.contains("d_head")) c.d_head = j["d_head"].get<int>();
    else if (j.contains("d_model") || tiny_defaults) c.d_head = c.d_model / std::max(1, c.n_heads);
    if (j.contains("d_mlp")) c.d_mlp = j["d_mlp"].get<int>();
    else if (j.contains("d_model") || tiny_defaults) c.d_mlp = 4 * c.d_model;
    if (j.contains("vocab_size")) c.vocab_size = j["vocab_size"].get<int>();
    if (j.contains("max_seq_len")) c.max_seq_len = j["max_seq_len"].get<int>();
    if (j.contains("ln_epsilon")) c.ln_epsilon = j["ln_epsilon"].get<float>();
    if (j.contains("tied_unembed")) c.tied_unembed = j["tied_unembed"].get<bool>();
    return c;
}

json model_config_to_json(const ModelConfig& c) {
    return json{{"n_layers", c.n_layers},   {"n_heads", c.n_heads},
                {"d_model", c.d_model},     {"d_head", c.d_head},
                {"d_mlp", c.d_mlp},         {"vocab_size", c.vocab_size},
                {"max_seq_len", c.max_seq_len}, {"ln_epsilon", c.ln_epsilon},
                {"tied_unembed", c.tied_unembed}};
}

json load_json_file(const std::string& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw ConfigError(std::string("cannot open ") + what + ": " + path);
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed JSON in ") + what + " " + path + ": " + e.what());
    }
}

Experiment resolve_experiment(const Options& opt) {
    json cfg = json::object();
    if (!opt.config_path.empty()) cfg = load_json_file(opt.config_path, "config file");

    Experiment ex;
    ex.seed = cfg.value("seed", 0ULL);
    if (opt.seed) ex.seed = *opt.seed;
    ex.corpus_path = cfg.value("corpus", std::string{});
    if (!opt.corpus_path.empty()) ex.corpus_path = opt.corpus_path;
    ex.out_dir = cfg.value("out_dir", std::string{});
    if (!opt.out_dir.empty()) ex.out_dir = opt.out_dir;
    ex.threads = cfg.value("threads", 1);
    if (opt.threads) ex.threads = *opt.threads;
    if (ex.threads < 1) throw ConfigError("threads must be >= 1");
    ex.include_incorrect = opt.include_incorrect || cfg.value("include_incorrect", false);

    // model: exactly one of weights / tiny
    const json model = cfg.value("model", json::object());
    const json tiny = cfg.value("tiny", json::object());
    ex.weights_path = model.value("weights", std::string{});
    if (!opt.weights_path.empty()) ex.weights_path = opt.weights_path;
    if (tiny.contains("seed")) ex.tiny_seed = tiny["seed"].get<uint64_t>();
    if (opt.tiny_seed) ex.tiny_seed = *opt.tiny_seed;

    const bool have_weights = !ex.weights_path.empty();
    const bool have_tiny = ex.tiny_seed.has_value() || !tiny.empty();
    if (have_weights == have_tiny) {
        throw ConfigError("exactly one of model.weights and tiny must be configured");
    }
    if (have_weights) {
        std::string mc_path = model.value("config", std::string{});
        if (!opt.model_config_path.empty()) mc_path = opt.model_config_path;
        if (mc_path.empty()) throw ConfigError("model.config (architecture JSON) is required with model.weights");
        ex.model_config = model_config_from_json(load_json_file(mc_path, "model config"), false);
    } else {
        ex.model_config = model_config_from_json(tiny, true);
        if (!ex.tiny_seed) {
            ex.tiny_seed = mix_seed({ex.seed, 0x6d6f64656c696e69ULL}); // model-init substream
        }
        ex.vocab_auto = ex.model_config.vocab_size == 0;
    }

    // tokenizer
    const json tok = have_weights ? model.value("tokenizer", json::object())
                                  : tiny.value("tokenizer", json::object());
    ex.tokenizer_type = tok.value("type", std::string(have_weights ? "bpe" : "whitespace"));
    if (!opt.tokenizer_type.empty()) ex.tokenizer_type = opt.tokenizer_type;
    ex.vocab_path = tok.value("vocab", std::string{});
    if (!opt.vocab_path.empty()) ex.vocab_path = opt.vocab_path;
    ex.merges_path = tok.value("merges", std::string{});
    if (!opt.merges_path.empty()) ex.merges_path = opt.merges_path;
    if (ex.tokenizer_type != "bpe" && ex.tokenizer_type != "whitespace") {
        throw ConfigError("tokenizer type must be bpe or whitespace, got " + ex.tokenizer_type);
    }
    if (ex.tokenizer_type == "bpe" && (ex.vocab_path.empty() || ex.merges_path.empty())) {
        throw ConfigError("bpe tokenizer needs vocab and merges paths");
    }

    // trace
    const json tr = cfg.value("trace", json::object());
    ex.trace.noise_sigma_multiplier = tr.value("sigma_mult", 3.0f);
    if (opt.sigma_mult) ex.trace.noise_sigma_multiplier = static_cast<float>(*opt.sigma_mult);
    ex.trace.n_noise_samples = tr.value("noise_samples", 10);
    if (opt.noise_samples) ex.trace.n_noise_samples = *opt.noise_samples;
    ex.trace.patch_window = tr.value("window", 1);
    if (opt.window) ex.trace.patch_window = *opt.window;
    std::string positions = tr.value("positions", std::string("all"));
    if (!opt.positions.empty()) positions = opt.positions;
    if (positions == "all") {
        ex.trace.positions = TracePositions::all;
    } else if (positions == "lst_lt") {
        ex.trace.positions = TracePositions::lst_and_lt_only;
    } else {
        throw ConfigError("trace positions must be all or lst_lt, got " + positions);
    }

    // context
    const json ctx = cfg.value("context", json::object());
    ex.context.segment_length = ctx.value("segment_length", 10);
    if (opt.segment_length) ex.context.segment_length = *opt.segment_length;
    ex.context.n_segments = ctx.value("n_segments", 2);
    if (opt.n_segments) ex.context.n_segments = *opt.n_segments;
    ex.context.include_attribute = ctx.value("include_attribute", true);
    if (opt.include_attribute) ex.context.include_attribute = *opt.include_attribute;
    std::string attr_pos = ctx.value("attribute_position", std::string("late"));
    if (!opt.attribute_position.empty()) attr_pos = opt.attribute_position;
    ex.context.attribute_position = attribute_position_from_string(attr_pos);
    ex.context.seed = mix_seed({ex.seed, 0x636f72707573ULL}); // corpus substream

    // knockout
    const json kn = cfg.value("knockout", json::object());
    std::string source = kn.value("source", std::string("subject_span"));
    if (!opt.knock_source.empty()) source = opt.knock_source;
    ex.knock_source = knock_source_from_string(source);
    ex.knock_window = kn.value("window", 0);
    if (opt.knock_window) ex.knock_window = *opt.knock_window;
    std::string layers = kn.value("layers", std::string("all"));
    if (!opt.knock_layers.empty()) layers = opt.knock_layers;
    if (layers == "all") {
        ex.knock_all_layers = true;
    } else {
        ex.knock_all_layers = false;
        std::string item;
        std::istringstream ss(layers);
        while (std::getline(ss, item, ',')) {
            if (item.empty()) continue;
            try {
                ex.knock_explicit_layers.push_back(std::stoi(item));
            } catch (const std::exception&) {
                throw ConfigError("bad --knock-layers entry: " + item);
            }
        }
        if (ex.knock_explicit_layers.empty()) throw ConfigError("empty --knock-layers list");
    }

    if (ex.corpus_path.empty()) throw ConfigError("corpus path is required (--corpus or config)");
    if (ex.out_dir.empty()) throw ConfigError("output directory is required (--out or config)");

    // threads deliberately left out: execution width cannot affect results,
    // so it lives in run_meta.json with the timestamp.
    ex.echo = json{
        {"seed", ex.seed},
        {"corpus", ex.corpus_path},
        {"include_incorrect", ex.include_incorrect},
        {"model",
         json{{"mode", have_weights ? "weights" : "tiny"},
              {"weights", ex.weights_path},
              {"tiny_seed", ex.tiny_seed ? json(*ex.tiny_seed) : json()},
              {"config", model_config_to_json(ex.model_config)},
              {"tokenizer", json{{"type", ex.tokenizer_type},
                                 {"vocab", ex.vocab_path},
                                 {"merges", ex.merges_path}}}}},
        {"trace",
         json{{"sigma_mult", ex.trace.noise_sigma_multiplier},
              {"noise_samples", ex.trace.n_noise_samples},
              {"window", ex.trace.patch_window},
              {"positions", positions}}},
        {"context",
         json{{"segment_length", ex.context.segment_length},
              {"n_segments", ex.context.n_segments},
              {"include_attribute", ex.context.include_attribute},
              {"attribute_position", attr_pos},
              {"seed", ex.context.seed}}},
        {"knockout", json{{"source", source}, {"layers", layers}, {"window", ex.knock_window}}},
    };
    return ex;
}

struct LoadedModel {
    ModelConfig config;
    WeightStore weights;
    std::unique_ptr<Tokenizer> tokenizer;
};

// Builds tokenizer + model. The whitespace vocabulary absorbs the template
// pools first, then the corpus in file order, so it is reproducible.
LoadedModel load_model(Experiment& ex, const std::vector<FactRecord>& records) {
    LoadedModel lm;
    if (ex.tokenizer_type == "bpe") {
        lm.tokenizer = std::make_unique<ByteBpeTokenizer>(
            ByteBpeTokenizer::load(ex.vocab_path, ex.merges_path));
    } else {
        auto ws = std::make_unique<WhitespaceTokenizer>();
        if (!ex.vocab_path.empty()) {
            *ws = WhitespaceTokenizer::load(ex.vocab_path);
        } else {
            for (const std::string& s : context_filler_pool()) ws->absorb(s);
            for (const std::string& s : relation_filler_pool()) ws->absorb(s);
            for (const FactRecord& r : records) {
                ws->absorb(r.prompt);
                ws->absorb(r.subject);
                ws->absorb(r.attribute + ".");
                ws->absorb(r.attribute);
            }
        }
        lm.tokenizer = std::move(ws);
    }

    if (!ex.weights_path.empty()) {
        lm.config = ex.model_config;
        lm.weights = load_weights(ex.weights_path, lm.config);
    } else {
        lm.config = ex.model_config;
        if (ex.vocab_auto) lm.config.vocab_size = std::max(2, lm.tokenizer->vocab_size());
        lm.weights = random_model(lm.config, *ex.tiny_seed);
        ex.echo["model"]["config"] = model_config_to_json(lm.config);
    }
    if (lm.tokenizer->vocab_size() > lm.config.vocab_size) {
        throw ConfigError("tokenizer vocabulary (" + std::to_string(lm.tokenizer->vocab_size()) +
                          ") exceeds model vocab_size (" + std::to_string(lm.config.vocab_size) + ")");
    }
    return lm;
}

void write_run_meta(const Experiment& ex, const std::string& command) {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    char buf[64];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    json meta{{"command", command},
              {"timestamp", buf},
              {"out_dir", ex.out_dir},
              {"threads", ex.threads}};
    write_text_file((std::filesystem::path(ex.out_dir) / "run_meta.json").string(),
                    meta.dump(2) + "\n");
}

struct ManifestData {
    json config_echo;
    std::vector<PromptInstance> instances;
};

void write_manifest(const std::string& path, const ManifestData& data) {
    std::string out = json{{"config", data.config_echo}}.dump() + "\n";
    for (const PromptInstance& inst : data.instances) {
        out += instance_to_json(inst).dump() + "\n";
    }
    write_text_file(path, out);
}

ManifestData read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest (run augment first): " + path);
    ManifestData data;
    std::string line;
    int line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError("manifest line " + std::to_string(line_number) + ": " + e.what());
        }
        if (j.contains("config") && !j.contains("instance_id")) {
            data.config_echo = j["config"];
            continue;
        }
        try {
            data.instances.push_back(instance_from_json(j));
        } catch (const json::exception& e) {
            throw DataError("manifest line " + std::to_string(line_number) + ": " + e.what());
        }
    }
    return data;
}

std::filesystem::path out_path(const Experiment& ex, const std::string& name) {
    return std::filesystem::path(ex.out_dir) / name;
}

// --- augment ----------------------------------------------------------------

int cmd_augment(Experiment& ex) {
    const std::vector<FactRecord> records = load_knowns(ex.corpus_path);
    LoadedModel lm = load_model(ex, records);
    std::filesystem::create_directories(ex.out_dir);

    ManifestData manifest;
    uint64_t next_id = 0;
    for (size_t i = 0; i < records.size(); ++i) {
        const FactRecord& rec = records[i];
        PromptInstance vanilla = build_instance(rec, std::nullopt, *lm.tokenizer, lm.config.max_seq_len);
        vanilla.fact_index = static_cast<int>(i);
        vanilla.instance_id = next_id++;
        manifest.instances.push_back(std::move(vanilla));

        const ContextBlock ctx = synthesize_context(rec, ex.context, *lm.tokenizer);
        PromptInstance rag = build_instance(rec, ctx, *lm.tokenizer, lm.config.max_seq_len);
        rag.fact_index = static_cast<int>(i);
        rag.instance_id = next_id++;
        manifest.instances.push_back(std::move(rag));
    }
    manifest.config_echo = ex.echo;
    write_manifest(out_path(ex, "manifest.jsonl").string(), manifest);

    if (ex.tokenizer_type == "whitespace") {
        auto* ws = dynamic_cast<WhitespaceTokenizer*>(lm.tokenizer.get());
        if (ws) ws->save(out_path(ex, "whitespace_vocab.json").string());
    }
    write_run_meta(ex, "augment");
    std::cout << "augment: " << records.size() << " facts -> " << manifest.instances.size()
              << " instances (" << out_path(ex, "manifest.jsonl").string() << ")\n";
    return 0;
}

// --- trace -------------------------------------------------------------------

json lst_ratio_summary(const EffectGrid& vanilla, const EffectGrid& rag) {
    auto column = [](const EffectGrid& g, int bucket) {
        std::vector<double> col;
        if (!g.has(bucket)) return col;
        for (int l = 0; l < g.n_layers; ++l) col.push_back(g.at(l, bucket));
        return col;
    };
    auto mean = [](const std::vector<double>& v) {
        double acc = 0.0;
        for (double x : v) acc += x;
        return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
    };
    auto peak = [](const std::vector<double>& v) {
        double m = -std::numeric_limits<double>::infinity();
        for (double x : v) m = std::max(m, x);
        return v.empty() ? 0.0 : m;
    };
    const std::vector<double> lv = column(vanilla, kLastSubject);
    const std::vector<double> lr = column(rag, kLastSubject);
    json out;
    auto ratio = [](double num, double den) -> json {
        if (den > 1e-12 || den < -1e-12) return num / den;
        return nullptr; // undefined marker
    };
    out["lst_aie_vanilla_mean_over_layers"] = lv.empty() ? json() : json(mean(lv));
    out["lst_aie_rag_mean_over_layers"] = lr.empty() ? json() : json(mean(lr));
    out["lst_aie_vanilla_peak_layer"] = lv.empty() ? json() : json(peak(lv));
    out["lst_aie_rag_peak_layer"] = lr.empty() ? json() : json(peak(lr));
    out["lst_ratio_mean_over_layers"] =
        (lv.empty() || lr.empty()) ? json() : ratio(mean(lv), mean(lr));
    out["lst_ratio_peak_layer"] = (lv.empty() || lr.empty()) ? json() : ratio(peak(lv), peak(lr));
    return out;
}

int cmd_trace(Experiment& ex) {
    const ManifestData manifest = read_manifest(out_path(ex, "manifest.jsonl").string());
    const std::vector<FactRecord> records = load_knowns(ex.corpus_path);
    LoadedModel lm = load_model(ex, records);
    std::filesystem::create_directories(ex.out_dir);

    const uint64_t noise_seed = mix_seed({ex.seed, 0x6e6f697365737464ULL}); // noise substream
    Tracer tracer(lm.weights, lm.config, ex.trace, noise_seed);

    std::vector<const PromptInstance*> vanilla, rag;
    for (const PromptInstance& inst : manifest.instances) {
        (inst.setting == "rag" ? rag : vanilla).push_back(&inst);
    }

    json failures = json::array();
    json excluded = json::array();
    std::vector<LongRow> long_rows;

    auto run_setting = [&](const std::vector<const PromptInstance*>& list,
                           const std::string& setting) -> std::optional<EffectGrid> {
        std::vector<EffectGrid> grids;
        for (const PromptInstance* inst : list) {
            try {
                if (!ex.include_incorrect && !tracer.answers_correctly(*inst)) {
                    excluded.push_back(inst->instance_id);
                    continue;
                }
                EffectGrid grid = tracer.trace_grid(*inst, ex.threads);
                json j;
                j["config"] = ex.echo;
                j["instance_id"] = inst->instance_id;
                j["fact_index"] = inst->fact_index;
                j["setting"] = setting;
                j["grid"] = grid_json(grid);
                write_text_file(
                    out_path(ex, "trace_instance_" + std::to_string(inst->instance_id) + ".json")
                        .string(),
                    j.dump(2) + "\n");
                grids.push_back(std::move(grid));
            } catch (const std::exception& e) {
                failures.push_back({{"instance_id", inst->instance_id}, {"error", e.what()}});
            }
        }
        if (grids.empty()) return std::nullopt;
        EffectGrid agg = aggregate_grids(grids);
        write_text_file(out_path(ex, "aie_" + setting + ".csv").string(), grid_csv(agg, ex.echo));
        json aj;
        aj["config"] = ex.echo;
        aj["setting"] = setting;
        aj["grid"] = grid_json(agg);
        write_text_file(out_path(ex, "aie_" + setting + ".json").string(), aj.dump(2) + "\n");
        for (int l = 0; l < agg.n_layers; ++l) {
            for (int b = 0; b < kNumBuckets; ++b) {
                if (agg.has(b)) long_rows.push_back({l, bucket_label(b), agg.at(l, b), setting});
            }
        }
        return agg;
    };

    const std::optional<EffectGrid> agg_vanilla = run_setting(vanilla, "vanilla");
    const std::optional<EffectGrid> agg_rag = run_setting(rag, "rag");

    write_text_file(out_path(ex, "trace_long.csv").string(), long_csv(long_rows, ex.echo));

    json summary;
    summary["config"] = ex.echo;
    summary["n_instances"] = manifest.instances.size();
    summary["n_vanilla"] = vanilla.size();
    summary["n_rag"] = rag.size();
    summary["excluded_incorrect"] = excluded;
    if (agg_vanilla && agg_rag) {
        summary["lst"] = lst_ratio_summary(*agg_vanilla, *agg_rag);
    } else {
        summary["lst"] = nullptr;
    }
    if (agg_vanilla) summary["base_probs_vanilla"] = grid_json(*agg_vanilla)["base_probs"];
    if (agg_rag) summary["base_probs_rag"] = grid_json(*agg_rag)["base_probs"];
    write_text_file(out_path(ex, "trace_summary.json").string(), summary.dump(2) + "\n");
    write_run_meta(ex, "trace");

    if (!failures.empty()) {
        write_text_file(out_path(ex, "failures.json").string(), failures.dump(2) + "\n");
        std::cerr << "trace: " << failures.size() << " instance(s) failed; see failures.json\n";
        return 3;
    }
    std::cout << "trace: wrote grids for " << (manifest.instances.size() - excluded.size())
              << " instances to " << ex.out_dir << "\n";
    return 0;
}

// --- contrib -----------------------------------------------------------------

ContributionTable contribution_table(const std::vector<const PromptInstance*>& list,
                                     const WeightStore& weights, const ModelConfig& config,
                                     int n_threads) {
    ContributionTable table;
    table.n_layers = config.n_layers;
    table.columns = {"subject_mean", "subject_max", "attribute_mean",
                     "attribute_max", "other_mean", "other_max"};
    table.values.assign(static_cast<size_t>(config.n_layers),
                        std::vector<double>(table.columns.size(), 0.0));
    table.counts.assign(table.columns.size(), 0);
    if (list.empty()) return table;

    struct PerInstance {
        std::vector<BucketNorms> subject, attribute, other;
        bool has_attr = false;
    };
    std::vector<PerInstance> rows(list.size());
    parallel_for(static_cast<int>(list.size()), n_threads, [&](int i) {
        const PromptInstance& inst = *list[static_cast<size_t>(i)];
        const ContributionProfile profile = contributions(inst, weights, config);
        std::vector<int> subject, attribute, other;
        for (int p = inst.subject_token_span.first; p <= inst.subject_token_span.last; ++p) {
            subject.push_back(p);
        }
        if (inst.attribute_token_span.has_value()) {
            for (int p = inst.attribute_token_span->first; p <= inst.attribute_token_span->last; ++p) {
                attribute.push_back(p);
            }
        }
        for (int p = 0; p < profile.seq_len; ++p) {
            const bool in_subject = p >= inst.subject_token_span.first && p <= inst.subject_token_span.last;
            const bool in_attr = inst.attribute_token_span.has_value() &&
                                 p >= inst.attribute_token_span->first &&
                                 p <= inst.attribute_token_span->last;
            if (!in_subject && !in_attr) other.push_back(p);
        }
        PerInstance& row = rows[static_cast<size_t>(i)];
        row.subject = reduce_bucket_per_layer(profile, subject);
        row.attribute = reduce_bucket_per_layer(profile, attribute);
        row.other = reduce_bucket_per_layer(profile, other);
        row.has_attr = !attribute.empty();
    });

    int n_attr = 0;
    for (const PerInstance& row : rows) {
        if (row.has_attr) ++n_attr;
    }
    const int n = static_cast<int>(rows.size());
    table.counts = {n, n, n_attr, n_attr, n, n};
    for (int l = 0; l < config.n_layers; ++l) {
        double s_mean = 0, s_max = 0, a_mean = 0, a_max = 0, o_mean = 0, o_max = 0;
        for (const PerInstance& row : rows) {
            s_mean += row.subject[static_cast<size_t>(l)].mean;
            s_max += row.subject[static_cast<size_t>(l)].max;
            o_mean += row.other[static_cast<size_t>(l)].mean;
            o_max += row.other[static_cast<size_t>(l)].max;
            if (row.has_attr) {
                a_mean += row.attribute[static_cast<size_t>(l)].mean;
                a_max += row.attribute[static_cast<size_t>(l)].max;
            }
        }
        auto& out = table.values[static_cast<size_t>(l)];
        out[0] = s_mean / n;
        out[1] = s_max / n;
        out[2] = n_attr ? a_mean / n_attr : 0.0;
        out[3] = n_attr ? a_max / n_attr : 0.0;
        out[4] = o_mean / n;
        out[5] = o_max / n;
    }
    return table;
}

int run_probe_command(Experiment& ex, bool with_contrib, bool with_knockout, const char* name) {
    const ManifestData manifest = read_manifest(out_path(ex, "manifest.jsonl").string());
    const std::vector<FactRecord> records = load_knowns(ex.corpus_path);
    LoadedModel lm = load_model(ex, records);
    std::filesystem::create_directories(ex.out_dir);

    std::vector<const PromptInstance*> vanilla_p, rag_p;
    std::vector<PromptInstance> vanilla, rag;
    for (const PromptInstance& inst : manifest.instances) {
        if (inst.setting == "rag") {
            rag.push_back(inst);
        } else {
            vanilla.push_back(inst);
        }
    }
    for (const PromptInstance& i : vanilla) vanilla_p.push_back(&i);
    for (const PromptInstance& i : rag) rag_p.push_back(&i);

    if (with_contrib) {
        if (!vanilla.empty()) {
            write_text_file(out_path(ex, "contrib_vanilla.csv").string(),
                            contributions_csv(
                                contribution_table(vanilla_p, lm.weights, lm.config, ex.threads),
                                ex.echo));
        }
        if (!rag.empty()) {
            write_text_file(out_path(ex, "contrib_rag.csv").string(),
                            contributions_csv(
                                contribution_table(rag_p, lm.weights, lm.config, ex.threads),
                                ex.echo));
        }
    }

    if (with_knockout) {
        KnockoutSpec spec;
        spec.source = ex.knock_source;
        auto sweep_setting = [&](const std::vector<PromptInstance>& list, const std::string& setting) {
            if (list.empty()) return;
            KnockoutSweep sweep;
            if (ex.knock_window > 0) {
                sweep = knockout_sweep(list, lm.weights, lm.config, spec, ex.knock_window, ex.threads);
            } else if (ex.knock_all_layers) {
                sweep = knockout_sweep(list, lm.weights, lm.config, spec, lm.config.n_layers,
                                       ex.threads);
                sweep.windows.clear();
            } else {
                KnockoutSpec explicit_spec = spec;
                explicit_spec.layers = ex.knock_explicit_layers;
                KnockoutSweep single;
                KnockoutWindow win;
                win.first_layer = ex.knock_explicit_layers.front();
                win.width = static_cast<int>(ex.knock_explicit_layers.size());
                for (size_t li = 0; li < ex.knock_explicit_layers.size(); ++li) {
                    if (li) win.label += "|";
                    win.label += std::to_string(ex.knock_explicit_layers[li]);
                }
                win.drops.assign(list.size(), 0.0);
                for (size_t i = 0; i < list.size(); ++i) {
                    const KnockoutResult r = knockout_run(list[i], lm.weights, lm.config, explicit_spec);
                    win.drops[i] = r.relative_drop;
                    if (r.drop_defined) {
                        win.mean_drop += r.relative_drop;
                        ++win.defined_count;
                    }
                }
                if (win.defined_count) win.mean_drop /= win.defined_count;
                single.all_layers = win;
                sweep = std::move(single);
            }
            write_text_file(out_path(ex, "knockout_" + setting + ".csv").string(),
                            knockout_csv(sweep, setting, ex.echo));
            json detail;
            detail["config"] = ex.echo;
            detail["setting"] = setting;
            detail["instance_ids"] = json::array();
            for (const PromptInstance& inst : list) detail["instance_ids"].push_back(inst.instance_id);
            auto window_json = [](const KnockoutWindow& w) {
                return json{{"first_layer", w.first_layer},
                            {"width", w.width},
                            {"label", w.label.empty() ? json() : json(w.label)},
                            {"mean_relative_drop", w.mean_drop},
                            {"defined_count", w.defined_count},
                            {"relative_drops", w.drops}};
            };
            detail["windows"] = json::array();
            for (const KnockoutWindow& w : sweep.windows) detail["windows"].push_back(window_json(w));
            detail["all_layers"] = window_json(sweep.all_layers);
            write_text_file(out_path(ex, "knockout_" + setting + ".json").string(),
                            detail.dump(2) + "\n");
        };
        sweep_setting(vanilla, "vanilla");
        sweep_setting(rag, "rag");
    }

    json report;
    report["config"] = ex.echo;
    if (!vanilla.empty() && !rag.empty()) {
        const ComparisonReport cmp =
            compare_settings(vanilla, rag, lm.weights, lm.config, ex.include_incorrect, ex.threads);
        report["comparison"] = comparison_json(cmp);
    } else {
        report["comparison"] = nullptr;
        report["notice"] = "comparison skipped: need both vanilla and rag instances";
        std::cerr << name << ": comparison skipped (one setting is empty)\n";
    }
    write_text_file(out_path(ex, std::string(name) + "_report.json").string(), report.dump(2) + "\n");
    write_run_meta(ex, name);
    std::cout << name << ": wrote outputs to " << ex.out_dir << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"instrumented decoder probing: corpus augmentation, causal tracing, "
                 "attention contributions and knockouts"};
    app.require_subcommand(1);

    Options opt;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config_path, "JSON config file");
        sub->add_option("--model", opt.weights_path, "weight container path");
        sub->add_option("--model-config", opt.model_config_path, "architecture JSON for --model");
        sub->add_option("--tiny-seed", opt.tiny_seed, "seeded random tiny model instead of weights");
        sub->add_option("--corpus", opt.corpus_path, "fact JSONL path");
        sub->add_option("--out", opt.out_dir, "output directory");
        sub->add_option("--tokenizer", opt.tokenizer_type, "bpe or whitespace");
        sub->add_option("--vocab", opt.vocab_path, "vocabulary JSON path");
        sub->add_option("--merges", opt.merges_path, "BPE merges path");
        sub->add_option("--sigma-mult", opt.sigma_mult, "noise sigma multiplier");
        sub->add_option("--noise-samples", opt.noise_samples, "noise samples per instance");
        sub->add_option("--window", opt.window, "patch window (odd layer count)");
        sub->add_option("--positions", opt.positions, "trace positions: all or lst_lt");
        sub->add_option("--knock-layers", opt.knock_layers, "knockout layers: all or list 0,1,...");
        sub->add_option("--knock-source", opt.knock_source,
                        "knockout sources: subject_span|attribute_span");
        sub->add_option("--knock-window", opt.knock_window, "knockout sliding window width");
        sub->add_option("--segment-length", opt.segment_length, "context segment token length");
        sub->add_option("--n-segments", opt.n_segments, "context segment count");
        sub->add_option("--include-attribute", opt.include_attribute,
                        "include the attribute sentence in contexts");
        sub->add_option("--attribute-position", opt.attribute_position, "early|middle|late");
        sub->add_option("--seed", opt.seed, "global seed");
        sub->add_option("--threads", opt.threads, "worker threads");
        sub->add_flag("--include-incorrect", opt.include_incorrect,
                      "keep instances the model answers incorrectly");
    };

    CLI::App* augment = app.add_subcommand("augment", "build the instance manifest (vanilla + RAG)");
    CLI::App* trace = app.add_subcommand("trace", "causal tracing grids and AIE summaries");
    CLI::App* contrib = app.add_subcommand("contrib", "attention contribution profiles");
    CLI::App* knockout = app.add_subcommand("knockout", "attention knockout sweeps");
    for (CLI::App* sub : {augment, trace, contrib, knockout}) add_common(sub);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        Experiment ex = resolve_experiment(opt);
        if (augment->parsed()) return cmd_augment(ex);
        if (trace->parsed()) return cmd_trace(ex);
        if (contrib->parsed()) return run_probe_command(ex, true, false, "contrib");
        if (knockout->parsed()) return run_probe_command(ex, false, true, "knockout");
        return 1;
    } catch (const ragprobe::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const ragprobe::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
