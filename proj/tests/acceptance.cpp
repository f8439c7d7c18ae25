// Acceptance suite: nine criteria, one pass/fail line each.
//
// A1/A2 run against seeded tiny models and the naive reference; A3-A6 check
// the tracing and knockout contracts end to end; A7/A8 probe the committed
// pretrained checkpoint for the direction of the vanilla-vs-RAG effects;
// A9 checks corpus augmentation determinism at full corpus size.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ragprobe/attention_probes.hpp"
#include "ragprobe/corpus.hpp"
#include "ragprobe/model.hpp"
#include "ragprobe/rng.hpp"
#include "ragprobe/tokenizer.hpp"
#include "ragprobe/tracing.hpp"
#include "ragprobe/weights_io.hpp"
#include "reference_model.hpp"

#ifndef RAGPROBE_CLI_PATH
#error "RAGPROBE_CLI_PATH must be defined"
#endif
#ifndef RAGPROBE_ASSETS_DIR
#error "RAGPROBE_ASSETS_DIR must be defined"
#endif

namespace fs = std::filesystem;
using namespace ragprobe;
using nlohmann::json;

namespace {

int failures = 0;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void report(const std::string& id, bool pass, double elapsed, const std::string& detail) {
    std::printf("%s: %s (%.1f s) — %s\n", id.c_str(), pass ? "PASS" : "FAIL", elapsed,
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

ModelConfig tiny_config(int n_layers, int d_model) {
    ModelConfig c;
    c.n_layers = n_layers;
    c.n_heads = 4;
    c.d_model = d_model;
    c.d_head = d_model / 4;
    c.d_mlp = d_model * 4;
    c.vocab_size = 128;
    c.max_seq_len = 40;
    return c;
}

PromptInstance synthetic_instance(std::vector<int> tokens, int subj_first, int subj_last,
                                  uint64_t id) {
    PromptInstance inst;
    inst.instance_id = id;
    inst.fact_index = static_cast<int>(id);
    inst.setting = "vanilla";
    inst.token_ids = std::move(tokens);
    inst.subject_token_span = {subj_first, subj_last};
    inst.last_token_index = static_cast<int>(inst.token_ids.size()) - 1;
    inst.answer_first_token = 3;
    return inst;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(RAGPROBE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return status < 0 ? -1 : WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return "<missing:" + path.string() + ">";
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// --- A1 / A2 ------------------------------------------------------------------

void a1_a2() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst_logit = 0.0;
    double worst_decomp = 0.0;
    int n_models = 0;
    for (int n_layers : {1, 2, 4}) {
        for (int d_model : {32, 64}) {
            for (uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL}) {
                if (n_models >= 20 && seed == 4ULL) continue;
                const ModelConfig c = tiny_config(n_layers, d_model);
                const WeightStore w = random_model(c, seed * 1000 + n_models);
                Rng rng(mix_seed({seed, static_cast<uint64_t>(n_models)}));
                const int len = 4 + static_cast<int>(rng.next_below(29)); // <= 32 tokens
                std::vector<int> tokens(static_cast<size_t>(len));
                for (int& t : tokens) t = static_cast<int>(rng.next_below(c.vocab_size));

                CaptureFlags cap;
                cap.contributions = true;
                const RunRecord rec = forward(tokens, w, c, {}, cap);
                const testref::RefResult ref = testref::reference_forward(tokens, w, c);
                for (int64_t i = 0; i < rec.logits.numel(); ++i) {
                    worst_logit = std::max(worst_logit,
                                           std::abs(rec.logits.at(i) -
                                                    ref.logits[static_cast<size_t>(i)]));
                }
                const int target = len - 1;
                for (int l = 0; l < c.n_layers; ++l) {
                    const Tensor& b_o = w.tensor("layer" + std::to_string(l) + ".attn.b_O");
                    double err = 0.0, norm = 0.0;
                    for (int j = 0; j < c.d_model; ++j) {
                        double sum = b_o.at(j);
                        for (int src = 0; src < len; ++src) {
                            sum += rec.contributions[static_cast<size_t>(l)].at(src, j);
                        }
                        const double expect =
                            ref.attn_block_out[static_cast<size_t>(l)][static_cast<size_t>(target)]
                                              [static_cast<size_t>(j)];
                        err += (sum - expect) * (sum - expect);
                        norm += expect * expect;
                    }
                    worst_decomp = std::max(worst_decomp,
                                            std::sqrt(err) / std::max(std::sqrt(norm), 1e-30));
                }
                ++n_models;
            }
        }
    }
    const double elapsed = seconds_since(t0);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "max |dlogit| %.2e over %d models", worst_logit, n_models);
    report("A1 (oracle equivalence)", n_models >= 20 && worst_logit < 1e-5 && elapsed < 10.0,
           elapsed, buf);
    std::snprintf(buf, sizeof(buf), "max relative decomposition error %.2e", worst_decomp);
    report("A2 (decomposition)", worst_decomp < 1e-5 && elapsed < 10.0, elapsed, buf);
}

// --- A3 -------------------------------------------------------------------------

void a3() {
    const auto t0 = std::chrono::steady_clock::now();
    const ModelConfig c = tiny_config(2, 32);
    const WeightStore w = random_model(c, 555);
    TraceConfig tc;
    tc.noise_sigma_multiplier = 0.0f;
    tc.n_noise_samples = 2;
    const Tracer tracer(w, c, tc, 1);
    double worst = 0.0;
    for (uint64_t i = 0; i < 5; ++i) {
        const PromptInstance inst =
            synthetic_instance({static_cast<int>(2 + i), 5, 9, static_cast<int>(4 + i), 11, 6}, 1,
                               2, i);
        const EffectGrid grid = tracer.trace_grid(inst, 2);
        for (double v : grid.values) worst = std::max(worst, std::abs(v));
    }
    const double elapsed = seconds_since(t0);
    char buf[120];
    std::snprintf(buf, sizeof(buf), "max |IE| %.2e with zero sigma over 5 instances", worst);
    report("A3 (null corruption)", worst <= 1e-7 && elapsed < 30.0, elapsed, buf);
}

// --- A4 -------------------------------------------------------------------------

void a4() {
    const auto t0 = std::chrono::steady_clock::now();
    const ModelConfig c = tiny_config(2, 64);
    const WeightStore w = random_model(c, 777);
    TraceConfig tc;
    tc.n_noise_samples = 20;
    const Tracer tracer(w, c, tc, 9);
    const PromptInstance inst = synthetic_instance({7, 3, 9, 12, 4, 8}, 1, 3, 0);
    const double p_clean = answer_prob(tracer.clean_run(inst), inst.answer_first_token);
    double worst = 0.0;
    for (int s = 0; s < 20; ++s) {
        const double restored =
            tracer.restored_run(inst, s, c.n_layers - 1, inst.last_token_index);
        worst = std::max(worst, std::abs(restored - p_clean));
    }
    const double elapsed = seconds_since(t0);
    char buf[120];
    std::snprintf(buf, sizeof(buf), "max |restored - p_clean| %.2e over 20 samples", worst);
    report("A4 (restoration completeness)", worst < 1e-6 && elapsed < 30.0, elapsed, buf);
}

// --- A5 -------------------------------------------------------------------------

void a5() {
    const auto t0 = std::chrono::steady_clock::now();
    const ModelConfig c = tiny_config(2, 32);
    const WeightStore w = random_model(c, 888);
    const std::vector<int> tokens{4, 8, 15, 16, 23, 42};
    CaptureFlags cap;
    cap.hidden = true;
    cap.attn = true;
    cap.contributions = true;

    const RunRecord base = forward(tokens, w, c, {}, cap);
    InterventionPlan non_causal;
    non_causal.knockout_ops.push_back({{0, 1}, 2, {4, 5}});
    const RunRecord knocked = forward(tokens, w, c, non_causal, cap);
    bool noop = base.logits.data == knocked.logits.data;
    for (int l = 0; l < c.n_layers; ++l) {
        noop = noop && base.hidden[static_cast<size_t>(l)].data ==
                           knocked.hidden[static_cast<size_t>(l)].data;
        noop = noop &&
               base.attn[static_cast<size_t>(l)].data == knocked.attn[static_cast<size_t>(l)].data;
    }

    InterventionPlan full;
    const int last = static_cast<int>(tokens.size()) - 1;
    full.knockout_ops.push_back({{1}, last, {0, 1, 2, 3, 4, 5}});
    const RunRecord dead = forward(tokens, w, c, full, cap);
    bool finite = true;
    for (float v : dead.logits.data) finite = finite && std::isfinite(v);
    bool zero_out = true;
    for (int head = 0; head < c.n_heads; ++head) {
        for (int s = 0; s <= last; ++s) zero_out = zero_out && dead.attn_at(1, head, last, s) == 0.0f;
    }
    for (int src = 0; src < dead.seq_len; ++src) {
        for (int j = 0; j < c.d_model; ++j) {
            zero_out = zero_out && dead.contributions[1].at(src, j) == 0.0f;
        }
    }
    const double elapsed = seconds_since(t0);
    report("A5 (knockout soundness)", noop && finite && zero_out && elapsed < 10.0, elapsed,
           std::string("non-causal no-op=") + (noop ? "yes" : "NO") +
               ", full knockout finite=" + (finite ? "yes" : "NO") +
               ", zero attention output=" + (zero_out ? "yes" : "NO"));
}

// --- A6 -------------------------------------------------------------------------

void a6() {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = fs::temp_directory_path() / "rp_acceptance_a6";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const fs::path facts = dir / "facts.jsonl";
    {
        std::ofstream out(facts);
        out << R"({"prompt":"The capital city of Velmora is","subject":"Velmora","attribute":"Lepstone"})"
            << "\n"
            << R"({"prompt":"The official language of Tarnwick is","subject":"Tarnwick","attribute":"Marrowfen"})"
            << "\n"
            << R"({"prompt":"The local currency of Omberly is","subject":"Omberly","attribute":"Vexbridge"})"
            << "\n";
    }
    const std::string common = "--tiny-seed 7 --corpus " + facts.string() + " --out " +
                               (dir / "out").string() + " --seed 5 --noise-samples 2" +
                               " --include-incorrect";
    bool ok = run_cli("augment " + common) == 0;
    ok = ok && run_cli("trace " + common + " --threads 1") == 0;
    const std::string serial_vanilla = slurp(dir / "out" / "aie_vanilla.csv");
    const std::string serial_rag = slurp(dir / "out" / "aie_rag.csv");
    const std::string serial_long = slurp(dir / "out" / "trace_long.csv");
    ok = ok && run_cli("trace " + common + " --threads 8") == 0;
    const bool identical = slurp(dir / "out" / "aie_vanilla.csv") == serial_vanilla &&
                           slurp(dir / "out" / "aie_rag.csv") == serial_rag &&
                           slurp(dir / "out" / "trace_long.csv") == serial_long;
    fs::remove_all(dir);
    const double elapsed = seconds_since(t0);
    report("A6 (schedule independence)", ok && identical && elapsed < 60.0, elapsed,
           identical ? "serial and 8-thread CSVs byte-identical"
                     : "CSV outputs differ between schedules");
}

// --- A7 / A8 ---------------------------------------------------------------------

struct CheckpointRun {
    bool loaded = false;
    std::string error;
    ModelConfig config;
    WeightStore weights;
    std::vector<PromptInstance> vanilla, rag; // paired by index, both-correct facts only
    int n_facts_total = 0;
};

CheckpointRun load_checkpoint_and_pairs() {
    CheckpointRun run;
    const fs::path assets = fs::path(RAGPROBE_ASSETS_DIR) / "pretrained";
    try {
        json cj;
        {
            std::ifstream in(assets / "config.json");
            if (!in) throw DataError("missing " + (assets / "config.json").string());
            in >> cj;
        }
        run.config.n_layers = cj.at("n_layers").get<int>();
        run.config.n_heads = cj.at("n_heads").get<int>();
        run.config.d_model = cj.at("d_model").get<int>();
        run.config.d_head = cj.at("d_head").get<int>();
        run.config.d_mlp = cj.at("d_mlp").get<int>();
        run.config.vocab_size = cj.at("vocab_size").get<int>();
        run.config.max_seq_len = cj.at("max_seq_len").get<int>();
        run.config.ln_epsilon = cj.at("ln_epsilon").get<float>();
        run.config.tied_unembed = cj.at("tied_unembed").get<bool>();
        run.weights = load_weights((assets / "model.bin").string(), run.config);

        const ByteBpeTokenizer tokenizer = ByteBpeTokenizer::load(
            (assets / "vocab.json").string(), (assets / "merges.txt").string());
        const std::vector<FactRecord> records = load_knowns((assets / "facts.jsonl").string());
        run.n_facts_total = static_cast<int>(records.size());

        ContextSpec spec;
        spec.include_attribute = true;
        spec.attribute_position = AttributePosition::middle;
        spec.n_segments = 2;
        spec.segment_length = 9;
        spec.seed = mix_seed({424242ULL, 0x636f72707573ULL});

        std::vector<PromptInstance> vanilla_all, rag_all;
        for (size_t i = 0; i < records.size(); ++i) {
            PromptInstance v = build_instance(records[i], std::nullopt, tokenizer,
                                              run.config.max_seq_len);
            v.fact_index = static_cast<int>(i);
            v.instance_id = 2 * i;
            PromptInstance r = build_instance(records[i],
                                              synthesize_context(records[i], spec, tokenizer),
                                              tokenizer, run.config.max_seq_len);
            r.fact_index = static_cast<int>(i);
            r.instance_id = 2 * i + 1;
            vanilla_all.push_back(std::move(v));
            rag_all.push_back(std::move(r));
        }

        auto top1 = [&](const PromptInstance& inst) {
            const RunRecord rec = forward(inst.token_ids, run.weights, run.config);
            int best = 0;
            for (int64_t t = 1; t < rec.probs.numel(); ++t) {
                if (rec.probs.at(t) > rec.probs.at(best)) best = static_cast<int>(t);
            }
            return best;
        };
        for (size_t i = 0; i < vanilla_all.size(); ++i) {
            if (top1(vanilla_all[i]) == vanilla_all[i].answer_first_token &&
                top1(rag_all[i]) == rag_all[i].answer_first_token) {
                run.vanilla.push_back(vanilla_all[i]);
                run.rag.push_back(rag_all[i]);
            }
        }
        run.loaded = true;
    } catch (const std::exception& e) {
        run.error = e.what();
    }
    return run;
}

double lst_mean_over_layers(const EffectGrid& grid) {
    double acc = 0.0;
    for (int l = 0; l < grid.n_layers; ++l) acc += grid.at(l, kLastSubject);
    return acc / grid.n_layers;
}

void a7_a8(const CheckpointRun& run) {
    const auto t0 = std::chrono::steady_clock::now();
    if (!run.loaded) {
        report("A7 (paper direction, desk scale)", false, seconds_since(t0),
               "checkpoint unavailable: " + run.error);
        report("A8 (knockout direction, desk scale)", false, 0.0, "checkpoint unavailable");
        return;
    }
    const int n_pairs = static_cast<int>(run.vanilla.size());
    char buf[240];
    if (n_pairs < 20) {
        std::snprintf(buf, sizeof(buf),
                      "only %d/%d facts answered correctly in both settings (need >= 20)", n_pairs,
                      run.n_facts_total);
        report("A7 (paper direction, desk scale)", false, seconds_since(t0), buf);
        report("A8 (knockout direction, desk scale)", false, 0.0, buf);
        return;
    }

    TraceConfig tc;
    tc.noise_sigma_multiplier = 3.0f;
    tc.n_noise_samples = 4;
    tc.patch_window = 1;
    tc.positions = TracePositions::lst_and_lt_only;
    const Tracer tracer(run.weights, run.config, tc, mix_seed({424242ULL, 0x6e6f697365ULL}));

    // (i) median per-fact vanilla/RAG ratio of LST AIE (mean over layers)
    std::vector<double> ratios;
    const int threads = 4;
    std::vector<double> lst_v(static_cast<size_t>(n_pairs)), lst_r(static_cast<size_t>(n_pairs));
    for (int i = 0; i < n_pairs; ++i) {
        lst_v[static_cast<size_t>(i)] =
            lst_mean_over_layers(tracer.trace_grid(run.vanilla[static_cast<size_t>(i)], threads));
        lst_r[static_cast<size_t>(i)] =
            lst_mean_over_layers(tracer.trace_grid(run.rag[static_cast<size_t>(i)], threads));
    }
    for (int i = 0; i < n_pairs; ++i) {
        const double v = lst_v[static_cast<size_t>(i)];
        const double r = lst_r[static_cast<size_t>(i)];
        if (r > 1e-9) {
            ratios.push_back(v / r);
        } else if (v > 1e-9) {
            ratios.push_back(std::numeric_limits<double>::infinity());
        } else {
            ratios.push_back(1.0);
        }
    }
    const double median_ratio = median(ratios);

    // (ii) context-attribute contribution vs ST contribution at the last token
    int attr_wins = 0;
    for (int i = 0; i < n_pairs; ++i) {
        const PromptInstance& inst = run.rag[static_cast<size_t>(i)];
        const ContributionProfile profile = contributions(inst, run.weights, run.config);
        std::vector<int> st, attr;
        for (int p = inst.subject_token_span.first; p <= inst.subject_token_span.last; ++p) {
            st.push_back(p);
        }
        for (int p = inst.attribute_token_span->first; p <= inst.attribute_token_span->last; ++p) {
            attr.push_back(p);
        }
        if (reduce_bucket(profile, attr).max > reduce_bucket(profile, st).max) ++attr_wins;
    }
    const double attr_frac = static_cast<double>(attr_wins) / n_pairs;

    const double elapsed7 = seconds_since(t0);
    std::snprintf(buf, sizeof(buf),
                  "pairs=%d, median LST-AIE ratio vanilla/RAG=%.2f (>1), attr>ST in %.0f%% (>=60%%)",
                  n_pairs, median_ratio, attr_frac * 100.0);
    report("A7 (paper direction, desk scale)", median_ratio > 1.0 && attr_frac >= 0.6, elapsed7,
           buf);

    // A8: ST->LT knockout at all layers, vanilla vs RAG medians
    const auto t8 = std::chrono::steady_clock::now();
    KnockoutSpec spec;
    spec.source = KnockSource::subject_span;
    for (int l = 0; l < run.config.n_layers; ++l) spec.layers.push_back(l);
    std::vector<double> drops_v, drops_r;
    for (int i = 0; i < n_pairs; ++i) {
        const KnockoutResult kv = knockout_run(run.vanilla[static_cast<size_t>(i)], run.weights,
                                               run.config, spec);
        const KnockoutResult kr =
            knockout_run(run.rag[static_cast<size_t>(i)], run.weights, run.config, spec);
        if (kv.drop_defined && kr.drop_defined) {
            drops_v.push_back(kv.relative_drop);
            drops_r.push_back(kr.relative_drop);
        }
    }
    const double med_v = median(drops_v);
    const double med_r = median(drops_r);
    const double elapsed8 = seconds_since(t8);
    std::snprintf(buf, sizeof(buf),
                  "median ST->LT drop: vanilla=%.3f vs RAG=%.3f over %zu facts (direction only)",
                  med_v, med_r, drops_v.size());
    report("A8 (knockout direction, desk scale)", !drops_v.empty() && med_v > med_r, elapsed8, buf);
}

// --- A9 -------------------------------------------------------------------------

void a9() {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = fs::temp_directory_path() / "rp_acceptance_a9";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const fs::path facts = dir / "facts1209.jsonl";
    {
        // deterministic synthetic corpus at the published size
        std::ofstream out(facts);
        Rng rng(20240601);
        const char* first[] = {"Bre", "Vel", "Tar", "Quor", "Mos", "Plim", "Zor", "Gil",
                               "Fen", "Dra", "Col", "Ban", "Ser", "Tul", "Wex", "Nor"};
        const char* second[] = {"via", "mont", "burg", "holm", "wick", "mere", "stead", "rath"};
        const char* relation[] = {"The capital city of ", "The official language of ",
                                  "The local currency of ", "The highest peak of "};
        for (int i = 0; i < 1209; ++i) {
            const std::string subject = std::string(first[rng.next_below(16)]) +
                                        second[rng.next_below(8)] + std::to_string(i);
            const std::string answer =
                std::string(first[rng.next_below(16)]) + second[rng.next_below(8)];
            out << R"({"prompt":")" << relation[i % 4] << subject << R"( is","subject":")"
                << subject << R"(","attribute":")" << answer << R"("})" << "\n";
        }
    }
    const std::string args_a = "--tiny-seed 7 --corpus " + facts.string() + " --out " +
                               (dir / "a").string() + " --seed 99";
    const std::string args_b = "--tiny-seed 7 --corpus " + facts.string() + " --out " +
                               (dir / "b").string() + " --seed 99";
    bool ok = run_cli("augment " + args_a) == 0 && run_cli("augment " + args_b) == 0;

    int instances = 0;
    {
        std::ifstream in(dir / "a" / "manifest.jsonl");
        std::string line;
        while (std::getline(in, line)) {
            if (line.find("\"instance_id\"") != std::string::npos) ++instances;
        }
    }
    const bool identical = slurp(dir / "a" / "manifest.jsonl") == slurp(dir / "b" / "manifest.jsonl");
    fs::remove_all(dir);
    const double elapsed = seconds_since(t0);
    char buf[120];
    std::snprintf(buf, sizeof(buf), "1209 facts -> %d instances, reruns byte-identical=%s",
                  instances, identical ? "yes" : "NO");
    report("A9 (corpus contract)", ok && instances == 2418 && identical && elapsed < 60.0, elapsed,
           buf);
}

} // namespace

int main() {
    std::printf("acceptance suite (assets: %s)\n", RAGPROBE_ASSETS_DIR);
    a1_a2();
    a3();
    a4();
    a5();
    a6();
    const CheckpointRun run = load_checkpoint_and_pairs();
    a7_a8(run);
    a9();
    if (failures == 0) {
        std::printf("acceptance: all criteria PASS\n");
    } else {
        std::printf("acceptance: %d criterion(s) FAILED\n", failures);
    }
    return failures;
}
