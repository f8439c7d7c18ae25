#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ragprobe/corpus.hpp"
#include "ragprobe/model.hpp"

namespace ragprobe {

enum class TracePositions { all, lst_and_lt_only };

struct TraceConfig {
    float noise_sigma_multiplier = 3.0f;
    int n_noise_samples = 10;
    int patch_window = 1; // odd number of consecutive layers patched together
    TracePositions positions = TracePositions::all;

    void validate(int n_layers) const;
};

// Semantic position buckets, in fixed column order.
enum Bucket {
    kFirstSubject = 0,
    kMiddleSubject,
    kLastSubject,
    kPostSubject,
    kLastToken,
    kContextAttribute,
    kNumBuckets,
};

const char* bucket_label(int bucket);

// Token positions per bucket for an instance. Buckets can be empty
// (single-token subjects, missing context).
std::array<std::vector<int>, kNumBuckets> bucket_positions(const PromptInstance& instance);

// (layer x bucket) matrix of IE or AIE values. count == 0 marks an absent
// bucket (no member positions / no contributing instances).
struct EffectGrid {
    int n_layers = 0;
    // values[layer * kNumBuckets + bucket]
    std::vector<double> values;
    std::array<int, kNumBuckets> bucket_counts{};
    double p_clean = 0.0;     // P_clean[y]; corpus mean for aggregates
    double p_star_mean = 0.0; // mean corrupted-run probability
    int n_instances = 1;      // contributing instances (aggregates)

    double at(int layer, int bucket) const {
        return values[static_cast<size_t>(layer * kNumBuckets + bucket)];
    }
    bool has(int bucket) const { return bucket_counts[static_cast<size_t>(bucket)] > 0; }
};

// Element-wise mean of per-instance grids in double accumulation; instances
// lacking a bucket are excluded from that bucket's mean.
EffectGrid aggregate_grids(std::span<const EffectGrid> grids);

// Three-run causal-tracing protocol against one model.
class Tracer {
public:
    Tracer(const WeightStore& weights, const ModelConfig& config, TraceConfig trace_config,
           uint64_t noise_seed);

    const TraceConfig& trace_config() const { return cfg_; }
    float noise_sigma() const { return sigma_; }

    // Pure forward pass with hidden-state capture; P_clean[y] via answer_prob.
    RunRecord clean_run(const PromptInstance& instance) const;

    // Clean run with Gaussian noise (sigma = multiplier x embedding std) on
    // the subject token span; sample_index selects the noise draw.
    RunRecord corrupted_run(const PromptInstance& instance, int sample_index) const;

    // Corrupted run plus clean-state patches at `position` for the
    // patch_window layers centred on `layer` (clamped). Returns the answer
    // probability.
    double restored_run(const PromptInstance& instance, int sample_index, int layer,
                        int position) const;

    // mean over samples of (restored - corrupted) answer probabilities.
    double indirect_effect(const PromptInstance& instance, int layer, int position) const;

    // Full (layer x bucket) grid for one instance. Cells are independent and
    // computed in parallel over n_threads without affecting results.
    EffectGrid trace_grid(const PromptInstance& instance, int n_threads = 1) const;

    // Whether the clean top-1 prediction equals the answer's first token.
    bool answers_correctly(const PromptInstance& instance) const;

    // AIE over a corpus: per-instance grids (optionally returned) averaged
    // per bucket. Instances the model answers incorrectly are excluded unless
    // include_incorrect. Throws DataError on an empty corpus.
    EffectGrid aie(std::span<const PromptInstance> instances, int n_threads = 1,
                   bool include_incorrect = false,
                   std::vector<EffectGrid>* per_instance = nullptr,
                   std::vector<uint64_t>* contributing_ids = nullptr) const;

    NoiseOp noise_op(const PromptInstance& instance, int sample_index) const;

private:
    struct Prepared {
        RunRecord clean;
        double p_clean = 0.0;
        std::vector<double> p_star; // per sample
    };
    Prepared prepare(const PromptInstance& instance) const;
    double restored_with(const PromptInstance& instance, const RunRecord& clean, int sample_index,
                         int layer, int position) const;

    const WeightStore& weights_;
    const ModelConfig& config_;
    TraceConfig cfg_;
    uint64_t noise_seed_;
    float sigma_;
};

// Runs fn(i) for i in [0, n) across n_threads; results must not depend on the
// schedule (callers write to disjoint slots).
void parallel_for(int n, int n_threads, const std::function<void(int)>& fn);

} // namespace ragprobe
