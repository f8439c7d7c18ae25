#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ragprobe/corpus.hpp"
#include "ragprobe/model.hpp"

namespace ragprobe {

// Euclidean norms of the per-source attention contributions at the last
// token, one row per layer.
struct ContributionProfile {
    int n_layers = 0;
    int seq_len = 0;
    int target = 0;
    std::vector<std::vector<double>> norms; // [layer][source]

    double at(int layer, int source) const {
        return norms[static_cast<size_t>(layer)][static_cast<size_t>(source)];
    }
};

ContributionProfile contributions(const PromptInstance& instance, const WeightStore& weights,
                                  const ModelConfig& config);

// max / mean of profile norms over (layer, member-position) pairs.
struct BucketNorms {
    double max = 0.0;
    double mean = 0.0;
    int count = 0; // member positions
};

BucketNorms reduce_bucket(const ContributionProfile& profile, std::span<const int> positions);

// Per-layer reduction over member positions (for CSV rows).
std::vector<BucketNorms> reduce_bucket_per_layer(const ContributionProfile& profile,
                                                 std::span<const int> positions);

enum class KnockSource { subject_span, attribute_span, explicit_set };

KnockSource knock_source_from_string(const std::string& s);
std::string to_string(KnockSource s);

struct KnockoutSpec {
    KnockSource source = KnockSource::subject_span;
    std::vector<int> explicit_sources; // used when source == explicit_set
    int target = -1;                   // -1 means last token
    std::vector<int> layers;           // explicit layer set

    // Source positions for an instance; empty when the bucket is absent.
    std::vector<int> resolve_sources(const PromptInstance& instance) const;
    int resolve_target(const PromptInstance& instance) const;
};

struct KnockoutResult {
    double base_prob = 0.0;
    double knocked_prob = 0.0;
    double relative_drop = 0.0;
    bool drop_defined = true; // false when base_prob == 0
};

// Clean run vs run with the spec's attention edges blocked.
// relative_drop = (base - knocked) / base when base > 0.
KnockoutResult knockout_run(const PromptInstance& instance, const WeightStore& weights,
                            const ModelConfig& config, const KnockoutSpec& spec);

struct KnockoutWindow {
    int first_layer = 0;
    int width = 0;
    std::string label; // empty: numeric first_layer; "all" or an explicit list
    double mean_drop = 0.0;
    std::vector<double> drops; // per instance, aligned with instance order
    int defined_count = 0;
};

struct KnockoutSweep {
    std::vector<KnockoutWindow> windows; // sliding windows of width k
    KnockoutWindow all_layers;
};

// For each window start l in [0, n_layers - k], blocks the spec's edges at
// layers [l, l+k); also reports the all-layers variant.
KnockoutSweep knockout_sweep(std::span<const PromptInstance> instances, const WeightStore& weights,
                             const ModelConfig& config, const KnockoutSpec& spec_template,
                             int window_width, int n_threads = 1);

// Paired vanilla-vs-RAG comparison for one fact.
struct FactComparison {
    int fact_index = 0;
    bool correct_vanilla = false;
    bool correct_rag = false;
    // ST contribution norms at LT (max / mean over span and layers)
    double st_vanilla_max = 0.0, st_vanilla_mean = 0.0;
    double st_rag_max = 0.0, st_rag_mean = 0.0;
    // context-attribute bucket inside the RAG instance (absent w/o attribute)
    bool has_attribute = false;
    double attr_rag_max = 0.0, attr_rag_mean = 0.0;
    // knockout relative drops, ST -> LT at all layers
    double drop_vanilla = 0.0, drop_rag = 0.0;
    bool drop_vanilla_defined = false, drop_rag_defined = false;
};

struct ComparisonReport {
    std::vector<FactComparison> facts; // pairs that passed the correctness filter
    int n_pairs_total = 0;
    int n_pairs_correct = 0;
    bool attribute_comparison_available = false;

    // medians over the filtered pairs
    double median_st_ratio_vanilla_over_rag = 0.0; // max-over-span variant
    double median_st_ratio_vanilla_over_rag_mean = 0.0;
    double median_drop_vanilla = 0.0;
    double median_drop_rag = 0.0;
    // direction counts
    int count_st_vanilla_greater = 0;   // st_vanilla_max > st_rag_max
    int count_attr_greater_than_st = 0; // attr_rag_max > st_rag_max (RAG side)
    int count_attr_comparable = 0;      // pairs where the attribute bucket exists
    int count_drop_vanilla_greater = 0; // drop_vanilla > drop_rag
    int count_drop_comparable = 0;
};

// Pairs instances by fact_index (exactly one vanilla and one rag instance per
// fact; DataError otherwise), filters to facts answered correctly in both
// settings unless include_incorrect, then compares ST/attribute contribution
// norms and ST->LT all-layer knockout drops across settings.
ComparisonReport compare_settings(std::span<const PromptInstance> vanilla,
                                  std::span<const PromptInstance> rag,
                                  const WeightStore& weights, const ModelConfig& config,
                                  bool include_incorrect = false, int n_threads = 1);

double median(std::vector<double> values);

} // namespace ragprobe
