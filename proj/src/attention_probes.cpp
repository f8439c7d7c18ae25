#include "ragprobe/attention_probes.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "ragprobe/errors.hpp"
#include "ragprobe/tracing.hpp"

namespace ragprobe {

ContributionProfile contributions(const PromptInstance& inst, const WeightStore& weights,
                                  const ModelConfig& config) {
    CaptureFlags cap;
    cap.contributions = true;
    const RunRecord rec = forward(inst.token_ids, weights, config, {}, cap);
    ContributionProfile profile;
    profile.n_layers = config.n_layers;
    profile.seq_len = rec.seq_len;
    profile.target = rec.target_position;
    profile.norms.resize(static_cast<size_t>(config.n_layers));
    for (int l = 0; l < config.n_layers; ++l) {
        auto& row = profile.norms[static_cast<size_t>(l)];
        row.resize(static_cast<size_t>(rec.seq_len));
        const Tensor& c = rec.contributions[static_cast<size_t>(l)];
        for (int src = 0; src < rec.seq_len; ++src) {
            double sq = 0.0;
            for (int j = 0; j < config.d_model; ++j) {
                const double v = c.at(src, j);
                sq += v * v;
            }
            row[static_cast<size_t>(src)] = std::sqrt(sq);
        }
    }
    return profile;
}

BucketNorms reduce_bucket(const ContributionProfile& profile, std::span<const int> positions) {
    BucketNorms out;
    out.count = static_cast<int>(positions.size());
    if (positions.empty()) return out;
    double acc = 0.0;
    for (int l = 0; l < profile.n_layers; ++l) {
        for (int p : positions) {
            const double v = profile.at(l, p);
            out.max = std::max(out.max, v);
            acc += v;
        }
    }
    out.mean = acc / static_cast<double>(profile.n_layers * static_cast<int>(positions.size()));
    return out;
}

std::vector<BucketNorms> reduce_bucket_per_layer(const ContributionProfile& profile,
                                                 std::span<const int> positions) {
    std::vector<BucketNorms> out(static_cast<size_t>(profile.n_layers));
    for (int l = 0; l < profile.n_layers; ++l) {
        BucketNorms& bn = out[static_cast<size_t>(l)];
        bn.count = static_cast<int>(positions.size());
        if (positions.empty()) continue;
        double acc = 0.0;
        for (int p : positions) {
            const double v = profile.at(l, p);
            bn.max = std::max(bn.max, v);
            acc += v;
        }
        bn.mean = acc / static_cast<double>(positions.size());
    }
    return out;
}

KnockSource knock_source_from_string(const std::string& s) {
    if (s == "subject_span") return KnockSource::subject_span;
    if (s == "attribute_span") return KnockSource::attribute_span;
    if (s == "explicit") return KnockSource::explicit_set;
    throw ConfigError("unknown knockout source: " + s + " (want subject_span|attribute_span|explicit)");
}

std::string to_string(KnockSource s) {
    switch (s) {
        case KnockSource::subject_span: return "subject_span";
        case KnockSource::attribute_span: return "attribute_span";
        case KnockSource::explicit_set: return "explicit";
    }
    return "?";
}

std::vector<int> KnockoutSpec::resolve_sources(const PromptInstance& inst) const {
    std::vector<int> out;
    switch (source) {
        case KnockSource::subject_span:
            for (int p = inst.subject_token_span.first; p <= inst.subject_token_span.last; ++p) {
                out.push_back(p);
            }
            break;
        case KnockSource::attribute_span:
            if (inst.attribute_token_span.has_value()) {
                for (int p = inst.attribute_token_span->first; p <= inst.attribute_token_span->last;
                     ++p) {
                    out.push_back(p);
                }
            }
            break;
        case KnockSource::explicit_set: out = explicit_sources; break;
    }
    return out;
}

int KnockoutSpec::resolve_target(const PromptInstance& inst) const {
    return target < 0 ? inst.last_token_index : target;
}

KnockoutResult knockout_run(const PromptInstance& inst, const WeightStore& weights,
                            const ModelConfig& config, const KnockoutSpec& spec) {
    const RunRecord base = forward(inst.token_ids, weights, config);
    KnockoutResult res;
    res.base_prob = answer_prob(base, inst.answer_first_token);

    const std::vector<int> sources = spec.resolve_sources(inst);
    if (sources.empty() || spec.layers.empty()) {
        res.knocked_prob = res.base_prob;
        res.relative_drop = 0.0;
        res.drop_defined = res.base_prob > 0.0;
        return res;
    }
    InterventionPlan plan;
    plan.knockout_ops.push_back({spec.layers, spec.resolve_target(inst), sources});
    const RunRecord knocked = forward(inst.token_ids, weights, config, plan);
    res.knocked_prob = answer_prob(knocked, inst.answer_first_token);
    if (res.base_prob > 0.0) {
        res.relative_drop = (res.base_prob - res.knocked_prob) / res.base_prob;
        res.drop_defined = true;
    } else {
        res.relative_drop = 0.0;
        res.drop_defined = false;
    }
    return res;
}

namespace {

KnockoutWindow run_window(std::span<const PromptInstance> instances, const WeightStore& weights,
                          const ModelConfig& config, const KnockoutSpec& spec_template,
                          std::vector<int> layers, int n_threads) {
    KnockoutWindow win;
    win.first_layer = layers.empty() ? 0 : layers.front();
    win.width = static_cast<int>(layers.size());
    win.drops.assign(instances.size(), 0.0);
    std::vector<uint8_t> defined(instances.size(), 0);
    KnockoutSpec spec = spec_template;
    spec.layers = std::move(layers);
    parallel_for(static_cast<int>(instances.size()), n_threads, [&](int i) {
        const KnockoutResult r = knockout_run(instances[static_cast<size_t>(i)], weights, config, spec);
        win.drops[static_cast<size_t>(i)] = r.relative_drop;
        defined[static_cast<size_t>(i)] = r.drop_defined ? 1 : 0;
    });
    double acc = 0.0;
    for (size_t i = 0; i < instances.size(); ++i) {
        if (defined[i]) {
            acc += win.drops[i];
            ++win.defined_count;
        }
    }
    win.mean_drop = win.defined_count ? acc / win.defined_count : 0.0;
    return win;
}

} // namespace

KnockoutSweep knockout_sweep(std::span<const PromptInstance> instances, const WeightStore& weights,
                             const ModelConfig& config, const KnockoutSpec& spec_template,
                             int window_width, int n_threads) {
    if (instances.empty()) throw DataError("empty corpus: no instances for knockout sweep");
    if (window_width < 1 || window_width > config.n_layers) {
        throw ConfigError("knockout window width must be in [1, n_layers]");
    }
    KnockoutSweep sweep;
    for (int first = 0; first + window_width <= config.n_layers; ++first) {
        std::vector<int> layers;
        for (int l = first; l < first + window_width; ++l) layers.push_back(l);
        sweep.windows.push_back(
            run_window(instances, weights, config, spec_template, std::move(layers), n_threads));
    }
    std::vector<int> all;
    for (int l = 0; l < config.n_layers; ++l) all.push_back(l);
    sweep.all_layers = run_window(instances, weights, config, spec_template, std::move(all), n_threads);
    sweep.all_layers.label = "all";
    return sweep;
}

double median(std::vector<double> values) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    const size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

ComparisonReport compare_settings(std::span<const PromptInstance> vanilla,
                                  std::span<const PromptInstance> rag, const WeightStore& weights,
                                  const ModelConfig& config, bool include_incorrect, int n_threads) {
    std::map<int, const PromptInstance*> by_fact_vanilla, by_fact_rag;
    for (const PromptInstance& inst : vanilla) {
        if (!by_fact_vanilla.emplace(inst.fact_index, &inst).second) {
            throw DataError("duplicate vanilla instance for fact " + std::to_string(inst.fact_index));
        }
    }
    for (const PromptInstance& inst : rag) {
        if (!by_fact_rag.emplace(inst.fact_index, &inst).second) {
            throw DataError("duplicate rag instance for fact " + std::to_string(inst.fact_index));
        }
    }
    if (by_fact_vanilla.size() != by_fact_rag.size()) {
        throw DataError("unpaired corpora: " + std::to_string(by_fact_vanilla.size()) +
                        " vanilla vs " + std::to_string(by_fact_rag.size()) + " rag facts");
    }
    for (const auto& [fact, inst] : by_fact_vanilla) {
        if (!by_fact_rag.count(fact)) {
            throw DataError("unpaired corpora: fact " + std::to_string(fact) + " has no rag instance");
        }
    }

    ComparisonReport report;
    report.n_pairs_total = static_cast<int>(by_fact_vanilla.size());

    std::vector<std::pair<const PromptInstance*, const PromptInstance*>> pairs;
    for (const auto& [fact, v] : by_fact_vanilla) pairs.emplace_back(v, by_fact_rag.at(fact));

    std::vector<FactComparison> comparisons(pairs.size());
    parallel_for(static_cast<int>(pairs.size()), n_threads, [&](int i) {
        const PromptInstance& v = *pairs[static_cast<size_t>(i)].first;
        const PromptInstance& r = *pairs[static_cast<size_t>(i)].second;
        FactComparison fc;
        fc.fact_index = v.fact_index;

        {
            // correctness via clean top-1
            const RunRecord rv = forward(v.token_ids, weights, config);
            const RunRecord rr = forward(r.token_ids, weights, config);
            auto top1 = [](const RunRecord& rec) {
                int best = 0;
                for (int64_t t = 1; t < rec.probs.numel(); ++t) {
                    if (rec.probs.at(t) > rec.probs.at(best)) best = static_cast<int>(t);
                }
                return best;
            };
            fc.correct_vanilla = top1(rv) == v.answer_first_token;
            fc.correct_rag = top1(rr) == r.answer_first_token;
        }

        const ContributionProfile pv = contributions(v, weights, config);
        const ContributionProfile pr = contributions(r, weights, config);
        const auto buckets_v = bucket_positions(v);
        const auto buckets_r = bucket_positions(r);

        std::vector<int> st_v;
        for (int p = v.subject_token_span.first; p <= v.subject_token_span.last; ++p) st_v.push_back(p);
        std::vector<int> st_r;
        for (int p = r.subject_token_span.first; p <= r.subject_token_span.last; ++p) st_r.push_back(p);

        const BucketNorms nv = reduce_bucket(pv, st_v);
        const BucketNorms nr = reduce_bucket(pr, st_r);
        fc.st_vanilla_max = nv.max;
        fc.st_vanilla_mean = nv.mean;
        fc.st_rag_max = nr.max;
        fc.st_rag_mean = nr.mean;

        const auto& attr_positions = buckets_r[kContextAttribute];
        if (!attr_positions.empty()) {
            fc.has_attribute = true;
            const BucketNorms na = reduce_bucket(pr, attr_positions);
            fc.attr_rag_max = na.max;
            fc.attr_rag_mean = na.mean;
        }
        (void)buckets_v;

        KnockoutSpec spec;
        spec.source = KnockSource::subject_span;
        for (int l = 0; l < config.n_layers; ++l) spec.layers.push_back(l);
        const KnockoutResult kv = knockout_run(v, weights, config, spec);
        const KnockoutResult kr = knockout_run(r, weights, config, spec);
        fc.drop_vanilla = kv.relative_drop;
        fc.drop_vanilla_defined = kv.drop_defined;
        fc.drop_rag = kr.relative_drop;
        fc.drop_rag_defined = kr.drop_defined;

        comparisons[static_cast<size_t>(i)] = fc;
    });

    std::vector<double> st_ratios_max, st_ratios_mean, drops_v, drops_r;
    for (const FactComparison& fc : comparisons) {
        if (!include_incorrect && !(fc.correct_vanilla && fc.correct_rag)) continue;
        report.facts.push_back(fc);
        ++report.n_pairs_correct;
        if (fc.st_rag_max > 0.0) st_ratios_max.push_back(fc.st_vanilla_max / fc.st_rag_max);
        if (fc.st_rag_mean > 0.0) st_ratios_mean.push_back(fc.st_vanilla_mean / fc.st_rag_mean);
        if (fc.st_vanilla_max > fc.st_rag_max) ++report.count_st_vanilla_greater;
        if (fc.has_attribute) {
            ++report.count_attr_comparable;
            if (fc.attr_rag_max > fc.st_rag_max) ++report.count_attr_greater_than_st;
        }
        if (fc.drop_vanilla_defined && fc.drop_rag_defined) {
            ++report.count_drop_comparable;
            drops_v.push_back(fc.drop_vanilla);
            drops_r.push_back(fc.drop_rag);
            if (fc.drop_vanilla > fc.drop_rag) ++report.count_drop_vanilla_greater;
        }
    }
    report.attribute_comparison_available = report.count_attr_comparable > 0;
    report.median_st_ratio_vanilla_over_rag = median(st_ratios_max);
    report.median_st_ratio_vanilla_over_rag_mean = median(st_ratios_mean);
    report.median_drop_vanilla = median(drops_v);
    report.median_drop_rag = median(drops_r);
    return report;
}

} // namespace ragprobe
