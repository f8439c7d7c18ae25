#include "ragprobe/tracing.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <mutex>
#include <thread>

#include "ragprobe/errors.hpp"
#include "ragprobe/rng.hpp"

namespace ragprobe {

void TraceConfig::validate(int n_layers) const {
    if (n_noise_samples < 1) throw ConfigError("TraceConfig: n_noise_samples must be >= 1");
    if (patch_window < 1 || patch_window > n_layers) {
        throw ConfigError("TraceConfig: patch_window must be in [1, n_layers]");
    }
    if (patch_window % 2 == 0) throw ConfigError("TraceConfig: patch_window must be odd");
    if (noise_sigma_multiplier < 0.0f) {
        throw ConfigError("TraceConfig: noise_sigma_multiplier must be >= 0");
    }
}

const char* bucket_label(int bucket) {
    switch (bucket) {
        case kFirstSubject: return "first_subject";
        case kMiddleSubject: return "middle_subject";
        case kLastSubject: return "last_subject";
        case kPostSubject: return "post_subject";
        case kLastToken: return "last_token";
        case kContextAttribute: return "context_attribute";
        default: return "?";
    }
}

std::array<std::vector<int>, kNumBuckets> bucket_positions(const PromptInstance& inst) {
    std::array<std::vector<int>, kNumBuckets> buckets;
    const int sf = inst.subject_token_span.first;
    const int sl = inst.subject_token_span.last;
    if (sf < sl) buckets[kFirstSubject].push_back(sf);
    for (int p = sf + 1; p < sl; ++p) buckets[kMiddleSubject].push_back(p);
    buckets[kLastSubject].push_back(sl);
    for (int p = sl + 1; p < inst.last_token_index; ++p) buckets[kPostSubject].push_back(p);
    buckets[kLastToken].push_back(inst.last_token_index);
    if (inst.attribute_token_span.has_value()) {
        for (int p = inst.attribute_token_span->first; p <= inst.attribute_token_span->last; ++p) {
            buckets[kContextAttribute].push_back(p);
        }
    }
    return buckets;
}

void parallel_for(int n, int n_threads, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    const int workers = std::max(1, std::min(n_threads, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> threads;
    threads.reserve(static_cast<size_t>(workers));
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    for (int w = 0; w < workers; ++w) {
        threads.emplace_back([&] {
            while (!failed.load()) {
                const int i = next.fetch_add(1);
                if (i >= n) break;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                    failed.store(true);
                }
            }
        });
    }
    for (std::thread& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

Tracer::Tracer(const WeightStore& weights, const ModelConfig& config, TraceConfig trace_config,
               uint64_t noise_seed)
    : weights_(weights), config_(config), cfg_(trace_config), noise_seed_(noise_seed) {
    config_.validate();
    cfg_.validate(config_.n_layers);
    sigma_ = cfg_.noise_sigma_multiplier * embedding_std(weights_);
}

NoiseOp Tracer::noise_op(const PromptInstance& inst, int sample_index) const {
    NoiseOp op;
    op.begin = inst.subject_token_span.first;
    op.end = inst.subject_token_span.last + 1;
    op.sigma = sigma_;
    op.seed = mix_seed({0x6e6f697365ULL, noise_seed_, inst.instance_id,
                        static_cast<uint64_t>(sample_index)});
    return op;
}

RunRecord Tracer::clean_run(const PromptInstance& inst) const {
    CaptureFlags cap;
    cap.hidden = true;
    return forward(inst.token_ids, weights_, config_, {}, cap);
}

RunRecord Tracer::corrupted_run(const PromptInstance& inst, int sample_index) const {
    InterventionPlan plan;
    plan.noise_ops.push_back(noise_op(inst, sample_index));
    return forward(inst.token_ids, weights_, config_, plan);
}

double Tracer::restored_with(const PromptInstance& inst, const RunRecord& clean, int sample_index,
                             int layer, int position) const {
    InterventionPlan plan;
    plan.noise_ops.push_back(noise_op(inst, sample_index));
    const int half = cfg_.patch_window / 2;
    const int lo = std::max(0, layer - half);
    const int hi = std::min(config_.n_layers - 1, layer + half);
    for (int l = lo; l <= hi; ++l) {
        PatchOp op;
        op.layer = l;
        op.position = position;
        const Tensor& h = clean.hidden[static_cast<size_t>(l)];
        op.value.assign(h.row(position), h.row(position) + config_.d_model);
        plan.patch_ops.push_back(std::move(op));
    }
    RunRecord rec = forward(inst.token_ids, weights_, config_, plan);
    return answer_prob(rec, inst.answer_first_token);
}

double Tracer::restored_run(const PromptInstance& inst, int sample_index, int layer,
                            int position) const {
    return restored_with(inst, clean_run(inst), sample_index, layer, position);
}

Tracer::Prepared Tracer::prepare(const PromptInstance& inst) const {
    Prepared prep;
    prep.clean = clean_run(inst);
    prep.p_clean = answer_prob(prep.clean, inst.answer_first_token);
    prep.p_star.resize(static_cast<size_t>(cfg_.n_noise_samples));
    for (int s = 0; s < cfg_.n_noise_samples; ++s) {
        prep.p_star[static_cast<size_t>(s)] =
            answer_prob(corrupted_run(inst, s), inst.answer_first_token);
    }
    return prep;
}

double Tracer::indirect_effect(const PromptInstance& inst, int layer, int position) const {
    const Prepared prep = prepare(inst);
    double acc = 0.0;
    for (int s = 0; s < cfg_.n_noise_samples; ++s) {
        acc += restored_with(inst, prep.clean, s, layer, position) -
               prep.p_star[static_cast<size_t>(s)];
    }
    return acc / static_cast<double>(cfg_.n_noise_samples);
}

bool Tracer::answers_correctly(const PromptInstance& inst) const {
    const RunRecord rec = forward(inst.token_ids, weights_, config_);
    int best = 0;
    for (int64_t i = 1; i < rec.probs.numel(); ++i) {
        if (rec.probs.at(i) > rec.probs.at(best)) best = static_cast<int>(i);
    }
    return best == inst.answer_first_token;
}

EffectGrid Tracer::trace_grid(const PromptInstance& inst, int n_threads) const {
    const Prepared prep = prepare(inst);
    auto buckets = bucket_positions(inst);
    if (cfg_.positions == TracePositions::lst_and_lt_only) {
        for (int b = 0; b < kNumBuckets; ++b) {
            if (b != kLastSubject && b != kLastToken) buckets[static_cast<size_t>(b)].clear();
        }
    }

    // Distinct positions to sweep.
    std::vector<int> positions;
    for (const auto& members : buckets) {
        for (int p : members) {
            if (std::find(positions.begin(), positions.end(), p) == positions.end()) {
                positions.push_back(p);
            }
        }
    }
    std::sort(positions.begin(), positions.end());

    const int n_cells = config_.n_layers * static_cast<int>(positions.size());
    std::vector<double> ie(static_cast<size_t>(n_cells), 0.0);
    parallel_for(n_cells, n_threads, [&](int cell) {
        const int layer = cell / static_cast<int>(positions.size());
        const int pos = positions[static_cast<size_t>(cell % static_cast<int>(positions.size()))];
        double acc = 0.0;
        for (int s = 0; s < cfg_.n_noise_samples; ++s) {
            acc += restored_with(inst, prep.clean, s, layer, pos) -
                   prep.p_star[static_cast<size_t>(s)];
        }
        ie[static_cast<size_t>(cell)] = acc / static_cast<double>(cfg_.n_noise_samples);
    });

    auto position_index = [&](int p) {
        return static_cast<int>(std::find(positions.begin(), positions.end(), p) -
                                positions.begin());
    };

    EffectGrid grid;
    grid.n_layers = config_.n_layers;
    grid.values.assign(static_cast<size_t>(config_.n_layers * kNumBuckets), 0.0);
    grid.p_clean = prep.p_clean;
    double star = 0.0;
    for (double p : prep.p_star) star += p;
    grid.p_star_mean = star / static_cast<double>(prep.p_star.size());
    for (int b = 0; b < kNumBuckets; ++b) {
        grid.bucket_counts[static_cast<size_t>(b)] = static_cast<int>(buckets[static_cast<size_t>(b)].size());
    }
    for (int layer = 0; layer < config_.n_layers; ++layer) {
        for (int b = 0; b < kNumBuckets; ++b) {
            const auto& members = buckets[static_cast<size_t>(b)];
            if (members.empty()) continue;
            double acc = 0.0;
            for (int p : members) {
                acc += ie[static_cast<size_t>(layer * static_cast<int>(positions.size()) +
                                              position_index(p))];
            }
            grid.values[static_cast<size_t>(layer * kNumBuckets + b)] =
                acc / static_cast<double>(members.size());
        }
    }
    return grid;
}

EffectGrid aggregate_grids(std::span<const EffectGrid> grids) {
    if (grids.empty()) throw DataError("cannot aggregate an empty grid list");
    const int n_layers = grids[0].n_layers;
    for (const EffectGrid& g : grids) {
        if (g.n_layers != n_layers) throw DataError("grid layer counts differ");
    }
    EffectGrid out;
    out.n_layers = n_layers;
    out.values.assign(static_cast<size_t>(n_layers * kNumBuckets), 0.0);
    out.n_instances = static_cast<int>(grids.size());
    double p_clean = 0.0, p_star = 0.0;
    for (int b = 0; b < kNumBuckets; ++b) {
        int count = 0;
        for (const EffectGrid& g : grids) {
            if (g.has(b)) ++count;
        }
        out.bucket_counts[static_cast<size_t>(b)] = count;
        if (count == 0) continue;
        for (int layer = 0; layer < n_layers; ++layer) {
            double acc = 0.0;
            for (const EffectGrid& g : grids) {
                if (g.has(b)) acc += g.at(layer, b);
            }
            out.values[static_cast<size_t>(layer * kNumBuckets + b)] =
                acc / static_cast<double>(count);
        }
    }
    for (const EffectGrid& g : grids) {
        p_clean += g.p_clean;
        p_star += g.p_star_mean;
    }
    out.p_clean = p_clean / static_cast<double>(grids.size());
    out.p_star_mean = p_star / static_cast<double>(grids.size());
    return out;
}

EffectGrid Tracer::aie(std::span<const PromptInstance> instances, int n_threads,
                       bool include_incorrect, std::vector<EffectGrid>* per_instance,
                       std::vector<uint64_t>* contributing_ids) const {
    if (instances.empty()) throw DataError("empty corpus: no instances to trace");
    std::vector<const PromptInstance*> kept;
    for (const PromptInstance& inst : instances) {
        if (include_incorrect || answers_correctly(inst)) kept.push_back(&inst);
    }
    if (kept.empty()) {
        throw DataError("no instance passed the correctness filter; rerun including incorrect ones");
    }
    std::vector<EffectGrid> grids(kept.size());
    // Parallelism lives inside each grid; instances run in order so memory
    // stays bounded and seeds stay index-derived either way.
    for (size_t i = 0; i < kept.size(); ++i) {
        grids[i] = trace_grid(*kept[i], n_threads);
    }
    if (contributing_ids) {
        contributing_ids->clear();
        for (const PromptInstance* p : kept) contributing_ids->push_back(p->instance_id);
    }
    EffectGrid out = aggregate_grids(grids);
    if (per_instance) *per_instance = std::move(grids);
    return out;
}

} // namespace ragprobe
