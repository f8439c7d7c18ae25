#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ragprobe/tensor.hpp"

namespace ragprobe {

// Architecture hyperparameters of the GPT-2-style pre-norm decoder:
// learned absolute positions, GELU MLP, optional tied unembedding.
struct ModelConfig {
    int n_layers = 0;
    int n_heads = 0;
    int d_model = 0;
    int d_head = 0; // = d_model / n_heads
    int d_mlp = 0;
    int vocab_size = 0;
    int max_seq_len = 0;
    float ln_epsilon = 1e-5f;
    bool tied_unembed = false;

    // Throws ConfigError on violated invariants.
    void validate() const;
};

// Named parameter tensors. Immutable after load; safe to share across
// concurrent forward calls.
struct WeightStore {
    std::map<std::string, Tensor> tensors;

    bool has(const std::string& name) const { return tensors.count(name) != 0; }
    const Tensor& tensor(const std::string& name) const;
    Tensor& tensor(const std::string& name);
};

// The tensor schema implied by a config: name -> expected shape.
// "unembed.W" is present only for untied configs.
std::vector<std::pair<std::string, std::vector<int64_t>>> schema_tensors(const ModelConfig& config);

// Checks that every schema tensor is present with the exact shape and that all
// values are finite. Extra tensors are ignored. Throws DataError naming the
// offending tensor.
void validate_weights(const WeightStore& weights, const ModelConfig& config);

// Seeded random model for tests: every tensor i.i.d. N(0, 0.02^2),
// deterministic per seed.
WeightStore random_model(const ModelConfig& config, uint64_t seed);

// --- interventions ---------------------------------------------------------

// Gaussian noise added to the token+position embedding sum at positions
// [begin, end) before layer 0. Draw order: position ascending, dim ascending.
struct NoiseOp {
    int begin = 0;
    int end = 0;
    float sigma = 0.0f;
    uint64_t seed = 0;
};

// Overwrites the residual stream at `position` AFTER layer `layer` completes
// (post-MLP residual add), i.e. the captured hidden state h_i^(layer).
struct PatchOp {
    int layer = 0;
    int position = 0;
    std::vector<float> value; // d_model
};

// Blocks attention of `target` to each position in `sources` by forcing the
// pre-softmax score to -inf at every listed layer (all heads).
struct KnockoutOp {
    std::vector<int> layers;
    int target = 0;
    std::vector<int> sources;
};

struct InterventionPlan {
    std::vector<NoiseOp> noise_ops;
    std::vector<PatchOp> patch_ops;
    std::vector<KnockoutOp> knockout_ops;

    bool empty() const { return noise_ops.empty() && patch_ops.empty() && knockout_ops.empty(); }
    // Positions < seq_len, layers < n_layers, at most one patch per
    // (layer, position), patch vectors sized d_model. Throws ConfigError.
    void validate(int seq_len, const ModelConfig& config) const;
};

struct CaptureFlags {
    bool hidden = false;        // per-layer residual stream (post-MLP add)
    bool attn = false;          // per-layer per-head post-softmax matrices
    bool contributions = false; // per-source attention contributions at target
};

// Captured state of one forward pass.
struct RunRecord {
    int seq_len = 0;
    int target_position = 0;

    // hidden[l]: (seq_len x d_model) residual stream after layer l.
    std::vector<Tensor> hidden;
    // attn[l]: (n_heads x seq_len x seq_len) post-softmax weights, row = target.
    std::vector<Tensor> attn;
    // contributions[l]: (seq_len x d_model); row i is a^(l)_{i,T}, the vector
    // source i adds through attention + W_O (b_O excluded) to the block
    // output at target T.
    std::vector<Tensor> contributions;

    Tensor logits; // (vocab) at the last position
    Tensor probs;  // (vocab) softmax of logits

    float attn_at(int layer, int head, int target, int source) const {
        const Tensor& a = attn[static_cast<size_t>(layer)];
        const int64_t s = seq_len;
        return a.data[static_cast<size_t>((head * s + target) * s + source)];
    }
};

// Deterministic instrumented forward pass.
// Pre-norm residual: h += Attn(LN1(h)); h += MLP(LN2(h)); logits = Unembed(LN_final(h_last)).
// target_position = -1 means last position. Throws ConfigError on an invalid
// plan or target, DataError on over-long sequences.
RunRecord forward(std::span<const int> tokens,
                  const WeightStore& weights,
                  const ModelConfig& config,
                  const InterventionPlan& plan = {},
                  CaptureFlags capture = {},
                  int target_position = -1);

// Probability the run assigns to `answer` at the next-token position.
// Throws ConfigError if answer is outside the distribution.
float answer_prob(const RunRecord& record, int answer);

// Population standard deviation of all token-embedding entries; noise scale
// ingredient for corrupted runs.
float embedding_std(const WeightStore& weights);

} // namespace ragprobe
