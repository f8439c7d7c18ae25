#include "ragprobe/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <set>

#include "ragprobe/errors.hpp"
#include "ragprobe/rng.hpp"

namespace ragprobe {

void ModelConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v < 1) throw ConfigError(std::string("ModelConfig: ") + name + " must be >= 1");
    };
    positive(n_layers, "n_layers");
    positive(n_heads, "n_heads");
    positive(d_model, "d_model");
    positive(d_head, "d_head");
    positive(d_mlp, "d_mlp");
    positive(vocab_size, "vocab_size");
    positive(max_seq_len, "max_seq_len");
    if (!(ln_epsilon > 0.0f)) throw ConfigError("ModelConfig: ln_epsilon must be > 0");
    if (n_heads * d_head != d_model) {
        throw ConfigError("ModelConfig: n_heads * d_head (" + std::to_string(n_heads * d_head) +
                          ") != d_model (" + std::to_string(d_model) + ")");
    }
}

const Tensor& WeightStore::tensor(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError("missing tensor: " + name);
    return it->second;
}

Tensor& WeightStore::tensor(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError("missing tensor: " + name);
    return it->second;
}

std::vector<std::pair<std::string, std::vector<int64_t>>> schema_tensors(const ModelConfig& c) {
    const int64_t d = c.d_model;
    const int64_t m = c.d_mlp;
    std::vector<std::pair<std::string, std::vector<int64_t>>> out;
    out.emplace_back("embed.tok", std::vector<int64_t>{c.vocab_size, d});
    out.emplace_back("embed.pos", std::vector<int64_t>{c.max_seq_len, d});
    for (int k = 0; k < c.n_layers; ++k) {
        const std::string p = "layer" + std::to_string(k) + ".";
        out.emplace_back(p + "ln1.scale", std::vector<int64_t>{d});
        out.emplace_back(p + "ln1.bias", std::vector<int64_t>{d});
        for (const char* w : {"W_Q", "W_K", "W_V", "W_O"})
            out.emplace_back(p + "attn." + w, std::vector<int64_t>{d, d});
        for (const char* b : {"b_Q", "b_K", "b_V", "b_O"})
            out.emplace_back(p + "attn." + b, std::vector<int64_t>{d});
        out.emplace_back(p + "ln2.scale", std::vector<int64_t>{d});
        out.emplace_back(p + "ln2.bias", std::vector<int64_t>{d});
        out.emplace_back(p + "mlp.W_in", std::vector<int64_t>{d, m});
        out.emplace_back(p + "mlp.b_in", std::vector<int64_t>{m});
        out.emplace_back(p + "mlp.W_out", std::vector<int64_t>{m, d});
        out.emplace_back(p + "mlp.b_out", std::vector<int64_t>{d});
    }
    out.emplace_back("final_ln.scale", std::vector<int64_t>{d});
    out.emplace_back("final_ln.bias", std::vector<int64_t>{d});
    if (!c.tied_unembed) {
        out.emplace_back("unembed.W", std::vector<int64_t>{d, c.vocab_size});
    }
    return out;
}

void validate_weights(const WeightStore& weights, const ModelConfig& config) {
    config.validate();
    for (const auto& [name, shape] : schema_tensors(config)) {
        auto it = weights.tensors.find(name);
        if (it == weights.tensors.end()) {
            throw DataError("missing tensor: " + name);
        }
        const Tensor& t = it->second;
        if (!t.same_shape(shape)) {
            throw DataError("shape mismatch for " + name + ": expected " + shape_str(shape) +
                            ", got " + shape_str(t.shape));
        }
        for (float v : t.data) {
            if (!std::isfinite(v)) throw DataError("non-finite value in tensor: " + name);
        }
    }
}

WeightStore random_model(const ModelConfig& config, uint64_t seed) {
    config.validate();
    WeightStore store;
    Rng rng(mix_seed({0x7261676d6f64656cULL, seed})); // "ragmodel"
    for (const auto& [name, shape] : schema_tensors(config)) {
        Tensor t(shape);
        for (float& v : t.data) {
            v = static_cast<float>(rng.next_gaussian() * 0.02);
        }
        store.tensors.emplace(name, std::move(t));
    }
    return store;
}

void InterventionPlan::validate(int seq_len, const ModelConfig& config) const {
    for (const NoiseOp& op : noise_ops) {
        if (op.begin < 0 || op.end > seq_len || op.begin > op.end) {
            throw ConfigError("noise op position range out of range");
        }
        if (op.sigma < 0.0f) throw ConfigError("noise op sigma must be >= 0");
    }
    std::set<std::pair<int, int>> seen;
    for (const PatchOp& op : patch_ops) {
        if (op.layer < 0 || op.layer >= config.n_layers) throw ConfigError("patch op layer out of range");
        if (op.position < 0 || op.position >= seq_len) throw ConfigError("patch op position out of range");
        if (static_cast<int>(op.value.size()) != config.d_model) {
            throw ConfigError("patch op vector size != d_model");
        }
        if (!seen.insert({op.layer, op.position}).second) {
            throw ConfigError("duplicate patch op at layer " + std::to_string(op.layer) +
                              ", position " + std::to_string(op.position));
        }
    }
    for (const KnockoutOp& op : knockout_ops) {
        for (int l : op.layers) {
            if (l < 0 || l >= config.n_layers) throw ConfigError("knockout op layer out of range");
        }
        if (op.target < 0 || op.target >= seq_len) throw ConfigError("knockout op target out of range");
        for (int s : op.sources) {
            if (s < 0 || s >= seq_len) throw ConfigError("knockout op source out of range");
        }
    }
}

namespace {

// y[t] = LN(x[t]) * scale + bias, biased variance, f32 end to end.
void layer_norm(const float* x, int n, const float* scale, const float* bias, float eps, float* y) {
    float mean = 0.0f;
    for (int i = 0; i < n; ++i) mean += x[i];
    mean /= static_cast<float>(n);
    float var = 0.0f;
    for (int i = 0; i < n; ++i) {
        const float c = x[i] - mean;
        var += c * c;
    }
    var /= static_cast<float>(n);
    const float inv = 1.0f / std::sqrt(var + eps);
    for (int i = 0; i < n; ++i) {
        y[i] = (x[i] - mean) * inv * scale[i] + bias[i];
    }
}

// out (S x n) = x (S x m) @ W (m x n) + b
void matmul_bias(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& out) {
    const int64_t s = x.rows(), m = x.cols(), n = w.cols();
    for (int64_t t = 0; t < s; ++t) {
        float* o = out.row(t);
        for (int64_t j = 0; j < n; ++j) o[j] = b.at(j);
        const float* xr = x.row(t);
        for (int64_t k = 0; k < m; ++k) {
            const float xv = xr[k];
            if (xv == 0.0f) continue;
            const float* wr = w.row(k);
            for (int64_t j = 0; j < n; ++j) o[j] += xv * wr[j];
        }
    }
}

float gelu(float x) {
    return 0.5f * x * (1.0f + std::erf(x * 0.70710678118654752440f));
}

// Softmax over the unmasked entries of scores[0..len); masked entries get
// exactly 0. A fully masked row stays all zeros.
void masked_softmax_row(float* scores, const uint8_t* masked, int len) {
    float maxv = -std::numeric_limits<float>::infinity();
    bool any = false;
    for (int i = 0; i < len; ++i) {
        if (!masked[i]) {
            any = true;
            maxv = std::max(maxv, scores[i]);
        }
    }
    if (!any) {
        std::fill(scores, scores + len, 0.0f);
        return;
    }
    float sum = 0.0f;
    for (int i = 0; i < len; ++i) {
        if (masked[i]) {
            scores[i] = 0.0f;
        } else {
            scores[i] = std::exp(scores[i] - maxv);
            sum += scores[i];
        }
    }
    const float inv = 1.0f / sum;
    for (int i = 0; i < len; ++i) scores[i] *= inv;
}

} // namespace

float embedding_std(const WeightStore& weights) {
    const Tensor& emb = weights.tensor("embed.tok");
    double sum = 0.0, sq = 0.0;
    for (float v : emb.data) {
        sum += v;
        sq += static_cast<double>(v) * v;
    }
    const double n = static_cast<double>(emb.data.size());
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    return static_cast<float>(std::sqrt(std::max(var, 0.0)));
}

RunRecord forward(std::span<const int> tokens,
                  const WeightStore& weights,
                  const ModelConfig& config,
                  const InterventionPlan& plan,
                  CaptureFlags capture,
                  int target_position) {
    config.validate();
    const int seq = static_cast<int>(tokens.size());
    if (seq < 1) throw DataError("empty token sequence");
    if (seq > config.max_seq_len) {
        throw DataError("sequence too long: " + std::to_string(seq) + " > max_seq_len " +
                        std::to_string(config.max_seq_len));
    }
    for (int id : tokens) {
        if (id < 0 || id >= config.vocab_size) {
            throw DataError("token id out of range: " + std::to_string(id));
        }
    }
    plan.validate(seq, config);
    const int target = target_position < 0 ? seq - 1 : target_position;
    if (target >= seq) throw ConfigError("target position out of range");

    const int d = config.d_model;
    const int nh = config.n_heads;
    const int dh = config.d_head;
    const Tensor& tok_emb = weights.tensor("embed.tok");
    const Tensor& pos_emb = weights.tensor("embed.pos");

    RunRecord rec;
    rec.seq_len = seq;
    rec.target_position = target;

    // Embedding sum, then noise ops.
    Tensor h({seq, d});
    for (int t = 0; t < seq; ++t) {
        const float* te = tok_emb.row(tokens[static_cast<size_t>(t)]);
        const float* pe = pos_emb.row(t);
        float* hr = h.row(t);
        for (int j = 0; j < d; ++j) hr[j] = te[j] + pe[j];
    }
    for (const NoiseOp& op : plan.noise_ops) {
        if (op.sigma == 0.0f || op.begin == op.end) continue;
        const size_t n = static_cast<size_t>(op.end - op.begin) * static_cast<size_t>(d);
        const std::vector<float> noise = gaussian_vector(op.seed, n, op.sigma);
        size_t idx = 0;
        for (int t = op.begin; t < op.end; ++t) {
            float* hr = h.row(t);
            for (int j = 0; j < d; ++j) hr[j] += noise[idx++];
        }
    }

    // Per-layer knockout masks beyond the causal one.
    std::vector<std::vector<std::pair<int, int>>> knock(static_cast<size_t>(config.n_layers));
    for (const KnockoutOp& op : plan.knockout_ops) {
        for (int l : op.layers) {
            for (int s : op.sources) knock[static_cast<size_t>(l)].emplace_back(op.target, s);
        }
    }
    std::vector<std::vector<const PatchOp*>> patches(static_cast<size_t>(config.n_layers));
    for (const PatchOp& op : plan.patch_ops) patches[static_cast<size_t>(op.layer)].push_back(&op);

    Tensor x({seq, d});
    Tensor q({seq, d}), k({seq, d}), v({seq, d});
    Tensor attn_out({seq, d});
    Tensor mlp_in({seq, config.d_mlp});
    std::vector<float> scores(static_cast<size_t>(seq));
    std::vector<uint8_t> masked(static_cast<size_t>(seq));

    for (int layer = 0; layer < config.n_layers; ++layer) {
        const std::string p = "layer" + std::to_string(layer) + ".";
        const Tensor& ln1s = weights.tensor(p + "ln1.scale");
        const Tensor& ln1b = weights.tensor(p + "ln1.bias");
        for (int t = 0; t < seq; ++t) {
            layer_norm(h.row(t), d, ln1s.data.data(), ln1b.data.data(), config.ln_epsilon, x.row(t));
        }
        matmul_bias(x, weights.tensor(p + "attn.W_Q"), weights.tensor(p + "attn.b_Q"), q);
        matmul_bias(x, weights.tensor(p + "attn.W_K"), weights.tensor(p + "attn.b_K"), k);
        matmul_bias(x, weights.tensor(p + "attn.W_V"), weights.tensor(p + "attn.b_V"), v);

        Tensor alpha; // (nh x seq x seq), built when captured or needed
        const bool want_alpha = capture.attn || capture.contributions;
        if (want_alpha) alpha = Tensor({nh, seq, seq});

        Tensor mixed({seq, d}); // per-position concatenated head outputs
        const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
        for (int head = 0; head < nh; ++head) {
            const int off = head * dh;
            for (int t = 0; t < seq; ++t) {
                std::fill(masked.begin(), masked.end(), uint8_t{0});
                for (int s = t + 1; s < seq; ++s) masked[static_cast<size_t>(s)] = 1;
                for (const auto& [kt, ks] : knock[static_cast<size_t>(layer)]) {
                    if (kt == t) masked[static_cast<size_t>(ks)] = 1;
                }
                const float* qr = q.row(t) + off;
                for (int s = 0; s <= t; ++s) {
                    if (masked[static_cast<size_t>(s)]) {
                        scores[static_cast<size_t>(s)] = 0.0f;
                        continue;
                    }
                    const float* kr = k.row(s) + off;
                    float dot = 0.0f;
                    for (int j = 0; j < dh; ++j) dot += qr[j] * kr[j];
                    scores[static_cast<size_t>(s)] = dot * scale;
                }
                masked_softmax_row(scores.data(), masked.data(), t + 1);
                for (int s = t + 1; s < seq; ++s) scores[static_cast<size_t>(s)] = 0.0f;

                float* mr = mixed.row(t) + off;
                std::fill(mr, mr + dh, 0.0f);
                for (int s = 0; s <= t; ++s) {
                    const float a = scores[static_cast<size_t>(s)];
                    if (a == 0.0f) continue;
                    const float* vr = v.row(s) + off;
                    for (int j = 0; j < dh; ++j) mr[j] += a * vr[j];
                }
                if (want_alpha) {
                    float* ar = alpha.data.data() + (static_cast<int64_t>(head) * seq + t) * seq;
                    std::copy(scores.begin(), scores.begin() + seq, ar);
                }
            }
        }

        const Tensor& w_o = weights.tensor(p + "attn.W_O");
        const Tensor& b_o = weights.tensor(p + "attn.b_O");
        matmul_bias(mixed, w_o, b_o, attn_out);

        if (capture.contributions) {
            // a^(l)_{i,T} = sum_h alpha_h(T,i) * (v_i_h @ W_O rows of head h)
            Tensor contrib({seq, d});
            for (int src = 0; src < seq; ++src) {
                float* cr = contrib.row(src);
                for (int head = 0; head < nh; ++head) {
                    const float a = alpha.data[(static_cast<int64_t>(head) * seq + target) * seq + src];
                    if (a == 0.0f) continue;
                    const float* vr = v.row(src) + head * dh;
                    for (int j = 0; j < dh; ++j) {
                        const float av = a * vr[j];
                        const float* wr = w_o.row(head * dh + j);
                        for (int c = 0; c < d; ++c) cr[c] += av * wr[c];
                    }
                }
            }
            rec.contributions.push_back(std::move(contrib));
        }
        if (capture.attn) rec.attn.push_back(std::move(alpha));

        for (int t = 0; t < seq; ++t) {
            float* hr = h.row(t);
            const float* ar = attn_out.row(t);
            for (int j = 0; j < d; ++j) hr[j] += ar[j];
        }

        const Tensor& ln2s = weights.tensor(p + "ln2.scale");
        const Tensor& ln2b = weights.tensor(p + "ln2.bias");
        for (int t = 0; t < seq; ++t) {
            layer_norm(h.row(t), d, ln2s.data.data(), ln2b.data.data(), config.ln_epsilon, x.row(t));
        }
        matmul_bias(x, weights.tensor(p + "mlp.W_in"), weights.tensor(p + "mlp.b_in"), mlp_in);
        for (float& mv : mlp_in.data) mv = gelu(mv);
        Tensor mlp_out({seq, d});
        matmul_bias(mlp_in, weights.tensor(p + "mlp.W_out"), weights.tensor(p + "mlp.b_out"), mlp_out);
        for (int t = 0; t < seq; ++t) {
            float* hr = h.row(t);
            const float* mr = mlp_out.row(t);
            for (int j = 0; j < d; ++j) hr[j] += mr[j];
        }

        // Patches land on the residual stream after the layer completes.
        for (const PatchOp* op : patches[static_cast<size_t>(layer)]) {
            std::copy(op->value.begin(), op->value.end(), h.row(op->position));
        }

        if (capture.hidden) {
            Tensor snap({seq, d});
            snap.data = h.data;
            rec.hidden.push_back(std::move(snap));
        }
    }

    // Final norm + unembedding at the last position only.
    std::vector<float> final_x(static_cast<size_t>(d));
    layer_norm(h.row(seq - 1), d, weights.tensor("final_ln.scale").data.data(),
               weights.tensor("final_ln.bias").data.data(), config.ln_epsilon, final_x.data());

    rec.logits = Tensor({config.vocab_size});
    if (config.tied_unembed) {
        for (int t = 0; t < config.vocab_size; ++t) {
            const float* er = tok_emb.row(t);
            float dot = 0.0f;
            for (int j = 0; j < d; ++j) dot += final_x[static_cast<size_t>(j)] * er[j];
            rec.logits.at(t) = dot;
        }
    } else {
        const Tensor& wu = weights.tensor("unembed.W");
        for (int j = 0; j < d; ++j) {
            const float xv = final_x[static_cast<size_t>(j)];
            if (xv == 0.0f) continue;
            const float* wr = wu.row(j);
            for (int t = 0; t < config.vocab_size; ++t) rec.logits.at(t) += xv * wr[t];
        }
    }

    rec.probs = Tensor({config.vocab_size});
    float maxv = rec.logits.data[0];
    for (float lv : rec.logits.data) maxv = std::max(maxv, lv);
    float sum = 0.0f;
    for (int t = 0; t < config.vocab_size; ++t) {
        rec.probs.at(t) = std::exp(rec.logits.at(t) - maxv);
        sum += rec.probs.at(t);
    }
    const float inv = 1.0f / sum;
    for (float& pv : rec.probs.data) pv *= inv;

    return rec;
}

float answer_prob(const RunRecord& record, int answer) {
    if (record.probs.numel() == 0) throw ConfigError("run record holds no distribution");
    if (answer < 0 || answer >= record.probs.numel()) {
        throw ConfigError("answer token id out of range: " + std::to_string(answer));
    }
    return record.probs.at(answer);
}

} // namespace ragprobe
