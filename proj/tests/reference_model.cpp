#include "reference_model.hpp"

#include <cmath>
#include <limits>

#include "ragprobe/rng.hpp"

namespace ragprobe::testref {

namespace {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

Vec get_row(const Tensor& t, int64_t r) {
    Vec out(static_cast<size_t>(t.cols()));
    for (int64_t j = 0; j < t.cols(); ++j) out[static_cast<size_t>(j)] = t.at(r, j);
    return out;
}

Vec layer_norm(const Vec& x, const Tensor& scale, const Tensor& bias, double eps) {
    const size_t n = x.size();
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    Vec y(n);
    for (size_t i = 0; i < n; ++i) {
        y[i] = (x[i] - mean) / std::sqrt(var + eps) * scale.at(static_cast<int64_t>(i)) +
               bias.at(static_cast<int64_t>(i));
    }
    return y;
}

// y = x @ W + b with W stored (in x out)
Vec affine(const Vec& x, const Tensor& w, const Tensor& b) {
    Vec y(static_cast<size_t>(w.cols()));
    for (int64_t j = 0; j < w.cols(); ++j) {
        double acc = b.at(j);
        for (int64_t i = 0; i < w.rows(); ++i) acc += x[static_cast<size_t>(i)] * w.at(i, j);
        y[static_cast<size_t>(j)] = acc;
    }
    return y;
}

double gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

} // namespace

RefResult reference_forward(const std::vector<int>& tokens,
                            const WeightStore& weights,
                            const ModelConfig& config,
                            const InterventionPlan& plan,
                            int target_position) {
    const int seq = static_cast<int>(tokens.size());
    const int d = config.d_model;
    const int target = target_position < 0 ? seq - 1 : target_position;
    const Tensor& tok_emb = weights.tensor("embed.tok");
    const Tensor& pos_emb = weights.tensor("embed.pos");

    Mat h(static_cast<size_t>(seq));
    for (int t = 0; t < seq; ++t) {
        h[static_cast<size_t>(t)] = Vec(static_cast<size_t>(d));
        for (int j = 0; j < d; ++j) {
            h[static_cast<size_t>(t)][static_cast<size_t>(j)] =
                static_cast<double>(tok_emb.at(tokens[static_cast<size_t>(t)], j)) +
                static_cast<double>(pos_emb.at(t, j));
        }
    }
    for (const NoiseOp& op : plan.noise_ops) {
        if (op.sigma == 0.0f) continue;
        std::vector<float> noise = gaussian_vector(
            op.seed, static_cast<size_t>(op.end - op.begin) * static_cast<size_t>(d), op.sigma);
        size_t idx = 0;
        for (int t = op.begin; t < op.end; ++t) {
            for (int j = 0; j < d; ++j) {
                h[static_cast<size_t>(t)][static_cast<size_t>(j)] +=
                    static_cast<double>(noise[idx++]);
            }
        }
    }

    RefResult res;
    const double neg_inf = -std::numeric_limits<double>::infinity();

    for (int layer = 0; layer < config.n_layers; ++layer) {
        const std::string p = "layer" + std::to_string(layer) + ".";

        Mat x1(static_cast<size_t>(seq));
        for (int t = 0; t < seq; ++t) {
            x1[static_cast<size_t>(t)] =
                layer_norm(h[static_cast<size_t>(t)], weights.tensor(p + "ln1.scale"),
                           weights.tensor(p + "ln1.bias"), config.ln_epsilon);
        }
        Mat q(static_cast<size_t>(seq)), k(static_cast<size_t>(seq)), v(static_cast<size_t>(seq));
        for (int t = 0; t < seq; ++t) {
            q[static_cast<size_t>(t)] = affine(x1[static_cast<size_t>(t)],
                                               weights.tensor(p + "attn.W_Q"),
                                               weights.tensor(p + "attn.b_Q"));
            k[static_cast<size_t>(t)] = affine(x1[static_cast<size_t>(t)],
                                               weights.tensor(p + "attn.W_K"),
                                               weights.tensor(p + "attn.b_K"));
            v[static_cast<size_t>(t)] = affine(x1[static_cast<size_t>(t)],
                                               weights.tensor(p + "attn.W_V"),
                                               weights.tensor(p + "attn.b_V"));
        }

        std::vector<std::vector<std::vector<double>>> layer_attn(
            static_cast<size_t>(config.n_heads));
        Mat mixed(static_cast<size_t>(seq), Vec(static_cast<size_t>(d), 0.0));
        for (int head = 0; head < config.n_heads; ++head) {
            auto& am = layer_attn[static_cast<size_t>(head)];
            am.assign(static_cast<size_t>(seq), Vec(static_cast<size_t>(seq), 0.0));
            for (int t = 0; t < seq; ++t) {
                Vec score(static_cast<size_t>(seq), neg_inf);
                for (int s = 0; s <= t; ++s) {
                    double dot = 0.0;
                    for (int j = 0; j < config.d_head; ++j) {
                        dot += q[static_cast<size_t>(t)][static_cast<size_t>(head * config.d_head + j)] *
                               k[static_cast<size_t>(s)][static_cast<size_t>(head * config.d_head + j)];
                    }
                    score[static_cast<size_t>(s)] = dot / std::sqrt(static_cast<double>(config.d_head));
                }
                for (const KnockoutOp& op : plan.knockout_ops) {
                    bool layer_hit = false;
                    for (int l : op.layers) layer_hit = layer_hit || l == layer;
                    if (!layer_hit || op.target != t) continue;
                    for (int s : op.sources) score[static_cast<size_t>(s)] = neg_inf;
                }
                double maxv = neg_inf;
                for (double sv : score) maxv = std::max(maxv, sv);
                if (maxv == neg_inf) continue; // fully knocked row: all zeros
                double sum = 0.0;
                for (int s = 0; s < seq; ++s) {
                    if (score[static_cast<size_t>(s)] == neg_inf) continue;
                    am[static_cast<size_t>(t)][static_cast<size_t>(s)] =
                        std::exp(score[static_cast<size_t>(s)] - maxv);
                    sum += am[static_cast<size_t>(t)][static_cast<size_t>(s)];
                }
                for (int s = 0; s < seq; ++s) am[static_cast<size_t>(t)][static_cast<size_t>(s)] /= sum;
                for (int s = 0; s <= t; ++s) {
                    for (int j = 0; j < config.d_head; ++j) {
                        mixed[static_cast<size_t>(t)][static_cast<size_t>(head * config.d_head + j)] +=
                            am[static_cast<size_t>(t)][static_cast<size_t>(s)] *
                            v[static_cast<size_t>(s)][static_cast<size_t>(head * config.d_head + j)];
                    }
                }
            }
        }

        const Tensor& w_o = weights.tensor(p + "attn.W_O");
        const Tensor& b_o = weights.tensor(p + "attn.b_O");

        // Contributions at the target position, summed per head.
        std::vector<std::vector<double>> contrib(static_cast<size_t>(seq),
                                                 Vec(static_cast<size_t>(d), 0.0));
        for (int src = 0; src < seq; ++src) {
            for (int head = 0; head < config.n_heads; ++head) {
                const double a = layer_attn[static_cast<size_t>(head)][static_cast<size_t>(target)]
                                          [static_cast<size_t>(src)];
                for (int c = 0; c < d; ++c) {
                    double acc = 0.0;
                    for (int j = 0; j < config.d_head; ++j) {
                        acc += a *
                               v[static_cast<size_t>(src)][static_cast<size_t>(head * config.d_head + j)] *
                               static_cast<double>(w_o.at(head * config.d_head + j, c));
                    }
                    contrib[static_cast<size_t>(src)][static_cast<size_t>(c)] += acc;
                }
            }
        }
        res.contributions.push_back(contrib);
        res.attn.push_back(layer_attn);

        std::vector<Vec> block_out(static_cast<size_t>(seq));
        for (int t = 0; t < seq; ++t) {
            Vec attn_out = affine(mixed[static_cast<size_t>(t)], w_o, b_o);
            for (int j = 0; j < d; ++j) {
                h[static_cast<size_t>(t)][static_cast<size_t>(j)] += attn_out[static_cast<size_t>(j)];
            }
            block_out[static_cast<size_t>(t)] = std::move(attn_out);
        }
        res.attn_block_out.push_back(std::move(block_out));

        for (int t = 0; t < seq; ++t) {
            Vec x2 = layer_norm(h[static_cast<size_t>(t)], weights.tensor(p + "ln2.scale"),
                                weights.tensor(p + "ln2.bias"), config.ln_epsilon);
            Vec inner = affine(x2, weights.tensor(p + "mlp.W_in"), weights.tensor(p + "mlp.b_in"));
            for (double& iv : inner) iv = gelu(iv);
            Vec out = affine(inner, weights.tensor(p + "mlp.W_out"), weights.tensor(p + "mlp.b_out"));
            for (int j = 0; j < d; ++j) {
                h[static_cast<size_t>(t)][static_cast<size_t>(j)] += out[static_cast<size_t>(j)];
            }
        }

        for (const PatchOp& op : plan.patch_ops) {
            if (op.layer != layer) continue;
            for (int j = 0; j < d; ++j) {
                h[static_cast<size_t>(op.position)][static_cast<size_t>(j)] =
                    static_cast<double>(op.value[static_cast<size_t>(j)]);
            }
        }
        res.hidden.push_back(h);
    }

    Vec fin = layer_norm(h[static_cast<size_t>(seq - 1)], weights.tensor("final_ln.scale"),
                         weights.tensor("final_ln.bias"), config.ln_epsilon);
    res.logits.assign(static_cast<size_t>(config.vocab_size), 0.0);
    for (int t = 0; t < config.vocab_size; ++t) {
        double acc = 0.0;
        if (config.tied_unembed) {
            for (int j = 0; j < d; ++j) {
                acc += fin[static_cast<size_t>(j)] * static_cast<double>(tok_emb.at(t, j));
            }
        } else {
            const Tensor& wu = weights.tensor("unembed.W");
            for (int j = 0; j < d; ++j) acc += fin[static_cast<size_t>(j)] * static_cast<double>(wu.at(j, t));
        }
        res.logits[static_cast<size_t>(t)] = acc;
    }
    double maxv = res.logits[0];
    for (double lv : res.logits) maxv = std::max(maxv, lv);
    double sum = 0.0;
    res.probs.assign(res.logits.size(), 0.0);
    for (size_t i = 0; i < res.logits.size(); ++i) {
        res.probs[i] = std::exp(res.logits[i] - maxv);
        sum += res.probs[i];
    }
    for (double& pv : res.probs) pv /= sum;
    return res;
}

} // namespace ragprobe::testref
