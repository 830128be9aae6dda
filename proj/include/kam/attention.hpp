#ifndef KAM_ATTENTION_HPP
#define KAM_ATTENTION_HPP

#include <optional>
#include <string>

#include "kam/layers.hpp"
#include "kam/tape.hpp"

namespace kam {

enum class AttentionVariant { none, kam, qkv, se, cbam };

inline const char* to_string(AttentionVariant v) {
    switch (v) {
        case AttentionVariant::none: return "eegnet";
        case AttentionVariant::kam:  return "kam";
        case AttentionVariant::qkv:  return "qkv";
        case AttentionVariant::se:   return "se";
        case AttentionVariant::cbam: return "cbam";
    }
    return "?";
}

inline AttentionVariant attention_variant_from(const std::string& s) {
    if (s == "eegnet" || s == "none") return AttentionVariant::none;
    if (s == "kam") return AttentionVariant::kam;
    if (s == "qkv") return AttentionVariant::qkv;
    if (s == "se") return AttentionVariant::se;
    if (s == "cbam") return AttentionVariant::cbam;
    throw std::invalid_argument("unknown attention variant '" + s +
                                "' (valid: eegnet, qkv, se, cbam, kam)");
}

struct AttentionConfig {
    AttentionVariant variant = AttentionVariant::none;
    // kam: alpha = kam_a + softplus(rho), the single trainable scalar
    double kam_a = -0.1;
    size_t kam_heads = 1;
    size_t se_r = 8;
    size_t cbam_r = 8;
    size_t cbam_spatial_kernel = 7;
};

/// Trainable parameters added by the attention module at a slot with C
/// channels. The QKV and CBAM configurations are the ones calibrated to the
/// reference deltas (+1089 and +182 at C=16): QKV carries q/k/v/out
/// projections with biases plus a scalar output scale, CBAM a biased channel
/// MLP plus an unbiased spatial conv followed by batch norm.
inline size_t attention_param_count(const AttentionConfig& cfg, size_t C) {
    switch (cfg.variant) {
        case AttentionVariant::none:
            return 0;
        case AttentionVariant::kam:
            return 1;
        case AttentionVariant::qkv:
            return 4 * (C * C + C) + 1;
        case AttentionVariant::se: {
            if (cfg.se_r >= C) throw std::invalid_argument("se: reduction r must be < C");
            if (C % cfg.se_r != 0) throw std::invalid_argument("se: C must be divisible by r");
            size_t h = C / cfg.se_r;
            return C * h + h + h * C + C;
        }
        case AttentionVariant::cbam: {
            if (cfg.cbam_r >= C) throw std::invalid_argument("cbam: reduction r must be < C");
            if (C % cfg.cbam_r != 0) throw std::invalid_argument("cbam: C must be divisible by r");
            size_t h = C / cfg.cbam_r;
            size_t k = cfg.cbam_spatial_kernel;
            return (C * h + h + h * C + C) + 2 * k * k + batchnorm_param_count(1);
        }
    }
    return 0;
}

template <class T>
void register_attention_params(ParamStore<T>& ps, const AttentionConfig& cfg, size_t C,
                               Rng& rng) {
    attention_param_count(cfg, C); // validates configuration
    switch (cfg.variant) {
        case AttentionVariant::none:
            break;
        case AttentionVariant::kam: {
            // rho such that alpha(rho) = a + softplus(rho) = 1
            double target = 1.0 - cfg.kam_a;
            double rho = std::log(std::expm1(target));
            ps.add("attn.rho", {1}, true).data[0] = T(rho);
            break;
        }
        case AttentionVariant::qkv: {
            for (const char* nm : {"q", "k", "v", "o"}) {
                auto& W = ps.add(std::string("attn.W") + nm, {C, C}, true);
                glorot_uniform(W.data, C, C, rng);
                ps.add(std::string("attn.b") + nm, {C}, true).fill(T(0));
            }
            // output scale starts at 0: the module begins as a pure skip
            ps.add("attn.scale", {1}, true).fill(T(0));
            break;
        }
        case AttentionVariant::se: {
            size_t h = C / cfg.se_r;
            auto& W1 = ps.add("attn.W1", {C, h}, true);
            glorot_uniform(W1.data, C, h, rng);
            ps.add("attn.b1", {h}, true).fill(T(0));
            auto& W2 = ps.add("attn.W2", {h, C}, true);
            glorot_uniform(W2.data, h, C, rng);
            ps.add("attn.b2", {C}, true).fill(T(0));
            break;
        }
        case AttentionVariant::cbam: {
            size_t h = C / cfg.cbam_r;
            size_t k = cfg.cbam_spatial_kernel;
            auto& W1 = ps.add("attn.W1", {C, h}, true);
            glorot_uniform(W1.data, C, h, rng);
            ps.add("attn.b1", {h}, true).fill(T(0));
            auto& W2 = ps.add("attn.W2", {h, C}, true);
            glorot_uniform(W2.data, h, C, rng);
            ps.add("attn.b2", {C}, true).fill(T(0));
            auto& Ks = ps.add("attn.spatial_kernel", {1, 2, k, k}, true);
            glorot_uniform(Ks.data, 2 * k * k, k * k, rng);
            register_batchnorm(ps, "attn.spatial_bn", 1);
            break;
        }
    }
}

/// M_K = exp(-alpha * d(x_i, x_j)^2) over the rows of x (n,m).
/// Unit diagonal exactly; symmetric; differentiable in x and alpha.
template <class T>
int kernel_matrix(Tape<T>& tp, int x, int alpha) {
    int d2 = tp.pairwise_sqdist(x);
    return tp.exp_(tp.neg(tp.mul(alpha, d2)));
}

/// (I + M_K) x on a single (n,m) feature block; the skip connection is part
/// of the op. Multi-head splits the length-m vectors into contiguous
/// segments with one kernel matrix each.
template <class T>
int kam_apply_block(Tape<T>& tp, int x, int alpha, size_t heads) {
    const auto& X = tp.val(x);
    if (X.rank() != 2) throw std::invalid_argument("kam_apply: feature block must be rank 2");
    size_t m = X.shape[1];
    if (heads == 0 || m % heads != 0)
        throw std::invalid_argument("kam_apply: feature length not divisible by head count");
    if (heads == 1) {
        int M = kernel_matrix(tp, x, alpha);
        return tp.add(x, tp.matmul(M, x));
    }
    size_t mh = m / heads;
    std::vector<int> parts;
    for (size_t hd = 0; hd < heads; ++hd) {
        int seg = tp.slice(x, 1, hd * mh, mh);
        int M = kernel_matrix(tp, seg, alpha);
        parts.push_back(tp.add(seg, tp.matmul(M, seg)));
    }
    return tp.concat(parts, 1);
}

namespace detail {

/// Shared two-layer MLP used by SE and the CBAM channel gate: s -> W2(relu(W1 s + b1)) + b2.
template <class T>
int gate_mlp(Tape<T>& tp, int s, const LeafMap& lm) {
    int h = tp.relu(tp.add_rowvec(tp.matmul(s, lm.at("attn.W1")), lm.at("attn.b1")));
    return tp.add_rowvec(tp.matmul(h, lm.at("attn.W2")), lm.at("attn.b2"));
}

} // namespace detail

/// Applies the configured attention module to a (N,C,H,W) feature map.
/// KAM/QKV treat the C channel vectors (flattened over H*W) as the features.
/// If alpha_override is non-null, KAM uses that alpha directly (bypassing
/// rho); out_alpha receives the alpha node id for d/d-alpha queries.
template <class T>
int apply_attention(Tape<T>& tp, int x, const AttentionConfig& cfg, ParamStore<T>& ps,
                    LeafMap& lm, bool train, double bn_eps, double bn_momentum,
                    const double* alpha_override = nullptr, int* out_alpha = nullptr) {
    const auto shape = tp.val(x).shape; // copied: pushes below may move the node pool
    if (shape.size() != 4) throw std::invalid_argument("attention: input must be rank 4");
    size_t N = shape[0], C = shape[1], H = shape[2], W = shape[3], m = H * W;
    switch (cfg.variant) {
        case AttentionVariant::none:
            return x;

        case AttentionVariant::kam: {
            int alpha;
            if (alpha_override) {
                if (*alpha_override <= cfg.kam_a)
                    throw std::invalid_argument("kam: alpha must lie in (a, inf)");
                alpha = tp.leaf(Tensor<T>::scalar(T(*alpha_override)), false);
            } else {
                int rho = plant_leaf(tp, ps, lm, "attn.rho");
                alpha = tp.add_const(tp.softplus(rho), cfg.kam_a);
            }
            if (out_alpha) *out_alpha = alpha;
            std::vector<int> outs;
            for (size_t n = 0; n < N; ++n) {
                int xs = tp.reshape(tp.slice(x, 0, n, 1), {C, m});
                int ys = kam_apply_block(tp, xs, alpha, cfg.kam_heads);
                outs.push_back(tp.reshape(ys, {1, C, H, W}));
            }
            return tp.concat(outs, 0);
        }

        case AttentionVariant::qkv: {
            int Wq = plant_leaf(tp, ps, lm, "attn.Wq"), bq = plant_leaf(tp, ps, lm, "attn.bq");
            int Wk = plant_leaf(tp, ps, lm, "attn.Wk"), bk = plant_leaf(tp, ps, lm, "attn.bk");
            int Wv = plant_leaf(tp, ps, lm, "attn.Wv"), bv = plant_leaf(tp, ps, lm, "attn.bv");
            int Wo = plant_leaf(tp, ps, lm, "attn.Wo"), bo = plant_leaf(tp, ps, lm, "attn.bo");
            int sc = plant_leaf(tp, ps, lm, "attn.scale");
            std::vector<int> outs;
            for (size_t n = 0; n < N; ++n) {
                // tokens are the m spatial positions, features the C channels
                int xs = tp.transpose2d(tp.reshape(tp.slice(x, 0, n, 1), {C, m})); // (m,C)
                int Q = tp.add_rowvec(tp.matmul(xs, Wq), bq);
                int K = tp.add_rowvec(tp.matmul(xs, Wk), bk);
                int V = tp.add_rowvec(tp.matmul(xs, Wv), bv);
                int A = tp.matmul(Q, tp.transpose2d(K)); // raw, no softmax
                int O = tp.add_rowvec(tp.matmul(tp.matmul(A, V), Wo), bo);
                int ys = tp.add(xs, tp.mul(sc, O)); // external skip
                outs.push_back(tp.reshape(tp.transpose2d(ys), {1, C, H, W}));
            }
            return tp.concat(outs, 0);
        }

        case AttentionVariant::se: {
            plant_leaf(tp, ps, lm, "attn.W1");
            plant_leaf(tp, ps, lm, "attn.b1");
            plant_leaf(tp, ps, lm, "attn.W2");
            plant_leaf(tp, ps, lm, "attn.b2");
            int s = tp.reduce_mean(x, {2, 3}, false); // (N,C)
            int g = tp.sigmoid(detail::gate_mlp(tp, s, lm));
            return tp.channel_gate(x, g);
        }

        case AttentionVariant::cbam: {
            plant_leaf(tp, ps, lm, "attn.W1");
            plant_leaf(tp, ps, lm, "attn.b1");
            plant_leaf(tp, ps, lm, "attn.W2");
            plant_leaf(tp, ps, lm, "attn.b2");
            int Ks = plant_leaf(tp, ps, lm, "attn.spatial_kernel");
            // channel gate: avg- and max-pooled descriptors through the shared MLP
            int sa = tp.reduce_mean(x, {2, 3}, false);
            int sm = tp.reduce_max(x, {2, 3}, false);
            int g = tp.sigmoid(tp.add(detail::gate_mlp(tp, sa, lm), detail::gate_mlp(tp, sm, lm)));
            int xc = tp.channel_gate(x, g);
            // spatial gate: channelwise mean/max, kxk conv, BN, sigmoid
            int ma = tp.reduce_mean(xc, {1}, true);
            int mm = tp.reduce_max(xc, {1}, true);
            int cat = tp.concat({ma, mm}, 1);
            int sp = tp.conv2d(cat, Ks, Pad::same);
            sp = apply_batchnorm(tp, sp, ps, lm, "attn.spatial_bn", train, bn_eps, bn_momentum);
            return tp.spatial_gate(xc, tp.sigmoid(sp));
        }
    }
    return x;
}

} // namespace kam

#endif
