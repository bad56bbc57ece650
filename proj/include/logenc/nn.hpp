#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "logenc/common.hpp"
#include "logenc/rng.hpp"

namespace logenc {

/**
 * Transformer encoder math, templated on the scalar type so the same code
 * runs the float32 pipeline and the float64 finite-difference gradient check.
 *
 * Architecture: pre-norm self-attention blocks with learned absolute position
 * embeddings, exact-erf GELU, a final LayerNorm, and an untied MLM projection.
 * Attention is masked by exclusion: PAD keys are dropped from each softmax
 * rather than added at -inf, so appending PAD is bit-neutral for every other
 * position.
 */

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using ColVec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kInitStd = 0.02;

struct EncoderConfig {
    uint32_t vocab_size = 4096;
    int hidden_dim = 128;
    int num_layers = 4;
    int num_heads = 4;
    int ffn_dim = 512;
    int max_seq_len = 256;
    double dropout_rate = 0.0;
    double mask_rate = 0.15;
    double mask_token_fraction = 0.8;
    double random_fraction = 0.1;
    double keep_fraction = 0.1;

    void validate() const;  // throws BadConfig
    int head_dim() const { return hidden_dim / num_heads; }
};

template <typename S>
struct AttnParams {
    Mat<S> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename S>
struct LayerParams {
    Mat<S> ln1_gamma, ln1_beta;
    AttnParams<S> attn;
    Mat<S> ln2_gamma, ln2_beta;
    Mat<S> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

template <typename S>
struct EncoderParams {
    Mat<S> tok_emb;  // V x D
    Mat<S> pos_emb;  // max_seq_len x D
    std::vector<LayerParams<S>> layers;
    Mat<S> final_ln_gamma, final_ln_beta;  // 1 x D
    Mat<S> mlm_w;  // D x V
    Mat<S> mlm_b;  // 1 x V

    /// Visits every tensor with fn(name, matrix) in a fixed order shared by
    /// init, optimizer state, checkpoints, and the gradient check.
    template <typename Fn>
    void for_each(Fn&& fn) {
        visit(*this, fn);
    }
    template <typename Fn>
    void for_each(Fn&& fn) const {
        visit(*this, fn);
    }

  private:
    template <typename Self, typename Fn>
    static void visit(Self& self, Fn& fn) {
        fn("tok_emb", self.tok_emb);
        fn("pos_emb", self.pos_emb);
        for (size_t i = 0; i < self.layers.size(); ++i) {
            std::string p = "layer" + std::to_string(i) + ".";
            auto& l = self.layers[i];
            fn(p + "ln1.gamma", l.ln1_gamma);
            fn(p + "ln1.beta", l.ln1_beta);
            fn(p + "attn.wq", l.attn.wq);
            fn(p + "attn.bq", l.attn.bq);
            fn(p + "attn.wk", l.attn.wk);
            fn(p + "attn.bk", l.attn.bk);
            fn(p + "attn.wv", l.attn.wv);
            fn(p + "attn.bv", l.attn.bv);
            fn(p + "attn.wo", l.attn.wo);
            fn(p + "attn.bo", l.attn.bo);
            fn(p + "ln2.gamma", l.ln2_gamma);
            fn(p + "ln2.beta", l.ln2_beta);
            fn(p + "ffn.w1", l.ffn_w1);
            fn(p + "ffn.b1", l.ffn_b1);
            fn(p + "ffn.w2", l.ffn_w2);
            fn(p + "ffn.b2", l.ffn_b2);
        }
        fn("final_ln.gamma", self.final_ln_gamma);
        fn("final_ln.beta", self.final_ln_beta);
        fn("mlm.w", self.mlm_w);
        fn("mlm.b", self.mlm_b);
    }
};

template <typename S>
EncoderParams<S> allocate_params(const EncoderConfig& c) {
    const int D = c.hidden_dim;
    const int F = c.ffn_dim;
    EncoderParams<S> p;
    p.tok_emb = Mat<S>::Zero(c.vocab_size, D);
    p.pos_emb = Mat<S>::Zero(c.max_seq_len, D);
    p.layers.resize(c.num_layers);
    for (auto& l : p.layers) {
        l.ln1_gamma = Mat<S>::Zero(1, D);
        l.ln1_beta = Mat<S>::Zero(1, D);
        l.attn.wq = Mat<S>::Zero(D, D);
        l.attn.bq = Mat<S>::Zero(1, D);
        l.attn.wk = Mat<S>::Zero(D, D);
        l.attn.bk = Mat<S>::Zero(1, D);
        l.attn.wv = Mat<S>::Zero(D, D);
        l.attn.bv = Mat<S>::Zero(1, D);
        l.attn.wo = Mat<S>::Zero(D, D);
        l.attn.bo = Mat<S>::Zero(1, D);
        l.ln2_gamma = Mat<S>::Zero(1, D);
        l.ln2_beta = Mat<S>::Zero(1, D);
        l.ffn_w1 = Mat<S>::Zero(D, F);
        l.ffn_b1 = Mat<S>::Zero(1, F);
        l.ffn_w2 = Mat<S>::Zero(F, D);
        l.ffn_b2 = Mat<S>::Zero(1, D);
    }
    p.final_ln_gamma = Mat<S>::Zero(1, D);
    p.final_ln_beta = Mat<S>::Zero(1, D);
    p.mlm_w = Mat<S>::Zero(D, c.vocab_size);
    p.mlm_b = Mat<S>::Zero(1, c.vocab_size);
    return p;
}

inline bool is_gain_tensor(const std::string& name) {
    return name.size() >= 5 && name.compare(name.size() - 5, 5, "gamma") == 0;
}

inline bool is_zero_init_tensor(const std::string& name) {
    auto ends_with = [&](const char* s) {
        size_t n = std::string_view(s).size();
        return name.size() >= n && name.compare(name.size() - n, n, s) == 0;
    };
    return ends_with("beta") || ends_with(".bq") || ends_with(".bk") || ends_with(".bv") ||
           ends_with(".bo") || ends_with(".b1") || ends_with(".b2") || ends_with("mlm.b");
}

/// Weights from a truncated normal (std 0.02), gains 1, biases 0; each tensor
/// fills from its own named substream so layouts can change without reseeding.
template <typename S>
EncoderParams<S> init_params(const EncoderConfig& c, uint64_t seed) {
    c.validate();
    EncoderParams<S> p = allocate_params<S>(c);
    p.for_each([&](const std::string& name, Mat<S>& m) {
        if (is_gain_tensor(name)) {
            m.setOnes();
            return;
        }
        if (is_zero_init_tensor(name)) return;
        Rng rng(derive_seed(seed, "init." + name));
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index cidx = 0; cidx < m.cols(); ++cidx) {
                m(r, cidx) = static_cast<S>(rng.truncated_normal(kInitStd));
            }
        }
    });
    return p;
}

template <typename S>
uint64_t param_count(const EncoderParams<S>& p) {
    uint64_t n = 0;
    p.for_each([&](const std::string&, const Mat<S>& m) { n += m.size(); });
    return n;
}

/// Deterministic inverted-dropout masks; rate 0 disables.
struct DropoutPlan {
    double rate = 0.0;
    uint64_t seed = 0;
};

template <typename S>
struct LayerCache {
    Mat<S> x_in;                 // T x D, block input
    Mat<S> xhat1;                // T x D, ln1 normalized (pre gain/shift)
    ColVec<S> inv_std1;          // T
    Mat<S> y1;                   // T x D, ln1 output
    Mat<S> q, k, v;              // T x D
    std::vector<Mat<S>> probs;   // H of T x T, rows of excluded keys are 0
    Mat<S> ctx;                  // T x D, concatenated head outputs
    Mat<S> attn_drop;            // T x D scaled keep mask, empty when off
    Mat<S> a;                    // T x D, after attention residual
    Mat<S> xhat2;
    ColVec<S> inv_std2;
    Mat<S> y2;
    Mat<S> h1;                   // T x F, pre-GELU
    Mat<S> g;                    // T x F, post-GELU
    Mat<S> ffn_drop;
};

template <typename S>
struct ForwardCache {
    Mat<S> x0;  // T x D embedding sum
    std::vector<LayerCache<S>> layers;
    Mat<S> xhat_f;
    ColVec<S> inv_std_f;
    Mat<S> states;  // T x D, final LayerNorm output
};

namespace detail {

template <typename S>
void layer_norm(const Mat<S>& x, const Mat<S>& gamma, const Mat<S>& beta, Mat<S>& xhat,
                ColVec<S>& inv_std, Mat<S>& y) {
    const Eigen::Index T = x.rows(), D = x.cols();
    xhat.resize(T, D);
    inv_std.resize(T);
    y.resize(T, D);
    for (Eigen::Index t = 0; t < T; ++t) {
        S mean = x.row(t).mean();
        S var = (x.row(t).array() - mean).square().mean();
        S is = S(1) / std::sqrt(var + static_cast<S>(kLayerNormEps));
        inv_std(t) = is;
        xhat.row(t) = (x.row(t).array() - mean) * is;
        y.row(t) = xhat.row(t).array() * gamma.row(0).array() + beta.row(0).array();
    }
}

/// dy -> dx for layer_norm; accumulates dgamma/dbeta.
template <typename S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const Mat<S>& xhat, const ColVec<S>& inv_std,
                           const Mat<S>& gamma, Mat<S>& dgamma, Mat<S>& dbeta) {
    const Eigen::Index T = dy.rows(), D = dy.cols();
    Mat<S> dx(T, D);
    for (Eigen::Index t = 0; t < T; ++t) {
        dgamma.row(0).array() += dy.row(t).array() * xhat.row(t).array();
        dbeta.row(0).array() += dy.row(t).array();
        Eigen::Array<S, 1, Eigen::Dynamic> dxhat =
            dy.row(t).array() * gamma.row(0).array();
        S m1 = dxhat.mean();
        S m2 = (dxhat * xhat.row(t).array()).mean();
        dx.row(t) = ((dxhat - m1 - xhat.row(t).array() * m2) * inv_std(t)).matrix();
    }
    return dx;
}

inline constexpr double kInvSqrt2 = 0.7071067811865476;

template <typename S>
S gelu(S x) {
    return S(0.5) * x * (S(1) + std::erf(x * static_cast<S>(kInvSqrt2)));
}

template <typename S>
S gelu_grad(S x) {
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    S phi = static_cast<S>(inv_sqrt_2pi) * std::exp(S(-0.5) * x * x);
    return S(0.5) * (S(1) + std::erf(x * static_cast<S>(kInvSqrt2))) + x * phi;
}

template <typename S>
Mat<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, uint64_t seed) {
    Mat<S> m(rows, cols);
    Rng rng(seed);
    S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(r, c) = rng.bernoulli(rate) ? S(0) : keep_scale;
        }
    }
    return m;
}

/// out = x * w .rowwise()+ b, computed row by row. A whole-matrix product
/// would let the BLAS kernel pick different accumulation orders for the same
/// row depending on the total row count, breaking bit-exact padding
/// invariance; per-row products depend only on that row.
template <typename S>
Mat<S> rows_affine(const Mat<S>& x, const Mat<S>& w, const Mat<S>& b) {
    Mat<S> out(x.rows(), w.cols());
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
        out.row(t) = x.row(t) * w + b.row(0);
    }
    return out;
}

/// Softmax over the allowed keys only; excluded columns stay exactly 0.
template <typename S>
void masked_softmax_rows(Mat<S>& scores, const std::vector<bool>& key_mask) {
    const Eigen::Index T = scores.rows(), K = scores.cols();
    for (Eigen::Index t = 0; t < T; ++t) {
        S mx = std::numeric_limits<S>::lowest();
        for (Eigen::Index j = 0; j < K; ++j) {
            if (key_mask[j]) mx = std::max(mx, scores(t, j));
        }
        S sum = S(0);
        for (Eigen::Index j = 0; j < K; ++j) {
            if (key_mask[j]) {
                scores(t, j) = std::exp(scores(t, j) - mx);
                sum += scores(t, j);
            } else {
                scores(t, j) = S(0);
            }
        }
        if (sum > S(0)) scores.row(t) /= sum;
    }
}

}  // namespace detail

/// One pre-norm transformer block; returns the block output and fills lc.
template <typename S>
Mat<S> block_forward(const LayerParams<S>& lp, const EncoderConfig& c, const Mat<S>& x,
                     const std::vector<bool>& key_mask, LayerCache<S>& lc,
                     const DropoutPlan* dropout = nullptr, int layer_index = 0) {
    const Eigen::Index T = x.rows();
    const int D = c.hidden_dim, H = c.num_heads, dh = c.head_dim();
    const bool drop = dropout != nullptr && dropout->rate > 0.0;
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));
    lc.x_in = x;

    detail::layer_norm(x, lp.ln1_gamma, lp.ln1_beta, lc.xhat1, lc.inv_std1, lc.y1);
    lc.q = detail::rows_affine(lc.y1, lp.attn.wq, lp.attn.bq);
    lc.k = detail::rows_affine(lc.y1, lp.attn.wk, lp.attn.bk);
    lc.v = detail::rows_affine(lc.y1, lp.attn.wv, lp.attn.bv);

    lc.probs.assign(H, Mat<S>());
    lc.ctx.resize(T, D);
    for (int h = 0; h < H; ++h) {
        auto qh = lc.q.middleCols(h * dh, dh);
        auto kh = lc.k.middleCols(h * dh, dh);
        auto vh = lc.v.middleCols(h * dh, dh);
        Mat<S> scores(T, T);
        for (Eigen::Index t = 0; t < T; ++t) {
            scores.row(t) = qh.row(t) * kh.transpose() * scale;
        }
        detail::masked_softmax_rows(scores, key_mask);
        lc.probs[h] = std::move(scores);
        // Accumulate context rows in fixed key order, skipping excluded keys,
        // so appending PAD tokens cannot perturb the other positions even at
        // the level of float rounding.
        auto ctx_h = lc.ctx.middleCols(h * dh, dh);
        ctx_h.setZero();
        for (Eigen::Index t = 0; t < T; ++t) {
            for (Eigen::Index j = 0; j < T; ++j) {
                if (key_mask[j]) ctx_h.row(t) += lc.probs[h](t, j) * vh.row(j);
            }
        }
    }
    Mat<S> attn_out = detail::rows_affine(lc.ctx, lp.attn.wo, lp.attn.bo);
    if (drop) {
        lc.attn_drop = detail::dropout_mask<S>(
            T, D, dropout->rate, derive_seed(dropout->seed, "dropout", 2 * layer_index));
        attn_out.array() *= lc.attn_drop.array();
    }
    lc.a = x + attn_out;

    detail::layer_norm(lc.a, lp.ln2_gamma, lp.ln2_beta, lc.xhat2, lc.inv_std2, lc.y2);
    lc.h1 = detail::rows_affine(lc.y2, lp.ffn_w1, lp.ffn_b1);
    lc.g = lc.h1.unaryExpr([](S v) { return detail::gelu(v); });
    Mat<S> ffn_out = detail::rows_affine(lc.g, lp.ffn_w2, lp.ffn_b2);
    if (drop) {
        lc.ffn_drop = detail::dropout_mask<S>(
            T, D, dropout->rate, derive_seed(dropout->seed, "dropout", 2 * layer_index + 1));
        ffn_out.array() *= lc.ffn_drop.array();
    }
    return lc.a + ffn_out;
}

/// dx_out -> dx_in for one block, accumulating parameter grads into lg.
template <typename S>
Mat<S> block_backward(const LayerParams<S>& lp, const EncoderConfig& c,
                      const LayerCache<S>& lc, const Mat<S>& dx_out, LayerParams<S>& lg) {
    const Eigen::Index T = lc.x_in.rows();
    const int D = c.hidden_dim, H = c.num_heads, dh = c.head_dim();
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));

    // FFN sublayer: x_out = a + drop(gelu(ln2(a) W1 + b1) W2 + b2)
    Mat<S> dffn_out = dx_out;
    if (lc.ffn_drop.size() > 0) dffn_out.array() *= lc.ffn_drop.array();
    lg.ffn_b2.row(0) += dffn_out.colwise().sum();
    lg.ffn_w2 += lc.g.transpose() * dffn_out;
    Mat<S> dg = dffn_out * lp.ffn_w2.transpose();
    Mat<S> dh1 =
        dg.array() * lc.h1.unaryExpr([](S v) { return detail::gelu_grad(v); }).array();
    lg.ffn_b1.row(0) += dh1.colwise().sum();
    lg.ffn_w1 += lc.y2.transpose() * dh1;
    Mat<S> dy2 = dh1 * lp.ffn_w1.transpose();
    Mat<S> da = detail::layer_norm_backward(dy2, lc.xhat2, lc.inv_std2, lp.ln2_gamma,
                                            lg.ln2_gamma, lg.ln2_beta);
    da += dx_out;  // residual path

    // Attention sublayer: a = x + drop(ctx Wo + bo)
    Mat<S> dattn_out = da;
    if (lc.attn_drop.size() > 0) dattn_out.array() *= lc.attn_drop.array();
    lg.attn.bo.row(0) += dattn_out.colwise().sum();
    lg.attn.wo += lc.ctx.transpose() * dattn_out;
    Mat<S> dctx = dattn_out * lp.attn.wo.transpose();

    Mat<S> dq(T, D), dk(T, D), dv(T, D);
    for (int h = 0; h < H; ++h) {
        auto qh = lc.q.middleCols(h * dh, dh);
        auto kh = lc.k.middleCols(h * dh, dh);
        auto vh = lc.v.middleCols(h * dh, dh);
        auto dctx_h = dctx.middleCols(h * dh, dh);
        const Mat<S>& probs = lc.probs[h];

        Mat<S> dprobs = dctx_h * vh.transpose();
        dv.middleCols(h * dh, dh) = probs.transpose() * dctx_h;
        // Softmax backward row-wise; excluded keys have prob 0 so their
        // score gradient vanishes automatically.
        Mat<S> dscores(T, T);
        for (Eigen::Index t = 0; t < T; ++t) {
            S dot = (dprobs.row(t).array() * probs.row(t).array()).sum();
            dscores.row(t) =
                (probs.row(t).array() * (dprobs.row(t).array() - dot)).matrix();
        }
        dq.middleCols(h * dh, dh) = dscores * kh * scale;
        dk.middleCols(h * dh, dh) = dscores.transpose() * qh * scale;
    }
    lg.attn.bq.row(0) += dq.colwise().sum();
    lg.attn.bk.row(0) += dk.colwise().sum();
    lg.attn.bv.row(0) += dv.colwise().sum();
    lg.attn.wq += lc.y1.transpose() * dq;
    lg.attn.wk += lc.y1.transpose() * dk;
    lg.attn.wv += lc.y1.transpose() * dv;
    Mat<S> dy1 = dq * lp.attn.wq.transpose() + dk * lp.attn.wk.transpose() +
                 dv * lp.attn.wv.transpose();
    Mat<S> dx_ln = detail::layer_norm_backward(dy1, lc.xhat1, lc.inv_std1, lp.ln1_gamma,
                                               lg.ln1_gamma, lg.ln1_beta);
    return dx_ln + da;  // residual path
}

/**
 * Runs the encoder over one sequence.  key_mask[t] false marks PAD; those
 * positions are excluded from every attention softmax.  Fills cache with all
 * intermediates needed by encoder_backward.  Throws SequenceTooLong.
 */
template <typename S>
void encoder_forward(const EncoderParams<S>& p, const EncoderConfig& c,
                     const std::vector<uint32_t>& ids, const std::vector<bool>& key_mask,
                     ForwardCache<S>& cache, const DropoutPlan* dropout = nullptr) {
    const Eigen::Index T = static_cast<Eigen::Index>(ids.size());
    const int D = c.hidden_dim;
    if (T > c.max_seq_len) {
        throw Error("SequenceTooLong", "sequence length " + std::to_string(T) +
                                           " exceeds max_seq_len " +
                                           std::to_string(c.max_seq_len));
    }
    if (key_mask.size() != ids.size()) throw Error("BadConfig", "key_mask length mismatch");
    for (uint32_t id : ids) {
        if (id >= c.vocab_size) throw Error("UnknownTokenId", "token id out of range");
    }

    cache.x0.resize(T, D);
    for (Eigen::Index t = 0; t < T; ++t) {
        cache.x0.row(t) = p.tok_emb.row(ids[t]) + p.pos_emb.row(t);
    }
    cache.layers.assign(c.num_layers, LayerCache<S>{});

    Mat<S> x = cache.x0;
    for (int li = 0; li < c.num_layers; ++li) {
        x = block_forward(p.layers[li], c, x, key_mask, cache.layers[li], dropout, li);
    }
    detail::layer_norm(x, p.final_ln_gamma, p.final_ln_beta, cache.xhat_f, cache.inv_std_f,
                       cache.states);
}

/// MLM logits restricted to the given positions (rows of the result).
template <typename S>
Mat<S> mlm_logits_at(const EncoderParams<S>& p, const Mat<S>& states,
                     const std::vector<size_t>& positions) {
    Mat<S> sel(positions.size(), states.cols());
    for (size_t i = 0; i < positions.size(); ++i) {
        sel.row(i) = states.row(static_cast<Eigen::Index>(positions[i]));
    }
    return (sel * p.mlm_w).rowwise() + p.mlm_b.row(0);
}

/// Full-vocabulary logits for every position.
template <typename S>
Mat<S> mlm_logits_full(const EncoderParams<S>& p, const Mat<S>& states) {
    return (states * p.mlm_w).rowwise() + p.mlm_b.row(0);
}

/// Mean negative log-likelihood of the originals under row-wise softmax.
/// Optionally emits each position's log-probability.
template <typename S>
S masked_nll(const Mat<S>& logits, const std::vector<uint32_t>& originals,
             std::vector<S>* logprobs_out = nullptr) {
    if (logits.rows() == 0) throw Error("EmptyPlan", "no masked positions");
    S total = S(0);
    if (logprobs_out) logprobs_out->clear();
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        S mx = logits.row(i).maxCoeff();
        S lse = std::log((logits.row(i).array() - mx).exp().sum()) + mx;
        S lp = logits(i, originals[i]) - lse;
        if (logprobs_out) logprobs_out->push_back(lp);
        total -= lp;
    }
    return total / static_cast<S>(logits.rows());
}

/**
 * Backpropagates dstates (gradient w.r.t. the final LayerNorm output) through
 * the whole stack, accumulating into grads (which must be pre-allocated with
 * allocate_params and may already hold other sequences' gradients).
 */
template <typename S>
void encoder_backward(const EncoderParams<S>& p, const EncoderConfig& c,
                      const std::vector<uint32_t>& ids, const std::vector<bool>& key_mask,
                      const ForwardCache<S>& cache, const Mat<S>& dstates,
                      EncoderParams<S>& grads) {
    (void)key_mask;  // exclusion is already baked into the cached probs
    const Eigen::Index T = static_cast<Eigen::Index>(ids.size());

    Mat<S> dx = detail::layer_norm_backward(dstates, cache.xhat_f, cache.inv_std_f,
                                            p.final_ln_gamma, grads.final_ln_gamma,
                                            grads.final_ln_beta);
    for (int li = c.num_layers - 1; li >= 0; --li) {
        dx = block_backward(p.layers[li], c, cache.layers[li], dx, grads.layers[li]);
    }
    for (Eigen::Index t = 0; t < T; ++t) {
        grads.tok_emb.row(ids[t]) += dx.row(t);
        grads.pos_emb.row(t) += dx.row(t);
    }
}

/**
 * Sequence-mean MLM loss at the given positions, with optional gradient
 * accumulation scaled by grad_scale (use 1/batch_size for batch-mean loss).
 */
template <typename S>
S mlm_loss_grad(const EncoderParams<S>& p, const EncoderConfig& c,
                const std::vector<uint32_t>& ids, const std::vector<bool>& key_mask,
                const std::vector<size_t>& positions, const std::vector<uint32_t>& originals,
                S grad_scale = S(1), EncoderParams<S>* grads = nullptr,
                const DropoutPlan* dropout = nullptr, std::vector<S>* logprobs_out = nullptr) {
    if (positions.empty()) throw Error("EmptyPlan", "mask plan selects no positions");
    ForwardCache<S> cache;
    encoder_forward(p, c, ids, key_mask, cache, dropout);
    Mat<S> logits = mlm_logits_at(p, cache.states, positions);
    S loss = masked_nll(logits, originals, logprobs_out);
    if (!grads) return loss;

    const Eigen::Index n = logits.rows();
    Mat<S> dlogits(n, logits.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        S mx = logits.row(i).maxCoeff();
        Eigen::Array<S, 1, Eigen::Dynamic> ex = (logits.row(i).array() - mx).exp();
        dlogits.row(i) = (ex / ex.sum()).matrix();
        dlogits(i, originals[i]) -= S(1);
    }
    dlogits *= grad_scale / static_cast<S>(n);

    Mat<S> sel(n, c.hidden_dim);
    for (Eigen::Index i = 0; i < n; ++i) {
        sel.row(i) = cache.states.row(static_cast<Eigen::Index>(positions[i]));
    }
    grads->mlm_b.row(0) += dlogits.colwise().sum();
    grads->mlm_w += sel.transpose() * dlogits;
    Mat<S> dsel = dlogits * p.mlm_w.transpose();
    Mat<S> dstates = Mat<S>::Zero(ids.size(), c.hidden_dim);
    for (Eigen::Index i = 0; i < n; ++i) {
        dstates.row(static_cast<Eigen::Index>(positions[i])) += dsel.row(i);
    }
    encoder_backward(p, c, ids, key_mask, cache, dstates, *grads);
    return loss;
}

/// Mean of the state rows at the given positions.
template <typename S>
ColVec<S> mean_rows(const Mat<S>& states, const std::vector<size_t>& positions) {
    if (positions.empty()) throw Error("EmptyContent", "no content positions to pool");
    ColVec<S> acc = ColVec<S>::Zero(states.cols());
    for (size_t pos : positions) {
        acc += states.row(static_cast<Eigen::Index>(pos)).transpose();
    }
    return acc / static_cast<S>(positions.size());
}

}  // namespace logenc
