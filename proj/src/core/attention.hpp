#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>

#include "tensor.hpp"

namespace lsr::attention {

using lsr::ad::Tensor;

enum class Variant {
    Literal,     // softmax over the trailing axis at every stage
    Normalized,  // slot distribution per sample / sample distribution per slot
};

inline const char* variant_name(Variant v) {
    return v == Variant::Literal ? "literal" : "normalized";
}

inline Variant variant_from_string(const std::string& s) {
    if (s == "literal") return Variant::Literal;
    if (s == "normalized") return Variant::Normalized;
    throw Error(ErrorCode::Argument, "unknown attention variant '" + s + "'");
}

template <typename Real>
struct AttentionParams {
    Tensor<Real> wq;  // [D,D]
    Tensor<Real> wk;  // [D,D]
    Tensor<Real> wv;  // [D,D]
    Tensor<Real> transient_query;  // [s,D]
    std::size_t rank = 0;
    Variant variant = Variant::Normalized;
    bool scale_scores = false;  // optional 1/sqrt(D) inside the softmax

    static AttentionParams create(std::size_t dim, std::size_t rank, std::uint64_t seed,
                                  Variant variant = Variant::Normalized) {
        if (rank < 1) throw Error(ErrorCode::Argument, "transient query rank must be >= 1");
        AttentionParams p;
        auto rng = make_rng(seed, 0x4154544eull);
        const Real w_std = Real(1) / std::sqrt(Real(dim));
        p.wq = ad::randn<Real>({dim, dim}, rng, w_std, true);
        p.wq.set_name("attn_wq");
        p.wk = ad::randn<Real>({dim, dim}, rng, w_std, true);
        p.wk.set_name("attn_wk");
        p.wv = ad::randn<Real>({dim, dim}, rng, w_std, true);
        p.wv.set_name("attn_wv");
        p.transient_query = ad::randn<Real>({rank, dim}, rng, w_std, true);
        p.transient_query.set_name("attn_transient_query");
        p.rank = rank;
        p.variant = variant;
        return p;
    }

    std::size_t dim() const { return wq.shape()[0]; }
};

// Dense self-attention over sample features [S,D]: softmax(Q K^T) V.
template <typename Real>
Tensor<Real> vanilla_attention(const Tensor<Real>& f, const AttentionParams<Real>& p) {
    if (f.rank() != 2 || f.shape()[1] != p.dim())
        throw Error(ErrorCode::Dimension, "attention input " + shape_to_string(f.shape()) +
                                              " does not match projection dim " +
                                              std::to_string(p.dim()));
    auto q = ad::matmul(f, p.wq);
    auto k = ad::matmul(f, p.wk);
    auto v = ad::matmul(f, p.wv);
    auto scores = ad::matmul(q, ad::transpose(k));
    if (p.scale_scores) scores = ad::scale(scores, Real(1) / std::sqrt(Real(p.dim())));
    auto attn = ad::softmax(scores, 1);
    return ad::matmul(attn, v);
}

// Low-rank transient query attention. A learnable [s,D] query T factorizes the
// [S,S] attention map into [s,S] pieces:
//   Tq = softmax(T Q^T), Tk = softmax(T K^T), V' = (softmax?)(Tk V),
//   out = Tq^T V'.
// The literal variant applies softmax over the trailing axis at all three
// stages; the normalized variant gives each sample a distribution over the s
// slots in Tq, each slot a distribution over samples in Tk, and leaves V'
// unnormalized.
template <typename Real>
Tensor<Real> lrtq_attention(const Tensor<Real>& f, const AttentionParams<Real>& p) {
    if (f.rank() != 2 || f.shape()[1] != p.dim())
        throw Error(ErrorCode::Dimension, "attention input " + shape_to_string(f.shape()) +
                                              " does not match projection dim " +
                                              std::to_string(p.dim()));
    auto q = ad::matmul(f, p.wq);
    auto k = ad::matmul(f, p.wk);
    auto v = ad::matmul(f, p.wv);
    auto tq_scores = ad::matmul(p.transient_query, ad::transpose(q));  // [s,S]
    auto tk_scores = ad::matmul(p.transient_query, ad::transpose(k));  // [s,S]
    if (p.scale_scores) {
        const Real c = Real(1) / std::sqrt(Real(p.dim()));
        tq_scores = ad::scale(tq_scores, c);
        tk_scores = ad::scale(tk_scores, c);
    }
    Tensor<Real> tq, tk, vhat;
    if (p.variant == Variant::Literal) {
        tq = ad::softmax(tq_scores, 1);
        tk = ad::softmax(tk_scores, 1);
        vhat = ad::softmax(ad::matmul(tk, v), 1);
    } else {
        tq = ad::softmax(tq_scores, 0);
        tk = ad::softmax(tk_scores, 1);
        vhat = ad::matmul(tk, v);
    }
    return ad::matmul(ad::transpose(tq), vhat);
}

// ---------------------------------------------------------------------------
// Adapter: transient query attention followed by a bottleneck, mixed back into
// the input via a residual ratio alpha.
// ---------------------------------------------------------------------------

template <typename Real>
struct AdapterParams {
    AttentionParams<Real> attention;
    Tensor<Real> bottleneck_down;  // [D, D/4]
    Tensor<Real> bottleneck_up;    // [D/4, D]
    Real residual_alpha = Real(0.2);
    Real sct_beta = Real(0.3);

    static AdapterParams create(std::size_t dim, std::size_t rank, std::uint64_t seed,
                                Variant variant = Variant::Normalized,
                                Real alpha = Real(0.2), Real beta = Real(0.3)) {
        if (dim % 4 != 0)
            throw Error(ErrorCode::Argument,
                        "adapter dim must be divisible by 4, got " + std::to_string(dim));
        if (alpha < Real(0) || alpha > Real(1) || beta < Real(0) || beta > Real(1))
            throw Error(ErrorCode::Argument, "adapter alpha/beta must lie in [0,1]");
        AdapterParams p;
        p.attention = AttentionParams<Real>::create(dim, rank, seed, variant);
        const std::size_t hidden = dim / 4;
        auto rng = make_rng(seed, 0x41445054ull);
        p.bottleneck_down = ad::randn<Real>({dim, hidden}, rng,
                                            Real(std::sqrt(2.0 / double(dim))), true);
        p.bottleneck_down.set_name("adapter_down");
        p.bottleneck_up = ad::randn<Real>({hidden, dim}, rng,
                                          Real(std::sqrt(2.0 / double(hidden))), true);
        p.bottleneck_up.set_name("adapter_up");
        p.residual_alpha = alpha;
        p.sct_beta = beta;
        return p;
    }
};

// Reconstruction branch: bottleneck over the attention output.
template <typename Real>
Tensor<Real> adapter_reconstruct(const Tensor<Real>& f, const AdapterParams<Real>& p) {
    auto attended = lrtq_attention(f, p.attention);
    auto hidden = ad::relu(ad::matmul(attended, p.bottleneck_down));
    return ad::matmul(hidden, p.bottleneck_up);
}

template <typename Real>
struct AdapterOutput {
    Tensor<Real> reconstructed;  // pre-residual
    Tensor<Real> mixed;          // alpha*rec + (1-alpha)*input
};

template <typename Real>
AdapterOutput<Real> adapter_forward(const Tensor<Real>& f, const AdapterParams<Real>& p) {
    AdapterOutput<Real> out;
    out.reconstructed = adapter_reconstruct(f, p);
    const Real a = p.residual_alpha;
    if (a == Real(0)) {
        out.mixed = f;  // exact pass-through at the boundary
    } else if (a == Real(1)) {
        out.mixed = out.reconstructed;
    } else {
        out.mixed = ad::add(ad::scale(out.reconstructed, a), ad::scale(f, Real(1) - a));
    }
    return out;
}

// Self-cross loss over a reconstruction map `f`: self terms tie f(X) to X,
// cross terms tie the reconstruction of one feature set to the other. Each
// cosine is averaged over rows; the result lies in [-2, 2].
template <typename Real>
Tensor<Real> self_cross_loss(const Tensor<Real>& dense, const Tensor<Real>& rendered, Real beta,
                             const std::function<Tensor<Real>(const Tensor<Real>&)>& f) {
    if (dense.shape() != rendered.shape())
        throw Error(ErrorCode::Dimension, "self_cross_loss shapes " +
                                              shape_to_string(dense.shape()) + " and " +
                                              shape_to_string(rendered.shape()) + " must match");
    auto rec_dense = f(dense);
    auto rec_rendered = f(rendered);
    auto self_d = ad::mean(ad::cosine_rows(rec_dense, dense));
    auto self_r = ad::mean(ad::cosine_rows(rec_rendered, rendered));
    auto cross_rd = ad::mean(ad::cosine_rows(rec_rendered, dense));
    auto cross_dr = ad::mean(ad::cosine_rows(rec_dense, rendered));
    auto self_pair = ad::add(self_d, self_r);
    auto cross_pair = ad::add(cross_rd, cross_dr);
    return ad::add(ad::scale(self_pair, -beta), ad::scale(cross_pair, -(Real(1) - beta)));
}

template <typename Real>
Tensor<Real> self_cross_loss(const Tensor<Real>& dense, const Tensor<Real>& rendered,
                             const AdapterParams<Real>& p) {
    return self_cross_loss<Real>(dense, rendered, p.sct_beta,
                                 [&p](const Tensor<Real>& x) { return adapter_reconstruct(x, p); });
}

// ---------------------------------------------------------------------------
// Analytic FLOP model
// ---------------------------------------------------------------------------

struct VanillaFlops {
    double projections = 0;  // 3 * 2*S*D^2
    double scores = 0;       // 2*S^2*D
    double aggregate = 0;    // 2*S^2*D
    double softmax = 0;      // 5*S^2
    double core() const { return scores + aggregate + softmax; }
    double total() const { return projections + core(); }
};

struct LrtqFlops {
    double projections = 0;     // 3 * 2*S*D^2
    double query_products = 0;  // 2 * 2*S*s*D
    double value_product = 0;   // 2*S*s*D
    double output = 0;          // 2*S*s*D
    double softmax = 0;         // 5*s*S * 2 (+ 5*s*D literal)
    double core() const { return query_products + value_product + output + softmax; }
    double total() const { return projections + core(); }
};

inline VanillaFlops vanilla_flops(double S, double D) {
    VanillaFlops f;
    f.projections = 3.0 * 2.0 * S * D * D;
    f.scores = 2.0 * S * S * D;
    f.aggregate = 2.0 * S * S * D;
    f.softmax = 5.0 * S * S;
    return f;
}

inline LrtqFlops lrtq_flops(double S, double s, double D, Variant variant) {
    LrtqFlops f;
    f.projections = 3.0 * 2.0 * S * D * D;
    f.query_products = 2.0 * 2.0 * S * s * D;
    f.value_product = 2.0 * S * s * D;
    f.output = 2.0 * S * s * D;
    f.softmax = 5.0 * s * S * 2.0 + (variant == Variant::Literal ? 5.0 * s * D : 0.0);
    return f;
}

// Rank whose transient-query core cost matches `target_core` flops.
inline double solve_lrtq_rank(double S, double D, double target_core, Variant variant) {
    const double per_rank = lrtq_flops(S, 1.0, D, variant).core();
    return target_core / per_rank;
}

}  // namespace lsr::attention
