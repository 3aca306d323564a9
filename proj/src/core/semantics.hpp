#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace lsr::semantics {

using lsr::ad::Tensor;

// Cosine similarity of each feature row against each class text row:
// [M,D] x [N,D] -> [M,N].
template <typename Real>
Tensor<Real> relevance_logits(const Tensor<Real>& features, const Tensor<Real>& text) {
    return ad::cosine_matrix(features, text);
}

// Per-row argmax with ties broken toward the lowest class index.
template <typename Real>
std::vector<std::size_t> segmentation_map(const Tensor<Real>& logits) {
    if (logits.rank() != 2 || logits.shape()[1] < 1)
        throw Error(ErrorCode::Dimension,
                    "segmentation_map expects [M,N] logits, got " + shape_to_string(logits.shape()));
    const std::size_t m = logits.shape()[0], n = logits.shape()[1];
    std::vector<std::size_t> out(m);
    auto v = logits.values();
    for (std::size_t r = 0; r < m; ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < n; ++c)
            if (v[r * n + c] > v[r * n + best]) best = c;
        out[r] = best;
    }
    return out;
}

// Mean over rays of ||rgb_pred - rgb_gt||_2 - cos(feat_pred, feat_gt).
template <typename Real>
Tensor<Real> distill_loss(const Tensor<Real>& rgb_pred, const Tensor<Real>& rgb_gt,
                          const Tensor<Real>& feat_pred, const Tensor<Real>& feat_gt) {
    if (rgb_pred.shape() != rgb_gt.shape() || feat_pred.shape() != feat_gt.shape() ||
        rgb_pred.shape()[0] != feat_pred.shape()[0])
        throw Error(ErrorCode::Dimension, "distill_loss batch shapes do not agree");
    auto color_term = ad::row_l2norm(ad::sub(rgb_pred, rgb_gt));
    auto feat_term = ad::cosine_rows(feat_pred, feat_gt);
    return ad::mean(ad::sub(color_term, feat_term));
}

// Pseudo-label distribution: cosine of each rendered label vector against the
// class text rows, then a row softmax at temperature `tau`.
template <typename Real>
Tensor<Real> pseudo_label(const Tensor<Real>& rendered_label, const Tensor<Real>& text,
                          Real tau = Real(1)) {
    if (!(tau > Real(0))) throw Error(ErrorCode::Argument, "pseudo_label temperature must be > 0");
    auto cos = ad::cosine_matrix(rendered_label, text);
    if (tau != Real(1)) cos = ad::scale(cos, Real(1) / tau);
    return ad::softmax(cos, 1);
}

// Ensemble cross entropy between the pseudo-label distribution and the two
// logit sets: both are converted to distributions at temperature `tau`, then
//   loss = -mean_rays sum_i L_i * (log pI_i + log p_i + log(g*pI_i+(1-g)*p_i)).
template <typename Real>
Tensor<Real> ensemble_ce_loss(const Tensor<Real>& pseudo, const Tensor<Real>& logits_image,
                              const Tensor<Real>& logits_rendered, Real gamma,
                              Real tau = Real(0.07)) {
    if (gamma < Real(0) || gamma > Real(1))
        throw Error(ErrorCode::Argument,
                    "ensemble gamma must lie in [0,1], got " + std::to_string(double(gamma)));
    if (!(tau > Real(0))) throw Error(ErrorCode::Argument, "ensemble temperature must be > 0");
    if (pseudo.shape() != logits_image.shape() || pseudo.shape() != logits_rendered.shape())
        throw Error(ErrorCode::Dimension, "ensemble_ce_loss shapes do not agree");
    const std::size_t rows = pseudo.shape()[0];
    const Real inv_tau = Real(1) / tau;
    auto p_image = ad::softmax(ad::scale(logits_image, inv_tau), 1);
    auto p_rendered = ad::softmax(ad::scale(logits_rendered, inv_tau), 1);
    auto mixed = ad::add(ad::scale(p_image, gamma), ad::scale(p_rendered, Real(1) - gamma));
    auto logs = ad::add(ad::add(ad::log(p_image), ad::log(p_rendered)), ad::log(mixed));
    auto weighted = ad::mul(pseudo, logs);
    return ad::scale(ad::sum(weighted), Real(-1) / Real(rows));
}

// Per-class min-max normalization of relevance maps laid out as [N, H*W].
// A constant map (max-min below 1e-12) normalizes to all zeros.
template <typename Real>
std::vector<Real> normalize_relevance(const std::vector<Real>& maps, std::size_t classes,
                                      std::size_t pixels) {
    if (maps.size() != classes * pixels)
        throw Error(ErrorCode::Dimension, "relevance map size does not match classes*pixels");
    for (Real v : maps)
        if (!std::isfinite(v))
            throw Error(ErrorCode::Numeric, "relevance map contains a non-finite value");
    std::vector<Real> out(maps.size());
    for (std::size_t c = 0; c < classes; ++c) {
        const Real* src = maps.data() + c * pixels;
        Real lo = src[0], hi = src[0];
        for (std::size_t i = 1; i < pixels; ++i) {
            lo = std::min(lo, src[i]);
            hi = std::max(hi, src[i]);
        }
        Real* dst = out.data() + c * pixels;
        if (hi - lo < Real(1e-12)) {
            for (std::size_t i = 0; i < pixels; ++i) dst[i] = Real(0);
        } else {
            const Real inv = Real(1) / (hi - lo);
            for (std::size_t i = 0; i < pixels; ++i) dst[i] = (src[i] - lo) * inv;
        }
    }
    return out;
}

// Negative mean cosine between each ray's logit row and its normalized target
// row; minimizing pulls the two together.
template <typename Real>
Tensor<Real> aug_loss(const Tensor<Real>& ray_logits, const Tensor<Real>& targets) {
    if (ray_logits.shape() != targets.shape())
        throw Error(ErrorCode::Dimension, "aug_loss shapes do not agree");
    return ad::scale(ad::mean(ad::cosine_rows(ray_logits, targets)), Real(-1));
}

// ---------------------------------------------------------------------------
// Loss combination
// ---------------------------------------------------------------------------

template <typename Real>
struct LossWeights {
    Real distill = Real(1);
    Real self_cross = Real(1);
    Real ensemble_ce = Real(1);
    Real aug = Real(1);
};

template <typename Real>
struct LossBreakdown {
    Tensor<Real> total;
    double distill = 0;
    double self_cross = 0;
    double ensemble_ce = 0;
    double aug = 0;
};

// Weighted sum of whichever terms are present (undefined tensors contribute
// nothing). A non-finite term aborts with the term named.
template <typename Real>
LossBreakdown<Real> total_loss(const Tensor<Real>& distill, const Tensor<Real>& self_cross,
                               const Tensor<Real>& ensemble_ce, const Tensor<Real>& aug,
                               const LossWeights<Real>& w) {
    LossBreakdown<Real> out;
    out.total = Tensor<Real>::scalar(Real(0));
    auto accumulate = [&](const Tensor<Real>& term, Real weight, double* slot, const char* name) {
        if (!term.defined()) return;
        const double v = static_cast<double>(term.item());
        if (!std::isfinite(v))
            throw Error(ErrorCode::Numeric, std::string("loss term '") + name + "' is not finite");
        *slot = v;
        if (weight != Real(0)) out.total = ad::add(out.total, ad::scale(term, weight));
    };
    accumulate(distill, w.distill, &out.distill, "distill");
    accumulate(self_cross, w.self_cross, &out.self_cross, "self_cross");
    accumulate(ensemble_ce, w.ensemble_ce, &out.ensemble_ce, "ensemble_ce");
    accumulate(aug, w.aug, &out.aug, "aug");
    return out;
}

}  // namespace lsr::semantics
