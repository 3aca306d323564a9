#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "tensor.hpp"

namespace lsr::volume {

using lsr::ad::Tensor;

// ---------------------------------------------------------------------------
// Camera and rays
// ---------------------------------------------------------------------------

struct Camera {
    double focal = 0;
    double cx = 0, cy = 0;
    int width = 0, height = 0;
    // camera-to-world, row-major 3x4; camera looks down its +z axis
    std::array<double, 12> pose{};

    void validate() const;
};

struct RayBundle {
    std::vector<double> origins;     // R*3
    std::vector<double> directions;  // R*3, unit norm
    std::size_t count = 0;
};

// Pinhole rays for integer pixel indices (x=column, y=row).
RayBundle generate_rays(const Camera& cam, const std::vector<std::pair<int, int>>& pixels);

// Intersection of a ray with the axis-aligned unit cube, clamped to
// [near, far]; returns false when the ray misses the cube inside that range.
bool clip_to_unit_cube(const double* origin, const double* dir, double near, double far,
                       double* t_enter, double* t_exit);

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

template <typename Real>
struct RaySamples {
    std::size_t rays = 0;
    std::size_t per_ray = 0;
    std::vector<Real> positions;  // R*N*3
    std::vector<Real> deltas;     // R*N, strictly positive
    std::vector<Real> t_values;   // R*N
};

// Jittered stratified samples in [near, far] per ray. With jitter disabled
// every bin contributes its midpoint, giving uniform spacing (far-near)/N.
template <typename Real>
RaySamples<Real> stratified_samples(const RayBundle& rays, const std::vector<double>& near,
                                    const std::vector<double>& far, std::size_t n,
                                    std::uint64_t seed, bool jitter) {
    if (n < 2) throw Error(ErrorCode::Argument, "stratified sampling needs at least 2 samples");
    if (near.size() != rays.count || far.size() != rays.count)
        throw Error(ErrorCode::Dimension, "per-ray near/far sizes do not match ray count");
    RaySamples<Real> out;
    out.rays = rays.count;
    out.per_ray = n;
    out.positions.resize(rays.count * n * 3);
    out.deltas.resize(rays.count * n);
    out.t_values.resize(rays.count * n);
    auto rng = make_rng(seed, 0x54524154ull);  // sampling stream
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (std::size_t r = 0; r < rays.count; ++r) {
        if (!(0.0 < near[r] && near[r] < far[r]))
            throw Error(ErrorCode::Argument, "require 0 < near < far per ray");
        const double h = (far[r] - near[r]) / static_cast<double>(n);
        for (std::size_t k = 0; k < n; ++k) {
            const double j = jitter ? uni(rng) : 0.5;
            const double t = near[r] + h * (static_cast<double>(k) + j);
            out.t_values[r * n + k] = static_cast<Real>(t);
            for (int c = 0; c < 3; ++c)
                out.positions[(r * n + k) * 3 + c] = static_cast<Real>(
                    rays.origins[r * 3 + c] + t * rays.directions[r * 3 + c]);
        }
        // consecutive gaps; the final bin width stands in for the last interval
        for (std::size_t k = 0; k + 1 < n; ++k)
            out.deltas[r * n + k] =
                static_cast<Real>(out.t_values[r * n + k + 1] - out.t_values[r * n + k]);
        out.deltas[r * n + n - 1] = static_cast<Real>(h);
    }
    return out;
}

template <typename Real>
RaySamples<Real> stratified_samples(const RayBundle& rays, double near, double far, std::size_t n,
                                    std::uint64_t seed, bool jitter) {
    std::vector<double> nv(rays.count, near), fv(rays.count, far);
    return stratified_samples<Real>(rays, nv, fv, n, seed, jitter);
}

// ---------------------------------------------------------------------------
// Scene volumes
// ---------------------------------------------------------------------------

enum class GridId { Density, Appearance, Feature, Label };

// Four grids over the unit cube. Density and appearance are stored
// pre-activation (softplus / sigmoid applied at render time).
template <typename Real>
struct SceneVolumes {
    std::array<std::size_t, 3> resolution{};
    std::size_t feature_dim = 0;
    Tensor<Real> density;     // [X,Y,Z,1]
    Tensor<Real> appearance;  // [X,Y,Z,3]
    Tensor<Real> feature;     // [X,Y,Z,D]
    Tensor<Real> label;       // [X,Y,Z,D]

    static SceneVolumes create(std::array<std::size_t, 3> res, std::size_t d,
                               std::uint64_t seed) {
        SceneVolumes v;
        v.resolution = res;
        v.feature_dim = d;
        Shape base{res[0], res[1], res[2]};
        auto shape_c = [&](std::size_t c) {
            Shape s = base;
            s.push_back(c);
            return s;
        };
        // density raw chosen so softplus(raw) ~= 0.1 (mostly transparent)
        const Real density_raw = Real(std::log(std::exp(0.1) - 1.0));
        v.density = Tensor<Real>::full(shape_c(1), density_raw, true);
        v.density.set_name("density_grid");
        auto rng = make_rng(seed, 0x47524944ull);
        v.appearance = ad::randn<Real>(shape_c(3), rng, Real(0.01), true);
        v.appearance.set_name("appearance_grid");
        v.feature = ad::randn<Real>(shape_c(d), rng, Real(0.01), true);
        v.feature.set_name("feature_grid");
        v.label = ad::randn<Real>(shape_c(d), rng, Real(0.01), true);
        v.label.set_name("label_grid");
        return v;
    }

    const Tensor<Real>& grid(GridId id) const {
        switch (id) {
            case GridId::Density: return density;
            case GridId::Appearance: return appearance;
            case GridId::Feature: return feature;
            case GridId::Label: return label;
        }
        throw Error(ErrorCode::Argument, "unknown grid id");
    }
};

// ---------------------------------------------------------------------------
// Trilinear grid sampling
// ---------------------------------------------------------------------------

// Samples grid [X,Y,Z,C] at `rays*per_ray` points in the unit cube, returning
// [rays, per_ray, C]. Cell-centered lattice with edge clamping inside the
// cube; points outside [0,1]^3 read as zeros (empty space). Differentiable
// w.r.t. the grid values.
template <typename Real>
Tensor<Real> sample_grid(const Tensor<Real>& grid, const std::vector<Real>& positions,
                         std::size_t rays, std::size_t per_ray) {
    if (grid.rank() != 4)
        throw Error(ErrorCode::Dimension,
                    "sample_grid expects a [X,Y,Z,C] grid, got " + shape_to_string(grid.shape()));
    if (positions.size() != rays * per_ray * 3)
        throw Error(ErrorCode::Dimension, "positions size does not match ray/sample counts");
    for (Real p : positions)
        if (!std::isfinite(p))
            throw Error(ErrorCode::Numeric, "sample position is not finite");

    const std::size_t X = grid.shape()[0], Y = grid.shape()[1], Z = grid.shape()[2],
                      C = grid.shape()[3];
    const std::size_t n_pts = rays * per_ray;
    std::vector<Real> value(n_pts * C, Real(0));

    struct Corner {
        std::size_t base;  // grid offset of the voxel (times C)
        Real w;
    };
    // 8 corners per point; weight 0 marks an outside point
    auto corners = std::make_shared<std::vector<std::array<Corner, 8>>>(n_pts);

    auto gv = grid.values();
    for (std::size_t p = 0; p < n_pts; ++p) {
        const Real px = positions[p * 3 + 0];
        const Real py = positions[p * 3 + 1];
        const Real pz = positions[p * 3 + 2];
        auto& cs = (*corners)[p];
        if (px < Real(0) || px > Real(1) || py < Real(0) || py > Real(1) || pz < Real(0) ||
            pz > Real(1)) {
            for (auto& c : cs) c = {0, Real(0)};
            continue;
        }
        auto locate = [](Real q, std::size_t res, std::size_t* i0, std::size_t* i1, Real* f) {
            // continuous coordinate over cell centers, edge-clamped
            double x = static_cast<double>(q) * static_cast<double>(res) - 0.5;
            double fl = std::floor(x);
            long i = static_cast<long>(fl);
            *f = static_cast<Real>(x - fl);
            *i0 = static_cast<std::size_t>(std::clamp(i, 0L, static_cast<long>(res) - 1));
            *i1 = static_cast<std::size_t>(std::clamp(i + 1, 0L, static_cast<long>(res) - 1));
        };
        std::size_t x0, x1, y0, y1, z0, z1;
        Real fx, fy, fz;
        locate(px, X, &x0, &x1, &fx);
        locate(py, Y, &y0, &y1, &fy);
        locate(pz, Z, &z0, &z1, &fz);
        const Real wx[2] = {Real(1) - fx, fx};
        const Real wy[2] = {Real(1) - fy, fy};
        const Real wz[2] = {Real(1) - fz, fz};
        const std::size_t xs[2] = {x0, x1}, ys[2] = {y0, y1}, zs[2] = {z0, z1};
        int ci = 0;
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
                for (int c = 0; c < 2; ++c) {
                    const Real w = wx[a] * wy[b] * wz[c];
                    const std::size_t base = ((xs[a] * Y + ys[b]) * Z + zs[c]) * C;
                    cs[ci++] = {base, w};
                    if (w != Real(0)) {
                        const Real* src = gv.data() + base;
                        Real* dst = value.data() + p * C;
                        for (std::size_t ch = 0; ch < C; ++ch) dst[ch] += w * src[ch];
                    }
                }
    }

    auto gn = grid.node();
    return make_op<Real>({rays, per_ray, C}, std::move(value), {grid},
                         [gn, corners, n_pts, C](ad::TensorNode<Real>& self) {
                             for (std::size_t p = 0; p < n_pts; ++p) {
                                 const Real* g = self.grad.data() + p * C;
                                 for (const auto& c : (*corners)[p]) {
                                     if (c.w == Real(0)) continue;
                                     Real* dst = gn->grad.data() + c.base;
                                     for (std::size_t ch = 0; ch < C; ++ch)
                                         dst[ch] += c.w * g[ch];
                                 }
                             }
                         });
}

template <typename Real>
Tensor<Real> sample_grid(const SceneVolumes<Real>& volumes, GridId id,
                         const std::vector<Real>& positions, std::size_t rays,
                         std::size_t per_ray) {
    return sample_grid(volumes.grid(id), positions, rays, per_ray);
}

// ---------------------------------------------------------------------------
// Volume rendering
// ---------------------------------------------------------------------------

// w_i = exp(-sum_{j<i} sigma_j*delta_j) * (1 - exp(-sigma_i*delta_i)) with
// sigma = softplus(raw). Differentiable w.r.t. the raw densities.
template <typename Real>
Tensor<Real> render_weights(const Tensor<Real>& raw_density, const std::vector<Real>& deltas) {
    if (raw_density.rank() < 2)
        throw Error(ErrorCode::Dimension, "render_weights expects [R,N] densities, got " +
                                              shape_to_string(raw_density.shape()));
    Shape shape = raw_density.shape();
    if (shape.size() == 3 && shape[2] == 1) shape.pop_back();  // accept [R,N,1]
    const std::size_t R = shape[0], N = shape[1];
    if (deltas.size() != R * N)
        throw Error(ErrorCode::Dimension, "deltas size does not match densities");
    for (Real d : deltas)
        if (!(d > Real(0))) throw Error(ErrorCode::Argument, "deltas must be strictly positive");
    auto rv = raw_density.values();
    for (Real v : rv)
        if (!std::isfinite(v))
            throw Error(ErrorCode::Numeric, "density input contains a non-finite value");

    std::vector<Real> value(R * N);
    auto trans = std::make_shared<std::vector<Real>>(R * N);  // T_i cached for backward
    for (std::size_t r = 0; r < R; ++r) {
        Real log_t = 0;  // log transmittance
        for (std::size_t k = 0; k < N; ++k) {
            const std::size_t i = r * N + k;
            const Real raw = rv[i];
            const Real sigma = raw > Real(0) ? raw + std::log1p(std::exp(-raw))
                                             : std::log1p(std::exp(raw));
            const Real a = sigma * deltas[i];
            const Real T = std::exp(log_t);
            (*trans)[i] = T;
            value[i] = T * (-std::expm1(-a));
            log_t -= a;
        }
    }

    auto rn = raw_density.node();
    auto deltas_copy = std::make_shared<std::vector<Real>>(deltas);
    return make_op<Real>(
        {R, N}, std::move(value), {raw_density},
        [rn, deltas_copy, trans, R, N](ad::TensorNode<Real>& self) {
            // dL/d a_k = g_k (T_k - w_k) - sum_{i>k} g_i w_i ; chain through softplus
            const auto& dl = *deltas_copy;
            for (std::size_t r = 0; r < R; ++r) {
                Real suffix = 0;
                for (std::size_t k = N; k-- > 0;) {
                    const std::size_t i = r * N + k;
                    const Real w = self.value[i];
                    const Real g = self.grad[i];
                    const Real da = g * ((*trans)[i] - w) - suffix;
                    const Real raw = rn->value[i];
                    const Real sig = raw >= Real(0)
                                         ? Real(1) / (Real(1) + std::exp(-raw))
                                         : std::exp(raw) / (Real(1) + std::exp(raw));
                    rn->grad[i] += da * dl[i] * sig;
                    suffix += g * w;
                }
            }
        });
}

// Weighted accumulation along rays: weights[R,N] × values[R,N,C] -> [R,C].
template <typename Real>
Tensor<Real> render_quantity(const Tensor<Real>& weights, const Tensor<Real>& values) {
    if (weights.rank() != 2 || values.rank() != 3 || weights.shape()[0] != values.shape()[0] ||
        weights.shape()[1] != values.shape()[1])
        throw Error(ErrorCode::Dimension, "render_quantity shapes " +
                                              shape_to_string(weights.shape()) + " and " +
                                              shape_to_string(values.shape()) + " do not agree");
    const std::size_t R = weights.shape()[0], N = weights.shape()[1], C = values.shape()[2];
    std::vector<Real> out(R * C, Real(0));
    auto wv = weights.values();
    auto vv = values.values();
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t k = 0; k < N; ++k) {
            const Real w = wv[r * N + k];
            if (w == Real(0)) continue;
            const Real* src = vv.data() + (r * N + k) * C;
            Real* dst = out.data() + r * C;
            for (std::size_t c = 0; c < C; ++c) dst[c] += w * src[c];
        }
    auto wn = weights.node();
    auto vn = values.node();
    return make_op<Real>({R, C}, std::move(out), {weights, values},
                         [wn, vn, R, N, C](ad::TensorNode<Real>& self) {
                             for (std::size_t r = 0; r < R; ++r) {
                                 const Real* g = self.grad.data() + r * C;
                                 for (std::size_t k = 0; k < N; ++k) {
                                     const Real* val = vn->value.data() + (r * N + k) * C;
                                     const Real w = wn->value[r * N + k];
                                     if (wn->requires_grad) {
                                         Real acc = 0;
                                         for (std::size_t c = 0; c < C; ++c) acc += g[c] * val[c];
                                         wn->grad[r * N + k] += acc;
                                     }
                                     if (vn->requires_grad && w != Real(0)) {
                                         Real* dst = vn->grad.data() + (r * N + k) * C;
                                         for (std::size_t c = 0; c < C; ++c) dst[c] += w * g[c];
                                     }
                                 }
                             }
                         });
}

// Rendered label distribution: softmax over the accumulated label vector.
template <typename Real>
Tensor<Real> render_label(const Tensor<Real>& weights, const Tensor<Real>& label_values) {
    return ad::softmax(render_quantity(weights, label_values), 1);
}

}  // namespace lsr::volume
