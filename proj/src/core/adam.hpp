#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace lsr::ad {

template <typename Real>
struct AdamHyper {
    Real beta1 = Real(0.9);
    Real beta2 = Real(0.99);
    Real epsilon = Real(1e-8);
};

// Bias-corrected Adam over named parameter groups. Groups can be frozen per
// step; a frozen parameter keeps its moments and step count untouched, so its
// values stay bit-identical until the group is activated.
template <typename Real>
class Adam {
public:
    struct Slot {
        Tensor<Real> param;
        std::vector<Real> m;
        std::vector<Real> v;
        std::uint64_t step = 0;
        std::string name;
        std::size_t group = 0;
    };

    explicit Adam(AdamHyper<Real> hyper = {}) : hyper_(hyper) {}

    void add_param(Tensor<Real> p, std::string name, std::size_t group) {
        Slot s;
        s.m.assign(p.size(), Real(0));
        s.v.assign(p.size(), Real(0));
        s.param = std::move(p);
        s.name = std::move(name);
        s.group = group;
        slots_.push_back(std::move(s));
    }

    // One update over all parameters whose group is active. `lrs[g]` is the
    // learning rate for group g this step.
    void step(std::span<const Real> lrs, std::span<const bool> active) {
        for (auto& s : slots_) {
            if (s.group >= active.size() || !active[s.group]) continue;
            if (!s.param.has_grad()) continue;
            auto g = s.param.grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                if (!std::isfinite(g[i]))
                    throw Error(ErrorCode::Numeric,
                                "non-finite gradient in parameter '" + s.name + "'");
            s.step += 1;
            const Real lr = lrs[s.group];
            const Real b1 = hyper_.beta1, b2 = hyper_.beta2;
            const Real c1 = Real(1) - std::pow(b1, Real(s.step));
            const Real c2 = Real(1) - std::pow(b2, Real(s.step));
            auto p = s.param.values_mut();
            for (std::size_t i = 0; i < g.size(); ++i) {
                s.m[i] = b1 * s.m[i] + (Real(1) - b1) * g[i];
                s.v[i] = b2 * s.v[i] + (Real(1) - b2) * g[i] * g[i];
                const Real mhat = s.m[i] / c1;
                const Real vhat = s.v[i] / c2;
                p[i] -= lr * mhat / (std::sqrt(vhat) + hyper_.epsilon);
            }
        }
    }

    void zero_grad() {
        for (auto& s : slots_) s.param.zero_grad();
    }

    const AdamHyper<Real>& hyper() const { return hyper_; }
    std::vector<Slot>& slots() { return slots_; }
    const std::vector<Slot>& slots() const { return slots_; }

private:
    AdamHyper<Real> hyper_;
    std::vector<Slot> slots_;
};

}  // namespace lsr::ad
