#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "tensor.hpp"

// Always-on checks; test binaries must fail loudly in Release builds too.
#define REQUIRE(cond)                                                                  \
    do {                                                                               \
        if (!(cond)) {                                                                 \
            std::cerr << "[FAIL] " << __FILE__ << ":" << __LINE__ << "  " << #cond     \
                      << "\n";                                                         \
            std::exit(1);                                                              \
        }                                                                              \
    } while (0)

#define REQUIRE_MSG(cond, msg)                                                         \
    do {                                                                               \
        if (!(cond)) {                                                                 \
            std::cerr << "[FAIL] " << __FILE__ << ":" << __LINE__ << "  " << #cond     \
                      << "  (" << msg << ")\n";                                        \
            std::exit(1);                                                              \
        }                                                                              \
    } while (0)

#define REQUIRE_NEAR(a, b, tol)                                                        \
    do {                                                                               \
        double va_ = static_cast<double>(a);                                           \
        double vb_ = static_cast<double>(b);                                           \
        if (!(std::abs(va_ - vb_) <= (tol))) {                                         \
            std::cerr << "[FAIL] " << __FILE__ << ":" << __LINE__ << "  |" << va_      \
                      << " - " << vb_ << "| > " << (tol) << "\n";                      \
            std::exit(1);                                                              \
        }                                                                              \
    } while (0)

#define REQUIRE_THROWS_CODE(expr, wanted)                                              \
    do {                                                                               \
        bool caught_ = false;                                                          \
        try {                                                                          \
            (void)(expr);                                                              \
        } catch (const lsr::Error& e_) {                                               \
            caught_ = e_.code() == (wanted);                                           \
        }                                                                              \
        REQUIRE_MSG(caught_, "expected error code " << lsr::error_code_name(wanted));  \
    } while (0)

namespace testutil {

// Central finite differences against analytic gradients for a scalar-valued
// graph builder. The builder must recreate the graph from the current leaf
// values on every call. Returns the worst relative error across parameters,
// where rel = max|analytic-numeric| / max(1, |analytic|_inf, |numeric|_inf).
inline double finite_difference_check(std::vector<lsr::ad::Tensor<double>> params,
                                      const std::function<lsr::ad::Tensor<double>()>& build,
                                      double h = 1e-5) {
    using lsr::ad::Tensor;
    auto root = build();
    for (auto& p : params) p.zero_grad();
    lsr::ad::backward(root);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) {
        REQUIRE_MSG(p.has_grad(), "parameter missing gradient after backward");
        analytic.emplace_back(p.grad().begin(), p.grad().end());
    }

    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto vals = params[pi].values_mut();
        double max_abs = 1.0, max_diff = 0.0;
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double saved = vals[i];
            vals[i] = saved + h;
            const double up = build().item();
            vals[i] = saved - h;
            const double down = build().item();
            vals[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[pi][i];
            max_diff = std::max(max_diff, std::abs(a - numeric));
            max_abs = std::max({max_abs, std::abs(a), std::abs(numeric)});
        }
        worst = std::max(worst, max_diff / max_abs);
    }
    return worst;
}

}  // namespace testutil
