#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "adam.hpp"
#include "tensor.hpp"
#include "test_support.hpp"

using lsr::ad::Tensor;
namespace ad = lsr::ad;

using T = Tensor<double>;

static void test_matmul_identity_and_zeros() {
    std::mt19937_64 rng(7);
    auto b = ad::randn<double>({3, 4}, rng);
    std::vector<double> eye(9, 0.0);
    for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
    auto id = T::from_data({3, 3}, eye);
    auto out = ad::matmul(id, b);
    for (std::size_t i = 0; i < out.size(); ++i) REQUIRE(out.values()[i] == b.values()[i]);

    auto z = T::zeros({4, 2});
    auto out2 = ad::matmul(b, z);
    for (double v : out2.values()) REQUIRE(v == 0.0);

    REQUIRE_THROWS_CODE(ad::matmul(b, T::zeros({3, 2})), lsr::ErrorCode::Dimension);
}

static void test_matmul_gradient() {
    std::mt19937_64 rng(11);
    auto a = ad::randn<double>({4, 5}, rng, 1.0, true);
    auto b = ad::randn<double>({5, 3}, rng, 1.0, true);
    double err = testutil::finite_difference_check(
        {a, b}, [&] { return ad::sum(ad::matmul(a, b)); });
    REQUIRE_MSG(err <= 1e-6, "matmul finite-difference error " << err);

    // backward formulas: dA = G B^T, dB = A^T G with G = ones
    auto out = ad::sum(ad::matmul(a, b));
    a.zero_grad();
    b.zero_grad();
    ad::backward(out);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t k = 0; k < 5; ++k) {
            double want = 0;
            for (std::size_t j = 0; j < 3; ++j) want += b.values()[k * 3 + j];
            REQUIRE_NEAR(a.grad()[i * 5 + k], want, 1e-12);
        }
}

static void test_softmax_values() {
    auto x = T::from_data({3}, {0.0, 0.0, 0.0});
    auto y = ad::softmax(x, 0);
    for (double v : y.values()) REQUIRE_NEAR(v, 1.0 / 3.0, 1e-15);

    auto x2 = T::from_data({3}, {1.0, 2.0, 3.0});
    auto y2 = ad::softmax(x2, 0);
    const double e1 = std::exp(1.0), e2 = std::exp(2.0), e3 = std::exp(3.0);
    const double denom = e1 + e2 + e3;
    REQUIRE_NEAR(y2.values()[0], e1 / denom, 1e-15);
    REQUIRE_NEAR(y2.values()[1], e2 / denom, 1e-15);
    REQUIRE_NEAR(y2.values()[2], e3 / denom, 1e-15);
    REQUIRE_NEAR(y2.values()[0], 0.09003057, 1e-8);
    REQUIRE_NEAR(y2.values()[1], 0.24472847, 1e-8);
    REQUIRE_NEAR(y2.values()[2], 0.66524096, 1e-8);

    // shift invariance
    auto x3 = T::from_data({3}, {1.0 + 10.0, 2.0 + 10.0, 3.0 + 10.0});
    auto y3 = ad::softmax(x3, 0);
    for (int i = 0; i < 3; ++i) REQUIRE_NEAR(y3.values()[i], y2.values()[i], 1e-12);

    REQUIRE_THROWS_CODE(ad::softmax(T::from_data({2}, {1.0, std::nan("")}), 0),
                        lsr::ErrorCode::Numeric);
}

static void test_softmax_properties() {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = ad::randn<double>({4, 6}, rng, 3.0);
        auto y = ad::softmax(x, 1);
        for (std::size_t r = 0; r < 4; ++r) {
            double s = 0;
            for (std::size_t c = 0; c < 6; ++c) {
                double v = y.values()[r * 6 + c];
                REQUIRE(v > 0.0 && v < 1.0);
                s += v;
            }
            REQUIRE_NEAR(s, 1.0, 1e-12);
        }
    }
}

static void test_cosine() {
    std::mt19937_64 rng(5);
    auto v = ad::randn<double>({1, 8}, rng);
    REQUIRE_NEAR(ad::cosine_rows(v, v).values()[0], 1.0, 1e-12);
    auto negv = ad::scale(v, -1.0);
    REQUIRE_NEAR(ad::cosine_rows(v, negv).values()[0], -1.0, 1e-12);

    auto w = ad::randn<double>({1, 8}, rng);
    double base = ad::cosine_rows(v, w).values()[0];
    auto scaled = ad::scale(v, 4.2);
    REQUIRE_NEAR(ad::cosine_rows(scaled, w).values()[0], base, 1e-12);

    // zero vector guarded by epsilon
    auto z = T::zeros({1, 8});
    double c = ad::cosine_rows(z, w).values()[0];
    REQUIRE_NEAR(c, 0.0, 1e-9);
}

static void test_diamond_graph_accumulation() {
    auto x = T::scalar(3.0, true);
    auto a = ad::scale(x, 2.0);   // 2x
    auto b = ad::scale(x, -1.0);  // -x
    auto y = ad::add(a, b);       // x
    x.zero_grad();
    ad::backward(y);
    REQUIRE_NEAR(x.grad()[0], 1.0, 1e-15);  // 2 + (-1)

    // the same leaf used twice multiplicatively: d(x*x)/dx = 2x
    auto sq = ad::mul(x, x);
    x.zero_grad();
    ad::backward(sq);
    REQUIRE_NEAR(x.grad()[0], 6.0, 1e-15);
}

static void test_broadcast_ops() {
    auto m = T::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    auto row = T::from_data({3}, {10, 20, 30});
    auto out = ad::add(m, row);
    const double want[] = {11, 22, 33, 14, 25, 36};
    for (int i = 0; i < 6; ++i) REQUIRE_NEAR(out.values()[i], want[i], 1e-15);

    REQUIRE_THROWS_CODE(ad::add(m, T::from_data({4}, {1, 2, 3, 4})), lsr::ErrorCode::Dimension);

    std::mt19937_64 rng(17);
    auto a = ad::randn<double>({3, 4}, rng, 1.0, true);
    auto b = ad::randn<double>({4}, rng, 1.0, true);
    double err = testutil::finite_difference_check(
        {a, b}, [&] { return ad::sum(ad::mul(a, b)); });
    REQUIRE_MSG(err <= 1e-8, "broadcast mul gradient error " << err);
}

static void test_elementwise_gradients() {
    std::mt19937_64 rng(23);
    for (int seed = 0; seed < 5; ++seed) {
        auto x = ad::randn<double>({3, 3}, rng, 1.0, true);
        // keep relu/log inputs away from their kinks and domain edges
        for (auto& v : x.values_mut()) v = std::abs(v) + 0.2;

        auto builds = std::vector<std::function<Tensor<double>()>>{
            [&] { return ad::sum(ad::exp(ad::scale(x, 0.3))); },
            [&] { return ad::sum(ad::log(x)); },
            [&] { return ad::sum(ad::sigmoid(x)); },
            [&] { return ad::sum(ad::softplus(x)); },
            [&] { return ad::sum(ad::relu(x)); },
            [&] { return ad::mean(ad::mul(x, x)); },
            [&] { return ad::l2norm(x); },
            [&] { return ad::sum(ad::row_l2norm(x)); },
            [&] { return ad::sum(ad::transpose(x)); },
            [&] { return ad::sum(ad::concat(x, x, 0)); },
            [&] { return ad::sum(ad::concat(x, x, 1)); },
        };
        for (auto& b : builds) {
            double err = testutil::finite_difference_check({x}, b);
            REQUIRE_MSG(err <= 1e-7, "elementwise gradient error " << err);
        }
    }
}

static void test_determinism() {
    auto run = [] {
        std::mt19937_64 rng(42);
        auto a = ad::randn<double>({6, 6}, rng, 1.0, true);
        auto b = ad::randn<double>({6, 6}, rng, 1.0, true);
        auto loss = ad::mean(ad::mul(ad::softmax(ad::matmul(a, b), 1), ad::sigmoid(a)));
        a.zero_grad();
        b.zero_grad();
        ad::backward(loss);
        std::vector<double> out(a.grad().begin(), a.grad().end());
        out.push_back(loss.item());
        return out;
    };
    auto r1 = run();
    auto r2 = run();
    REQUIRE(r1 == r2);  // bit-identical
}

static void test_adam_zero_gradient() {
    auto p = T::from_data({3}, {1.0, -2.0, 0.5}, true);
    ad::Adam<double> opt;
    opt.add_param(p, "p", 0);
    const std::vector<double> before(p.values().begin(), p.values().end());
    for (int i = 0; i < 5; ++i) {
        p.zero_grad();
        const double lrs[] = {0.02};
        const bool active[] = {true};
        opt.step(lrs, active);
    }
    for (int i = 0; i < 3; ++i) REQUIRE(p.values()[i] == before[i]);
}

static void test_adam_first_step() {
    // analytic first step: m/(1-b1)=g, v/(1-b2)=g^2, so p -= lr*sign(g)
    auto p = T::scalar(0.0, true);
    ad::Adam<double> opt;
    opt.add_param(p, "p", 0);
    p.zero_grad();
    auto loss = ad::mul(p, T::scalar(1.0));  // dL/dp = 1
    ad::backward(loss);
    const double lrs[] = {0.02};
    const bool active[] = {true};
    opt.step(lrs, active);
    REQUIRE_NEAR(p.values()[0], -0.02, 1e-9);
}

static void test_adam_converges_on_quadratic() {
    auto p = T::scalar(0.0, true);
    ad::Adam<double> opt;
    opt.add_param(p, "p", 0);
    const double lrs[] = {0.02};
    const bool active[] = {true};
    for (int i = 0; i < 2000; ++i) {
        p.zero_grad();
        auto diff = ad::add_scalar(p, -3.0);
        auto loss = ad::mul(diff, diff);
        ad::backward(loss);
        opt.step(lrs, active);
    }
    REQUIRE_MSG(std::abs(p.values()[0] - 3.0) < 1e-2, "converged to " << p.values()[0]);
}

static void test_adam_nan_gradient_detected() {
    auto p = T::scalar(1.0, true);
    p.set_name("weights");
    ad::Adam<double> opt;
    opt.add_param(p, "weights", 0);
    p.zero_grad();
    p.node_ref().grad[0] = std::nan("");
    const double lrs[] = {0.02};
    const bool active[] = {true};
    bool caught = false;
    try {
        opt.step(lrs, active);
    } catch (const lsr::Error& e) {
        caught = e.code() == lsr::ErrorCode::Numeric &&
                 std::string(e.what()).find("weights") != std::string::npos;
    }
    REQUIRE(caught);
}

int main() {
    test_matmul_identity_and_zeros();
    test_matmul_gradient();
    test_softmax_values();
    test_softmax_properties();
    test_cosine();
    test_diamond_graph_accumulation();
    test_broadcast_ops();
    test_elementwise_gradients();
    test_determinism();
    test_adam_zero_gradient();
    test_adam_first_step();
    test_adam_converges_on_quadratic();
    test_adam_nan_gradient_detected();
    std::cout << "autodiff tests passed\n";
    return 0;
}
