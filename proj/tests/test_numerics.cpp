#include <doctest.h>

#include <memory>

#include "test_support.hpp"
#include "unlearn/models.hpp"
#include "unlearn/numerics.hpp"

using namespace unlearn;
using namespace test_support;
using numerics::ParamVector;

TEST_CASE("value_and_grad on quadratic and constant functions") {
    Quadratic square((ParamVector(1) << 1.0).finished());
    ParamVector theta(1);
    theta << 3.0;
    auto [value, grad] = numerics::value_and_grad(square, theta);
    CHECK(value == doctest::Approx(9.0));
    CHECK(grad[0] == doctest::Approx(6.0));

    Constant five(2, 5.0);
    ParamVector theta2(2);
    theta2 << 1.0, 2.0;
    auto [v2, g2] = numerics::value_and_grad(five, theta2);
    CHECK(v2 == doctest::Approx(5.0));
    CHECK(g2[0] == 0.0);
    CHECK(g2[1] == 0.0);
}

TEST_CASE("value_and_grad rejects non-finite parameters and values") {
    Quadratic square((ParamVector(1) << 1.0).finished());
    ParamVector bad(1);
    bad << std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(numerics::value_and_grad(square, bad), Error);

    struct Explodes final : numerics::ScalarFunction {
        int dim() const override { return 1; }
        double value(const ParamVector&) const override {
            return std::numeric_limits<double>::infinity();
        }
        double value_and_grad(const ParamVector&, ParamVector& grad) const override {
            grad = ParamVector::Zero(1);
            return std::numeric_limits<double>::infinity();
        }
        void hvp(const ParamVector&, const ParamVector&, ParamVector& out) const override {
            out = ParamVector::Zero(1);
        }
    } exploding;
    ParamVector ok(1);
    ok << 0.0;
    try {
        numerics::value_and_grad(exploding, ok);
        FAIL("expected NonFiniteLoss");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::non_finite_loss);
    }
}

TEST_CASE("logistic gradient matches the finite-difference oracle") {
    auto probe = make_probe(0, 11);
    models::BatchLoss loss(probe.model, probe.data, {0});
    ParamVector theta = random_vector(loss.dim(), 21, 0.5);
    auto [value, grad] = numerics::value_and_grad(loss, theta);
    ParamVector fd = numerics::finite_diff_grad(loss, theta, 1e-5);
    CHECK(rel_diff(grad, fd) <= 1e-6);
    CHECK(value > 0.0);
}

TEST_CASE("per_sample_grads basics") {
    auto probe = make_probe(0, 12);

    SUBCASE("singleton batch equals value_and_grad") {
        models::BatchLoss single(probe.model, probe.data, {2});
        ParamVector theta = random_vector(single.dim(), 31, 0.3);
        auto grads = numerics::per_sample_grads(single, theta);
        REQUIRE(grads.size() == 1);
        auto [value, grad] = numerics::value_and_grad(single, theta);
        CHECK((grads[0] - grad).norm() == 0.0);
    }

    SUBCASE("duplicated sample gives identical gradients") {
        models::BatchLoss twice(probe.model, probe.data, {1, 1});
        ParamVector theta = random_vector(twice.dim(), 32, 0.3);
        auto grads = numerics::per_sample_grads(twice, theta);
        REQUIRE(grads.size() == 2);
        CHECK((grads[0] - grads[1]).norm() == 0.0);
    }

    SUBCASE("sum of per-sample gradients equals gradient of mean loss times n") {
        models::BatchLoss batch(probe.model, probe.data, {0, 1, 2, 3, 4});
        ParamVector theta = random_vector(batch.dim(), 33, 0.3);
        auto grads = numerics::per_sample_grads(batch, theta);
        ParamVector sum = ParamVector::Zero(batch.dim());
        for (const auto& g : grads) sum += g;
        ParamVector mean_grad(batch.dim());
        batch.value_and_grad(theta, mean_grad);
        CHECK(rel_diff(sum, 5.0 * mean_grad) <= 1e-10);
    }

    SUBCASE("empty batch raises EmptyBatch") {
        models::BatchLoss empty(probe.model, probe.data, std::vector<int>{});
        ParamVector theta = ParamVector::Zero(empty.dim());
        try {
            numerics::per_sample_grads(empty, theta);
            FAIL("expected EmptyBatch");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::empty_batch);
        }
    }
}

TEST_CASE("hvp on closed-form Hessians") {
    SUBCASE("identity Hessian: loss = half theta^T theta") {
        Quadratic half((ParamVector(3) << 0.5, 0.5, 0.5).finished());
        ParamVector theta = random_vector(3, 41);
        ParamVector v = random_vector(3, 42);
        ParamVector hv = numerics::hvp(half, theta, v);
        CHECK(rel_diff(hv, v) <= 1e-14);
    }

    SUBCASE("off-diagonal Hessian: loss = theta0*theta1") {
        CrossTerm cross;
        ParamVector theta = random_vector(2, 43);
        ParamVector v(2);
        v << 1.0, 0.0;
        ParamVector hv = numerics::hvp(cross, theta, v);
        CHECK(hv[0] == 0.0);
        CHECK(hv[1] == 1.0);
    }

    SUBCASE("dimension mismatch raises") {
        CrossTerm cross;
        ParamVector theta = random_vector(2, 44);
        ParamVector v = random_vector(3, 45);
        try {
            numerics::hvp(cross, theta, v);
            FAIL("expected DimensionMismatch");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::dimension_mismatch);
        }
    }
}

TEST_CASE("model-family hvp matches the finite-difference oracle") {
    for (int which = 0; which < 3; ++which) {
        auto probe = make_probe(which, 50 + which);
        models::BatchLoss loss(probe.model, probe.data);
        ParamVector theta = random_vector(loss.dim(), 60 + which, 0.4);
        if (probe.model.activation == numerics::Activation::relu) {
            // FD through a relu kink is not a valid oracle; keep a margin.
            int attempt = 0;
            while (true) {
                double margin = std::numeric_limits<double>::infinity();
                for (int i = 0; i < probe.data.size(); ++i) {
                    margin = std::min(margin, numerics::net_min_preactivation(
                                                  loss.shape(), theta, probe.data.row(i)));
                }
                if (margin > 1e-3) break;
                theta = random_vector(loss.dim(), 600 + which * 97 + ++attempt, 0.4);
            }
        }
        ParamVector v = random_vector(loss.dim(), 70 + which);
        ParamVector hv = numerics::hvp(loss, theta, v);
        ParamVector fd = numerics::finite_diff_hvp(loss, theta, v, 1e-4);
        CHECK(rel_diff(hv, fd) <= 1e-4);
    }
}

TEST_CASE("hvp linearity and symmetry invariants") {
    auto probe = make_probe(1, 81);  // tanh mlp
    models::BatchLoss loss(probe.model, probe.data);
    ParamVector theta = random_vector(loss.dim(), 82, 0.4);
    for (int trial = 0; trial < 20; ++trial) {
        ParamVector u = random_vector(loss.dim(), 900 + 2 * trial);
        ParamVector v = random_vector(loss.dim(), 901 + 2 * trial);
        const double a = 0.7;
        const double b = -1.3;

        ParamVector lhs = numerics::hvp(loss, theta, a * u + b * v);
        ParamVector rhs = a * numerics::hvp(loss, theta, u) + b * numerics::hvp(loss, theta, v);
        CHECK(rel_diff(lhs, rhs) <= 1e-10);

        const double uhv = u.dot(numerics::hvp(loss, theta, v));
        const double vhu = v.dot(numerics::hvp(loss, theta, u));
        CHECK(rel_diff(uhv, vhu) <= 1e-8);
    }
}

TEST_CASE("cg_solve closed forms and dense cross-check") {
    SUBCASE("identity operator with damping") {
        auto id = std::make_shared<Quadratic>((ParamVector(4) << 0.5, 0.5, 0.5, 0.5).finished());
        ParamVector theta = ParamVector::Zero(4);
        ParamVector b = random_vector(4, 101);
        auto H = numerics::make_hessian_operator(id, theta, 0.5, "identity-test");
        auto result = numerics::cg_solve(H, b);
        CHECK(rel_diff(result.x, b / 1.5) <= 1e-10);
    }

    SUBCASE("2x2 diagonal closed form") {
        auto diag = std::make_shared<Quadratic>((ParamVector(2) << 1.0, 2.0).finished());
        ParamVector theta = ParamVector::Zero(2);
        ParamVector b(2);
        b << 2.0, 4.0;
        auto H = numerics::make_hessian_operator(diag, theta, 0.0, "diag-test");
        auto result = numerics::cg_solve(H, b);
        CHECK(result.x[0] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(result.x[1] == doctest::Approx(1.0).epsilon(1e-12));
    }

    SUBCASE("random 10x10 SPD matches dense solve") {
        Eigen::MatrixXd A = random_spd(10, 103);
        auto fn = std::make_shared<DenseQuadratic>(A);
        ParamVector b = random_vector(10, 104);
        auto H = numerics::make_hessian_operator(fn, ParamVector::Zero(10), 0.0, "spd-test");
        auto result = numerics::cg_solve(H, b, 1e-12);
        ParamVector direct = A.ldlt().solve(b);
        CHECK(rel_diff(result.x, direct) <= 1e-8);
    }

    SUBCASE("zero rhs short-circuits") {
        auto diag = std::make_shared<Quadratic>((ParamVector(2) << 1.0, 1.0).finished());
        auto H = numerics::make_hessian_operator(diag, ParamVector::Zero(2), 0.0, "zero-test");
        auto result = numerics::cg_solve(H, ParamVector::Zero(2));
        CHECK(result.iterations == 0);
        CHECK(result.x.norm() == 0.0);
    }

    SUBCASE("iteration exhaustion raises NoConvergence") {
        Eigen::MatrixXd A = random_spd(30, 105, 1e-6);
        auto fn = std::make_shared<DenseQuadratic>(A);
        ParamVector b = random_vector(30, 106);
        auto H = numerics::make_hessian_operator(fn, ParamVector::Zero(30), 0.0, "exhaust-test");
        try {
            numerics::cg_solve(H, b, 1e-14, 2);
            FAIL("expected NoConvergence");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::no_convergence);
        }
    }

    SUBCASE("negative curvature raises NotPositiveDefinite") {
        auto neg = std::make_shared<Quadratic>((ParamVector(2) << -1.0, -1.0).finished());
        auto H = numerics::make_hessian_operator(neg, ParamVector::Zero(2), 0.0, "negdef-test");
        ParamVector b = random_vector(2, 107);
        try {
            numerics::cg_solve(H, b);
            FAIL("expected NotPositiveDefinite");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::not_positive_definite);
        }
    }
}

TEST_CASE("cg_solve converges within p iterations on damped convex Hessians") {
    auto probe = make_probe(0, 111);
    auto loss = std::make_shared<models::BatchLoss>(probe.model, probe.data);
    ParamVector theta = random_vector(loss->dim(), 112, 0.3);
    auto H = numerics::make_hessian_operator(loss, theta, 1e-4, "convex-test");
    ParamVector b = random_vector(loss->dim(), 113);
    auto result = numerics::cg_solve(H, b, 1e-8, 0);
    CHECK(result.iterations <= loss->dim());
}

TEST_CASE("finite_diff_grad basics") {
    Quadratic square((ParamVector(1) << 1.0).finished());
    ParamVector theta(1);
    theta << 3.0;
    ParamVector fd = numerics::finite_diff_grad(square, theta, 1e-5);
    CHECK(std::abs(fd[0] - 6.0) <= 1e-6);

    Constant flat(3, 7.0);
    ParamVector zero = numerics::finite_diff_grad(flat, ParamVector::Zero(3), 1e-5);
    CHECK(zero.norm() == 0.0);

    auto probe = make_probe(1, 120);  // tanh mlp: smooth everywhere
    models::BatchLoss loss(probe.model, probe.data);
    ParamVector t2 = random_vector(loss.dim(), 121, 0.4);
    ParamVector analytic(loss.dim());
    loss.value_and_grad(t2, analytic);
    ParamVector fd2 = numerics::finite_diff_grad(loss, t2, 1e-5);
    CHECK(rel_diff(analytic, fd2) <= 1e-5);

    CHECK_THROWS_AS(numerics::finite_diff_grad(square, theta, 0.0), Error);
}

TEST_CASE("gradient exactness over randomized probes") {
    // Unit-level slice of the full randomized sweep (the acceptance suite
    // runs 1000 probes).
    int checked = 0;
    for (int trial = 0; trial < 120; ++trial) {
        auto probe = make_probe(trial, 1000 + trial);
        const int row = trial % probe.data.size();
        models::BatchLoss loss(probe.model, probe.data, {row});
        ParamVector theta = random_vector(loss.dim(), 2000 + trial, 0.4);
        if (probe.model.activation == numerics::Activation::relu &&
            numerics::net_min_preactivation(loss.shape(), theta, probe.data.row(row)) <= 1e-3) {
            continue;
        }
        ParamVector analytic(loss.dim());
        loss.value_and_grad(theta, analytic);
        ParamVector fd = numerics::finite_diff_grad(loss, theta, 1e-5);
        CHECK(rel_diff(analytic, fd) <= 1e-5);
        ++checked;
    }
    CHECK(checked >= 100);
}

TEST_CASE("counters observe work in nested scopes") {
    auto probe = make_probe(0, 130);
    models::BatchLoss loss(probe.model, probe.data);
    ParamVector theta = random_vector(loss.dim(), 131, 0.3);
    ParamVector v = random_vector(loss.dim(), 132);

    numerics::CounterScope outer;
    {
        numerics::CounterScope inner;
        numerics::hvp(loss, theta, v);
        CHECK(inner.counters().hvp_calls == probe.data.size());
    }
    CHECK(outer.counters().hvp_calls == probe.data.size());
    CHECK(outer.counters().cg_iterations == 0);
}
