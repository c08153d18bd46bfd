#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>

#include "unlearn/datasets.hpp"
#include "unlearn/models.hpp"
#include "unlearn/numerics.hpp"
#include "unlearn/rng.hpp"

namespace test_support {

using unlearn::numerics::ParamVector;

inline double rel_diff(const ParamVector& a, const ParamVector& b) {
    return (a - b).norm() / std::max(b.norm(), 1e-12);
}

inline double rel_diff(double a, double b) {
    return std::abs(a - b) / std::max(std::abs(b), 1e-12);
}

inline double cosine(const ParamVector& a, const ParamVector& b) {
    const double denom = a.norm() * b.norm();
    return denom > 0.0 ? a.dot(b) / denom : 1.0;
}

inline ParamVector random_vector(int n, std::uint64_t seed, double scale = 1.0) {
    auto engine = unlearn::rng::make_engine(seed);
    std::normal_distribution<double> gauss(0.0, scale);
    ParamVector v(n);
    for (int i = 0; i < n; ++i) v[i] = gauss(engine);
    return v;
}

// f(θ) = θ₀² (1-parameter) or generally Σ cᵢθᵢ² with fixed c.
class Quadratic final : public unlearn::numerics::ScalarFunction {
public:
    explicit Quadratic(ParamVector curvature) : c_(std::move(curvature)) {}
    int dim() const override { return static_cast<int>(c_.size()); }
    double value(const ParamVector& theta) const override {
        return (c_.array() * theta.array().square()).sum();
    }
    double value_and_grad(const ParamVector& theta, ParamVector& grad) const override {
        grad = 2.0 * c_.cwiseProduct(theta);
        return value(theta);
    }
    void hvp(const ParamVector&, const ParamVector& v, ParamVector& out) const override {
        out = 2.0 * c_.cwiseProduct(v);
    }

private:
    ParamVector c_;
};

class Constant final : public unlearn::numerics::ScalarFunction {
public:
    Constant(int dim, double value) : dim_(dim), value_(value) {}
    int dim() const override { return dim_; }
    double value(const ParamVector&) const override { return value_; }
    double value_and_grad(const ParamVector&, ParamVector& grad) const override {
        grad = ParamVector::Zero(dim_);
        return value_;
    }
    void hvp(const ParamVector&, const ParamVector&, ParamVector& out) const override {
        out = ParamVector::Zero(dim_);
    }

private:
    int dim_;
    double value_;
};

// f(θ) = θ₀·θ₁; Hessian has the off-diagonal [[0,1],[1,0]].
class CrossTerm final : public unlearn::numerics::ScalarFunction {
public:
    int dim() const override { return 2; }
    double value(const ParamVector& theta) const override { return theta[0] * theta[1]; }
    double value_and_grad(const ParamVector& theta, ParamVector& grad) const override {
        grad.resize(2);
        grad[0] = theta[1];
        grad[1] = theta[0];
        return value(theta);
    }
    void hvp(const ParamVector&, const ParamVector& v, ParamVector& out) const override {
        out.resize(2);
        out[0] = v[1];
        out[1] = v[0];
    }
};

// Dense symmetric matrix exposed as a ScalarFunction ½θᵀAθ, for CG cross-checks.
class DenseQuadratic final : public unlearn::numerics::ScalarFunction {
public:
    explicit DenseQuadratic(Eigen::MatrixXd A) : A_(std::move(A)) {}
    int dim() const override { return static_cast<int>(A_.rows()); }
    double value(const ParamVector& theta) const override {
        return 0.5 * theta.dot(A_ * theta);
    }
    double value_and_grad(const ParamVector& theta, ParamVector& grad) const override {
        grad = A_ * theta;
        return value(theta);
    }
    void hvp(const ParamVector&, const ParamVector& v, ParamVector& out) const override {
        out = A_ * v;
    }
    const Eigen::MatrixXd& matrix() const { return A_; }

private:
    Eigen::MatrixXd A_;
};

inline Eigen::MatrixXd random_spd(int n, std::uint64_t seed, double shift = 0.5) {
    auto engine = unlearn::rng::make_engine(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::MatrixXd M(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) M(i, j) = gauss(engine);
    }
    return M * M.transpose() + shift * Eigen::MatrixXd::Identity(n, n);
}

struct ProbeSpec {
    unlearn::models::ModelSpec model;
    unlearn::datasets::Dataset data;
};

// Rotating family of small specs for randomized probes: logistic, tanh MLP,
// relu MLP.
inline ProbeSpec make_probe(int which, std::uint64_t seed) {
    using namespace unlearn;
    ProbeSpec probe;
    const int variant = which % 3;
    models::ModelSpec spec;
    spec.input_dim = 4;
    spec.classes = 3;
    spec.l2 = 1e-2;
    if (variant == 0) {
        spec.kind = models::ModelKind::logistic;
    } else {
        spec.kind = models::ModelKind::mlp;
        spec.hidden = {5};
        spec.activation =
            variant == 1 ? numerics::Activation::tanh : numerics::Activation::relu;
    }
    probe.model = spec;
    probe.data = datasets::gen_blobs(6, spec.input_dim, spec.classes, 1.0, seed);
    return probe;
}

}  // namespace test_support
