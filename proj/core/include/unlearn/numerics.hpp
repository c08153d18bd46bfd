#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "unlearn/errors.hpp"

namespace unlearn::numerics {

/// Flat 64-bit parameter vector. Length must equal the owning model's
/// declared parameter count; operations reject non-finite entries.
using ParamVector = Eigen::VectorXd;

void ensure_finite(const ParamVector& v, const char* stage);

// ---------------------------------------------------------------------------
// Instrumentation counters
// ---------------------------------------------------------------------------

struct OpCounters {
    std::int64_t hvp_calls = 0;      // per-sample Hessian-vector evaluations
    std::int64_t cg_iterations = 0;  // conjugate-gradient iterations
    std::int64_t param_updates = 0;  // writes to a parameter vector
};

/// Installs a counter frame for the current thread. Frames nest: every count
/// lands in all active scopes, so an outer observer still sees work done
/// inside an instrumented callee.
class CounterScope {
public:
    CounterScope();
    ~CounterScope();
    CounterScope(const CounterScope&) = delete;
    CounterScope& operator=(const CounterScope&) = delete;
    const OpCounters& counters() const { return counters_; }

private:
    OpCounters counters_;
};

void count_hvp() noexcept;
void count_cg_iteration() noexcept;
void count_param_update() noexcept;

// ---------------------------------------------------------------------------
// Differentiable-function interfaces
// ---------------------------------------------------------------------------

/// Scalar function of a parameter vector with exact first- and second-order
/// oracles. hvp() is the forward-over-reverse directional derivative of the
/// gradient, not a finite difference.
class ScalarFunction {
public:
    virtual ~ScalarFunction() = default;
    virtual int dim() const = 0;
    virtual double value(const ParamVector& theta) const = 0;
    virtual double value_and_grad(const ParamVector& theta, ParamVector& grad) const = 0;
    virtual void hvp(const ParamVector& theta, const ParamVector& v, ParamVector& out) const = 0;
};

/// Mean over a batch of per-sample losses, with per-sample access.
class PerSampleFunction : public ScalarFunction {
public:
    virtual int sample_count() const = 0;
    virtual double sample_value(const ParamVector& theta, int k) const = 0;
    virtual double sample_value_and_grad(const ParamVector& theta, int k,
                                         ParamVector& grad) const = 0;
    virtual void sample_hvp(const ParamVector& theta, int k, const ParamVector& v,
                            ParamVector& out) const = 0;

    // Aggregates are the mean over samples.
    double value(const ParamVector& theta) const override;
    double value_and_grad(const ParamVector& theta, ParamVector& grad) const override;
    void hvp(const ParamVector& theta, const ParamVector& v, ParamVector& out) const override;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Evaluates fn and its exact gradient; rejects non-finite results naming the
/// stage ("value" or "gradient") that produced them.
std::pair<double, ParamVector> value_and_grad(const ScalarFunction& fn, const ParamVector& theta);

/// One gradient per sample, at shared theta. Summing the entries gives the
/// gradient of the summed (not mean) loss.
std::vector<ParamVector> per_sample_grads(const PerSampleFunction& fn, const ParamVector& theta);

/// H·v at theta, where H is the Hessian of fn.
ParamVector hvp(const ScalarFunction& fn, const ParamVector& theta, const ParamVector& v);

/// Central-difference gradient, entry i = (f(θ+h·eᵢ) − f(θ−h·eᵢ)) / 2h.
/// Test oracle; O(p) function evaluations.
ParamVector finite_diff_grad(const ScalarFunction& fn, const ParamVector& theta, double h);

/// Central-difference H·v oracle: (∇f(θ+h·v) − ∇f(θ−h·v)) / 2h.
ParamVector finite_diff_hvp(const ScalarFunction& fn, const ParamVector& theta,
                            const ParamVector& v, double h);

// ---------------------------------------------------------------------------
// Hessian operator and damped solve
// ---------------------------------------------------------------------------

/// Matrix-free Hessian: apply() is the raw product H·v; the solver adds
/// damping·v on top. Never materialized.
struct HessianOperator {
    int dim = 0;
    double damping = 0.0;
    std::function<void(const ParamVector&, ParamVector&)> apply_fn;
    std::string source;  // dataset/params provenance, for diagnostics

    ParamVector apply(const ParamVector& v) const;
};

HessianOperator make_hessian_operator(std::shared_ptr<const ScalarFunction> fn,
                                      ParamVector theta, double damping, std::string source);

struct CgResult {
    ParamVector x;
    int iterations = 0;
    double residual = 0.0;
};

constexpr double kDefaultDamping = 1e-3;
constexpr double kDefaultCgTol = 1e-8;

/// Solves (H + damping·I) x = b by conjugate gradients to
/// ‖(H+λI)x − b‖ ≤ tol·‖b‖. max_iter == 0 means 10·dim.
/// Throws NoConvergence on iteration exhaustion, NotPositiveDefinite on
/// negative curvature.
CgResult cg_solve(const HessianOperator& H, const ParamVector& b, double tol = kDefaultCgTol,
                  int max_iter = 0);

// ---------------------------------------------------------------------------
// Feed-forward kernel (the supported model family)
// ---------------------------------------------------------------------------

enum class Activation { relu, tanh };

/// Fully connected net: input → affine(+activation) per hidden layer →
/// affine → softmax. Per-sample loss is cross-entropy on the true class plus
/// (l2/2)·‖θ‖². Parameters are laid out layer by layer, row-major weights
/// then biases.
struct NetShape {
    int input_dim = 0;
    std::vector<int> layer_widths;  // hidden widths..., then output classes
    Activation activation = Activation::relu;
    double l2 = 0.0;

    int layer_count() const { return static_cast<int>(layer_widths.size()); }
    int layer_in(int l) const { return l == 0 ? input_dim : layer_widths[l - 1]; }
    int layer_out(int l) const { return layer_widths[l]; }
    int param_count() const;
    int weight_offset(int l) const;
    int bias_offset(int l) const;
};

/// Softmax probabilities for one input (max-subtracted for stability).
Eigen::VectorXd net_probs(const NetShape& shape, const ParamVector& theta, const double* x);

double net_loss(const NetShape& shape, const ParamVector& theta, const double* x, int y);

/// Loss and exact gradient via reverse mode; returns the loss.
double net_loss_grad(const NetShape& shape, const ParamVector& theta, const double* x, int y,
                     ParamVector& grad);

/// Exact per-sample Hessian-vector product via forward-over-reverse
/// (tangent-carrying backprop). Counts one hvp_call.
void net_hvp(const NetShape& shape, const ParamVector& theta, const double* x, int y,
             const ParamVector& v, ParamVector& out);

/// Smallest |pre-activation| over hidden units (+inf when there are none).
/// Finite-difference oracles are only valid for relu nets when this margin
/// comfortably exceeds the probe step.
double net_min_preactivation(const NetShape& shape, const ParamVector& theta, const double* x);

}  // namespace unlearn::numerics
