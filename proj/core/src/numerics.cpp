#include "unlearn/numerics.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace unlearn::numerics {

namespace {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstWeightMap = Eigen::Map<const RowMajorMatrix>;
using WeightMap = Eigen::Map<RowMajorMatrix>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

thread_local std::vector<OpCounters*> g_counter_stack;

}  // namespace

void ensure_finite(const ParamVector& v, const char* stage) {
    if (!v.allFinite()) {
        fail(ErrorCode::non_finite_loss, std::string("non-finite values in ") + stage);
    }
}

// ---------------------------------------------------------------------------
// Counters
// ---------------------------------------------------------------------------

CounterScope::CounterScope() { g_counter_stack.push_back(&counters_); }

CounterScope::~CounterScope() { g_counter_stack.pop_back(); }

void count_hvp() noexcept {
    for (auto* c : g_counter_stack) ++c->hvp_calls;
}

void count_cg_iteration() noexcept {
    for (auto* c : g_counter_stack) ++c->cg_iterations;
}

void count_param_update() noexcept {
    for (auto* c : g_counter_stack) ++c->param_updates;
}

// ---------------------------------------------------------------------------
// PerSampleFunction aggregates (mean over samples)
// ---------------------------------------------------------------------------

double PerSampleFunction::value(const ParamVector& theta) const {
    const int n = sample_count();
    if (n == 0) fail(ErrorCode::empty_batch, "no samples in batch");
    double total = 0.0;
    for (int k = 0; k < n; ++k) total += sample_value(theta, k);
    return total / n;
}

double PerSampleFunction::value_and_grad(const ParamVector& theta, ParamVector& grad) const {
    const int n = sample_count();
    if (n == 0) fail(ErrorCode::empty_batch, "no samples in batch");
    grad = ParamVector::Zero(dim());
    ParamVector g(dim());
    double total = 0.0;
    for (int k = 0; k < n; ++k) {
        total += sample_value_and_grad(theta, k, g);
        grad += g;
    }
    grad /= n;
    return total / n;
}

void PerSampleFunction::hvp(const ParamVector& theta, const ParamVector& v,
                            ParamVector& out) const {
    const int n = sample_count();
    if (n == 0) fail(ErrorCode::empty_batch, "no samples in batch");
    out = ParamVector::Zero(dim());
    ParamVector hv(dim());
    for (int k = 0; k < n; ++k) {
        sample_hvp(theta, k, v, hv);
        out += hv;
    }
    out /= n;
}

// ---------------------------------------------------------------------------
// Generic operations
// ---------------------------------------------------------------------------

std::pair<double, ParamVector> value_and_grad(const ScalarFunction& fn, const ParamVector& theta) {
    if (theta.size() != fn.dim()) {
        fail(ErrorCode::dimension_mismatch,
             "theta has length " + std::to_string(theta.size()) + ", function expects " +
                 std::to_string(fn.dim()));
    }
    if (!theta.allFinite()) {
        fail(ErrorCode::invariant_violation, "non-finite parameter vector");
    }
    ParamVector grad(fn.dim());
    const double v = fn.value_and_grad(theta, grad);
    if (!std::isfinite(v)) fail(ErrorCode::non_finite_loss, "loss value is not finite");
    ensure_finite(grad, "gradient");
    return {v, std::move(grad)};
}

std::vector<ParamVector> per_sample_grads(const PerSampleFunction& fn, const ParamVector& theta) {
    const int n = fn.sample_count();
    if (n == 0) fail(ErrorCode::empty_batch, "no samples in batch");
    std::vector<ParamVector> grads(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        grads[k].resize(fn.dim());
        const double v = fn.sample_value_and_grad(theta, k, grads[k]);
        if (!std::isfinite(v)) {
            fail(ErrorCode::non_finite_loss, "loss value of sample " + std::to_string(k));
        }
        ensure_finite(grads[k], "per-sample gradient");
    }
    return grads;
}

ParamVector hvp(const ScalarFunction& fn, const ParamVector& theta, const ParamVector& v) {
    if (v.size() != fn.dim() || theta.size() != fn.dim()) {
        fail(ErrorCode::dimension_mismatch,
             "hvp: got |theta|=" + std::to_string(theta.size()) + ", |v|=" +
                 std::to_string(v.size()) + ", expected " + std::to_string(fn.dim()));
    }
    ParamVector out(fn.dim());
    fn.hvp(theta, v, out);
    ensure_finite(out, "Hessian-vector product");
    return out;
}

ParamVector finite_diff_grad(const ScalarFunction& fn, const ParamVector& theta, double h) {
    if (h <= 0.0) fail(ErrorCode::bad_step, "finite-difference step must be positive");
    ParamVector probe = theta;
    ParamVector grad(theta.size());
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
        probe[i] = theta[i] + h;
        const double fp = fn.value(probe);
        probe[i] = theta[i] - h;
        const double fm = fn.value(probe);
        probe[i] = theta[i];
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            fail(ErrorCode::non_finite_loss,
                 "non-finite evaluation at coordinate " + std::to_string(i));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

ParamVector finite_diff_hvp(const ScalarFunction& fn, const ParamVector& theta,
                            const ParamVector& v, double h) {
    if (h <= 0.0) fail(ErrorCode::bad_step, "finite-difference step must be positive");
    ParamVector gp(theta.size());
    ParamVector gm(theta.size());
    fn.value_and_grad(theta + h * v, gp);
    fn.value_and_grad(theta - h * v, gm);
    return (gp - gm) / (2.0 * h);
}

// ---------------------------------------------------------------------------
// Hessian operator and CG
// ---------------------------------------------------------------------------

ParamVector HessianOperator::apply(const ParamVector& v) const {
    if (v.size() != dim) {
        fail(ErrorCode::dimension_mismatch, "operator dim " + std::to_string(dim) +
                                                ", direction length " + std::to_string(v.size()));
    }
    ParamVector out(dim);
    apply_fn(v, out);
    return out;
}

HessianOperator make_hessian_operator(std::shared_ptr<const ScalarFunction> fn, ParamVector theta,
                                      double damping, std::string source) {
    HessianOperator op;
    op.dim = fn->dim();
    op.damping = damping;
    op.source = std::move(source);
    auto theta_at = std::make_shared<ParamVector>(std::move(theta));
    op.apply_fn = [fn, theta_at](const ParamVector& v, ParamVector& out) {
        fn->hvp(*theta_at, v, out);
    };
    return op;
}

CgResult cg_solve(const HessianOperator& H, const ParamVector& b, double tol, int max_iter) {
    const Eigen::Index n = b.size();
    if (H.dim != n) {
        fail(ErrorCode::dimension_mismatch,
             "cg_solve: operator dim " + std::to_string(H.dim) + " vs rhs " + std::to_string(n));
    }
    if (tol <= 0.0) fail(ErrorCode::bad_step, "cg tolerance must be positive");
    if (max_iter <= 0) max_iter = 10 * static_cast<int>(n);

    const double lambda = H.damping;
    const double b_norm = b.norm();
    CgResult result;
    result.x = ParamVector::Zero(n);
    if (b_norm == 0.0) return result;

    auto apply_damped = [&](const ParamVector& v) -> ParamVector {
        ParamVector out = H.apply(v);
        if (lambda != 0.0) out += lambda * v;
        return out;
    };

    ParamVector r = b;  // residual of x = 0
    ParamVector p = r;
    double rs = r.squaredNorm();
    const double threshold = tol * b_norm;

    for (int it = 1; it <= max_iter; ++it) {
        ParamVector Ap = apply_damped(p);
        const double pAp = p.dot(Ap);
        if (pAp <= 0.0) {
            fail(ErrorCode::not_positive_definite,
                 "negative curvature " + std::to_string(pAp) + " at iteration " +
                     std::to_string(it) + " (source: " + H.source + ")");
        }
        const double alpha = rs / pAp;
        result.x += alpha * p;
        r -= alpha * Ap;
        count_cg_iteration();
        result.iterations = it;

        const double rs_new = r.squaredNorm();
        if (std::sqrt(rs_new) <= threshold) {
            // Recursive residual can drift; confirm against the true one.
            ParamVector true_r = b - apply_damped(result.x);
            const double true_norm = true_r.norm();
            if (true_norm <= threshold) {
                result.residual = true_norm;
                return result;
            }
            r = true_r;  // restart from the recomputed residual
            rs = r.squaredNorm();
            p = r;
            continue;
        }
        p = r + (rs_new / rs) * p;
        rs = rs_new;
    }
    result.residual = std::sqrt(rs);
    fail(ErrorCode::no_convergence, "cg_solve: residual " + std::to_string(result.residual) +
                                        " after " + std::to_string(max_iter) +
                                        " iterations (target " + std::to_string(threshold) + ")");
}

// ---------------------------------------------------------------------------
// Feed-forward kernel
// ---------------------------------------------------------------------------

int NetShape::param_count() const {
    int total = 0;
    for (int l = 0; l < layer_count(); ++l) {
        total += layer_out(l) * layer_in(l) + layer_out(l);
    }
    return total;
}

int NetShape::weight_offset(int l) const {
    int off = 0;
    for (int k = 0; k < l; ++k) off += layer_out(k) * layer_in(k) + layer_out(k);
    return off;
}

int NetShape::bias_offset(int l) const {
    return weight_offset(l) + layer_out(l) * layer_in(l);
}

namespace {

inline void check_sample(const NetShape& shape, const ParamVector& theta, int y) {
    if (theta.size() != shape.param_count()) {
        fail(ErrorCode::dimension_mismatch,
             "parameter vector length " + std::to_string(theta.size()) + ", shape expects " +
                 std::to_string(shape.param_count()));
    }
    const int classes = shape.layer_widths.back();
    if (y < 0 || y >= classes) {
        fail(ErrorCode::bad_label,
             "label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
}

// Forward pass storing per-layer post-activations and activation derivatives.
struct ForwardTrace {
    std::vector<Eigen::VectorXd> act;    // act[0] = x, act[l+1] = layer l output
    std::vector<Eigen::VectorXd> dact;   // σ'(z_l) for hidden layers, empty for last
    std::vector<Eigen::VectorXd> ddact;  // σ''(z_l) for hidden layers (tanh only)
    Eigen::VectorXd probs;               // softmax of final logits
    double cross_entropy = 0.0;
};

ForwardTrace run_forward(const NetShape& shape, const ParamVector& theta, const double* x, int y,
                         bool need_second_order) {
    const int L = shape.layer_count();
    ForwardTrace t;
    t.act.resize(L + 1);
    t.dact.resize(L);
    if (need_second_order) t.ddact.resize(L);
    t.act[0] = ConstVecMap(x, shape.input_dim);

    for (int l = 0; l < L; ++l) {
        const int in = shape.layer_in(l);
        const int out = shape.layer_out(l);
        ConstWeightMap W(theta.data() + shape.weight_offset(l), out, in);
        ConstVecMap b(theta.data() + shape.bias_offset(l), out);
        Eigen::VectorXd z = W * t.act[l] + b;
        if (l + 1 < L) {
            if (shape.activation == Activation::relu) {
                t.dact[l] = (z.array() > 0.0).cast<double>();
                t.act[l + 1] = z.cwiseProduct(t.dact[l]);
                if (need_second_order) t.ddact[l] = Eigen::VectorXd::Zero(out);
            } else {
                Eigen::VectorXd a = z.array().tanh();
                t.dact[l] = (1.0 - a.array().square()).matrix();
                if (need_second_order) {
                    t.ddact[l] = (-2.0 * a.array() * t.dact[l].array()).matrix();
                }
                t.act[l + 1] = std::move(a);
            }
        } else {
            t.act[l + 1] = std::move(z);  // logits
        }
    }

    const Eigen::VectorXd& u = t.act[L];
    const double m = u.maxCoeff();
    Eigen::VectorXd e = (u.array() - m).exp();
    const double sum = e.sum();
    t.probs = e / sum;
    t.cross_entropy = std::log(sum) + m - u[y];
    return t;
}

}  // namespace

Eigen::VectorXd net_probs(const NetShape& shape, const ParamVector& theta, const double* x) {
    ForwardTrace t = run_forward(shape, theta, x, 0, false);
    return t.probs;
}

double net_min_preactivation(const NetShape& shape, const ParamVector& theta, const double* x) {
    const int L = shape.layer_count();
    double margin = std::numeric_limits<double>::infinity();
    Eigen::VectorXd a = ConstVecMap(x, shape.input_dim);
    for (int l = 0; l + 1 < L; ++l) {
        ConstWeightMap W(theta.data() + shape.weight_offset(l), shape.layer_out(l),
                         shape.layer_in(l));
        ConstVecMap b(theta.data() + shape.bias_offset(l), shape.layer_out(l));
        Eigen::VectorXd z = W * a + b;
        margin = std::min(margin, z.cwiseAbs().minCoeff());
        a = shape.activation == Activation::relu ? z.cwiseMax(0.0).eval()
                                                 : z.array().tanh().matrix().eval();
    }
    return margin;
}

double net_loss(const NetShape& shape, const ParamVector& theta, const double* x, int y) {
    check_sample(shape, theta, y);
    ForwardTrace t = run_forward(shape, theta, x, y, false);
    return t.cross_entropy + 0.5 * shape.l2 * theta.squaredNorm();
}

double net_loss_grad(const NetShape& shape, const ParamVector& theta, const double* x, int y,
                     ParamVector& grad) {
    check_sample(shape, theta, y);
    const int L = shape.layer_count();
    ForwardTrace t = run_forward(shape, theta, x, y, false);

    grad.resize(theta.size());
    Eigen::VectorXd delta = t.probs;
    delta[y] -= 1.0;

    for (int l = L - 1; l >= 0; --l) {
        const int in = shape.layer_in(l);
        const int out = shape.layer_out(l);
        WeightMap gW(grad.data() + shape.weight_offset(l), out, in);
        VecMap gb(grad.data() + shape.bias_offset(l), out);
        gW.noalias() = delta * t.act[l].transpose();
        gb = delta;
        if (l > 0) {
            ConstWeightMap W(theta.data() + shape.weight_offset(l), out, in);
            delta = (W.transpose() * delta).cwiseProduct(t.dact[l - 1]);
        }
    }
    if (shape.l2 != 0.0) grad += shape.l2 * theta;
    return t.cross_entropy + 0.5 * shape.l2 * theta.squaredNorm();
}

void net_hvp(const NetShape& shape, const ParamVector& theta, const double* x, int y,
             const ParamVector& v, ParamVector& out) {
    check_sample(shape, theta, y);
    if (v.size() != theta.size()) {
        fail(ErrorCode::dimension_mismatch, "hvp direction length " + std::to_string(v.size()) +
                                                ", expected " + std::to_string(theta.size()));
    }
    count_hvp();

    const int L = shape.layer_count();
    ForwardTrace t = run_forward(shape, theta, x, y, true);

    // Forward tangents: Ra[l] = d(act[l])/dε along θ+εv at ε=0.
    std::vector<Eigen::VectorXd> Ra(L + 1);
    std::vector<Eigen::VectorXd> Rz(L);
    Ra[0] = Eigen::VectorXd::Zero(shape.input_dim);
    for (int l = 0; l < L; ++l) {
        const int in = shape.layer_in(l);
        const int out = shape.layer_out(l);
        ConstWeightMap W(theta.data() + shape.weight_offset(l), out, in);
        ConstWeightMap Vw(v.data() + shape.weight_offset(l), out, in);
        ConstVecMap Vb(v.data() + shape.bias_offset(l), out);
        Rz[l] = Vw * t.act[l] + W * Ra[l] + Vb;
        if (l + 1 < L) {
            Ra[l + 1] = t.dact[l].cwiseProduct(Rz[l]);
        } else {
            Ra[l + 1] = Rz[l];
        }
    }

    // Softmax cross-entropy head: delta = p − e_y, R(delta) = J_softmax · Ru.
    const Eigen::VectorXd& p = t.probs;
    const Eigen::VectorXd& Ru = Ra[L];
    Eigen::VectorXd delta = p;
    delta[y] -= 1.0;
    Eigen::VectorXd Rdelta = p.cwiseProduct(Ru) - p * p.dot(Ru);

    out.resize(theta.size());
    for (int l = L - 1; l >= 0; --l) {
        const int in = shape.layer_in(l);
        const int out_w = shape.layer_out(l);
        WeightMap HvW(out.data() + shape.weight_offset(l), out_w, in);
        VecMap Hvb(out.data() + shape.bias_offset(l), out_w);
        HvW.noalias() = Rdelta * t.act[l].transpose();
        HvW.noalias() += delta * Ra[l].transpose();
        Hvb = Rdelta;
        if (l > 0) {
            ConstWeightMap W(theta.data() + shape.weight_offset(l), out_w, in);
            ConstWeightMap Vw(v.data() + shape.weight_offset(l), out_w, in);
            Eigen::VectorXd da = W.transpose() * delta;
            Eigen::VectorXd Rda = Vw.transpose() * delta + W.transpose() * Rdelta;
            Rdelta = t.dact[l - 1].cwiseProduct(Rda);
            if (shape.activation == Activation::tanh) {
                Rdelta += t.ddact[l - 1].cwiseProduct(Rz[l - 1]).cwiseProduct(da);
            }
            delta = t.dact[l - 1].cwiseProduct(da);
        }
    }
    if (shape.l2 != 0.0) out += shape.l2 * v;
}

}  // namespace unlearn::numerics
