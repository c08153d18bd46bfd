#include "unlearn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <numeric>

#include "unlearn/io_util.hpp"

namespace unlearn::training {

namespace {

using Clock = std::chrono::steady_clock;
constexpr double kNormEps = 1e-12;  // guards the ‖g‖ = 0 singular point of the GR term

double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

}  // namespace

void validate(const TrainConfig& config) {
    if (config.lr <= 0.0) fail(ErrorCode::invariant_violation, "learning rate must be positive");
    if (config.batch_size < 1) fail(ErrorCode::invariant_violation, "batch_size must be >= 1");
    if (config.max_epochs < 1) fail(ErrorCode::invariant_violation, "max_epochs must be >= 1");
    if (config.patience < 0 || config.patience > config.max_epochs) {
        fail(ErrorCode::invariant_violation, "patience must lie in [0, max_epochs]");
    }
    if (config.alpha < 0.0) fail(ErrorCode::invariant_violation, "alpha must be >= 0");
    if (config.val_fraction < 0.0 || config.val_fraction >= 1.0) {
        fail(ErrorCode::invariant_violation, "val_fraction must lie in [0, 1)");
    }
}

double gr_loss(const ModelSpec& spec, const ParamVector& theta, const datasets::Dataset& ds,
               int row, double alpha) {
    if (alpha < 0.0) fail(ErrorCode::invariant_violation, "alpha must be >= 0");
    const numerics::NetShape shape = models::net_shape(spec);
    const double base = numerics::net_loss(shape, theta, ds.row(row), ds.labels[row]);
    if (alpha == 0.0) return base;
    ParamVector g(shape.param_count());
    numerics::net_loss_grad(shape, theta, ds.row(row), ds.labels[row], g);
    const double value = base + alpha * g.norm();
    if (!std::isfinite(value)) {
        fail(ErrorCode::non_finite_loss, "gr_loss at row " + std::to_string(row));
    }
    return value;
}

double gr_loss_grad(const ModelSpec& spec, const ParamVector& theta, const datasets::Dataset& ds,
                    int row, double alpha, ParamVector& grad) {
    if (alpha < 0.0) fail(ErrorCode::invariant_violation, "alpha must be >= 0");
    const numerics::NetShape shape = models::net_shape(spec);
    const double base =
        numerics::net_loss_grad(shape, theta, ds.row(row), ds.labels[row], grad);
    if (alpha == 0.0) return base;

    const double g_norm = grad.norm();
    ParamVector direction = grad / std::max(g_norm, kNormEps);
    ParamVector hv(shape.param_count());
    numerics::net_hvp(shape, theta, ds.row(row), ds.labels[row], direction, hv);
    grad += alpha * hv;
    const double value = base + alpha * g_norm;
    if (!std::isfinite(value) || !grad.allFinite()) {
        fail(ErrorCode::non_finite_loss, "gr_loss gradient at row " + std::to_string(row));
    }
    return value;
}

EpochDriverResult run_epochs(const EpochDriverConfig& config, rng::Engine& shuffle_engine,
                             const EpochHooks& hooks) {
    EpochDriverResult result;
    std::vector<int> order(config.n_samples);
    std::iota(order.begin(), order.end(), 0);

    double best_metric = -std::numeric_limits<double>::infinity();
    const bool early_stop = config.has_validation && config.patience > 0;

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_engine);
        double objective_sum = 0.0;
        for (int start = 0; start < config.n_samples; start += config.batch_size) {
            const int len = std::min(config.batch_size, config.n_samples - start);
            const std::span<const int> batch(order.data() + start, static_cast<std::size_t>(len));
            const double batch_objective = hooks.step(batch);
            if (!std::isfinite(batch_objective)) {
                fail(ErrorCode::diverged, "objective became non-finite in epoch " +
                                              std::to_string(epoch));
            }
            objective_sum += batch_objective * len;
        }
        result.objective.push_back(objective_sum / config.n_samples);
        result.stopped_epoch = epoch;

        if (config.has_validation) {
            const double metric = hooks.evaluate();
            result.val_metric.push_back(metric);
            if (metric > best_metric) {  // ties keep the earlier epoch
                best_metric = metric;
                result.best_epoch = epoch;
                hooks.snapshot_best();
            } else if (early_stop && epoch - result.best_epoch >= config.patience) {
                break;
            }
        } else {
            result.best_epoch = epoch;
        }
    }
    if (early_stop && result.best_epoch > 0) hooks.restore_best();
    return result;
}

std::pair<models::Checkpoint, TrainHistory> train(const ModelSpec& spec,
                                                  const datasets::Dataset& train_set,
                                                  const TrainConfig& config,
                                                  const datasets::Dataset* val_set) {
    validate(config);
    models::validate(spec);
    datasets::validate(train_set);
    const auto start = Clock::now();

    // Carve a validation subset only when none is supplied explicitly.
    datasets::Dataset carved_fit;
    datasets::Dataset carved_val;
    const datasets::Dataset* fit = &train_set;
    const datasets::Dataset* val = val_set;
    if (val == nullptr && config.val_fraction > 0.0) {
        const int n = train_set.size();
        const int n_val = std::max(1, static_cast<int>(std::lround(config.val_fraction * n)));
        if (n_val >= n) fail(ErrorCode::invariant_violation, "val_fraction leaves no fit rows");
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        auto carve_engine = rng::make_engine(rng::derive_stream(config.seed, "val-split"));
        std::shuffle(order.begin(), order.end(), carve_engine);
        const std::span<const int> all(order);
        carved_val = datasets::subset(train_set, all.subspan(0, n_val), "/val");
        carved_fit = datasets::subset(train_set, all.subspan(n_val, n - n_val), "/fit");
        fit = &carved_fit;
        val = &carved_val;
    }

    ParamVector theta = models::init_params(spec, rng::derive_stream(config.seed, "init"));
    ParamVector best_theta = theta;
    const int p = static_cast<int>(theta.size());
    ParamVector batch_grad(p);
    ParamVector sample_grad(p);

    EpochDriverConfig driver;
    driver.n_samples = fit->size();
    driver.batch_size = config.batch_size;
    driver.max_epochs = config.max_epochs;
    driver.patience = config.patience;
    driver.has_validation = (val != nullptr);

    EpochHooks hooks;
    hooks.step = [&](std::span<const int> batch) {
        batch_grad.setZero();
        double objective = 0.0;
        for (int row : batch) {
            objective += gr_loss_grad(spec, theta, *fit, row, config.alpha, sample_grad);
            batch_grad += sample_grad;
        }
        const double inv = 1.0 / static_cast<double>(batch.size());
        theta -= config.lr * inv * batch_grad;
        numerics::count_param_update();
        if (!theta.allFinite()) fail(ErrorCode::diverged, "parameters became non-finite");
        return objective * inv;
    };
    hooks.evaluate = [&]() { return models::accuracy(spec, theta, *val); };
    hooks.snapshot_best = [&]() { best_theta = theta; };
    hooks.restore_best = [&]() { theta = best_theta; };

    auto shuffle_engine = rng::make_engine(rng::derive_stream(config.seed, "shuffle"));
    EpochDriverResult epochs = run_epochs(driver, shuffle_engine, hooks);

    TrainHistory history;
    history.train_loss = std::move(epochs.objective);
    history.val_acc = std::move(epochs.val_metric);
    history.stopped_epoch = epochs.stopped_epoch;
    history.best_epoch = epochs.best_epoch;

    models::BatchLoss full_loss(spec, train_set);
    ParamVector mean_grad(p);
    full_loss.value_and_grad(theta, mean_grad);
    history.final_grad_norm = mean_grad.norm();
    history.wall_ms = elapsed_ms(start);

    models::Checkpoint ckpt;
    ckpt.spec = spec;
    ckpt.params = std::move(theta);
    ckpt.train_meta["seed"] = std::to_string(config.seed);
    ckpt.train_meta["lr"] = io::format_double(config.lr);
    ckpt.train_meta["alpha"] = io::format_double(config.alpha);
    ckpt.train_meta["epochs"] = std::to_string(history.stopped_epoch);
    ckpt.train_meta["dataset"] = train_set.name;
    return {std::move(ckpt), std::move(history)};
}

ParamVector newton_fit(const ModelSpec& spec, const datasets::Dataset& ds, ParamVector init,
                       const NewtonOptions& options) {
    models::validate(spec);
    datasets::validate(ds);
    auto loss = std::make_shared<models::BatchLoss>(spec, ds);
    ParamVector theta = std::move(init);
    ParamVector grad(theta.size());

    for (int it = 0; it < options.max_iter; ++it) {
        const double value = loss->value_and_grad(theta, grad);
        if (!std::isfinite(value)) fail(ErrorCode::diverged, "newton_fit: non-finite loss");
        const double grad_norm = grad.norm();
        if (grad_norm <= options.grad_tol) return theta;

        numerics::HessianOperator H = numerics::make_hessian_operator(
            loss, theta, options.damping, "newton_fit(" + ds.name + ")");
        numerics::CgResult step = numerics::cg_solve(H, grad, options.cg_tol, 0);

        // Inside the quadratic-convergence basin the predicted decrease falls
        // below the resolution of the loss value, so Armijo cannot measure
        // it; take the full Newton step there.
        if (grad_norm <= 1e-6) {
            theta -= step.x;
            numerics::count_param_update();
            continue;
        }

        // Armijo backtracking on the mean loss.
        const double slope = grad.dot(step.x);
        double t = 1.0;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            const double candidate_value = loss->value(theta - t * step.x);
            if (candidate_value <= value - 1e-4 * t * slope) {
                theta -= t * step.x;
                numerics::count_param_update();
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) {
            fail(ErrorCode::no_convergence, "newton_fit: line search failed at iteration " +
                                                std::to_string(it));
        }
    }
    loss->value_and_grad(theta, grad);
    if (grad.norm() <= options.grad_tol) return theta;
    fail(ErrorCode::no_convergence, "newton_fit: gradient norm " +
                                        io::format_double(grad.norm()) + " after " +
                                        std::to_string(options.max_iter) + " iterations");
}

GradNormSummary grad_norm_stats(const ModelSpec& spec, const ParamVector& theta,
                                const datasets::Dataset& ds) {
    models::BatchLoss loss(spec, ds);
    const int n = loss.sample_count();
    GradNormSummary summary;
    summary.norms.resize(static_cast<std::size_t>(n));
    ParamVector g(theta.size());
    for (int k = 0; k < n; ++k) {
        loss.sample_value_and_grad(theta, k, g);
        summary.norms[static_cast<std::size_t>(k)] = g.norm();
    }

    std::vector<double> sorted = summary.norms;
    std::sort(sorted.begin(), sorted.end());
    summary.min = sorted.front();
    summary.max = sorted.back();
    summary.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / n;
    summary.median = (n % 2 == 1) ? sorted[static_cast<std::size_t>(n / 2)]
                                  : 0.5 * (sorted[static_cast<std::size_t>(n / 2 - 1)] +
                                           sorted[static_cast<std::size_t>(n / 2)]);
    const int rank = std::max(1, static_cast<int>(std::ceil(0.95 * n)));
    summary.p95 = sorted[static_cast<std::size_t>(rank - 1)];
    return summary;
}

void save_norm_histogram_csv(const GradNormSummary& summary, int bins,
                             const std::filesystem::path& path) {
    if (bins < 1) fail(ErrorCode::invariant_violation, "histogram needs at least one bin");
    const double lo = summary.min;
    const double hi = std::max(summary.max, lo + 1e-300);
    const double width = (hi - lo) / bins;
    std::vector<int> counts(static_cast<std::size_t>(bins), 0);
    for (double v : summary.norms) {
        int b = static_cast<int>((v - lo) / width);
        b = std::clamp(b, 0, bins - 1);
        ++counts[static_cast<std::size_t>(b)];
    }
    std::string out = "bin_lo,bin_hi,count\n";
    for (int b = 0; b < bins; ++b) {
        out += io::format_double(lo + b * width) + "," + io::format_double(lo + (b + 1) * width) +
               "," + std::to_string(counts[static_cast<std::size_t>(b)]) + "\n";
    }
    io::atomic_write(path, out);
}

void save_history_csv(const TrainHistory& history, const std::filesystem::path& path) {
    std::string out = "epoch,train_loss,val_acc\n";
    for (std::size_t e = 0; e < history.train_loss.size(); ++e) {
        out += std::to_string(e + 1) + "," + io::format_double(history.train_loss[e]) + ",";
        if (e < history.val_acc.size()) out += io::format_double(history.val_acc[e]);
        out += '\n';
    }
    io::atomic_write(path, out);
}

}  // namespace unlearn::training
