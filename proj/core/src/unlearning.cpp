#include "unlearn/unlearning.hpp"

#include <chrono>
#include <cmath>
#include <memory>

#include "unlearn/io_util.hpp"
#include "unlearn/rng.hpp"

namespace unlearn::unlearning {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

void check_request(const UnlearnRequest& request, int n_train) {
    if (request.partition.forget_indices.empty()) {
        fail(ErrorCode::empty_forget_set, "unlearn request has an empty forget set");
    }
    if (request.eta <= 0.0) {
        fail(ErrorCode::bad_step, "unlearning step size must be positive, got " +
                                      io::format_double(request.eta));
    }
    if (request.partition.total() != n_train) {
        fail(ErrorCode::invariant_violation,
             "partition covers " + std::to_string(request.partition.total()) +
                 " indices, training set has " + std::to_string(n_train));
    }
}

models::Checkpoint unlearned_checkpoint(const models::Checkpoint& original, ParamVector params,
                                        const UnlearnRequest& request) {
    models::Checkpoint out;
    out.spec = original.spec;
    out.params = std::move(params);
    out.train_meta = original.train_meta;
    out.train_meta["unlearn_mode"] = mode_name(request.mode);
    out.train_meta["unlearn_eta"] = io::format_double(request.eta);
    out.train_meta["forget_count"] = std::to_string(request.partition.forget_indices.size());
    return out;
}

}  // namespace

const char* mode_name(UnlearnMode mode) {
    return mode == UnlearnMode::iau ? "iau" : "incremental_only";
}

UnlearnMode parse_mode(const std::string& name) {
    if (name == "iau") return UnlearnMode::iau;
    if (name == "incremental_only") return UnlearnMode::incremental_only;
    fail(ErrorCode::bad_config, "unknown unlearn mode '" + name + "'");
}

double default_eta(double lr, int n_train) {
    if (n_train < 1) fail(ErrorCode::empty_dataset, "default_eta over an empty training set");
    return lr / static_cast<double>(n_train);
}

ParamVector iau_step(const numerics::PerSampleFunction& loss, const ParamVector& theta,
                     const datasets::Partition& partition, double eta) {
    if (partition.forget_indices.empty()) {
        fail(ErrorCode::empty_forget_set, "iau_step: empty forget set");
    }
    if (eta <= 0.0) fail(ErrorCode::bad_step, "iau_step: eta must be positive");
    if (partition.total() != loss.sample_count()) {
        fail(ErrorCode::invariant_violation, "partition does not cover the batch");
    }

    // One full pass; both gradient sums taken at the input theta.
    ParamVector grad_remain = ParamVector::Zero(theta.size());
    ParamVector grad_forget = ParamVector::Zero(theta.size());
    ParamVector g(theta.size());
    std::size_t f = 0;
    const auto& forget = partition.forget_indices;
    for (int k = 0; k < loss.sample_count(); ++k) {
        loss.sample_value_and_grad(theta, k, g);
        if (f < forget.size() && forget[f] == k) {
            grad_forget += g;
            ++f;
        } else {
            grad_remain += g;
        }
    }

    ParamVector updated = theta - eta * (grad_remain - grad_forget);
    numerics::count_param_update();
    if (!updated.allFinite()) {
        fail(ErrorCode::non_finite_update, "iau_step produced non-finite parameters");
    }
    return updated;
}

ParamVector incremental_step(const numerics::PerSampleFunction& loss, const ParamVector& theta,
                             std::span<const int> forget_rows, double eta) {
    if (forget_rows.empty()) fail(ErrorCode::empty_forget_set, "incremental_step: empty forget set");
    if (eta <= 0.0) fail(ErrorCode::bad_step, "incremental_step: eta must be positive");

    ParamVector grad_forget = ParamVector::Zero(theta.size());
    ParamVector g(theta.size());
    for (int k : forget_rows) {
        loss.sample_value_and_grad(theta, k, g);
        grad_forget += g;
    }

    ParamVector updated = theta + eta * grad_forget;
    numerics::count_param_update();
    if (!updated.allFinite()) {
        fail(ErrorCode::non_finite_update, "incremental_step produced non-finite parameters");
    }
    return updated;
}

UnlearnResult iau_unlearn(const Checkpoint& ckpt, const datasets::Dataset& train_set,
                          const UnlearnRequest& request) {
    datasets::validate(train_set);
    check_request(request, train_set.size());
    models::BatchLoss loss(ckpt.spec, train_set);

    numerics::CounterScope scope;
    const auto start = Clock::now();
    ParamVector updated = iau_step(loss, ckpt.params, request.partition, request.eta);
    UnlearnResult result;
    result.telemetry.elapsed_ms = elapsed_ms(start);
    result.telemetry.counters = scope.counters();
    result.checkpoint = unlearned_checkpoint(ckpt, std::move(updated), request);
    return result;
}

UnlearnResult incremental_unlearn(const Checkpoint& ckpt, const datasets::Dataset& train_set,
                                  const UnlearnRequest& request) {
    datasets::validate(train_set);
    check_request(request, train_set.size());
    models::BatchLoss loss(ckpt.spec, train_set);

    numerics::CounterScope scope;
    const auto start = Clock::now();
    ParamVector updated =
        incremental_step(loss, ckpt.params, request.partition.forget_indices, request.eta);
    UnlearnResult result;
    result.telemetry.elapsed_ms = elapsed_ms(start);
    result.telemetry.counters = scope.counters();
    result.checkpoint = unlearned_checkpoint(ckpt, std::move(updated), request);
    return result;
}

namespace {

// Shared solve for both influence directions: x = (H+λI)⁻¹ g at θ*.
ParamVector influence_solve(const Checkpoint& ckpt, const datasets::Dataset& train_set,
                            const ParamVector& sample_grad, const InfluenceQuery& query) {
    auto loss = std::make_shared<models::BatchLoss>(ckpt.spec, train_set);
    numerics::HessianOperator H = numerics::make_hessian_operator(
        loss, ckpt.params, query.damping,
        "influence(" + train_set.name + ", p=" + std::to_string(ckpt.params.size()) + ")");
    numerics::CgResult solved =
        numerics::cg_solve(H, sample_grad, query.cg_tol, query.cg_max_iter);
    return solved.x;
}

}  // namespace

ParamVector influence_remove(const Checkpoint& ckpt, const datasets::Dataset& train_set,
                             int forget_index, const InfluenceQuery& query) {
    datasets::validate(train_set);
    if (forget_index < 0 || forget_index >= train_set.size()) {
        fail(ErrorCode::invariant_violation,
             "forget index " + std::to_string(forget_index) + " outside dataset");
    }
    const numerics::NetShape shape = models::net_shape(ckpt.spec);
    ParamVector g(shape.param_count());
    numerics::net_loss_grad(shape, ckpt.params, train_set.row(forget_index),
                            train_set.labels[forget_index], g);
    const double weight = query.weight.value_or(1.0 / train_set.size());
    if (g.norm() == 0.0) return ckpt.params;  // zero influence
    return ckpt.params + weight * influence_solve(ckpt, train_set, g, query);
}

ParamVector influence_add_predict(const Checkpoint& ckpt, const datasets::Dataset& train_set,
                                  const datasets::Sample& z_plus, const InfluenceQuery& query) {
    datasets::validate(train_set);
    const numerics::NetShape shape = models::net_shape(ckpt.spec);
    if (z_plus.features.size() != ckpt.spec.input_dim) {
        fail(ErrorCode::dimension_mismatch, "added sample has dim " +
                                                std::to_string(z_plus.features.size()) +
                                                ", model expects " +
                                                std::to_string(ckpt.spec.input_dim));
    }
    ParamVector g(shape.param_count());
    numerics::net_loss_grad(shape, ckpt.params, z_plus.features.data(), z_plus.label, g);
    const double weight = query.weight.value_or(1.0 / train_set.size());
    if (g.norm() == 0.0) return ckpt.params;
    return ckpt.params - weight * influence_solve(ckpt, train_set, g, query);
}

RetrainResult retrain_oracle(const models::ModelSpec& spec, const datasets::Dataset& remaining,
                             const training::TrainConfig& config, const RetrainOptions& options,
                             const datasets::Dataset* val_set) {
    datasets::validate(remaining);
    RetrainResult result;
    const auto start = Clock::now();
    if (options.newton) {
        ParamVector init =
            models::init_params(spec, rng::derive_stream(config.seed, "init"));
        ParamVector theta = training::newton_fit(spec, remaining, std::move(init),
                                                 options.newton_opts);
        result.elapsed_ms = elapsed_ms(start);
        result.checkpoint.spec = spec;
        result.checkpoint.params = std::move(theta);
        result.checkpoint.train_meta["seed"] = std::to_string(config.seed);
        result.checkpoint.train_meta["optimizer"] = "newton";
        result.checkpoint.train_meta["dataset"] = remaining.name;
    } else {
        auto [ckpt, history] = training::train(spec, remaining, config, val_set);
        result.elapsed_ms = elapsed_ms(start);
        result.checkpoint = std::move(ckpt);
        result.history = std::move(history);
    }
    return result;
}

}  // namespace unlearn::unlearning
