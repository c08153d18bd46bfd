#pragma once

#include <optional>
#include <span>
#include <string>

#include "unlearn/datasets.hpp"
#include "unlearn/models.hpp"
#include "unlearn/training.hpp"

namespace unlearn::unlearning {

using models::Checkpoint;
using numerics::ParamVector;

enum class UnlearnMode { iau, incremental_only };

const char* mode_name(UnlearnMode mode);
UnlearnMode parse_mode(const std::string& name);

struct UnlearnRequest {
    datasets::Partition partition;
    double eta = 0.0;  // must be positive
    UnlearnMode mode = UnlearnMode::iau;
};

/// Conventional step size: training lr scaled by 1/n so the update magnitude
/// is invariant to dataset size (the update uses gradient SUMS).
double default_eta(double lr, int n_train);

struct UnlearnTelemetry {
    double elapsed_ms = 0.0;
    numerics::OpCounters counters;  // work done inside the operation
};

struct UnlearnResult {
    Checkpoint checkpoint;
    UnlearnTelemetry telemetry;
};

/// Single-update core:  θ − η·(Σ_remain ∇ℓᵢ − Σ_forget ∇ℓⱼ), every gradient
/// evaluated at the input θ. Exactly one parameter write; never iterates.
ParamVector iau_step(const numerics::PerSampleFunction& loss, const ParamVector& theta,
                     const datasets::Partition& partition, double eta);

/// Ablation without the remain-set correction:  θ + η·Σ_forget ∇ℓⱼ.
ParamVector incremental_step(const numerics::PerSampleFunction& loss, const ParamVector& theta,
                             std::span<const int> forget_rows, double eta);

UnlearnResult iau_unlearn(const Checkpoint& ckpt, const datasets::Dataset& train_set,
                          const UnlearnRequest& request);

UnlearnResult incremental_unlearn(const Checkpoint& ckpt, const datasets::Dataset& train_set,
                                  const UnlearnRequest& request);

/// Inverse-Hessian-vector influence query. The solve runs matrix-free CG on
/// the damped mean-loss Hessian at the checkpoint parameters.
struct InfluenceQuery {
    std::optional<double> weight;  // upweight magnitude; defaults to 1/n
    double damping = numerics::kDefaultDamping;
    double cg_tol = numerics::kDefaultCgTol;
    int cg_max_iter = 0;  // 0 → 10·p
};

/// Predicted parameters after removing one training point:
///   θ* + (1/n)·(H+λI)⁻¹ ∇ℓ(z₋, θ*).
ParamVector influence_remove(const Checkpoint& ckpt, const datasets::Dataset& train_set,
                             int forget_index, const InfluenceQuery& query);

/// Predicted parameters after adding one point:
///   θ* − (1/n)·(H+λI)⁻¹ ∇ℓ(z₊, θ*).
ParamVector influence_add_predict(const Checkpoint& ckpt, const datasets::Dataset& train_set,
                                  const datasets::Sample& z_plus, const InfluenceQuery& query);

/// From-scratch retraining on the remaining data, the gold reference.
/// SGD mode delegates to training::train; newton mode fits convex specs to
/// ‖mean gradient‖ ≤ grad_tol for oracle-grade comparisons.
struct RetrainOptions {
    bool newton = false;
    training::NewtonOptions newton_opts;
};

struct RetrainResult {
    Checkpoint checkpoint;
    training::TrainHistory history;  // empty in newton mode
    double elapsed_ms = 0.0;
};

RetrainResult retrain_oracle(const models::ModelSpec& spec, const datasets::Dataset& remaining,
                             const training::TrainConfig& config,
                             const RetrainOptions& options = {},
                             const datasets::Dataset* val_set = nullptr);

}  // namespace unlearn::unlearning
