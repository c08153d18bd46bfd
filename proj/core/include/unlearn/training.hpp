#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "unlearn/datasets.hpp"
#include "unlearn/models.hpp"
#include "unlearn/rng.hpp"

namespace unlearn::training {

using models::ModelSpec;
using numerics::ParamVector;

struct TrainConfig {
    double lr = 0.1;
    int batch_size = 32;
    int max_epochs = 100;
    int patience = 10;       // consecutive epochs without val improvement; 0 disables
    double alpha = 0.0;      // gradient-restriction coefficient; 0 recovers the plain loss
    std::uint64_t seed = 0;
    double val_fraction = 0.2;  // used only when no explicit validation set is supplied
};

void validate(const TrainConfig& config);

struct TrainHistory {
    std::vector<double> train_loss;  // objective per epoch (GR loss when alpha > 0)
    std::vector<double> val_acc;     // empty when training without validation data
    int stopped_epoch = 0;
    int best_epoch = 0;
    double wall_ms = 0.0;
    double final_grad_norm = 0.0;  // ‖mean full-data gradient‖ at the returned params
};

void save_history_csv(const TrainHistory& history, const std::filesystem::path& path);

/// Per-sample gradient-restricted loss  ℓ(z,θ) + α·‖∇_θ ℓ(z,θ)‖₂.
double gr_loss(const ModelSpec& spec, const ParamVector& theta, const datasets::Dataset& ds,
               int row, double alpha);

/// GR loss and its exact gradient  ∇ℓ + α·H_z·g/max(‖g‖, ε) with g = ∇ℓ;
/// costs one backprop plus one Hessian-vector product per sample (the HVP is
/// skipped entirely when alpha == 0). Returns the GR loss value.
double gr_loss_grad(const ModelSpec& spec, const ParamVector& theta, const datasets::Dataset& ds,
                    int row, double alpha, ParamVector& grad);

/// Mini-batch SGD with optional GR loss and early stopping on validation
/// accuracy (best checkpoint restored on stop). Deterministic given
/// config.seed. With no validation data, runs max_epochs and keeps the final
/// parameters.
std::pair<models::Checkpoint, TrainHistory> train(const ModelSpec& spec,
                                                  const datasets::Dataset& train_set,
                                                  const TrainConfig& config,
                                                  const datasets::Dataset* val_set = nullptr);

/// Full-batch damped Newton with Armijo backtracking, for oracle-grade fits
/// of strictly convex specs (logistic with l2 > 0). Iterates until
/// ‖mean gradient‖ ≤ grad_tol.
struct NewtonOptions {
    double grad_tol = 1e-10;
    int max_iter = 200;
    double cg_tol = 1e-12;
    double damping = 0.0;  // the l2 term already makes convex losses PD
};

ParamVector newton_fit(const ModelSpec& spec, const datasets::Dataset& ds, ParamVector init,
                       const NewtonOptions& options = {});

/// Summary of per-sample gradient L2 norms at theta.
struct GradNormSummary {
    double min = 0.0;
    double median = 0.0;
    double mean = 0.0;
    double max = 0.0;
    double p95 = 0.0;
    std::vector<double> norms;  // per-sample, dataset order
};

GradNormSummary grad_norm_stats(const ModelSpec& spec, const ParamVector& theta,
                                const datasets::Dataset& ds);

/// Histogram export (bin_lo,bin_hi,count) for plotting.
void save_norm_histogram_csv(const GradNormSummary& summary, int bins,
                             const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Generic epoch driver, shared by the model trainer and the attack-model
// trainer so both get identical shuffling and early-stop semantics.
// ---------------------------------------------------------------------------

struct EpochDriverConfig {
    int n_samples = 0;
    int batch_size = 1;
    int max_epochs = 1;
    int patience = 0;    // 0 disables early stopping
    bool has_validation = false;
};

struct EpochHooks {
    // Applies one minibatch update; returns the mean objective over the batch.
    std::function<double(std::span<const int>)> step;
    // Validation metric, higher is better. Only called when has_validation.
    std::function<double()> evaluate;
    std::function<void()> snapshot_best;
    std::function<void()> restore_best;
};

struct EpochDriverResult {
    std::vector<double> objective;
    std::vector<double> val_metric;
    int stopped_epoch = 0;
    int best_epoch = 0;
};

EpochDriverResult run_epochs(const EpochDriverConfig& config, rng::Engine& shuffle_engine,
                             const EpochHooks& hooks);

}  // namespace unlearn::training
