#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "unlearn/datasets.hpp"
#include "unlearn/numerics.hpp"

namespace unlearn::models {

using numerics::ParamVector;

enum class ModelKind { logistic, mlp };

/// Architecture description. hidden must be empty iff kind == logistic.
struct ModelSpec {
    ModelKind kind = ModelKind::logistic;
    int input_dim = 0;
    std::vector<int> hidden;
    int classes = 2;
    numerics::Activation activation = numerics::Activation::relu;
    double l2 = 0.0;
};

void validate(const ModelSpec& spec);
bool operator==(const ModelSpec& a, const ModelSpec& b);
int param_count(const ModelSpec& spec);
numerics::NetShape net_shape(const ModelSpec& spec);

/// Deterministic init: weights uniform on ±sqrt(6/(fan_in+fan_out)) drawn
/// layer by layer in row-major order, biases zero.
ParamVector init_params(const ModelSpec& spec, std::uint64_t seed);

/// Softmax class probabilities for one input.
Eigen::VectorXd forward(const ModelSpec& spec, const ParamVector& theta,
                        const Eigen::VectorXd& x);

/// Mean cross-entropy over the rows plus (l2/2)·‖θ‖². Empty rows spans mean
/// the whole dataset.
double loss(const ModelSpec& spec, const ParamVector& theta, const datasets::Dataset& ds,
            std::span<const int> rows = {});

double accuracy(const ModelSpec& spec, const ParamVector& theta, const datasets::Dataset& ds);

/// Per-sample loss over a dataset (optionally restricted to a row subset),
/// with exact gradient and Hessian-vector kernels. Aggregate value is the
/// MEAN over samples; influence formulas carry the 1/n factor explicitly.
class BatchLoss final : public numerics::PerSampleFunction {
public:
    BatchLoss(const ModelSpec& spec, const datasets::Dataset& ds);
    BatchLoss(const ModelSpec& spec, const datasets::Dataset& ds, std::vector<int> rows);

    int dim() const override { return shape_.param_count(); }
    int sample_count() const override { return static_cast<int>(rows_.size()); }
    double sample_value(const ParamVector& theta, int k) const override;
    double sample_value_and_grad(const ParamVector& theta, int k,
                                 ParamVector& grad) const override;
    void sample_hvp(const ParamVector& theta, int k, const ParamVector& v,
                    ParamVector& out) const override;

    const numerics::NetShape& shape() const { return shape_; }

private:
    numerics::NetShape shape_;
    const datasets::Dataset* ds_;
    std::vector<int> rows_;
};

/// Trained model snapshot. Round-trips bit-exactly through the versioned
/// binary format (see docs/file-formats.md).
struct Checkpoint {
    ModelSpec spec;
    ParamVector params;
    std::map<std::string, std::string> train_meta;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace unlearn::models
