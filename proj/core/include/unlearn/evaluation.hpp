#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unlearn/datasets.hpp"
#include "unlearn/models.hpp"
#include "unlearn/training.hpp"

namespace unlearn::evaluation {

using models::Checkpoint;
using models::ModelSpec;
using numerics::ParamVector;

/// Membership-inference attack classifier: two hidden layers of widths 256
/// and 128, ReLU, dropout 0.5 after each hidden layer, single sigmoid output.
/// Dropout is active during training only.
struct AttackModelSpec {
    std::array<int, 2> hidden{256, 128};
    double dropout = 0.5;
};

struct ShadowModel {
    Checkpoint checkpoint;
    std::vector<int> member_rows;      // pool rows the shadow trained on
    std::vector<int> non_member_rows;  // complement
};

/// Trains k shadow models with the target's architecture on random halves of
/// the pool. Each shadow's training half is its member set.
std::vector<ShadowModel> train_shadows(const ModelSpec& spec, const datasets::Dataset& pool,
                                       int k, const training::TrainConfig& config);

/// One row per (shadow, pool point): features are the shadow's posterior
/// sorted descending, label 1 for members. Balanced by construction.
struct AttackDataset {
    datasets::FeatureMatrix features;
    std::vector<int> labels;

    int size() const { return static_cast<int>(features.rows()); }
    int dim() const { return static_cast<int>(features.cols()); }
};

AttackDataset build_attack_dataset(std::span<const ShadowModel> shadows,
                                   const datasets::Dataset& pool);

/// Sorted-descending posterior, the attack feature transform.
Eigen::VectorXd attack_features(const Eigen::VectorXd& posterior);

struct AttackModel {
    AttackModelSpec spec;
    int input_dim = 0;
    ParamVector params;
    double heldout_accuracy = 0.0;  // on the carved-out attack validation rows
};

/// Trains the attack classifier with the shared SGD epoch driver; dropout
/// masks are drawn from the seed, so the result is deterministic.
AttackModel train_attack(const AttackDataset& attack_set, const AttackModelSpec& spec,
                         std::uint64_t seed, const training::TrainConfig& config);

/// Membership probability for one posterior vector (inference: no dropout).
double attack_member_probability(const AttackModel& attack, const Eigen::VectorXd& posterior);

/// Percentage of forget-set points the attack classifies as members, in [0, 100].
double attack_success_rate(const AttackModel& attack, const Checkpoint& target,
                           const datasets::Dataset& forget_set);

/// Per-strategy unlearning scoreboard. mu and ue are absolute gaps in
/// percentage points against the gold (retrained) model; avg_rank is filled
/// by assign_avg_ranks when at least two strategies are compared.
struct MetricsReport {
    std::string strategy;
    double mu = 0.0;
    double time_ms = 0.0;
    double ue = 0.0;
    std::optional<double> avg_rank;
    std::map<std::string, std::string> provenance;
};

MetricsReport compute_metrics(const Checkpoint& unlearned, const Checkpoint& gold,
                              const datasets::Dataset& test_set,
                              const datasets::Dataset& forget_set, const AttackModel* attack,
                              double time_ms);

/// Competition ranks (ties share the minimum, 0-based, lower metric better)
/// over mu, time and ue; avg_rank is the mean of the three.
void assign_avg_ranks(std::span<MetricsReport> reports);

void save_metrics_txt(const MetricsReport& report, const std::filesystem::path& path);
void save_metrics_csv(std::span<const MetricsReport> reports, const std::filesystem::path& path,
                      bool include_time = true);

}  // namespace unlearn::evaluation
