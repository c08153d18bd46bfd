#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "unlearn/datasets.hpp"
#include "unlearn/evaluation.hpp"
#include "unlearn/models.hpp"
#include "unlearn/training.hpp"
#include "unlearn/unlearning.hpp"

namespace unlearn::experiment {

struct DatasetConfig {
    enum class Source { blobs, csv, idx };
    Source source = Source::blobs;
    // blobs
    int n = 0;
    int dim = 0;
    int classes = 0;
    double spread = 1.0;
    // csv
    std::string path;
    std::string label_column;
    // idx
    std::string images;
    std::string labels;
};

struct UnlearnConfig {
    std::optional<double> ratio;          // exactly one of ratio / indices
    std::vector<int> indices;
    std::optional<double> eta;            // default: train.lr / n_train
    unlearning::UnlearnMode mode = unlearning::UnlearnMode::iau;
};

struct OracleConfig {
    double damping = numerics::kDefaultDamping;
    double cg_tol = numerics::kDefaultCgTol;
    int cg_max_iter = 0;
    double newton_grad_tol = 1e-10;
};

struct EvalConfig {
    int shadows = 3;
    int pool_n = 0;  // blobs only; 0 → 2·n_train
    training::TrainConfig attack;
};

/// Full experiment description; every random draw descends from `seed`
/// through named streams (data/split/partition/train/shadow-i/attack/pool).
struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string output_dir = "out";
    DatasetConfig dataset;
    datasets::SplitFractions split;
    models::ModelSpec model;
    training::TrainConfig train;
    UnlearnConfig unlearn;
    OracleConfig oracle;
    EvalConfig evaluate;
    std::vector<std::uint64_t> bench_seeds;
};

/// Parses and schema-validates the JSON config; failures carry the offending
/// field path. The model's input_dim (and classes, if omitted) are filled in
/// from the dataset.
ExperimentConfig load_config(const std::filesystem::path& path);

/// Materialized data for one experiment seed: loaded/generated dataset,
/// train/val/test split, forget partition over the train rows, resolved eta.
struct PipelineData {
    datasets::Dataset full;
    datasets::Split split;
    datasets::Partition partition;
    double eta = 0.0;
};

PipelineData prepare_data(const ExperimentConfig& config, std::uint64_t master_seed);

/// Shadow pool: generated fresh for synthetic datasets, carved from the test
/// split otherwise.
datasets::Dataset shadow_pool(const ExperimentConfig& config, std::uint64_t master_seed,
                              const PipelineData& data);

enum class OracleKind { remove, add };

// Command entry points used by the CLI; each writes its artifacts under
// out_dir and returns 0 on success, 1 on validation errors, 2 on runtime
// errors. Wall-clock values go to *.timing.txt sidecars so every other
// output is byte-reproducible.
int cmd_train(const std::string& config_path, const std::string& out_dir);
int cmd_unlearn(const std::string& config_path, const std::string& checkpoint_path,
                const std::string& out_dir);
int cmd_evaluate(const std::string& config_path, const std::string& unlearned_path,
                 const std::string& gold_path, const std::string& out_dir);
int cmd_oracle(const std::string& config_path, const std::string& checkpoint_path,
               int sample_index, OracleKind kind, const std::string& out_dir);
int cmd_bench(const std::string& config_path, const std::string& out_dir);

}  // namespace unlearn::experiment
