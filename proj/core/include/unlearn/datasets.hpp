#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace unlearn::datasets {

using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Labeled sample collection; immutable after construction.
struct Dataset {
    FeatureMatrix features;  // n × d, one sample per row
    std::vector<int> labels;  // values in [0, classes)
    int classes = 0;
    std::string name;
    std::map<std::string, std::string> provenance;

    int size() const { return static_cast<int>(features.rows()); }
    int dim() const { return static_cast<int>(features.cols()); }
    const double* row(int i) const { return features.data() + static_cast<std::ptrdiff_t>(i) * dim(); }
};

/// One labeled sample, detached from any dataset.
struct Sample {
    Eigen::VectorXd features;
    int label = 0;
};

/// Checks row/label counts, label range, and feature finiteness.
void validate(const Dataset& ds);

Sample sample_at(const Dataset& ds, int row);
Dataset subset(const Dataset& ds, std::span<const int> rows, const std::string& name_suffix);
Dataset with_appended(const Dataset& ds, const Sample& sample);

/// Gaussian blobs around class centers placed on a fixed lattice
/// (spacing 4.0, coordinates are base-B digits of the class index).
/// Labels are assigned round-robin, so classes are balanced within ±1.
Dataset gen_blobs(int n, int dim, int classes, double spread, std::uint64_t seed);

/// Numeric CSV with a header row; the named label column is removed from the
/// features and its values mapped to dense 0..Y−1 in first-appearance order.
Dataset load_csv(const std::filesystem::path& path, const std::string& label_column);

/// Inverse of load_csv for datasets that already carry dense labels.
void save_csv(const Dataset& ds, const std::filesystem::path& path,
              const std::string& label_column = "label");

/// IDX image/label pair (big-endian, magics 0x00000803 / 0x00000801).
/// Pixels are scaled to [0,1] and rows flattened to d = rows·cols.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path);

struct SplitFractions {
    double train = 0.6;
    double val = 0.2;
    double test = 0.2;
};

struct Split {
    Dataset train;
    Dataset val;
    Dataset test;
};

/// Deterministic shuffled split; fractions must be positive and sum to 1.
Split split(const Dataset& ds, const SplitFractions& fractions, std::uint64_t seed);

/// Exact two-set cover of train indices [0, total).
struct Partition {
    std::vector<int> forget_indices;  // sorted, unique
    std::vector<int> remain_indices;  // sorted complement

    int total() const {
        return static_cast<int>(forget_indices.size() + remain_indices.size());
    }
};

/// |forget| = round(ratio·n), rounding half away from zero, at least 1 for
/// any ratio > 0. Requires 0 < ratio < 1.
Partition make_partition(int n_train, double ratio, std::uint64_t seed);

/// Partition from explicit forget indices (validated in-range, de-duplicated).
Partition make_partition(int n_train, std::span<const int> forget_indices);

}  // namespace unlearn::datasets
