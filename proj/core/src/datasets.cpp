#include "unlearn/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "unlearn/errors.hpp"
#include "unlearn/io_util.hpp"
#include "unlearn/rng.hpp"

namespace unlearn::datasets {

void validate(const Dataset& ds) {
    if (ds.size() < 1) fail(ErrorCode::empty_dataset, "dataset '" + ds.name + "' has no rows");
    if (static_cast<int>(ds.labels.size()) != ds.size()) {
        fail(ErrorCode::count_mismatch,
             "dataset '" + ds.name + "': " + std::to_string(ds.size()) + " feature rows vs " +
                 std::to_string(ds.labels.size()) + " labels");
    }
    if (ds.classes < 2) {
        fail(ErrorCode::invariant_violation, "dataset '" + ds.name + "' declares " +
                                                 std::to_string(ds.classes) + " classes");
    }
    for (int i = 0; i < ds.size(); ++i) {
        if (ds.labels[i] < 0 || ds.labels[i] >= ds.classes) {
            fail(ErrorCode::bad_label, "row " + std::to_string(i) + " has label " +
                                           std::to_string(ds.labels[i]) + ", classes = " +
                                           std::to_string(ds.classes));
        }
    }
    if (!ds.features.allFinite()) {
        fail(ErrorCode::invariant_violation, "dataset '" + ds.name + "' has non-finite features");
    }
}

Sample sample_at(const Dataset& ds, int row) {
    if (row < 0 || row >= ds.size()) {
        fail(ErrorCode::invariant_violation,
             "sample row " + std::to_string(row) + " outside [0, " + std::to_string(ds.size()) + ")");
    }
    Sample s;
    s.features = ds.features.row(row);
    s.label = ds.labels[row];
    return s;
}

Dataset with_appended(const Dataset& ds, const Sample& sample) {
    if (sample.features.size() != ds.dim()) {
        fail(ErrorCode::dimension_mismatch, "appended sample has dim " +
                                                std::to_string(sample.features.size()) +
                                                ", dataset has " + std::to_string(ds.dim()));
    }
    if (sample.label < 0 || sample.label >= ds.classes) {
        fail(ErrorCode::bad_label, "appended sample label " + std::to_string(sample.label));
    }
    Dataset out = ds;
    out.features.conservativeResize(ds.size() + 1, ds.dim());
    out.features.row(ds.size()) = sample.features;
    out.labels.push_back(sample.label);
    out.name = ds.name + "+1";
    validate(out);
    return out;
}

Dataset subset(const Dataset& ds, std::span<const int> rows, const std::string& name_suffix) {
    Dataset out;
    out.features.resize(static_cast<Eigen::Index>(rows.size()), ds.dim());
    out.labels.reserve(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const int i = rows[k];
        if (i < 0 || i >= ds.size()) {
            fail(ErrorCode::invariant_violation, "subset row " + std::to_string(i) +
                                                     " outside [0, " + std::to_string(ds.size()) +
                                                     ")");
        }
        out.features.row(static_cast<Eigen::Index>(k)) = ds.features.row(i);
        out.labels.push_back(ds.labels[i]);
    }
    out.classes = ds.classes;
    out.name = ds.name + name_suffix;
    out.provenance = ds.provenance;
    out.provenance["subset_of"] = ds.name;
    return out;
}

Dataset gen_blobs(int n, int dim, int classes, double spread, std::uint64_t seed) {
    if (classes < 2) fail(ErrorCode::invariant_violation, "gen_blobs needs at least 2 classes");
    if (n < classes) {
        fail(ErrorCode::invariant_violation, "gen_blobs: n=" + std::to_string(n) +
                                                 " smaller than classes=" + std::to_string(classes));
    }
    if (spread <= 0.0) fail(ErrorCode::invariant_violation, "gen_blobs: spread must be positive");
    if (dim < 1) fail(ErrorCode::invariant_violation, "gen_blobs: dim must be positive");

    // Lattice of class centers: coordinate j of class c is the j-th base-B
    // digit of c, scaled by a fixed spacing. B is the smallest base that
    // fits all classes into dim digits.
    constexpr double kSpacing = 4.0;
    int base = 2;
    while (std::pow(static_cast<double>(base), dim) < static_cast<double>(classes)) ++base;
    FeatureMatrix centers(classes, dim);
    for (int c = 0; c < classes; ++c) {
        int rem = c;
        for (int j = 0; j < dim; ++j) {
            centers(c, j) = kSpacing * (rem % base);
            rem /= base;
        }
    }

    auto engine = rng::make_engine(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    Dataset ds;
    ds.features.resize(n, dim);
    ds.labels.resize(n);
    for (int i = 0; i < n; ++i) {
        const int c = i % classes;
        ds.labels[i] = c;
        for (int j = 0; j < dim; ++j) {
            ds.features(i, j) = centers(c, j) + spread * gauss(engine);
        }
    }
    ds.classes = classes;
    ds.name = "blobs_n" + std::to_string(n) + "_d" + std::to_string(dim) + "_c" +
              std::to_string(classes);
    ds.provenance["generator"] = "blobs";
    ds.provenance["seed"] = std::to_string(seed);
    ds.provenance["spread"] = io::format_double(spread);
    validate(ds);
    return ds;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

double parse_cell(const std::string& cell, int line_no, int col_no) {
    const char* begin = cell.c_str();
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    while (end != nullptr && (*end == ' ' || *end == '\r' || *end == '\t')) ++end;
    if (end == begin || (end != nullptr && *end != '\0')) {
        fail(ErrorCode::parse_error, "non-numeric cell at line " + std::to_string(line_no) +
                                         ", column " + std::to_string(col_no) + ": '" + cell + "'");
    }
    if (!std::isfinite(v)) {
        fail(ErrorCode::parse_error, "non-finite value at line " + std::to_string(line_no) +
                                         ", column " + std::to_string(col_no));
    }
    return v;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, const std::string& label_column) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::parse_error, "cannot open: " + path.string());

    std::string line;
    if (!std::getline(in, line)) fail(ErrorCode::parse_error, "empty file: " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();

    const std::vector<std::string> header = split_line(line);
    int label_col = -1;
    for (std::size_t j = 0; j < header.size(); ++j) {
        if (header[j] == label_column) label_col = static_cast<int>(j);
    }
    if (label_col < 0) {
        fail(ErrorCode::parse_error, "label column '" + label_column + "' not in header of " +
                                         path.string());
    }
    const int width = static_cast<int>(header.size());
    const int d = width - 1;

    std::vector<double> values;
    std::vector<double> raw_labels;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> cells = split_line(line);
        if (static_cast<int>(cells.size()) != width) {
            fail(ErrorCode::parse_error, "ragged row at line " + std::to_string(line_no) + ": " +
                                             std::to_string(cells.size()) + " cells, expected " +
                                             std::to_string(width));
        }
        for (int j = 0; j < width; ++j) {
            const double v = parse_cell(cells[j], line_no, j + 1);
            if (j == label_col) {
                raw_labels.push_back(v);
            } else {
                values.push_back(v);
            }
        }
    }
    const int n = static_cast<int>(raw_labels.size());
    if (n == 0) fail(ErrorCode::empty_dataset, "no data rows in " + path.string());
    if (d == 0) fail(ErrorCode::parse_error, "no feature columns in " + path.string());

    // Dense label remap in first-appearance order.
    std::vector<double> seen;
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
        auto it = std::find(seen.begin(), seen.end(), raw_labels[i]);
        if (it == seen.end()) {
            seen.push_back(raw_labels[i]);
            labels[i] = static_cast<int>(seen.size()) - 1;
        } else {
            labels[i] = static_cast<int>(it - seen.begin());
        }
    }

    Dataset ds;
    ds.features.resize(n, d);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) ds.features(i, j) = values[static_cast<std::size_t>(i) * d + j];
    }
    ds.labels = std::move(labels);
    ds.classes = static_cast<int>(seen.size());
    if (ds.classes < 2) {
        fail(ErrorCode::invariant_violation,
             "csv has a single label value; need at least two classes");
    }
    ds.name = path.stem().string();
    ds.provenance["file"] = path.string();
    ds.provenance["label_column"] = label_column;
    validate(ds);
    return ds;
}

void save_csv(const Dataset& ds, const std::filesystem::path& path,
              const std::string& label_column) {
    std::string out;
    for (int j = 0; j < ds.dim(); ++j) {
        out += "f" + std::to_string(j) + ",";
    }
    out += label_column + "\n";
    for (int i = 0; i < ds.size(); ++i) {
        for (int j = 0; j < ds.dim(); ++j) {
            out += io::format_double(ds.features(i, j));
            out += ',';
        }
        out += std::to_string(ds.labels[i]);
        out += '\n';
    }
    io::atomic_write(path, out);
}

namespace {

std::uint32_t read_be32(std::ifstream& in, const std::string& what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        fail(ErrorCode::parse_error, "truncated IDX header reading " + what);
    }
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) fail(ErrorCode::parse_error, "cannot open: " + images_path.string());
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) fail(ErrorCode::parse_error, "cannot open: " + labels_path.string());

    const std::uint32_t img_magic = read_be32(img, "image magic");
    if (img_magic != 0x00000803u) {
        fail(ErrorCode::parse_error, "bad image magic 0x" + std::to_string(img_magic));
    }
    const std::uint32_t n_images = read_be32(img, "image count");
    const std::uint32_t rows = read_be32(img, "rows");
    const std::uint32_t cols = read_be32(img, "cols");

    const std::uint32_t lab_magic = read_be32(lab, "label magic");
    if (lab_magic != 0x00000801u) {
        fail(ErrorCode::parse_error, "bad label magic 0x" + std::to_string(lab_magic));
    }
    const std::uint32_t n_labels = read_be32(lab, "label count");
    if (n_images != n_labels) {
        fail(ErrorCode::count_mismatch, std::to_string(n_images) + " images vs " +
                                            std::to_string(n_labels) + " labels");
    }
    if (n_images == 0) fail(ErrorCode::empty_dataset, "IDX files contain no samples");

    const int d = static_cast<int>(rows * cols);
    const int n = static_cast<int>(n_images);

    std::vector<unsigned char> pixel_row(static_cast<std::size_t>(d));
    Dataset ds;
    ds.features.resize(n, d);
    ds.labels.resize(n);
    for (int i = 0; i < n; ++i) {
        if (!img.read(reinterpret_cast<char*>(pixel_row.data()), d)) {
            fail(ErrorCode::parse_error, "truncated image data at sample " + std::to_string(i));
        }
        for (int j = 0; j < d; ++j) ds.features(i, j) = pixel_row[j] / 255.0;
        char byte;
        if (!lab.read(&byte, 1)) {
            fail(ErrorCode::parse_error, "truncated label data at sample " + std::to_string(i));
        }
        ds.labels[i] = static_cast<unsigned char>(byte);
    }
    ds.classes = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
    if (ds.classes < 2) ds.classes = 2;
    ds.name = images_path.stem().string();
    ds.provenance["images"] = images_path.string();
    ds.provenance["labels"] = labels_path.string();
    validate(ds);
    return ds;
}

Split split(const Dataset& ds, const SplitFractions& fractions, std::uint64_t seed) {
    if (fractions.train <= 0.0 || fractions.val <= 0.0 || fractions.test <= 0.0) {
        fail(ErrorCode::bad_ratio, "split fractions must all be positive");
    }
    const double sum = fractions.train + fractions.val + fractions.test;
    if (std::abs(sum - 1.0) > 1e-9) {
        fail(ErrorCode::bad_ratio, "split fractions sum to " + io::format_double(sum));
    }
    const int n = ds.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto engine = rng::make_engine(seed);
    std::shuffle(order.begin(), order.end(), engine);

    int n_train = static_cast<int>(std::lround(fractions.train * n));
    int n_val = static_cast<int>(std::lround(fractions.val * n));
    n_train = std::max(1, std::min(n_train, n - 2));
    n_val = std::max(1, std::min(n_val, n - n_train - 1));
    const int n_test = n - n_train - n_val;
    if (n_test < 1) fail(ErrorCode::bad_ratio, "split leaves no test rows for n=" + std::to_string(n));

    const std::span<const int> all(order);
    Split out;
    out.train = subset(ds, all.subspan(0, n_train), "/train");
    out.val = subset(ds, all.subspan(n_train, n_val), "/val");
    out.test = subset(ds, all.subspan(n_train + n_val, n_test), "/test");
    return out;
}

namespace {

Partition finish_partition(int n_train, std::vector<int> forget) {
    std::sort(forget.begin(), forget.end());
    forget.erase(std::unique(forget.begin(), forget.end()), forget.end());
    Partition p;
    p.forget_indices = std::move(forget);
    p.remain_indices.reserve(n_train - p.forget_indices.size());
    std::size_t f = 0;
    for (int i = 0; i < n_train; ++i) {
        if (f < p.forget_indices.size() && p.forget_indices[f] == i) {
            ++f;
        } else {
            p.remain_indices.push_back(i);
        }
    }
    return p;
}

}  // namespace

Partition make_partition(int n_train, double ratio, std::uint64_t seed) {
    if (n_train < 1) fail(ErrorCode::empty_dataset, "partition over an empty training set");
    if (ratio <= 0.0 || ratio >= 1.0) {
        fail(ErrorCode::bad_ratio, "unlearning ratio " + io::format_double(ratio) +
                                       " outside (0, 1)");
    }
    // Half-away-from-zero rounding, minimum one forgotten sample.
    int k = static_cast<int>(std::floor(ratio * n_train + 0.5));
    k = std::max(1, std::min(k, n_train - 1));

    std::vector<int> order(n_train);
    std::iota(order.begin(), order.end(), 0);
    auto engine = rng::make_engine(seed);
    std::shuffle(order.begin(), order.end(), engine);
    order.resize(k);
    return finish_partition(n_train, std::move(order));
}

Partition make_partition(int n_train, std::span<const int> forget_indices) {
    if (n_train < 1) fail(ErrorCode::empty_dataset, "partition over an empty training set");
    if (forget_indices.empty()) {
        fail(ErrorCode::empty_forget_set, "explicit forget index list is empty");
    }
    for (int i : forget_indices) {
        if (i < 0 || i >= n_train) {
            fail(ErrorCode::invariant_violation, "forget index " + std::to_string(i) +
                                                     " outside [0, " + std::to_string(n_train) +
                                                     ")");
        }
    }
    return finish_partition(n_train, std::vector<int>(forget_indices.begin(), forget_indices.end()));
}

}  // namespace unlearn::datasets
