#include "unlearn/models.hpp"

#include <algorithm>
#include <cstring>
#include <cmath>
#include <numeric>

#include "unlearn/io_util.hpp"
#include "unlearn/rng.hpp"

namespace unlearn::models {

void validate(const ModelSpec& spec) {
    if (spec.input_dim < 1) {
        fail(ErrorCode::invariant_violation, "model input_dim must be positive");
    }
    if (spec.classes < 2) {
        fail(ErrorCode::invariant_violation, "model needs at least 2 classes");
    }
    if (spec.kind == ModelKind::logistic && !spec.hidden.empty()) {
        fail(ErrorCode::invariant_violation, "logistic model must have no hidden layers");
    }
    if (spec.kind == ModelKind::mlp && spec.hidden.empty()) {
        fail(ErrorCode::invariant_violation, "mlp model needs at least one hidden layer");
    }
    for (int w : spec.hidden) {
        if (w < 1) fail(ErrorCode::invariant_violation, "hidden width must be positive");
    }
    if (spec.l2 < 0.0) fail(ErrorCode::invariant_violation, "l2 coefficient must be >= 0");
}

bool operator==(const ModelSpec& a, const ModelSpec& b) {
    return a.kind == b.kind && a.input_dim == b.input_dim && a.hidden == b.hidden &&
           a.classes == b.classes && a.activation == b.activation && a.l2 == b.l2;
}

numerics::NetShape net_shape(const ModelSpec& spec) {
    numerics::NetShape shape;
    shape.input_dim = spec.input_dim;
    shape.layer_widths = spec.hidden;
    shape.layer_widths.push_back(spec.classes);
    shape.activation = spec.activation;
    shape.l2 = spec.l2;
    return shape;
}

int param_count(const ModelSpec& spec) { return net_shape(spec).param_count(); }

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
    validate(spec);
    const numerics::NetShape shape = net_shape(spec);
    auto engine = rng::make_engine(seed);
    ParamVector theta = ParamVector::Zero(shape.param_count());
    for (int l = 0; l < shape.layer_count(); ++l) {
        const int in = shape.layer_in(l);
        const int out = shape.layer_out(l);
        const double limit = std::sqrt(6.0 / (in + out));
        std::uniform_real_distribution<double> uniform(-limit, limit);
        double* w = theta.data() + shape.weight_offset(l);
        for (int i = 0; i < out * in; ++i) w[i] = uniform(engine);
        // biases stay zero
    }
    return theta;
}

Eigen::VectorXd forward(const ModelSpec& spec, const ParamVector& theta,
                        const Eigen::VectorXd& x) {
    validate(spec);
    if (x.size() != spec.input_dim) {
        fail(ErrorCode::dimension_mismatch, "input length " + std::to_string(x.size()) +
                                                ", model expects " +
                                                std::to_string(spec.input_dim));
    }
    const numerics::NetShape shape = net_shape(spec);
    if (theta.size() != shape.param_count()) {
        fail(ErrorCode::dimension_mismatch, "parameter length " + std::to_string(theta.size()) +
                                                ", model expects " +
                                                std::to_string(shape.param_count()));
    }
    return numerics::net_probs(shape, theta, x.data());
}

namespace {

std::vector<int> all_rows(const datasets::Dataset& ds) {
    std::vector<int> rows(ds.size());
    std::iota(rows.begin(), rows.end(), 0);
    return rows;
}

}  // namespace

double loss(const ModelSpec& spec, const ParamVector& theta, const datasets::Dataset& ds,
            std::span<const int> rows) {
    BatchLoss fn = rows.empty() ? BatchLoss(spec, ds)
                                : BatchLoss(spec, ds, std::vector<int>(rows.begin(), rows.end()));
    return fn.value(theta);
}

double accuracy(const ModelSpec& spec, const ParamVector& theta, const datasets::Dataset& ds) {
    const numerics::NetShape shape = net_shape(spec);
    if (ds.dim() != spec.input_dim) {
        fail(ErrorCode::dimension_mismatch, "dataset dim " + std::to_string(ds.dim()) +
                                                " vs model input_dim " +
                                                std::to_string(spec.input_dim));
    }
    int correct = 0;
    for (int i = 0; i < ds.size(); ++i) {
        Eigen::VectorXd p = numerics::net_probs(shape, theta, ds.row(i));
        Eigen::Index argmax;
        p.maxCoeff(&argmax);
        if (static_cast<int>(argmax) == ds.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / ds.size();
}

BatchLoss::BatchLoss(const ModelSpec& spec, const datasets::Dataset& ds)
    : BatchLoss(spec, ds, all_rows(ds)) {}

BatchLoss::BatchLoss(const ModelSpec& spec, const datasets::Dataset& ds, std::vector<int> rows)
    : shape_(net_shape(spec)), ds_(&ds), rows_(std::move(rows)) {
    validate(spec);
    if (ds.dim() != spec.input_dim) {
        fail(ErrorCode::dimension_mismatch, "dataset dim " + std::to_string(ds.dim()) +
                                                " vs model input_dim " +
                                                std::to_string(spec.input_dim));
    }
    if (ds.classes > spec.classes) {
        fail(ErrorCode::bad_label, "dataset declares " + std::to_string(ds.classes) +
                                       " classes, model outputs " + std::to_string(spec.classes));
    }
    for (int r : rows_) {
        if (r < 0 || r >= ds.size()) {
            fail(ErrorCode::invariant_violation,
                 "batch row " + std::to_string(r) + " outside dataset");
        }
    }
}

double BatchLoss::sample_value(const ParamVector& theta, int k) const {
    const int r = rows_[static_cast<std::size_t>(k)];
    return numerics::net_loss(shape_, theta, ds_->row(r), ds_->labels[r]);
}

double BatchLoss::sample_value_and_grad(const ParamVector& theta, int k,
                                        ParamVector& grad) const {
    const int r = rows_[static_cast<std::size_t>(k)];
    return numerics::net_loss_grad(shape_, theta, ds_->row(r), ds_->labels[r], grad);
}

void BatchLoss::sample_hvp(const ParamVector& theta, int k, const ParamVector& v,
                           ParamVector& out) const {
    const int r = rows_[static_cast<std::size_t>(k)];
    numerics::net_hvp(shape_, theta, ds_->row(r), ds_->labels[r], v, out);
}

// ---------------------------------------------------------------------------
// Checkpoint format (version 1): see docs/file-formats.md
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'U', 'L', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    validate(ckpt.spec);
    if (ckpt.params.size() != param_count(ckpt.spec)) {
        fail(ErrorCode::invariant_violation,
             "checkpoint params length " + std::to_string(ckpt.params.size()) +
                 " does not match spec parameter count " + std::to_string(param_count(ckpt.spec)));
    }
    io::BinaryWriter w;
    w.raw(kMagic, 4);
    w.u32(kVersion);
    w.u8(ckpt.spec.kind == ModelKind::logistic ? 0 : 1);
    w.u32(static_cast<std::uint32_t>(ckpt.spec.input_dim));
    w.u32(static_cast<std::uint32_t>(ckpt.spec.hidden.size()));
    for (int h : ckpt.spec.hidden) w.u32(static_cast<std::uint32_t>(h));
    w.u32(static_cast<std::uint32_t>(ckpt.spec.classes));
    w.u8(ckpt.spec.activation == numerics::Activation::relu ? 0 : 1);
    w.f64(ckpt.spec.l2);
    w.u32(static_cast<std::uint32_t>(ckpt.train_meta.size()));
    for (const auto& [key, value] : ckpt.train_meta) {  // std::map: sorted, deterministic
        w.str(key);
        w.str(value);
    }
    w.u64(static_cast<std::uint64_t>(ckpt.params.size()));
    w.raw(ckpt.params.data(), sizeof(double) * static_cast<std::size_t>(ckpt.params.size()));
    io::atomic_write(path, w.bytes());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    io::BinaryReader r(io::read_file_bytes(path));

    char magic[4];
    for (char& c : magic) c = static_cast<char>(r.u8());
    if (std::memcmp(magic, kMagic, 4) != 0) {
        fail(ErrorCode::parse_error, "bad checkpoint magic in " + path.string());
    }
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        fail(ErrorCode::unsupported_version,
             "checkpoint version " + std::to_string(version) + ", supported: 1");
    }

    Checkpoint ckpt;
    ckpt.spec.kind = r.u8() == 0 ? ModelKind::logistic : ModelKind::mlp;
    ckpt.spec.input_dim = static_cast<int>(r.u32());
    const std::uint32_t n_hidden = r.u32();
    if (n_hidden > 1024) fail(ErrorCode::parse_error, "implausible hidden layer count");
    for (std::uint32_t i = 0; i < n_hidden; ++i) {
        ckpt.spec.hidden.push_back(static_cast<int>(r.u32()));
    }
    ckpt.spec.classes = static_cast<int>(r.u32());
    ckpt.spec.activation = r.u8() == 0 ? numerics::Activation::relu : numerics::Activation::tanh;
    ckpt.spec.l2 = r.f64();

    const std::uint32_t meta_count = r.u32();
    for (std::uint32_t i = 0; i < meta_count; ++i) {
        std::string key = r.str();
        std::string value = r.str();
        ckpt.train_meta.emplace(std::move(key), std::move(value));
    }

    const std::uint64_t n_params = r.u64();
    validate(ckpt.spec);
    if (n_params != static_cast<std::uint64_t>(param_count(ckpt.spec))) {
        fail(ErrorCode::invariant_violation,
             "stored parameter count " + std::to_string(n_params) + " does not match spec (" +
                 std::to_string(param_count(ckpt.spec)) + ")");
    }
    ckpt.params.resize(static_cast<Eigen::Index>(n_params));
    for (std::uint64_t i = 0; i < n_params; ++i) ckpt.params[static_cast<Eigen::Index>(i)] = r.f64();
    if (!r.at_end()) {
        fail(ErrorCode::parse_error,
             std::to_string(r.remaining()) + " trailing bytes in " + path.string());
    }
    if (!ckpt.params.allFinite()) {
        fail(ErrorCode::invariant_violation, "non-finite parameters in " + path.string());
    }
    return ckpt;
}

}  // namespace unlearn::models
