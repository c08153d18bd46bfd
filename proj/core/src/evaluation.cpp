#include "unlearn/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "unlearn/io_util.hpp"
#include "unlearn/rng.hpp"

namespace unlearn::evaluation {

namespace {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstWeightMap = Eigen::Map<const RowMajorMatrix>;
using WeightMap = Eigen::Map<RowMajorMatrix>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Flat layout of the attack net: per layer, row-major weights then biases.
struct AttackLayout {
    int input_dim;
    std::array<int, 3> out;  // 256, 128, 1

    explicit AttackLayout(const AttackModelSpec& spec, int input)
        : input_dim(input), out{spec.hidden[0], spec.hidden[1], 1} {}

    int in(int l) const { return l == 0 ? input_dim : out[static_cast<std::size_t>(l - 1)]; }
    int weight_offset(int l) const {
        int off = 0;
        for (int k = 0; k < l; ++k) off += out[static_cast<std::size_t>(k)] * (in(k) + 1);
        return off;
    }
    int bias_offset(int l) const {
        return weight_offset(l) + out[static_cast<std::size_t>(l)] * in(l);
    }
    int param_count() const { return weight_offset(3); }
};

// Logit of the attack net. With masks: inverted dropout after each hidden
// ReLU (train time); pass nullptr at inference.
double attack_logit(const AttackLayout& layout, const ParamVector& theta, const double* x,
                    const Eigen::VectorXd* mask1, const Eigen::VectorXd* mask2,
                    Eigen::VectorXd* a1_out, Eigen::VectorXd* a2_out) {
    ConstWeightMap W1(theta.data() + layout.weight_offset(0), layout.out[0], layout.in(0));
    ConstVecMap b1(theta.data() + layout.bias_offset(0), layout.out[0]);
    ConstWeightMap W2(theta.data() + layout.weight_offset(1), layout.out[1], layout.in(1));
    ConstVecMap b2(theta.data() + layout.bias_offset(1), layout.out[1]);
    ConstWeightMap W3(theta.data() + layout.weight_offset(2), 1, layout.in(2));
    ConstVecMap b3(theta.data() + layout.bias_offset(2), 1);

    ConstVecMap input(x, layout.input_dim);
    Eigen::VectorXd a1 = (W1 * input + b1).cwiseMax(0.0);
    if (mask1 != nullptr) a1 = a1.cwiseProduct(*mask1);
    Eigen::VectorXd a2 = (W2 * a1 + b2).cwiseMax(0.0);
    if (mask2 != nullptr) a2 = a2.cwiseProduct(*mask2);
    const double logit = (W3 * a2)(0) + b3(0);
    if (a1_out != nullptr) *a1_out = std::move(a1);
    if (a2_out != nullptr) *a2_out = std::move(a2);
    return logit;
}

// BCE loss and gradient for one attack sample; masks already folded into the
// stored activations, so the backward pass reuses them directly.
double attack_loss_grad(const AttackLayout& layout, const ParamVector& theta, const double* x,
                        int label, const Eigen::VectorXd& mask1, const Eigen::VectorXd& mask2,
                        ParamVector& grad) {
    Eigen::VectorXd a1;
    Eigen::VectorXd a2;
    const double logit = attack_logit(layout, theta, x, &mask1, &mask2, &a1, &a2);
    const double y = static_cast<double>(label);
    const double p = 1.0 / (1.0 + std::exp(-logit));
    const double loss = y * softplus(-logit) + (1.0 - y) * softplus(logit);

    ConstWeightMap W2(theta.data() + layout.weight_offset(1), layout.out[1], layout.in(1));
    ConstWeightMap W3(theta.data() + layout.weight_offset(2), 1, layout.in(2));
    ConstVecMap input(x, layout.input_dim);

    const double dlogit = p - y;
    WeightMap gW3(grad.data() + layout.weight_offset(2), 1, layout.in(2));
    VecMap gb3(grad.data() + layout.bias_offset(2), 1);
    gW3.noalias() = dlogit * a2.transpose();
    gb3(0) = dlogit;

    // a2 holds relu(z2)⊙mask2; its elementwise sign is the combined relu/mask gate.
    Eigen::VectorXd da2 = W3.transpose() * dlogit;
    Eigen::VectorXd dz2 =
        da2.cwiseProduct(mask2).cwiseProduct((a2.array() > 0.0).cast<double>().matrix());
    WeightMap gW2(grad.data() + layout.weight_offset(1), layout.out[1], layout.in(1));
    VecMap gb2(grad.data() + layout.bias_offset(1), layout.out[1]);
    gW2.noalias() = dz2 * a1.transpose();
    gb2 = dz2;

    Eigen::VectorXd da1 = W2.transpose() * dz2;
    Eigen::VectorXd dz1 =
        da1.cwiseProduct(mask1).cwiseProduct((a1.array() > 0.0).cast<double>().matrix());
    WeightMap gW1(grad.data() + layout.weight_offset(0), layout.out[0], layout.in(0));
    VecMap gb1(grad.data() + layout.bias_offset(0), layout.out[0]);
    gW1.noalias() = dz1 * input.transpose();
    gb1 = dz1;
    return loss;
}

double attack_accuracy(const AttackLayout& layout, const ParamVector& theta,
                       const AttackDataset& data, std::span<const int> rows) {
    int correct = 0;
    for (int r : rows) {
        const double logit = attack_logit(layout, theta, data.features.data() +
                                                             static_cast<std::ptrdiff_t>(r) *
                                                                 data.dim(),
                                          nullptr, nullptr, nullptr, nullptr);
        const int predicted = logit >= 0.0 ? 1 : 0;
        if (predicted == data.labels[static_cast<std::size_t>(r)]) ++correct;
    }
    return rows.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(rows.size());
}

}  // namespace

std::vector<ShadowModel> train_shadows(const ModelSpec& spec, const datasets::Dataset& pool,
                                       int k, const training::TrainConfig& config) {
    datasets::validate(pool);
    if (k < 1) fail(ErrorCode::invariant_violation, "need at least one shadow model");
    const int members = pool.size() / 2;
    if (members < 2) {
        fail(ErrorCode::pool_too_small, "shadow pool of " + std::to_string(pool.size()) +
                                            " cannot support a 50/50 member split");
    }

    std::vector<ShadowModel> shadows;
    shadows.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        const std::string stream = rng::stream_name("shadow", i);
        std::vector<int> order(pool.size());
        std::iota(order.begin(), order.end(), 0);
        auto engine = rng::make_engine(rng::derive_stream(config.seed, stream + "-split"));
        std::shuffle(order.begin(), order.end(), engine);

        ShadowModel shadow;
        shadow.member_rows.assign(order.begin(), order.begin() + members);
        shadow.non_member_rows.assign(order.begin() + members, order.end());
        std::sort(shadow.member_rows.begin(), shadow.member_rows.end());
        std::sort(shadow.non_member_rows.begin(), shadow.non_member_rows.end());

        datasets::Dataset shadow_train = datasets::subset(pool, shadow.member_rows, "/" + stream);
        training::TrainConfig shadow_config = config;
        shadow_config.seed = rng::derive_stream(config.seed, stream);
        auto [ckpt, history] = training::train(spec, shadow_train, shadow_config);
        shadow.checkpoint = std::move(ckpt);
        shadows.push_back(std::move(shadow));
    }
    return shadows;
}

Eigen::VectorXd attack_features(const Eigen::VectorXd& posterior) {
    Eigen::VectorXd sorted = posterior;
    std::sort(sorted.data(), sorted.data() + sorted.size(), std::greater<double>());
    return sorted;
}

AttackDataset build_attack_dataset(std::span<const ShadowModel> shadows,
                                   const datasets::Dataset& pool) {
    if (shadows.empty()) fail(ErrorCode::empty_batch, "no shadow models");
    const numerics::NetShape shape = models::net_shape(shadows[0].checkpoint.spec);
    const int classes = shadows[0].checkpoint.spec.classes;

    int rows = 0;
    for (const ShadowModel& s : shadows) {
        rows += static_cast<int>(s.member_rows.size() + s.non_member_rows.size());
    }
    AttackDataset out;
    out.features.resize(rows, classes);
    out.labels.reserve(static_cast<std::size_t>(rows));

    int r = 0;
    for (const ShadowModel& shadow : shadows) {
        auto emit = [&](const std::vector<int>& pool_rows, int label) {
            for (int i : pool_rows) {
                Eigen::VectorXd probs =
                    numerics::net_probs(shape, shadow.checkpoint.params, pool.row(i));
                out.features.row(r) = attack_features(probs);
                out.labels.push_back(label);
                ++r;
            }
        };
        emit(shadow.member_rows, 1);
        emit(shadow.non_member_rows, 0);
    }
    return out;
}

AttackModel train_attack(const AttackDataset& attack_set, const AttackModelSpec& spec,
                         std::uint64_t seed, const training::TrainConfig& config) {
    training::validate(config);
    if (config.alpha != 0.0) {
        fail(ErrorCode::invariant_violation, "gradient restriction does not apply to the attack model");
    }
    const int n = attack_set.size();
    if (n < 4) fail(ErrorCode::empty_batch, "attack dataset too small");
    const auto ones = static_cast<std::size_t>(
        std::count(attack_set.labels.begin(), attack_set.labels.end(), 1));
    if (ones * 2 != attack_set.labels.size()) {
        fail(ErrorCode::invariant_violation, "attack dataset is not class-balanced");
    }

    const AttackLayout layout(spec, attack_set.dim());

    // Held-out rows for the early-stop metric and the reported accuracy.
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto split_engine = rng::make_engine(rng::derive_stream(seed, "attack-heldout"));
    std::shuffle(order.begin(), order.end(), split_engine);
    const int n_held = std::max(1, n / 4);
    std::vector<int> held(order.begin(), order.begin() + n_held);
    std::vector<int> fit(order.begin() + n_held, order.end());

    // Glorot-uniform init, biases zero.
    ParamVector theta = ParamVector::Zero(layout.param_count());
    {
        auto engine = rng::make_engine(rng::derive_stream(seed, "attack-init"));
        for (int l = 0; l < 3; ++l) {
            const double limit = std::sqrt(6.0 / (layout.in(l) + layout.out[static_cast<std::size_t>(l)]));
            std::uniform_real_distribution<double> uniform(-limit, limit);
            double* w = theta.data() + layout.weight_offset(l);
            for (int i = 0; i < layout.out[static_cast<std::size_t>(l)] * layout.in(l); ++i) {
                w[i] = uniform(engine);
            }
        }
    }
    ParamVector best_theta = theta;

    auto dropout_engine = rng::make_engine(rng::derive_stream(seed, "attack-dropout"));
    std::bernoulli_distribution keep(1.0 - spec.dropout);
    const double keep_scale = 1.0 / (1.0 - spec.dropout);
    Eigen::VectorXd mask1(layout.out[0]);
    Eigen::VectorXd mask2(layout.out[1]);
    ParamVector sample_grad(layout.param_count());
    ParamVector batch_grad(layout.param_count());

    training::EpochDriverConfig driver;
    driver.n_samples = static_cast<int>(fit.size());
    driver.batch_size = config.batch_size;
    driver.max_epochs = config.max_epochs;
    driver.patience = config.patience;
    driver.has_validation = true;

    training::EpochHooks hooks;
    hooks.step = [&](std::span<const int> batch) {
        batch_grad.setZero();
        double objective = 0.0;
        for (int idx : batch) {
            const int row = fit[static_cast<std::size_t>(idx)];
            for (int j = 0; j < layout.out[0]; ++j) mask1[j] = keep(dropout_engine) ? keep_scale : 0.0;
            for (int j = 0; j < layout.out[1]; ++j) mask2[j] = keep(dropout_engine) ? keep_scale : 0.0;
            objective += attack_loss_grad(
                layout, theta,
                attack_set.features.data() + static_cast<std::ptrdiff_t>(row) * attack_set.dim(),
                attack_set.labels[static_cast<std::size_t>(row)], mask1, mask2, sample_grad);
            batch_grad += sample_grad;
        }
        const double inv = 1.0 / static_cast<double>(batch.size());
        theta -= config.lr * inv * batch_grad;
        numerics::count_param_update();
        return objective * inv;
    };
    hooks.evaluate = [&]() { return attack_accuracy(layout, theta, attack_set, held); };
    hooks.snapshot_best = [&]() { best_theta = theta; };
    hooks.restore_best = [&]() { theta = best_theta; };

    auto shuffle_engine = rng::make_engine(rng::derive_stream(seed, "attack-shuffle"));
    training::run_epochs(driver, shuffle_engine, hooks);

    AttackModel model;
    model.spec = spec;
    model.input_dim = attack_set.dim();
    model.params = std::move(theta);
    model.heldout_accuracy = attack_accuracy(layout, model.params, attack_set, held);
    return model;
}

double attack_member_probability(const AttackModel& attack, const Eigen::VectorXd& posterior) {
    if (posterior.size() != attack.input_dim) {
        fail(ErrorCode::dimension_mismatch, "posterior length " + std::to_string(posterior.size()) +
                                                ", attack expects " +
                                                std::to_string(attack.input_dim));
    }
    const AttackLayout layout(attack.spec, attack.input_dim);
    const Eigen::VectorXd features = attack_features(posterior);
    const double logit =
        attack_logit(layout, attack.params, features.data(), nullptr, nullptr, nullptr, nullptr);
    return 1.0 / (1.0 + std::exp(-logit));
}

double attack_success_rate(const AttackModel& attack, const Checkpoint& target,
                           const datasets::Dataset& forget_set) {
    datasets::validate(forget_set);
    const numerics::NetShape shape = models::net_shape(target.spec);
    int members = 0;
    for (int i = 0; i < forget_set.size(); ++i) {
        Eigen::VectorXd probs = numerics::net_probs(shape, target.params, forget_set.row(i));
        if (attack_member_probability(attack, probs) >= 0.5) ++members;
    }
    return 100.0 * static_cast<double>(members) / static_cast<double>(forget_set.size());
}

MetricsReport compute_metrics(const Checkpoint& unlearned, const Checkpoint& gold,
                              const datasets::Dataset& test_set,
                              const datasets::Dataset& forget_set, const AttackModel* attack,
                              double time_ms) {
    if (!(unlearned.spec == gold.spec)) {
        fail(ErrorCode::spec_mismatch, "unlearned and gold checkpoints have different specs");
    }
    MetricsReport report;
    const double acc_unlearned = models::accuracy(unlearned.spec, unlearned.params, test_set);
    const double acc_gold = models::accuracy(gold.spec, gold.params, test_set);
    report.mu = std::abs(acc_unlearned - acc_gold) * 100.0;
    report.time_ms = time_ms;
    if (attack != nullptr) {
        const double asr_unlearned = attack_success_rate(*attack, unlearned, forget_set);
        const double asr_gold = attack_success_rate(*attack, gold, forget_set);
        report.ue = std::abs(asr_unlearned - asr_gold);
        report.provenance["asr_unlearned"] = io::format_double(asr_unlearned);
        report.provenance["asr_gold"] = io::format_double(asr_gold);
    }
    report.provenance["acc_test_unlearned"] = io::format_double(acc_unlearned);
    report.provenance["acc_test_gold"] = io::format_double(acc_gold);
    return report;
}

void assign_avg_ranks(std::span<MetricsReport> reports) {
    if (reports.size() < 2) {
        fail(ErrorCode::invariant_violation, "ranking needs at least two strategies");
    }
    auto rank_of = [&](auto metric) {
        std::vector<double> ranks(reports.size(), 0.0);
        for (std::size_t i = 0; i < reports.size(); ++i) {
            int better = 0;
            for (std::size_t j = 0; j < reports.size(); ++j) {
                if (metric(reports[j]) < metric(reports[i])) ++better;
            }
            ranks[i] = static_cast<double>(better);  // competition rank, ties share the minimum
        }
        return ranks;
    };
    const auto mu_ranks = rank_of([](const MetricsReport& r) { return r.mu; });
    const auto time_ranks = rank_of([](const MetricsReport& r) { return r.time_ms; });
    const auto ue_ranks = rank_of([](const MetricsReport& r) { return r.ue; });
    for (std::size_t i = 0; i < reports.size(); ++i) {
        reports[i].avg_rank = (mu_ranks[i] + time_ranks[i] + ue_ranks[i]) / 3.0;
    }
}

void save_metrics_txt(const MetricsReport& report, const std::filesystem::path& path) {
    std::string out;
    out += "strategy=" + report.strategy + "\n";
    out += "mu=" + io::format_double(report.mu) + "\n";
    out += "time_ms=" + io::format_double(report.time_ms) + "\n";
    out += "ue=" + io::format_double(report.ue) + "\n";
    if (report.avg_rank.has_value()) {
        out += "avg_rank=" + io::format_double(*report.avg_rank) + "\n";
    }
    for (const auto& [key, value] : report.provenance) {
        out += key + "=" + value + "\n";
    }
    io::atomic_write(path, out);
}

void save_metrics_csv(std::span<const MetricsReport> reports, const std::filesystem::path& path,
                      bool include_time) {
    std::string out = include_time ? "strategy,mu,time_ms,ue,avg_rank\n" : "strategy,mu,ue,avg_rank\n";
    for (const MetricsReport& r : reports) {
        out += r.strategy + "," + io::format_double(r.mu) + ",";
        if (include_time) out += io::format_double(r.time_ms) + ",";
        out += io::format_double(r.ue) + ",";
        if (r.avg_rank.has_value()) out += io::format_double(*r.avg_rank);
        out += '\n';
    }
    io::atomic_write(path, out);
}

}  // namespace unlearn::evaluation
