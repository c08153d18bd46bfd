#include "unlearn/experiment.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include <json.hpp>

#include "unlearn/io_util.hpp"
#include "unlearn/rng.hpp"

namespace unlearn::experiment {

namespace {

using Json = nlohmann::json;
using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

// --- config field helpers; failures name the offending field path ----------

const Json& require_field(const Json& j, const char* key, const std::string& path) {
    if (!j.is_object()) fail(ErrorCode::bad_config, path + " must be an object");
    auto it = j.find(key);
    if (it == j.end()) fail(ErrorCode::bad_config, "missing field " + path + "." + key);
    return *it;
}

double get_double(const Json& j, const char* key, const std::string& path) {
    const Json& v = require_field(j, key, path);
    if (!v.is_number()) fail(ErrorCode::bad_config, path + "." + key + " must be a number");
    return v.get<double>();
}

double get_double_or(const Json& j, const char* key, double fallback, const std::string& path) {
    if (!j.is_object() || !j.contains(key)) return fallback;
    return get_double(j, key, path);
}

int get_int(const Json& j, const char* key, const std::string& path) {
    const Json& v = require_field(j, key, path);
    if (!v.is_number_integer()) fail(ErrorCode::bad_config, path + "." + key + " must be an integer");
    return v.get<int>();
}

int get_int_or(const Json& j, const char* key, int fallback, const std::string& path) {
    if (!j.is_object() || !j.contains(key)) return fallback;
    return get_int(j, key, path);
}

std::string get_string(const Json& j, const char* key, const std::string& path) {
    const Json& v = require_field(j, key, path);
    if (!v.is_string()) fail(ErrorCode::bad_config, path + "." + key + " must be a string");
    return v.get<std::string>();
}

training::TrainConfig parse_train_config(const Json& j, const std::string& path,
                                         const training::TrainConfig& defaults) {
    training::TrainConfig tc = defaults;
    tc.lr = get_double_or(j, "lr", defaults.lr, path);
    tc.batch_size = get_int_or(j, "batch_size", defaults.batch_size, path);
    tc.max_epochs = get_int_or(j, "max_epochs", defaults.max_epochs, path);
    tc.patience = get_int_or(j, "patience", defaults.patience, path);
    tc.alpha = get_double_or(j, "alpha", defaults.alpha, path);
    tc.val_fraction = get_double_or(j, "val_fraction", defaults.val_fraction, path);
    try {
        training::validate(tc);
    } catch (const Error& e) {
        fail(ErrorCode::bad_config, path + ": " + e.what());
    }
    return tc;
}

std::string timing_lines(double wall_ms, const numerics::OpCounters* counters = nullptr) {
    std::string out = "elapsed_ms=" + io::format_double(wall_ms) + "\n";
    if (counters != nullptr) {
        out += "hvp_calls=" + std::to_string(counters->hvp_calls) + "\n";
        out += "cg_iterations=" + std::to_string(counters->cg_iterations) + "\n";
        out += "param_updates=" + std::to_string(counters->param_updates) + "\n";
    }
    return out;
}

std::optional<double> read_timing_sidecar(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("elapsed_ms=", 0) == 0) {
            return std::strtod(line.c_str() + 11, nullptr);
        }
    }
    return std::nullopt;
}

}  // namespace

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::bad_config, "cannot open config: " + path.string());
    Json root;
    try {
        root = Json::parse(in);
    } catch (const Json::parse_error& e) {
        fail(ErrorCode::parse_error, std::string("config: ") + e.what());
    }

    ExperimentConfig config;
    if (!root.contains("seed")) fail(ErrorCode::bad_config, "missing field seed");
    if (!root.at("seed").is_number_unsigned() && !root.at("seed").is_number_integer()) {
        fail(ErrorCode::bad_config, "seed must be an integer");
    }
    config.seed = root.at("seed").get<std::uint64_t>();
    if (root.contains("output_dir")) config.output_dir = get_string(root, "output_dir", "");

    // dataset
    const Json& jd = require_field(root, "dataset", "");
    const std::string type = get_string(jd, "type", "dataset");
    if (type == "blobs") {
        config.dataset.source = DatasetConfig::Source::blobs;
        config.dataset.n = get_int(jd, "n", "dataset");
        config.dataset.dim = get_int(jd, "dim", "dataset");
        config.dataset.classes = get_int(jd, "classes", "dataset");
        config.dataset.spread = get_double_or(jd, "spread", 1.0, "dataset");
        if (config.dataset.n < config.dataset.classes || config.dataset.classes < 2 ||
            config.dataset.dim < 1 || config.dataset.spread <= 0.0) {
            fail(ErrorCode::bad_config, "dataset: invalid blobs parameters");
        }
    } else if (type == "csv") {
        config.dataset.source = DatasetConfig::Source::csv;
        config.dataset.path = get_string(jd, "path", "dataset");
        config.dataset.label_column = get_string(jd, "label_column", "dataset");
        if (!std::filesystem::exists(config.dataset.path)) {
            fail(ErrorCode::bad_config, "dataset.path does not exist: " + config.dataset.path);
        }
    } else if (type == "idx") {
        config.dataset.source = DatasetConfig::Source::idx;
        config.dataset.images = get_string(jd, "images", "dataset");
        config.dataset.labels = get_string(jd, "labels", "dataset");
        for (const std::string& p : {config.dataset.images, config.dataset.labels}) {
            if (!std::filesystem::exists(p)) {
                fail(ErrorCode::bad_config, "dataset file does not exist: " + p);
            }
        }
    } else {
        fail(ErrorCode::bad_config, "dataset.type must be blobs, csv or idx");
    }

    // split
    if (root.contains("split")) {
        const Json& js = root.at("split");
        config.split.train = get_double_or(js, "train", 0.6, "split");
        config.split.val = get_double_or(js, "val", 0.2, "split");
        config.split.test = get_double_or(js, "test", 0.2, "split");
    }

    // model
    const Json& jm = require_field(root, "model", "");
    const std::string kind = get_string(jm, "kind", "model");
    if (kind == "logistic") {
        config.model.kind = models::ModelKind::logistic;
    } else if (kind == "mlp") {
        config.model.kind = models::ModelKind::mlp;
    } else {
        fail(ErrorCode::bad_config, "model.kind must be logistic or mlp");
    }
    if (jm.contains("hidden")) {
        const Json& jh = jm.at("hidden");
        if (!jh.is_array()) fail(ErrorCode::bad_config, "model.hidden must be an array");
        for (const Json& w : jh) {
            if (!w.is_number_integer() || w.get<int>() < 1) {
                fail(ErrorCode::bad_config, "model.hidden entries must be positive integers");
            }
            config.model.hidden.push_back(w.get<int>());
        }
    }
    const std::string act = jm.contains("activation") ? get_string(jm, "activation", "model")
                                                      : std::string("relu");
    if (act == "relu") {
        config.model.activation = numerics::Activation::relu;
    } else if (act == "tanh") {
        config.model.activation = numerics::Activation::tanh;
    } else {
        fail(ErrorCode::bad_config, "model.activation must be relu or tanh");
    }
    config.model.l2 = get_double_or(jm, "l2", 0.0, "model");
    if (config.model.l2 < 0.0) fail(ErrorCode::bad_config, "model.l2 must be >= 0");
    config.model.classes = get_int_or(jm, "classes", 0, "model");
    config.model.input_dim = get_int_or(jm, "input_dim", 0, "model");
    if (config.model.kind == models::ModelKind::logistic && !config.model.hidden.empty()) {
        fail(ErrorCode::bad_config, "model.hidden must be empty for logistic");
    }
    if (config.model.kind == models::ModelKind::mlp && config.model.hidden.empty()) {
        fail(ErrorCode::bad_config, "model.hidden must be non-empty for mlp");
    }

    // train
    if (root.contains("train")) {
        config.train = parse_train_config(root.at("train"), "train", config.train);
    }

    // unlearn
    if (root.contains("unlearn")) {
        const Json& ju = root.at("unlearn");
        if (ju.contains("ratio")) {
            const double ratio = get_double(ju, "ratio", "unlearn");
            if (ratio <= 0.0 || ratio >= 1.0) {
                fail(ErrorCode::bad_config, "unlearn.ratio must lie in (0, 1)");
            }
            config.unlearn.ratio = ratio;
        }
        if (ju.contains("indices")) {
            const Json& ji = ju.at("indices");
            if (!ji.is_array()) fail(ErrorCode::bad_config, "unlearn.indices must be an array");
            for (const Json& v : ji) {
                if (!v.is_number_integer()) {
                    fail(ErrorCode::bad_config, "unlearn.indices entries must be integers");
                }
                config.unlearn.indices.push_back(v.get<int>());
            }
        }
        if (config.unlearn.ratio.has_value() == !config.unlearn.indices.empty()) {
            fail(ErrorCode::bad_config, "unlearn: specify exactly one of ratio or indices");
        }
        if (ju.contains("eta")) {
            const double eta = get_double(ju, "eta", "unlearn");
            if (eta <= 0.0) fail(ErrorCode::bad_config, "unlearn.eta must be positive");
            config.unlearn.eta = eta;
        }
        if (ju.contains("mode")) {
            try {
                config.unlearn.mode = unlearning::parse_mode(get_string(ju, "mode", "unlearn"));
            } catch (const Error&) {
                fail(ErrorCode::bad_config, "unlearn.mode must be iau or incremental_only");
            }
        }
    } else {
        config.unlearn.ratio = 0.05;
    }

    // oracle
    if (root.contains("oracle")) {
        const Json& jo = root.at("oracle");
        config.oracle.damping = get_double_or(jo, "damping", config.oracle.damping, "oracle");
        config.oracle.cg_tol = get_double_or(jo, "cg_tol", config.oracle.cg_tol, "oracle");
        config.oracle.cg_max_iter = get_int_or(jo, "cg_max_iter", 0, "oracle");
        config.oracle.newton_grad_tol =
            get_double_or(jo, "newton_grad_tol", config.oracle.newton_grad_tol, "oracle");
        if (config.oracle.damping < 0.0 || config.oracle.cg_tol <= 0.0) {
            fail(ErrorCode::bad_config, "oracle: damping must be >= 0 and cg_tol > 0");
        }
    }

    // evaluate
    config.evaluate.attack.lr = 0.05;
    config.evaluate.attack.batch_size = 32;
    config.evaluate.attack.max_epochs = 60;
    config.evaluate.attack.patience = 10;
    if (root.contains("evaluate")) {
        const Json& je = root.at("evaluate");
        config.evaluate.shadows = get_int_or(je, "shadows", 3, "evaluate");
        config.evaluate.pool_n = get_int_or(je, "pool_n", 0, "evaluate");
        if (config.evaluate.shadows < 1) {
            fail(ErrorCode::bad_config, "evaluate.shadows must be >= 1");
        }
        if (je.contains("attack")) {
            config.evaluate.attack =
                parse_train_config(je.at("attack"), "evaluate.attack", config.evaluate.attack);
        }
    }

    // bench
    if (root.contains("bench")) {
        const Json& jb = root.at("bench");
        if (jb.contains("seeds")) {
            const Json& js = jb.at("seeds");
            if (!js.is_array() || js.empty()) {
                fail(ErrorCode::bad_config, "bench.seeds must be a non-empty array");
            }
            for (const Json& v : js) {
                if (!v.is_number_integer() && !v.is_number_unsigned()) {
                    fail(ErrorCode::bad_config, "bench.seeds entries must be integers");
                }
                config.bench_seeds.push_back(v.get<std::uint64_t>());
            }
        }
    }
    if (config.bench_seeds.empty()) config.bench_seeds.push_back(config.seed);

    return config;
}

namespace {

datasets::Dataset load_dataset(const ExperimentConfig& config, std::uint64_t master_seed) {
    switch (config.dataset.source) {
        case DatasetConfig::Source::blobs:
            return datasets::gen_blobs(config.dataset.n, config.dataset.dim,
                                       config.dataset.classes, config.dataset.spread,
                                       rng::derive_stream(master_seed, "data"));
        case DatasetConfig::Source::csv:
            return datasets::load_csv(config.dataset.path, config.dataset.label_column);
        case DatasetConfig::Source::idx:
            return datasets::load_idx(config.dataset.images, config.dataset.labels);
    }
    fail(ErrorCode::bad_config, "unreachable dataset source");
}

models::ModelSpec resolve_model(const ExperimentConfig& config, const datasets::Dataset& ds) {
    models::ModelSpec spec = config.model;
    if (spec.input_dim == 0) spec.input_dim = ds.dim();
    if (spec.classes == 0) spec.classes = ds.classes;
    models::validate(spec);
    if (spec.input_dim != ds.dim()) {
        fail(ErrorCode::bad_config, "model.input_dim " + std::to_string(spec.input_dim) +
                                        " does not match dataset dim " + std::to_string(ds.dim()));
    }
    if (spec.classes < ds.classes) {
        fail(ErrorCode::bad_config, "model.classes " + std::to_string(spec.classes) +
                                        " smaller than dataset classes " +
                                        std::to_string(ds.classes));
    }
    return spec;
}

}  // namespace

PipelineData prepare_data(const ExperimentConfig& config, std::uint64_t master_seed) {
    PipelineData data;
    data.full = load_dataset(config, master_seed);
    data.split = datasets::split(data.full, config.split, rng::derive_stream(master_seed, "split"));
    if (config.unlearn.ratio.has_value()) {
        data.partition = datasets::make_partition(data.split.train.size(), *config.unlearn.ratio,
                                                  rng::derive_stream(master_seed, "partition"));
    } else {
        data.partition = datasets::make_partition(data.split.train.size(), config.unlearn.indices);
    }
    data.eta = config.unlearn.eta.value_or(
        unlearning::default_eta(config.train.lr, data.split.train.size()));
    return data;
}

datasets::Dataset shadow_pool(const ExperimentConfig& config, std::uint64_t master_seed,
                              const PipelineData& data) {
    if (config.dataset.source == DatasetConfig::Source::blobs) {
        const int pool_n =
            config.evaluate.pool_n > 0 ? config.evaluate.pool_n : 2 * data.split.train.size();
        return datasets::gen_blobs(pool_n, config.dataset.dim, config.dataset.classes,
                                   config.dataset.spread, rng::derive_stream(master_seed, "pool"));
    }
    // File-backed data cannot be extended; the test split doubles as the pool.
    return data.split.test;
}

namespace {

struct EvaluationArtifacts {
    evaluation::AttackModel attack;
    models::Checkpoint gold;
    double gold_elapsed_ms = 0.0;
};

// Gold retrain plus the full MIA chain for one experiment seed.
EvaluationArtifacts build_evaluation(const ExperimentConfig& config, std::uint64_t master_seed,
                                     const PipelineData& data, const models::ModelSpec& spec,
                                     const models::Checkpoint* gold_override) {
    EvaluationArtifacts artifacts;
    if (gold_override != nullptr) {
        artifacts.gold = *gold_override;
    } else {
        datasets::Dataset remain =
            datasets::subset(data.split.train, data.partition.remain_indices, "/remain");
        training::TrainConfig tc = config.train;
        tc.seed = rng::derive_stream(master_seed, "train");
        unlearning::RetrainResult retrain =
            unlearning::retrain_oracle(spec, remain, tc, {}, &data.split.val);
        artifacts.gold = std::move(retrain.checkpoint);
        artifacts.gold_elapsed_ms = retrain.elapsed_ms;
    }

    datasets::Dataset pool = shadow_pool(config, master_seed, data);
    training::TrainConfig shadow_tc = config.train;
    shadow_tc.seed = rng::derive_stream(master_seed, "shadows");
    std::vector<evaluation::ShadowModel> shadows =
        evaluation::train_shadows(spec, pool, config.evaluate.shadows, shadow_tc);
    evaluation::AttackDataset attack_set = evaluation::build_attack_dataset(shadows, pool);
    artifacts.attack =
        evaluation::train_attack(attack_set, {}, rng::derive_stream(master_seed, "attack"),
                                 config.evaluate.attack);
    return artifacts;
}

}  // namespace

int cmd_train(const std::string& config_path, const std::string& out_dir) {
    ExperimentConfig config;
    PipelineData data;
    models::ModelSpec spec;
    try {
        config = load_config(config_path);
        data = prepare_data(config, config.seed);
        spec = resolve_model(config, data.full);
    } catch (const std::exception& e) {
        std::cerr << "unlearn-lab train: " << e.what() << "\n";
        return 1;
    }
    try {
        const std::filesystem::path out =
            out_dir.empty() ? std::filesystem::path(config.output_dir) : std::filesystem::path(out_dir);
        training::TrainConfig tc = config.train;
        tc.seed = rng::derive_stream(config.seed, "train");
        auto [ckpt, history] = training::train(spec, data.split.train, tc, &data.split.val);
        ckpt.train_meta["master_seed"] = std::to_string(config.seed);

        models::save_checkpoint(ckpt, out / "checkpoint.bin");
        training::save_history_csv(history, out / "history.csv");
        io::atomic_write(out / "train.timing.txt", timing_lines(history.wall_ms));

        const double test_acc = models::accuracy(spec, ckpt.params, data.split.test);
        std::cout << "[train] epochs=" << history.stopped_epoch
                  << " best_epoch=" << history.best_epoch
                  << " test_acc=" << io::format_double(test_acc)
                  << " grad_norm=" << io::format_double(history.final_grad_norm) << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "unlearn-lab train: " << e.what() << "\n";
        return 2;
    }
}

int cmd_unlearn(const std::string& config_path, const std::string& checkpoint_path,
                const std::string& out_dir) {
    ExperimentConfig config;
    PipelineData data;
    models::Checkpoint ckpt;
    try {
        config = load_config(config_path);
        data = prepare_data(config, config.seed);
        ckpt = models::load_checkpoint(checkpoint_path);
        if (ckpt.spec.input_dim != data.split.train.dim()) {
            fail(ErrorCode::spec_mismatch, "checkpoint input_dim does not match dataset");
        }
    } catch (const std::exception& e) {
        std::cerr << "unlearn-lab unlearn: " << e.what() << "\n";
        return 1;
    }
    try {
        const std::filesystem::path out =
            out_dir.empty() ? std::filesystem::path(config.output_dir) : std::filesystem::path(out_dir);
        unlearning::UnlearnRequest request;
        request.partition = data.partition;
        request.eta = data.eta;
        request.mode = config.unlearn.mode;

        unlearning::UnlearnResult result =
            request.mode == unlearning::UnlearnMode::iau
                ? unlearning::iau_unlearn(ckpt, data.split.train, request)
                : unlearning::incremental_unlearn(ckpt, data.split.train, request);

        models::save_checkpoint(result.checkpoint, out / "unlearned.bin");
        std::string forget_csv = "index\n";
        for (int i : data.partition.forget_indices) forget_csv += std::to_string(i) + "\n";
        io::atomic_write(out / "forget_indices.csv", forget_csv);
        io::atomic_write(out / "unlearn.timing.txt",
                         timing_lines(result.telemetry.elapsed_ms, &result.telemetry.counters));

        std::cout << "[unlearn] mode=" << unlearning::mode_name(request.mode)
                  << " forget=" << data.partition.forget_indices.size()
                  << " eta=" << io::format_double(request.eta)
                  << " elapsed_ms=" << io::format_double(result.telemetry.elapsed_ms) << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "unlearn-lab unlearn: " << e.what() << "\n";
        return 2;
    }
}

int cmd_evaluate(const std::string& config_path, const std::string& unlearned_path,
                 const std::string& gold_path, const std::string& out_dir) {
    ExperimentConfig config;
    PipelineData data;
    models::ModelSpec spec;
    models::Checkpoint unlearned;
    std::optional<models::Checkpoint> gold_loaded;
    try {
        config = load_config(config_path);
        data = prepare_data(config, config.seed);
        spec = resolve_model(config, data.full);
        unlearned = models::load_checkpoint(unlearned_path);
        if (!gold_path.empty()) gold_loaded = models::load_checkpoint(gold_path);
    } catch (const std::exception& e) {
        std::cerr << "unlearn-lab evaluate: " << e.what() << "\n";
        return 1;
    }
    try {
        const std::filesystem::path out =
            out_dir.empty() ? std::filesystem::path(config.output_dir) : std::filesystem::path(out_dir);
        EvaluationArtifacts artifacts =
            build_evaluation(config, config.seed, data, spec,
                             gold_loaded.has_value() ? &*gold_loaded : nullptr);
        if (!gold_loaded.has_value()) {
            models::save_checkpoint(artifacts.gold, out / "gold.bin");
        }

        // Unlearning wall time comes from the sidecar cmd_unlearn wrote.
        const std::filesystem::path sidecar =
            std::filesystem::path(unlearned_path).parent_path() / "unlearn.timing.txt";
        const double time_ms = read_timing_sidecar(sidecar).value_or(0.0);

        datasets::Dataset forget_set =
            datasets::subset(data.split.train, data.partition.forget_indices, "/forget");
        evaluation::MetricsReport report = evaluation::compute_metrics(
            unlearned, artifacts.gold, data.split.test, forget_set, &artifacts.attack, time_ms);
        report.strategy = unlearned.train_meta.count("unlearn_mode")
                              ? unlearned.train_meta.at("unlearn_mode")
                              : "unlearned";
        report.provenance["attack_heldout_accuracy"] =
            io::format_double(artifacts.attack.heldout_accuracy);

        evaluation::save_metrics_txt(report, out / "metrics.txt");
        const evaluation::MetricsReport reports[] = {report};
        evaluation::save_metrics_csv(reports, out / "metrics.csv");

        std::cout << "[evaluate] strategy=" << report.strategy
                  << " mu=" << io::format_double(report.mu)
                  << " ue=" << io::format_double(report.ue)
                  << " attack_heldout_acc=" << io::format_double(artifacts.attack.heldout_accuracy)
                  << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "unlearn-lab evaluate: " << e.what() << "\n";
        return 2;
    }
}

int cmd_oracle(const std::string& config_path, const std::string& checkpoint_path,
               int sample_index, OracleKind kind, const std::string& out_dir) {
    ExperimentConfig config;
    PipelineData data;
    models::Checkpoint ckpt;
    try {
        config = load_config(config_path);
        data = prepare_data(config, config.seed);
        ckpt = models::load_checkpoint(checkpoint_path);
        const int limit =
            kind == OracleKind::remove ? data.split.train.size() : data.split.test.size();
        if (sample_index < 0 || sample_index >= limit) {
            fail(ErrorCode::bad_config, "sample index " + std::to_string(sample_index) +
                                            " outside [0, " + std::to_string(limit) + ")");
        }
    } catch (const std::exception& e) {
        std::cerr << "unlearn-lab oracle: " << e.what() << "\n";
        return 1;
    }
    try {
        const std::filesystem::path out =
            out_dir.empty() ? std::filesystem::path(config.output_dir) : std::filesystem::path(out_dir);
        const datasets::Dataset& train = data.split.train;
        const bool convex = ckpt.spec.kind == models::ModelKind::logistic && ckpt.spec.l2 > 0.0;

        // Influence formulas assume an empirical risk minimizer; refine the
        // checkpoint to one when the loss is strictly convex.
        models::Checkpoint at_optimum = ckpt;
        if (convex) {
            training::NewtonOptions newton;
            newton.grad_tol = config.oracle.newton_grad_tol;
            at_optimum.params = training::newton_fit(ckpt.spec, train, ckpt.params, newton);
        }

        unlearning::InfluenceQuery query;
        query.damping = config.oracle.damping;
        query.cg_tol = config.oracle.cg_tol;
        query.cg_max_iter = config.oracle.cg_max_iter;

        training::TrainConfig tc = config.train;
        tc.seed = rng::derive_stream(config.seed, "train");
        unlearning::RetrainOptions retrain_opts;
        retrain_opts.newton = convex;
        retrain_opts.newton_opts.grad_tol = config.oracle.newton_grad_tol;

        const auto start = Clock::now();
        numerics::ParamVector predicted;
        models::Checkpoint retrained;
        double retrain_ms = 0.0;
        if (kind == OracleKind::remove) {
            predicted = unlearning::influence_remove(at_optimum, train, sample_index, query);
            std::vector<int> keep;
            keep.reserve(train.size() - 1);
            for (int i = 0; i < train.size(); ++i) {
                if (i != sample_index) keep.push_back(i);
            }
            datasets::Dataset remaining = datasets::subset(train, keep, "/minus1");
            unlearning::RetrainResult rr = unlearning::retrain_oracle(
                ckpt.spec, remaining, tc, retrain_opts, &data.split.val);
            retrained = std::move(rr.checkpoint);
            retrain_ms = rr.elapsed_ms;
        } else {
            datasets::Sample z_plus = datasets::sample_at(data.split.test, sample_index);
            predicted = unlearning::influence_add_predict(at_optimum, train, z_plus, query);
            datasets::Dataset extended = datasets::with_appended(train, z_plus);
            unlearning::RetrainResult rr = unlearning::retrain_oracle(
                ckpt.spec, extended, tc, retrain_opts, &data.split.val);
            retrained = std::move(rr.checkpoint);
            retrain_ms = rr.elapsed_ms;
        }
        const double total_ms = elapsed_ms(start);

        const numerics::ParamVector delta_pred = predicted - at_optimum.params;
        const numerics::ParamVector delta_actual = retrained.params - at_optimum.params;
        const double denom = delta_pred.norm() * delta_actual.norm();
        const double cosine = denom > 0.0 ? delta_pred.dot(delta_actual) / denom : 1.0;
        const double rel_l2 = delta_actual.norm() > 0.0
                                  ? (delta_pred - delta_actual).norm() / delta_actual.norm()
                                  : 0.0;

        std::string report;
        report += "kind=" + std::string(kind == OracleKind::remove ? "remove" : "add") + "\n";
        report += "sample_index=" + std::to_string(sample_index) + "\n";
        report += "convex=" + std::string(convex ? "true" : "false") + "\n";
        report += "cosine=" + io::format_double(cosine) + "\n";
        report += "rel_l2=" + io::format_double(rel_l2) + "\n";
        report += "delta_pred_norm=" + io::format_double(delta_pred.norm()) + "\n";
        report += "delta_actual_norm=" + io::format_double(delta_actual.norm()) + "\n";
        io::atomic_write(out / "oracle_report.txt", report);
        io::atomic_write(out / "oracle.timing.txt",
                         timing_lines(total_ms) + "retrain_ms=" + io::format_double(retrain_ms) +
                             "\n");

        std::cout << "[oracle] kind=" << (kind == OracleKind::remove ? "remove" : "add")
                  << " cosine=" << io::format_double(cosine)
                  << " rel_l2=" << io::format_double(rel_l2) << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "unlearn-lab oracle: " << e.what() << "\n";
        return 2;
    }
}

int cmd_bench(const std::string& config_path, const std::string& out_dir) {
    ExperimentConfig config;
    try {
        config = load_config(config_path);
    } catch (const std::exception& e) {
        std::cerr << "unlearn-lab bench: " << e.what() << "\n";
        return 1;
    }
    try {
        const std::filesystem::path out =
            out_dir.empty() ? std::filesystem::path(config.output_dir) : std::filesystem::path(out_dir);

        struct Accumulator {
            double mu = 0.0, time_ms = 0.0, ue = 0.0;
        };
        Accumulator acc_iau, acc_inc, acc_retrain;
        std::string runs_csv = "strategy,seed,mu,time_ms,ue\n";

        for (std::uint64_t seed : config.bench_seeds) {
            PipelineData data = prepare_data(config, seed);
            models::ModelSpec spec = resolve_model(config, data.full);
            training::TrainConfig tc = config.train;
            tc.seed = rng::derive_stream(seed, "train");
            auto [target, history] = training::train(spec, data.split.train, tc, &data.split.val);

            EvaluationArtifacts artifacts =
                build_evaluation(config, seed, data, spec, nullptr);

            unlearning::UnlearnRequest request;
            request.partition = data.partition;
            request.eta = data.eta;

            request.mode = unlearning::UnlearnMode::iau;
            unlearning::UnlearnResult iau_result =
                unlearning::iau_unlearn(target, data.split.train, request);
            request.mode = unlearning::UnlearnMode::incremental_only;
            unlearning::UnlearnResult inc_result =
                unlearning::incremental_unlearn(target, data.split.train, request);

            datasets::Dataset forget_set =
                datasets::subset(data.split.train, data.partition.forget_indices, "/forget");
            evaluation::MetricsReport m_iau = evaluation::compute_metrics(
                iau_result.checkpoint, artifacts.gold, data.split.test, forget_set,
                &artifacts.attack, iau_result.telemetry.elapsed_ms);
            evaluation::MetricsReport m_inc = evaluation::compute_metrics(
                inc_result.checkpoint, artifacts.gold, data.split.test, forget_set,
                &artifacts.attack, inc_result.telemetry.elapsed_ms);

            acc_iau.mu += m_iau.mu;
            acc_iau.time_ms += m_iau.time_ms;
            acc_iau.ue += m_iau.ue;
            acc_inc.mu += m_inc.mu;
            acc_inc.time_ms += m_inc.time_ms;
            acc_inc.ue += m_inc.ue;
            acc_retrain.time_ms += artifacts.gold_elapsed_ms;

            runs_csv += "iau," + std::to_string(seed) + "," + io::format_double(m_iau.mu) + "," +
                        io::format_double(m_iau.time_ms) + "," + io::format_double(m_iau.ue) + "\n";
            runs_csv += "incremental_only," + std::to_string(seed) + "," +
                        io::format_double(m_inc.mu) + "," + io::format_double(m_inc.time_ms) + "," +
                        io::format_double(m_inc.ue) + "\n";
            runs_csv += "retrain," + std::to_string(seed) + ",0," +
                        io::format_double(artifacts.gold_elapsed_ms) + ",0\n";
        }

        const double k = static_cast<double>(config.bench_seeds.size());
        std::vector<evaluation::MetricsReport> table(2);
        table[0].strategy = "iau";
        table[0].mu = acc_iau.mu / k;
        table[0].time_ms = acc_iau.time_ms / k;
        table[0].ue = acc_iau.ue / k;
        table[1].strategy = "incremental_only";
        table[1].mu = acc_inc.mu / k;
        table[1].time_ms = acc_inc.time_ms / k;
        table[1].ue = acc_inc.ue / k;
        evaluation::assign_avg_ranks(table);

        evaluation::MetricsReport retrain_row;
        retrain_row.strategy = "retrain";
        retrain_row.time_ms = acc_retrain.time_ms / k;  // gold: zero gaps, no rank
        std::vector<evaluation::MetricsReport> full_table = {retrain_row, table[0], table[1]};

        io::atomic_write(out / "bench_runs.csv", runs_csv);
        evaluation::save_metrics_csv(full_table, out / "bench_table.csv");

        std::string summary;
        summary += "strategies: retrain (gold), iau, incremental_only\n";
        summary += "seeds: " + std::to_string(config.bench_seeds.size()) + "\n";
        for (const auto& row : full_table) {
            summary += row.strategy + ": mu=" + io::format_double(row.mu) +
                       " time_ms=" + io::format_double(row.time_ms) +
                       " ue=" + io::format_double(row.ue);
            if (row.avg_rank.has_value()) summary += " avg_rank=" + io::format_double(*row.avg_rank);
            summary += "\n";
        }
        const double speedup =
            table[0].time_ms > 0.0 ? (acc_retrain.time_ms / k) / table[0].time_ms : 0.0;
        summary += "retrain/iau wall-time ratio: " + io::format_double(speedup) + "\n";
        io::atomic_write(out / "summary.txt", summary);

        std::cout << "[bench] seeds=" << config.bench_seeds.size()
                  << " iau_mu=" << io::format_double(table[0].mu)
                  << " inc_mu=" << io::format_double(table[1].mu)
                  << " speedup=" << io::format_double(speedup) << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "unlearn-lab bench: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace unlearn::experiment
