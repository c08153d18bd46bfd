// unlearn-lab: train / unlearn / evaluate / oracle / bench pipelines.
// Exit codes: 0 success, 1 validation error, 2 runtime error.

#include <string>

#include <CLI11.hpp>

#include "unlearn/experiment.hpp"

int main(int argc, char** argv) {
    CLI::App app{"machine-unlearning laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::string checkpoint_path;
    std::string unlearned_path;
    std::string gold_path;
    std::string oracle_kind = "remove";
    int sample_index = 0;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "experiment config (JSON)")->required();
        cmd->add_option("--out", out_dir, "output directory (default: config output_dir)");
    };

    CLI::App* train = app.add_subcommand("train", "train the target model");
    add_common(train);

    CLI::App* unlearn_cmd = app.add_subcommand("unlearn", "apply one unlearning update");
    add_common(unlearn_cmd);
    unlearn_cmd->add_option("--checkpoint", checkpoint_path, "trained checkpoint")->required();

    CLI::App* evaluate = app.add_subcommand("evaluate", "MU/Time/UE metrics against the gold model");
    add_common(evaluate);
    evaluate->add_option("--unlearned", unlearned_path, "unlearned checkpoint")->required();
    evaluate->add_option("--gold", gold_path, "retrained gold checkpoint (computed when omitted)");

    CLI::App* oracle = app.add_subcommand("oracle", "influence prediction vs retraining");
    add_common(oracle);
    oracle->add_option("--checkpoint", checkpoint_path, "trained checkpoint")->required();
    oracle->add_option("--sample", sample_index, "sample index (train row for remove, test row for add)")
        ->required();
    oracle->add_option("--kind", oracle_kind, "remove | add")
        ->check(CLI::IsMember({"remove", "add"}));

    CLI::App* bench = app.add_subcommand("bench", "compare strategies over the seed grid");
    add_common(bench);

    CLI11_PARSE(app, argc, argv);

    using namespace unlearn::experiment;
    if (train->parsed()) return cmd_train(config_path, out_dir);
    if (unlearn_cmd->parsed()) return cmd_unlearn(config_path, checkpoint_path, out_dir);
    if (evaluate->parsed()) return cmd_evaluate(config_path, unlearned_path, gold_path, out_dir);
    if (oracle->parsed()) {
        return cmd_oracle(config_path, checkpoint_path, sample_index,
                          oracle_kind == "remove" ? OracleKind::remove : OracleKind::add, out_dir);
    }
    if (bench->parsed()) return cmd_bench(config_path, out_dir);
    return 1;
}
