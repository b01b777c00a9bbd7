// fallfuse: synth | train | eval | curves, each driven by a key=value
// config file. Exit codes: 0 success, 2 config/parse problems, 3 numeric
// divergence during training, 4 checkpoint/corpus modality mismatch.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "fallfuse/commands.hpp"
#include "fallfuse/error.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_seed = true) {
    cmd->add_option("--config", args.config_path, "run configuration file")->required();
    cmd->add_option("--out", args.out_dir, "output directory (default: out.dir key or ./out)");
    if (with_seed) {
        cmd->add_option_function<std::uint64_t>(
            "--seed", [&args](std::uint64_t v) { args.seed = v; },
            "override the config seed");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multimodal fall-detection experiment harness"};
    app.require_subcommand(1);

    CommonArgs synth_args, train_args, eval_args, curves_args;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic corpus cache");
    add_common(synth, synth_args);
    CLI::App* train = app.add_subcommand("train", "train the selected model variants");
    add_common(train, train_args);
    CLI::App* eval = app.add_subcommand("eval", "evaluate checkpoints on the test split");
    add_common(eval, eval_args);
    CLI::App* curves = app.add_subcommand("curves", "merge epoch CSVs for plotting");
    add_common(curves, curves_args);  // --seed accepted for grammar parity, unused

    CLI11_PARSE(app, argc, argv);

    const auto run = [&](const CommonArgs& args, auto&& body) -> int {
        try {
            fallfuse::Config cfg = fallfuse::Config::parse_file(args.config_path);
            const std::string out_dir =
                args.out_dir != "out" ? args.out_dir : cfg.get("out.dir", args.out_dir);
            body(cfg, out_dir, args.seed);
            return 0;
        } catch (const fallfuse::DivergenceError& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 3;
        } catch (const fallfuse::ModalityError& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 4;
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 2;
        }
    };

    if (synth->parsed()) {
        return run(synth_args, [](const auto& cfg, const auto& out, auto seed) {
            fallfuse::cmd_synth(cfg, out, seed);
        });
    }
    if (train->parsed()) {
        return run(train_args, [](const auto& cfg, const auto& out, auto seed) {
            fallfuse::cmd_train(cfg, out, seed);
        });
    }
    if (eval->parsed()) {
        return run(eval_args, [](const auto& cfg, const auto& out, auto seed) {
            fallfuse::cmd_eval(cfg, out, seed);
        });
    }
    if (curves->parsed()) {
        return run(curves_args, [](const auto& cfg, const auto& out, auto) {
            fallfuse::cmd_curves(cfg, out);
        });
    }
    return 2;
}
