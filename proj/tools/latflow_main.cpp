#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "latflow/error.hpp"
#include "latflow/golden.hpp"
#include "latflow/pipeline.hpp"

// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

namespace {

using namespace latflow;

int dispatch(CLI::App& app, const std::string& picked, const pipeline::CommonOpts& common,
             const pipeline::GenerateOpts& gen, const pipeline::TrainStage1Opts& t1,
             const pipeline::TrainStage2Opts& t2, const pipeline::SampleOpts& smp,
             const pipeline::EvaluateOpts& ev, const pipeline::PlotOpts& plt,
             const std::string& golden_name, const std::string& goldens_dir, bool golden_list) {
    if (picked == "generate") {
        pipeline::cmd_generate(gen, common);
    } else if (picked == "train-stage1") {
        pipeline::cmd_train_stage1(t1, common);
    } else if (picked == "train-stage2") {
        pipeline::cmd_train_stage2(t2, common);
    } else if (picked == "sample") {
        pipeline::cmd_sample(smp, common);
    } else if (picked == "evaluate") {
        pipeline::cmd_evaluate(ev, common);
    } else if (picked == "plot") {
        pipeline::cmd_plot(plt, common);
    } else if (picked == "golden") {
        if (golden_list) {
            for (const auto& name : golden::golden_names()) std::cout << name << "\n";
            return 0;
        }
        bool all_pass = true;
        const auto names =
            golden_name.empty() ? golden::golden_names() : std::vector<std::string>{golden_name};
        for (const auto& name : names) {
            const auto outcome = golden::run_golden(name, goldens_dir);
            all_pass = all_pass && outcome.pass;
            std::cout << (outcome.pass ? "PASS " : "FAIL ") << outcome.name << " ("
                      << outcome.seconds << "s): " << outcome.detail << "\n";
        }
        return all_pass ? 0 : 1;
    } else {
        std::cerr << app.help() << "\n";
        return 2;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-stage latent flow forecasting for spatial systems"};
    app.require_subcommand(0, 1);

    pipeline::CommonOpts common;
    if (const char* root = std::getenv("LATFLOW_OUT_ROOT")) common.out_root = root;
    app.add_flag("--no-timestamp", common.no_timestamp,
                 "omit wall-clock fields from manifests (golden runs)");

    pipeline::GenerateOpts gen;
    auto* cmd_gen = app.add_subcommand("generate", "simulate an n-body dataset");
    cmd_gen->add_option("--scenario", gen.scenario, "charged | spring | gravity");
    cmd_gen->add_option("--counts", gen.counts, "train,val,test trajectory counts");
    cmd_gen->add_option("--entities", gen.entities, "override the scenario entity count");
    cmd_gen->add_option("--frames", gen.frames, "override the frames per trajectory");
    cmd_gen->add_option("--seed", gen.seed, "master seed");
    cmd_gen->add_option("--out", gen.out, "output directory")->required();

    pipeline::TrainStage1Opts t1;
    auto* cmd_t1 = app.add_subcommand("train-stage1", "train the entity autoencoder");
    cmd_t1->add_option("--config", t1.config, "run config json");
    cmd_t1->add_option("--data", t1.data, "dataset root")->required();
    cmd_t1->add_option("--out", t1.out, "checkpoint directory")->required();
    cmd_t1->add_option("--resume", t1.resume, "continue from an earlier checkpoint");
    cmd_t1->add_flag("--print-effective-config", common.print_config,
                     "dump the resolved config and stop");

    pipeline::TrainStage2Opts t2;
    auto* cmd_t2 = app.add_subcommand("train-stage2", "train the latent flow approximator");
    cmd_t2->add_option("--config", t2.config, "run config json");
    cmd_t2->add_option("--stage1", t2.stage1, "frozen first-stage checkpoint")->required();
    cmd_t2->add_option("--data", t2.data, "dataset root")->required();
    cmd_t2->add_option("--out", t2.out, "checkpoint directory")->required();
    cmd_t2->add_flag("--print-effective-config", common.print_config,
                     "dump the resolved config and stop");

    pipeline::SampleOpts smp;
    auto* cmd_smp = app.add_subcommand("sample", "draw forecasts for one trajectory");
    cmd_smp->add_option("--stage2", smp.stage2, "second-stage checkpoint")->required();
    cmd_smp->add_option("--stage1", smp.stage1, "first stage (default <stage2>/stage1)");
    cmd_smp->add_option("--input", smp.input, "dataset split directory")->required();
    cmd_smp->add_option("--traj", smp.traj, "trajectory index in the split");
    cmd_smp->add_option("--observed", smp.observed, "conditioning frames (default: config)");
    cmd_smp->add_option("--frames", smp.frames, "total frames incl. observed");
    cmd_smp->add_option("--k", smp.k, "independent draws");
    cmd_smp->add_option("--integrator", smp.integrator, "euler-fixed | adaptive");
    cmd_smp->add_option("--steps", smp.steps, "Euler steps");
    cmd_smp->add_option("--seed", smp.seed, "noise seed");
    cmd_smp->add_option("--out", smp.out, "output directory")->required();

    pipeline::EvaluateOpts ev;
    auto* cmd_ev = app.add_subcommand("evaluate", "score a checkpoint on a test split");
    cmd_ev->add_option("--stage2", ev.stage2, "second-stage checkpoint")->required();
    cmd_ev->add_option("--stage1", ev.stage1, "first stage (default <stage2>/stage1)");
    cmd_ev->add_option("--data", ev.data, "dataset root or split directory")->required();
    cmd_ev->add_option("--k", ev.k, "draws per trajectory");
    cmd_ev->add_option("--integrator", ev.integrator, "euler-fixed | adaptive");
    cmd_ev->add_option("--steps", ev.steps, "Euler steps");
    cmd_ev->add_option("--max-traj", ev.max_traj, "evaluate only the first n trajectories");
    cmd_ev->add_option("--keep", ev.keep, "trajectories retained for plots");
    cmd_ev->add_option("--seed", ev.seed, "protocol seed");
    cmd_ev->add_option("--out", ev.out, "report directory")->required();

    pipeline::PlotOpts plt;
    auto* cmd_plt = app.add_subcommand("plot", "re-emit figures from a report directory");
    cmd_plt->add_option("--report", plt.report, "directory written by evaluate")->required();
    cmd_plt->add_option("--out", plt.out, "output directory")->required();

    std::string golden_name, goldens_dir = "goldens";
    bool golden_list = false;
    auto* cmd_gold = app.add_subcommand("golden", "run pinned result checks");
    cmd_gold->add_option("--name", golden_name, "one golden (default: all)");
    cmd_gold->add_option("--dir", goldens_dir, "directory of expectation files");
    cmd_gold->add_flag("--list", golden_list, "print the golden names and stop");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    std::string picked;
    for (const auto* sub : app.get_subcommands()) picked = sub->get_name();
    if (picked.empty()) {
        std::cout << app.help();
        return 2;
    }

    try {
        return dispatch(app, picked, common, gen, t1, t2, smp, ev, plt, golden_name,
                        goldens_dir, golden_list);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
