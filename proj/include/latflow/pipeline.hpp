#pragma once

#include <cstdint>
#include <string>

namespace latflow::pipeline {

/// Flags shared by every subcommand.
struct CommonOpts {
    bool no_timestamp = false; // manifests omit wall-clock fields
    bool print_config = false; // dump the resolved run config and stop
    std::string out_root;      // optional root for relative output paths
};

/// Applies out_root to a relative output path; absolute paths pass through.
std::string resolve_out(const CommonOpts& common, const std::string& out);

struct GenerateOpts {
    std::string scenario = "spring";
    std::string counts = "500,100,100"; // train,val,test
    std::int64_t entities = 0;          // 0 keeps the scenario default
    std::int64_t frames = 0;
    std::uint64_t seed = 1;
    std::string out;
};

struct TrainStage1Opts {
    std::string config; // run config json; empty means defaults
    std::string data;   // dataset root holding train/ val/ test/
    std::string out;
    std::string resume; // earlier checkpoint dir; continues epoch numbering
};

struct TrainStage2Opts {
    std::string config;
    std::string stage1; // frozen first-stage checkpoint dir
    std::string data;
    std::string out;
};

struct SampleOpts {
    std::string stage2;
    std::string stage1; // empty: <stage2>/stage1, written by train-stage2
    std::string input;  // dataset split directory
    std::int64_t traj = 0;
    std::int64_t observed = 0; // 0: the checkpoint's conditioning horizon
    std::int64_t frames = 0;   // total frames incl. observed; 0: input length
    std::int64_t k = 1;
    std::string integrator = "euler-fixed";
    std::int64_t steps = 10;
    std::uint64_t seed = 0;
    std::string out;
};

struct EvaluateOpts {
    std::string stage2;
    std::string stage1;
    std::string data; // dataset root (test/ split) or a split directory
    std::int64_t k = 5;
    std::string integrator = "euler-fixed";
    std::int64_t steps = 10;
    std::int64_t max_traj = -1;
    std::int64_t keep = 4; // trajectories retained for overlay plots
    std::uint64_t seed = 0;
    std::string out;
};

struct PlotOpts {
    std::string report; // directory written by cmd_evaluate
    std::string out;
};

void cmd_generate(const GenerateOpts& opts, const CommonOpts& common);
void cmd_train_stage1(const TrainStage1Opts& opts, const CommonOpts& common);
void cmd_train_stage2(const TrainStage2Opts& opts, const CommonOpts& common);
void cmd_sample(const SampleOpts& opts, const CommonOpts& common);
void cmd_evaluate(const EvaluateOpts& opts, const CommonOpts& common);
void cmd_plot(const PlotOpts& opts, const CommonOpts& common);

} // namespace latflow::pipeline
