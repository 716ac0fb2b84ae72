#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "latflow/flow_model.hpp"
#include "latflow/latent_autoencoder.hpp"
#include "latflow/metrics.hpp"
#include "latflow/nbody.hpp"
#include "latflow/sampler.hpp"
#include "latflow/tensor.hpp"
#include "latflow/trajectory.hpp"

namespace latflow::eval {

/// Benchmark protocol: per test trajectory, draw k forecasts conditioned on
/// the first condition_frames frames, report ADE/FDE averaged over the k
/// draws (the headline numbers) and minADE/minFDE over the same draws.
struct EvalProtocol {
    std::int64_t k = 5;
    std::int64_t condition_frames = 10;
    sampler::Integrator integrator = sampler::Integrator::EulerFixed;
    std::int64_t steps = 10;
    double rtol = 1e-5, atol = 1e-5;
    double eps_clamp = 1e-4;
    std::int64_t max_trajectories = -1; // cap for smoke runs; -1 means all
    std::int64_t keep_forecasts = 4;    // trajectories retained for plotting
    std::uint64_t seed = 0;
};

void validate_protocol(const EvalProtocol& p);

/// One trajectory's overlay data: what was shown to the model, what really
/// happened, and what the model drew.
struct TrajectoryForecasts {
    std::int64_t traj_id = 0;
    Tensor observed;             // [T_o, N, D]
    Tensor future;               // [T - T_o, N, D], ground truth
    std::vector<Tensor> samples; // k model draws, each shaped like future
};

struct EvalResult {
    metrics::MetricReport report;
    std::vector<TrajectoryForecasts> forecasts; // first keep_forecasts entries
    std::int64_t nfe = 0; // velocity-network evaluations (model runs only)
};

/// k future predictions [T - T_o, N, D] for one trajectory. seed is the
/// per-trajectory stream; implementations must be deterministic in it.
using Forecaster = std::function<std::vector<Tensor>(
    const Trajectory& traj, std::int64_t t_obs, std::int64_t k, std::uint64_t seed)>;

/// Runs the protocol over a test split with an arbitrary forecaster. The
/// static and linear baselines are always scored from the same observed
/// frames. Errors from the forecaster are rethrown with the trajectory
/// index prepended. Aggregation order is fixed, so results are reproducible
/// regardless of how the per-trajectory work is scheduled.
EvalResult evaluate_forecaster(const Forecaster& forecaster,
                               const nbody::TrajectoryDataset& test,
                               const EvalProtocol& p);

/// The forecaster backed by the two trained stages and the ODE sampler.
EvalResult evaluate_model(const flow::FlowModel& s2, const ae::Autoencoder& s1,
                          const nbody::TrajectoryDataset& test, const EvalProtocol& p);

/// JSON summary of a finished evaluation: aggregate metrics, protocol, and
/// the checkpoint fingerprints that produced them. Stable key order.
std::string report_json(const metrics::MetricReport& report, const std::string& scenario,
                        const EvalProtocol& p, const std::string& stage1_fingerprint,
                        const std::string& stage2_fingerprint);

/// Writes metrics.csv plus one overlay SVG for the scenario into out_dir:
/// per retained trajectory, the observed stub, the true future, and every
/// sampled future. Contents depend only on the inputs, so a rerun is
/// byte-identical. Returns the paths written; throws IoError when the
/// directory cannot be created or a file cannot be written.
std::vector<std::string> emit_plots(const metrics::MetricReport& report,
                                    const std::vector<TrajectoryForecasts>& forecasts,
                                    const std::string& scenario, std::uint64_t seed,
                                    const std::string& out_dir);

} // namespace latflow::eval
