#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latflow/tensor.hpp"

namespace latflow::metrics {

/// Mean Euclidean (not squared) distance over all frames and entities.
/// Inputs are [F, N, D] and must match exactly.
double ade(const Tensor& truth, const Tensor& pred);

/// Mean Euclidean distance over entities at the final frame only.
double fde(const Tensor& truth, const Tensor& pred);

/// Same reduction as ade; named separately because it is reported over full
/// trajectories (autoencoder round trips) rather than forecast horizons.
double reconstruction_error(const Tensor& truth, const Tensor& pred);

struct MinMetrics {
    double min_ade = 0.0;
    double min_fde = 0.0;
};

/// Minimum per-sample ADE and minimum per-sample FDE over K samples, each
/// minimized independently. Throws RangeError on an empty sample list.
MinMetrics min_metrics(const Tensor& truth, const std::vector<Tensor>& samples);

/// Persistence forecast: the last observed frame repeated `horizon` times.
/// observed is [T_o, N, D] with T_o >= 1.
Tensor baseline_static(const Tensor& observed, std::int64_t horizon);

/// Constant-velocity forecast from the last observed frame step. Needs
/// T_o >= 2 for the velocity estimate; throws RangeError otherwise.
Tensor baseline_linear(const Tensor& observed, std::int64_t horizon);

/// One evaluated (trajectory, method) pair. `method` is "model",
/// "baseline_static", or "baseline_linear".
struct TrajectoryMetrics {
    std::int64_t traj_id = 0;
    std::string method;
    double ade = 0.0;
    double fde = 0.0;
    double min_ade = 0.0;
    double min_fde = 0.0;
};

/// Aggregated evaluation over one test split. Headline ade/fde follow the
/// mean-over-K protocol; min_ade/min_fde are carried alongside under their
/// own labels so the two protocols are never conflated.
struct MetricReport {
    double ade = 0.0, fde = 0.0;
    double min_ade = 0.0, min_fde = 0.0;
    double static_ade = 0.0, static_fde = 0.0;
    double linear_ade = 0.0, linear_fde = 0.0;
    std::int64_t k = 0;
    std::vector<TrajectoryMetrics> rows;
};

/// CSV with header [scenario,traj_id,method,ade,fde,min_ade,min_fde,K,seed],
/// one row per report entry. Formatting is pinned so reruns are byte-equal.
std::string metrics_csv(const MetricReport& report, const std::string& scenario,
                        std::uint64_t seed);

} // namespace latflow::metrics
