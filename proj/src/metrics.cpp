#include "latflow/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "latflow/error.hpp"

namespace latflow::metrics {

namespace {

void check_pair(const Tensor& truth, const Tensor& pred) {
    if (truth.shape.size() != 3)
        throw ShapeError("metric inputs must be [frames, entities, coords], got " +
                         shape_str(truth.shape));
    if (!shape_eq(truth.shape, pred.shape))
        throw ShapeError("metric shape mismatch: " + shape_str(truth.shape) + " vs " +
                         shape_str(pred.shape));
}

// mean Euclidean distance over rows [a, b) of the frame axis
double mean_dist(const Tensor& truth, const Tensor& pred, std::int64_t a, std::int64_t b) {
    const auto N = truth.shape[1], D = truth.shape[2];
    double acc = 0.0;
    for (std::int64_t f = a; f < b; ++f)
        for (std::int64_t i = 0; i < N; ++i) {
            double r2 = 0.0;
            for (std::int64_t d = 0; d < D; ++d) {
                const auto off = (f * N + i) * D + d;
                const double diff = static_cast<double>(truth.data[static_cast<std::size_t>(off)]) -
                                    pred.data[static_cast<std::size_t>(off)];
                r2 += diff * diff;
            }
            acc += std::sqrt(r2);
        }
    return acc / (static_cast<double>(b - a) * static_cast<double>(N));
}

} // namespace

double ade(const Tensor& truth, const Tensor& pred) {
    check_pair(truth, pred);
    return mean_dist(truth, pred, 0, truth.shape[0]);
}

double fde(const Tensor& truth, const Tensor& pred) {
    check_pair(truth, pred);
    return mean_dist(truth, pred, truth.shape[0] - 1, truth.shape[0]);
}

double reconstruction_error(const Tensor& truth, const Tensor& pred) {
    return ade(truth, pred);
}

MinMetrics min_metrics(const Tensor& truth, const std::vector<Tensor>& samples) {
    if (samples.empty()) throw RangeError("min_metrics needs at least one sample");
    MinMetrics m;
    m.min_ade = std::numeric_limits<double>::infinity();
    m.min_fde = std::numeric_limits<double>::infinity();
    for (const auto& s : samples) {
        m.min_ade = std::min(m.min_ade, ade(truth, s));
        m.min_fde = std::min(m.min_fde, fde(truth, s));
    }
    return m;
}

Tensor baseline_static(const Tensor& observed, std::int64_t horizon) {
    if (observed.shape.size() != 3 || observed.shape[0] < 1)
        throw ShapeError("observed must be [T_o >= 1, entities, coords]");
    if (horizon < 1) throw RangeError("forecast horizon must be positive");
    const auto T_o = observed.shape[0], N = observed.shape[1], D = observed.shape[2];
    Tensor out({horizon, N, D});
    const auto* last = observed.data.data() + (T_o - 1) * N * D;
    for (std::int64_t f = 0; f < horizon; ++f)
        std::copy_n(last, N * D, out.data.data() + f * N * D);
    return out;
}

Tensor baseline_linear(const Tensor& observed, std::int64_t horizon) {
    if (observed.shape.size() != 3)
        throw ShapeError("observed must be [T_o, entities, coords]");
    if (observed.shape[0] < 2)
        throw RangeError("constant-velocity extrapolation needs at least 2 observed frames");
    if (horizon < 1) throw RangeError("forecast horizon must be positive");
    const auto T_o = observed.shape[0], N = observed.shape[1], D = observed.shape[2];
    Tensor out({horizon, N, D});
    const auto* last = observed.data.data() + (T_o - 1) * N * D;
    const auto* prev = observed.data.data() + (T_o - 2) * N * D;
    for (std::int64_t f = 0; f < horizon; ++f)
        for (std::int64_t i = 0; i < N * D; ++i) {
            // double accumulation keeps long horizons exact for linear motion
            const double v = static_cast<double>(last[i]) - prev[i];
            out.data[static_cast<std::size_t>(f * N * D + i)] =
                static_cast<float>(last[i] + static_cast<double>(f + 1) * v);
        }
    return out;
}

std::string metrics_csv(const MetricReport& report, const std::string& scenario,
                        std::uint64_t seed) {
    std::string out = "scenario,traj_id,method,ade,fde,min_ade,min_fde,K,seed\n";
    char buf[256];
    for (const auto& r : report.rows) {
        std::snprintf(buf, sizeof(buf), "%s,%lld,%s,%.9g,%.9g,%.9g,%.9g,%lld,%llu\n",
                      scenario.c_str(), static_cast<long long>(r.traj_id), r.method.c_str(),
                      r.ade, r.fde, r.min_ade, r.min_fde, static_cast<long long>(report.k),
                      static_cast<unsigned long long>(seed));
        out += buf;
    }
    return out;
}

} // namespace latflow::metrics
