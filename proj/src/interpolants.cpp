#include "latflow/interpolants.hpp"

#include <cmath>

#include "latflow/error.hpp"

namespace latflow {

Schedule schedule_from_string(const std::string& s) {
    if (s == "linear") return Schedule::Linear;
    if (s == "gvp") return Schedule::Gvp;
    throw ConfigError("unknown schedule '" + s + "' (expected 'linear' or 'gvp')");
}

std::string schedule_to_string(Schedule s) {
    return s == Schedule::Linear ? "linear" : "gvp";
}

ScheduleEval schedule_eval(Schedule s, double tau) {
    if (!(tau >= 0.0 && tau <= 1.0))
        throw RangeError("schedule time must lie in [0, 1], got " + std::to_string(tau));
    ScheduleEval e;
    switch (s) {
        case Schedule::Linear:
            e.alpha = tau;
            e.sigma = 1.0 - tau;
            e.dalpha = 1.0;
            e.dsigma = -1.0;
            break;
        case Schedule::Gvp: {
            const double h = 0.5 * M_PI;
            e.alpha = std::sin(h * tau);
            e.sigma = std::cos(h * tau);
            e.dalpha = h * std::cos(h * tau);
            e.dsigma = -h * std::sin(h * tau);
            break;
        }
    }
    return e;
}

Tensor interpolate(const Tensor& o1, const Tensor& eps, double tau, Schedule s) {
    if (!shape_eq(o1.shape, eps.shape))
        throw ShapeError("interpolate: data " + shape_str(o1.shape) + " vs noise " +
                         shape_str(eps.shape));
    const auto se = schedule_eval(s, tau);
    Tensor out(o1.shape);
    const std::int64_t n = out.numel();
    for (std::int64_t i = 0; i < n; ++i)
        out.data[i] = static_cast<float>(se.alpha * o1.data[i] + se.sigma * eps.data[i]);
    return out;
}

double data_prediction_loss(const Tensor& o_hat, const Tensor& o1) {
    if (!shape_eq(o_hat.shape, o1.shape))
        throw ShapeError("data_prediction_loss: shape mismatch");
    double s = 0.0;
    const std::int64_t n = o_hat.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(o_hat.data[i]) - o1.data[i];
        s += d * d;
    }
    return s / static_cast<double>(n);
}

double clamp_tau(double tau, double eps_clamp) {
    if (eps_clamp < 0.0 || eps_clamp >= 0.5)
        throw RangeError("eps_clamp must lie in [0, 0.5)");
    if (eps_clamp == 0.0) {
        // strict mode: the score and velocity formulas divide by alpha and
        // sigma^2, so the exact endpoints are singular
        if (tau <= 0.0 || tau >= 1.0)
            throw NumericError("tau=" + std::to_string(tau) +
                               " is singular for score/velocity reconstruction (strict mode)");
        return tau;
    }
    return std::min(std::max(tau, eps_clamp), 1.0 - eps_clamp);
}

double score_from_data_prediction(double o_tau, double o_hat, const ScheduleEval& se) {
    const double s2 = se.sigma * se.sigma;
    if (s2 <= 0.0) throw NumericError("score reconstruction needs sigma > 0");
    return -(o_tau - se.alpha * o_hat) / s2;
}

double velocity_from_data_prediction(double o_tau, double o_hat, const ScheduleEval& se) {
    if (se.alpha <= 0.0) throw NumericError("velocity reconstruction needs alpha > 0");
    const double s_hat = score_from_data_prediction(o_tau, o_hat, se);
    const double drift = se.dalpha * se.sigma * se.sigma / se.alpha - se.sigma * se.dsigma;
    return s_hat * drift + (se.dalpha / se.alpha) * o_tau;
}

void velocity_field(Schedule s, double tau, double eps_clamp, const float* o_tau,
                    const float* o_hat, float* v, std::int64_t n) {
    const double tc = clamp_tau(tau, eps_clamp);
    const auto se = schedule_eval(s, tc);
    // Hoist the scalar algebra: v = a * o_tau + b * o_hat per element.
    const double s2 = se.sigma * se.sigma;
    const double drift = se.dalpha * s2 / se.alpha - se.sigma * se.dsigma;
    const double a = -drift / s2 + se.dalpha / se.alpha;
    const double b = drift * se.alpha / s2;
    for (std::int64_t i = 0; i < n; ++i)
        v[i] = static_cast<float>(a * static_cast<double>(o_tau[i]) +
                                  b * static_cast<double>(o_hat[i]));
}

} // namespace latflow
