#pragma once

#include <cstdint>
#include <string>

#include "latflow/tensor.hpp"

namespace latflow {

/// Noise-to-data interpolation schedules. tau = 0 is pure noise, tau = 1 is
/// clean data:
///   linear: alpha = tau,          sigma = 1 - tau
///   gvp:    alpha = sin(pi/2 tau), sigma = cos(pi/2 tau)  (alpha^2+sigma^2=1)
enum class Schedule { Linear, Gvp };

Schedule schedule_from_string(const std::string& s);
std::string schedule_to_string(Schedule s);

/// Coefficients of one schedule at one time, with derivatives.
struct ScheduleEval {
    double alpha = 0, sigma = 0, dalpha = 0, dsigma = 0;
};

/// Evaluates a schedule. tau must lie in [0, 1].
ScheduleEval schedule_eval(Schedule s, double tau);

/// o_tau = alpha * o1 + sigma * eps, elementwise.
Tensor interpolate(const Tensor& o1, const Tensor& eps, double tau, Schedule s);

/// Mean squared error between a data prediction and the clean target,
/// accumulated in double. The trainable-graph variant is ad::mse.
double data_prediction_loss(const Tensor& o_hat, const Tensor& o1);

/// Clamps tau away from the schedule singularities at 0 and 1. eps_clamp > 0
/// returns the clamped value; eps_clamp == 0 means strict mode, which throws
/// NumericError inside the singular band instead.
double clamp_tau(double tau, double eps_clamp);

/// Score reconstruction from a data prediction:
///   s_hat = -(o_tau - alpha * o_hat) / sigma^2
/// Valid for sigma > 0, so tau must be clamped below 1 first.
double score_from_data_prediction(double o_tau, double o_hat, const ScheduleEval& se);

/// Velocity reconstruction from a data prediction:
///   v_hat = s_hat * (dalpha * sigma^2 / alpha - sigma * dsigma) + (dalpha / alpha) * o_tau
/// Valid for alpha > 0 and sigma > 0 (tau clamped on both sides).
double velocity_from_data_prediction(double o_tau, double o_hat, const ScheduleEval& se);

/// Vectorized velocity over float arrays; arithmetic runs in double per
/// element. tau is clamped (or rejected, in strict mode) once up front.
void velocity_field(Schedule s, double tau, double eps_clamp, const float* o_tau,
                    const float* o_hat, float* v, std::int64_t n);

} // namespace latflow
