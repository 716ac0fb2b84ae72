#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "latflow/flow_model.hpp"
#include "latflow/latent_autoencoder.hpp"
#include "latflow/tensor.hpp"
#include "latflow/trajectory.hpp"

namespace latflow::sampler {

enum class Integrator { EulerFixed, Adaptive };

Integrator integrator_from_string(const std::string& s);
std::string integrator_to_string(Integrator kind);

struct SamplerConfig {
    Integrator integrator = Integrator::EulerFixed;
    std::int64_t steps = 10;         // fixed-step Euler
    double rtol = 1e-5, atol = 1e-5; // adaptive integrator
    std::int64_t k_samples = 1;
    double eps_clamp = 1e-4; // keeps tau away from the schedule singularities
    std::uint64_t seed = 0;
};

void validate_sampler(const SamplerConfig& cfg);

/// Time-dependent field over a flat tensor state.
using VectorField = std::function<Tensor(const Tensor&, double)>;

/// Fixed-step Euler on tau in [0, 1]:
///   z_{k+1} = z_k + (1/steps) * field(z_k, k/steps)
/// Elementwise update arithmetic runs in double and rounds back to float32,
/// so a scalar closed-form recursion reproduces it bitwise. Throws
/// NumericError naming the step if the field returns a non-finite value.
Tensor integrate_euler(const VectorField& field, Tensor z0, std::int64_t steps);

/// Adaptive Dormand-Prince 4(5) on tau in [0, 1] with elementwise error
/// control err <= atol + rtol * |z|. State is carried in double between
/// field evaluations.
Tensor integrate_adaptive(const VectorField& field, Tensor z0, double rtol, double atol);

struct Forecast {
    Trajectory predicted;  // [T - T_o, N, D_x], M copied from the input
    std::int64_t nfe = 0;  // velocity-network evaluations
};

/// Conditional generation: encodes the observed frames with the frozen first
/// stage, integrates the reparameterized flow from noise over all
/// total_frames frames, and decodes the unobserved tail. The identifier
/// assignment is validated and used for both encoding and decoding.
Forecast sample_forecast(const flow::FlowModel& s2, const ae::Autoencoder& s1,
                         const Trajectory& observed,
                         const std::vector<std::int64_t>& assignment,
                         std::int64_t total_frames, const SamplerConfig& cfg);

/// cfg.k_samples independent draws differing only in the initial noise;
/// draw j uses the sub-seed derive_seed(cfg.seed, j), so draw 0 equals
/// sample_forecast under the same config.
std::vector<Forecast> sample_k(const flow::FlowModel& s2, const ae::Autoencoder& s1,
                               const Trajectory& observed,
                               const std::vector<std::int64_t>& assignment,
                               std::int64_t total_frames, const SamplerConfig& cfg);

struct RolloutPlan {
    std::int64_t block_len = 30; // frames per block, conditioning frame included
    std::int64_t blocks = 1;
};

void validate_plan(const RolloutPlan& plan);

struct RolloutResult {
    Trajectory traj; // blocks * (block_len - 1) + 1 frames
    std::int64_t nfe = 0;
    // mean one-pass encode/decode reconstruction error of the conditioning
    // frames at the block seams, the only drift a cascade can accumulate
    double recon_drift = 0.0;
};

/// Long-horizon cascade: each block forecasts block_len - 1 new frames
/// conditioned on a single frame, and the final decoded frame of one block
/// is reused verbatim as the next block's conditioning frame. Block b uses
/// the sub-seed derive_seed(cfg.seed, b). Errors from inside a block are
/// rethrown with the block index prepended.
RolloutResult cascaded_rollout(const flow::FlowModel& s2, const ae::Autoencoder& s1,
                               const SystemState& initial,
                               const std::vector<std::int64_t>& assignment,
                               const RolloutPlan& plan, const SamplerConfig& cfg);

} // namespace latflow::sampler
