#pragma once

#include <cstdint>
#include <utility>

#include "latflow/rng.hpp"
#include "latflow/tensor.hpp"

namespace latflow {

/// A spatial system over time: X holds coordinates [T, N, D_x], M holds
/// per-entity static features [N, D_m]. Entities keep their row index across
/// frames; that row identity is what the identifier machinery later binds to.
struct Trajectory {
    Tensor X; // [T, N, D_x]
    Tensor M; // [N, D_m]

    std::int64_t frames() const { return X.rank() == 3 ? X.shape[0] : 0; }
    std::int64_t entities() const { return X.rank() == 3 ? X.shape[1] : 0; }
    std::int64_t coord_dim() const { return X.rank() == 3 ? X.shape[2] : 0; }
    std::int64_t feat_dim() const { return M.rank() == 2 ? M.shape[1] : 0; }
};

/// One frame of a trajectory plus the static features.
struct SystemState {
    Tensor x; // [N, D_x]
    Tensor m; // [N, D_m]
};

/// Shape and finiteness contract. Throws ShapeError / RangeError.
void validate_trajectory(const Trajectory& traj);

/// Copies frame t out of the trajectory. t in [0, T).
SystemState frame_at(const Trajectory& traj, std::int64_t t);

/// Splits into (observed, future) at T_o frames. Requires 0 < T_o < T.
std::pair<Trajectory, Trajectory> split_observed(const Trajectory& traj, std::int64_t t_obs);

/// Concatenates two trajectories along time. Entity count, coordinate dim
/// and static features must agree.
Trajectory concat_time(const Trajectory& a, const Trajectory& b);

/// Uniformly random rotation matrix in SO(d), row-major d*d doubles.
/// QR of a Gaussian matrix with the sign correction that makes the
/// distribution Haar; determinant forced to +1.
std::vector<double> random_rotation(Rng& rng, int d);

/// Random rigid motion of every frame: one rotation about the scene origin
/// plus one translation drawn uniformly from [-shift, shift]^D. Pairwise
/// distances are preserved; static features pass through untouched.
Trajectory augment_rigid(const Trajectory& traj, Rng& rng, double shift = 1.0);

} // namespace latflow
