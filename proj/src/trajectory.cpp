#include "latflow/trajectory.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "latflow/error.hpp"

namespace latflow {

void validate_trajectory(const Trajectory& traj) {
    if (traj.X.rank() != 3)
        throw ShapeError("trajectory coordinates must be [T, N, D_x], got " + shape_str(traj.X.shape));
    if (traj.M.rank() != 2)
        throw ShapeError("trajectory features must be [N, D_m], got " + shape_str(traj.M.shape));
    const auto T = traj.X.shape[0], N = traj.X.shape[1], D = traj.X.shape[2];
    if (T < 1) throw RangeError("trajectory needs at least one frame");
    if (N < 1) throw RangeError("trajectory needs at least one entity");
    if (D < 1) throw RangeError("coordinate dimension must be positive");
    if (traj.M.shape[0] != N)
        throw ShapeError("feature rows (" + std::to_string(traj.M.shape[0]) +
                         ") do not match entity count (" + std::to_string(N) + ")");
    for (float v : traj.X.data)
        if (!std::isfinite(v)) throw RangeError("non-finite coordinate in trajectory");
    for (float v : traj.M.data)
        if (!std::isfinite(v)) throw RangeError("non-finite static feature in trajectory");
}

SystemState frame_at(const Trajectory& traj, std::int64_t t) {
    if (t < 0 || t >= traj.frames()) throw RangeError("frame index out of range");
    const auto N = traj.entities(), D = traj.coord_dim();
    SystemState s;
    s.x = Tensor({N, D});
    std::copy_n(traj.X.ptr() + t * N * D, N * D, s.x.ptr());
    s.m = traj.M;
    return s;
}

std::pair<Trajectory, Trajectory> split_observed(const Trajectory& traj, std::int64_t t_obs) {
    const auto T = traj.frames();
    if (t_obs <= 0 || t_obs >= T)
        throw RangeError("observation length must satisfy 0 < T_o < T, got T_o=" +
                         std::to_string(t_obs) + " with T=" + std::to_string(T));
    const auto N = traj.entities(), D = traj.coord_dim();
    Trajectory obs, fut;
    obs.X = Tensor({t_obs, N, D});
    fut.X = Tensor({T - t_obs, N, D});
    std::copy_n(traj.X.ptr(), t_obs * N * D, obs.X.ptr());
    std::copy_n(traj.X.ptr() + t_obs * N * D, (T - t_obs) * N * D, fut.X.ptr());
    obs.M = traj.M;
    fut.M = traj.M;
    return {std::move(obs), std::move(fut)};
}

Trajectory concat_time(const Trajectory& a, const Trajectory& b) {
    if (a.entities() != b.entities() || a.coord_dim() != b.coord_dim())
        throw ShapeError("concat_time: entity layout differs");
    if (!shape_eq(a.M.shape, b.M.shape))
        throw ShapeError("concat_time: static feature shapes differ");
    Trajectory out;
    const auto N = a.entities(), D = a.coord_dim();
    out.X = Tensor({a.frames() + b.frames(), N, D});
    std::copy_n(a.X.ptr(), a.X.numel(), out.X.ptr());
    std::copy_n(b.X.ptr(), b.X.numel(), out.X.ptr() + a.X.numel());
    out.M = a.M;
    return out;
}

std::vector<double> random_rotation(Rng& rng, int d) {
    if (d < 1) throw RangeError("rotation dimension must be positive");
    Eigen::MatrixXd g(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) g(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    // Sign correction: without it QR is not Haar-distributed.
    for (int j = 0; j < d; ++j)
        if (r(j, j) < 0) q.col(j) = -q.col(j);
    if (q.determinant() < 0) q.col(d - 1) = -q.col(d - 1);

    std::vector<double> out(static_cast<std::size_t>(d) * d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(i) * d + j] = q(i, j);
    return out;
}

Trajectory augment_rigid(const Trajectory& traj, Rng& rng, double shift) {
    validate_trajectory(traj);
    const int d = static_cast<int>(traj.coord_dim());
    const auto rot = random_rotation(rng, d);
    std::vector<double> tr(static_cast<std::size_t>(d));
    for (auto& v : tr) v = rng.uniform(-shift, shift);

    Trajectory out;
    out.M = traj.M;
    out.X = Tensor(traj.X.shape);
    const auto rows = traj.frames() * traj.entities();
    for (std::int64_t r = 0; r < rows; ++r) {
        const float* src = traj.X.ptr() + r * d;
        float* dst = out.X.ptr() + r * d;
        for (int i = 0; i < d; ++i) {
            double acc = tr[static_cast<std::size_t>(i)];
            for (int j = 0; j < d; ++j)
                acc += rot[static_cast<std::size_t>(i) * d + j] * static_cast<double>(src[j]);
            dst[i] = static_cast<float>(acc);
        }
    }
    return out;
}

} // namespace latflow
