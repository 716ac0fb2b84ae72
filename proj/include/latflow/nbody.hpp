#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "latflow/rng.hpp"
#include "latflow/trajectory.hpp"

namespace latflow::nbody {

enum class Scenario { Charged, Spring, Gravity };

Scenario scenario_from_string(const std::string& s);
std::string scenario_to_string(Scenario s);

/// Physics and sampling knobs for one scenario. Integration runs internally
/// at `dt` in double precision; one frame is stored every `stride` steps, so
/// a trajectory spans (frames-1) * stride * dt time units.
struct ScenarioConfig {
    Scenario scenario = Scenario::Spring;
    std::int64_t entities = 5;
    std::int64_t coord_dim = 3;
    std::int64_t frames = 30;
    double dt = 0.001;
    std::int64_t stride = 200;
    double softening = 0.1;     // charged, gravity
    double spring_k = 1.0;      // spring
    double connect_prob = 0.5;  // spring
    double box_halfwidth = 5.0; // charged, reflective walls
    double grav_g = 1.0;        // gravity
    double mass_lo = 0.5;       // spring/gravity mass range
    double mass_hi = 2.0;
    double pos_std = 1.0;
    double vel_std = 0.5;
};

/// Scenario defaults: spring N=5 (k=1, p=0.5, frame step 0.2), charged N=5
/// (unit masses, +-1 charges, box 5), gravity N=10 (masses U[0.1,1], frame
/// step 0.1). All tunable afterwards.
ScenarioConfig default_config(Scenario s);

void validate_config(const ScenarioConfig& cfg);

/// Conservation bookkeeping from one simulation, measured at stored frames
/// in double precision (the stored float32 frames are too coarse for this).
struct SimDiagnostics {
    /// max_t |P(t) - P(0)|_2 / sum_i |m_i v_i(0)|_2. Meaningful for spring
    /// and gravity; charged-box reflections exchange momentum with the walls.
    double momentum_drift_rel = 0.0;
    /// (max E - min E) / max(|E(0)|, tiny) over stored frames.
    double energy_osc_rel = 0.0;
};

/// Explicit initial conditions, row-major [N, D] for pos/vel. Used by the
/// physics oracle tests; random generation below samples these itself.
struct InitialConditions {
    std::vector<double> pos, vel;
    std::vector<double> particle; // mass (spring, gravity) or charge (charged)
};

// Random-scene entry points. RNG draw order is fixed: particle scalars,
// positions, velocities, then (spring only) the connection graph.
Trajectory simulate_spring(const ScenarioConfig& cfg, Rng& rng, SimDiagnostics* diag = nullptr);
Trajectory simulate_charged(const ScenarioConfig& cfg, Rng& rng, SimDiagnostics* diag = nullptr);
Trajectory simulate_gravity(const ScenarioConfig& cfg, Rng& rng, SimDiagnostics* diag = nullptr);
Trajectory simulate(const ScenarioConfig& cfg, Rng& rng, SimDiagnostics* diag = nullptr);

// Deterministic entry points for oracle tests.
Trajectory simulate_spring_from(const ScenarioConfig& cfg, const InitialConditions& ic,
                                const std::vector<std::uint8_t>& adjacency,
                                SimDiagnostics* diag = nullptr);
Trajectory simulate_charged_from(const ScenarioConfig& cfg, const InitialConditions& ic,
                                 SimDiagnostics* diag = nullptr);
Trajectory simulate_gravity_from(const ScenarioConfig& cfg, const InitialConditions& ic,
                                 SimDiagnostics* diag = nullptr);

/// A split of generated trajectories plus everything needed to regenerate it.
struct TrajectoryDataset {
    std::vector<Trajectory> trajectories;
    std::string split; // train | val | test
    ScenarioConfig config;
    std::vector<std::uint64_t> traj_seeds;
    std::uint64_t master_seed = 0;
    bool desk_scale = false; // counts below the full-scale reference
};

struct SplitCounts {
    std::int64_t train = 0, val = 0, test = 0;
};

/// Full-scale reference counts; anything smaller is flagged desk-scale in
/// dataset metadata.
constexpr SplitCounts kFullScaleCounts{3000, 2000, 2000};

/// Generates train/val/test with disjoint per-trajectory seeds derived from
/// the master seed. Same master seed twice gives bit-identical datasets.
std::array<TrajectoryDataset, 3> generate_dataset(const ScenarioConfig& cfg,
                                                  const SplitCounts& counts,
                                                  std::uint64_t master_seed);

/// Directory layout: meta.json + X.bin [num,T,N,D_x] + M.bin [num,N,D_m],
/// float32 little-endian row-major. Round trip is bit-exact.
void save_dataset(const TrajectoryDataset& ds, const std::string& dir);
TrajectoryDataset load_dataset(const std::string& dir);

/// JSON round trip for configs (used by meta.json and run configs).
std::string config_to_json(const ScenarioConfig& cfg);
ScenarioConfig config_from_json(const std::string& json_text);

} // namespace latflow::nbody
