#include "latflow/nbody.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "latflow/checkpoint.hpp"
#include "latflow/error.hpp"

namespace latflow::nbody {

namespace fs = std::filesystem;
using nlohmann::json;

Scenario scenario_from_string(const std::string& s) {
    if (s == "charged") return Scenario::Charged;
    if (s == "spring") return Scenario::Spring;
    if (s == "gravity") return Scenario::Gravity;
    throw ConfigError("unknown scenario '" + s + "' (expected charged, spring, or gravity)");
}

std::string scenario_to_string(Scenario s) {
    switch (s) {
        case Scenario::Charged: return "charged";
        case Scenario::Spring: return "spring";
        case Scenario::Gravity: return "gravity";
    }
    throw Error("unreachable");
}

ScenarioConfig default_config(Scenario s) {
    ScenarioConfig cfg;
    cfg.scenario = s;
    switch (s) {
        case Scenario::Spring:
            // frame step 0.2: ~1.3 oscillation periods across 30 frames
            cfg.entities = 5;
            cfg.stride = 200;
            cfg.mass_lo = 0.5;
            cfg.mass_hi = 2.0;
            cfg.vel_std = 0.5;
            break;
        case Scenario::Charged:
            cfg.entities = 5;
            cfg.stride = 100;
            cfg.vel_std = 0.5;
            break;
        case Scenario::Gravity:
            cfg.entities = 10;
            cfg.stride = 100;
            cfg.mass_lo = 0.1;
            cfg.mass_hi = 1.0;
            cfg.vel_std = 0.3;
            break;
    }
    return cfg;
}

void validate_config(const ScenarioConfig& cfg) {
    if (cfg.entities < 2) throw ConfigError("scenario needs at least 2 entities");
    if (cfg.coord_dim < 1) throw ConfigError("coord_dim must be positive");
    if (cfg.frames < 1) throw ConfigError("frames must be positive");
    if (!(cfg.dt > 0)) throw ConfigError("dt must be positive");
    if (cfg.stride < 1) throw ConfigError("stride must be >= 1");
    if (cfg.softening < 0) throw ConfigError("softening must be nonnegative");
    if (cfg.spring_k < 0) throw ConfigError("spring constant must be nonnegative");
    if (cfg.connect_prob < 0 || cfg.connect_prob > 1)
        throw ConfigError("connection probability must lie in [0, 1]");
    if (!(cfg.box_halfwidth > 0)) throw ConfigError("box half-width must be positive");
    if (!(cfg.grav_g > 0)) throw ConfigError("gravitational constant must be positive");
    if (!(cfg.mass_lo > 0) || cfg.mass_hi < cfg.mass_lo)
        throw ConfigError("mass range must satisfy 0 < lo <= hi");
    if (cfg.pos_std < 0 || cfg.vel_std < 0) throw ConfigError("sampling stds must be nonnegative");
}

namespace {

struct SimState {
    std::int64_t n = 0, d = 0;
    std::vector<double> pos, vel, mass, charge;
};

// ----- force laws; all write accelerations and return potential energy -----

double accel_spring(const ScenarioConfig& cfg, const SimState& st,
                    const std::vector<std::uint8_t>& adj, std::vector<double>& acc) {
    std::fill(acc.begin(), acc.end(), 0.0);
    double pot = 0.0;
    for (std::int64_t i = 0; i < st.n; ++i)
        for (std::int64_t j = i + 1; j < st.n; ++j) {
            if (!adj[static_cast<std::size_t>(i * st.n + j)]) continue;
            double r2 = 0.0;
            for (std::int64_t k = 0; k < st.d; ++k) {
                const double dx = st.pos[i * st.d + k] - st.pos[j * st.d + k];
                r2 += dx * dx;
            }
            pot += 0.5 * cfg.spring_k * r2;
            for (std::int64_t k = 0; k < st.d; ++k) {
                const double dx = st.pos[i * st.d + k] - st.pos[j * st.d + k];
                const double f = -cfg.spring_k * dx; // rest length zero
                acc[i * st.d + k] += f / st.mass[static_cast<std::size_t>(i)];
                acc[j * st.d + k] -= f / st.mass[static_cast<std::size_t>(j)];
            }
        }
    return pot;
}

double accel_charged(const ScenarioConfig& cfg, const SimState& st, std::vector<double>& acc) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const double eps2 = cfg.softening * cfg.softening;
    double pot = 0.0;
    for (std::int64_t i = 0; i < st.n; ++i)
        for (std::int64_t j = i + 1; j < st.n; ++j) {
            double r2 = eps2;
            for (std::int64_t k = 0; k < st.d; ++k) {
                const double dx = st.pos[i * st.d + k] - st.pos[j * st.d + k];
                r2 += dx * dx;
            }
            const double qq = st.charge[static_cast<std::size_t>(i)] * st.charge[static_cast<std::size_t>(j)];
            pot += qq / std::sqrt(r2);
            const double c = qq / (r2 * std::sqrt(r2)); // repulsive for like signs
            for (std::int64_t k = 0; k < st.d; ++k) {
                const double dx = st.pos[i * st.d + k] - st.pos[j * st.d + k];
                acc[i * st.d + k] += c * dx / st.mass[static_cast<std::size_t>(i)];
                acc[j * st.d + k] -= c * dx / st.mass[static_cast<std::size_t>(j)];
            }
        }
    return pot;
}

double accel_gravity(const ScenarioConfig& cfg, const SimState& st, std::vector<double>& acc) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const double eps2 = cfg.softening * cfg.softening;
    double pot = 0.0;
    for (std::int64_t i = 0; i < st.n; ++i)
        for (std::int64_t j = i + 1; j < st.n; ++j) {
            double r2 = eps2;
            for (std::int64_t k = 0; k < st.d; ++k) {
                const double dx = st.pos[i * st.d + k] - st.pos[j * st.d + k];
                r2 += dx * dx;
            }
            const double mm = st.mass[static_cast<std::size_t>(i)] * st.mass[static_cast<std::size_t>(j)];
            pot -= cfg.grav_g * mm / std::sqrt(r2);
            const double c = -cfg.grav_g * mm / (r2 * std::sqrt(r2)); // attraction
            for (std::int64_t k = 0; k < st.d; ++k) {
                const double dx = st.pos[i * st.d + k] - st.pos[j * st.d + k];
                acc[i * st.d + k] += c * dx / st.mass[static_cast<std::size_t>(i)];
                acc[j * st.d + k] -= c * dx / st.mass[static_cast<std::size_t>(j)];
            }
        }
    return pot;
}

void reflect_box(SimState& st, double hw) {
    for (std::int64_t i = 0; i < st.n * st.d; ++i) {
        double& x = st.pos[static_cast<std::size_t>(i)];
        double& v = st.vel[static_cast<std::size_t>(i)];
        // loop handles multi-width overshoots from fast particles
        while (x > hw || x < -hw) {
            if (x > hw)
                x = 2 * hw - x;
            else
                x = -2 * hw - x;
            v = -v;
        }
    }
}

double kinetic_energy(const SimState& st) {
    double ke = 0.0;
    for (std::int64_t i = 0; i < st.n; ++i) {
        double v2 = 0.0;
        for (std::int64_t k = 0; k < st.d; ++k) {
            const double v = st.vel[i * st.d + k];
            v2 += v * v;
        }
        ke += 0.5 * st.mass[static_cast<std::size_t>(i)] * v2;
    }
    return ke;
}

// Leapfrog (kick-drift-kick) with frame capture and conservation tracking.
template <class AccelFn>
Trajectory integrate(const ScenarioConfig& cfg, SimState st, AccelFn&& accel, bool box,
                     const std::vector<double>& feature, SimDiagnostics* diag) {
    const auto N = st.n, D = st.d, T = cfg.frames;
    Trajectory out;
    out.X = Tensor({T, N, D});
    out.M = Tensor({N, 1});
    for (std::int64_t i = 0; i < N; ++i)
        out.M.data[static_cast<std::size_t>(i)] = static_cast<float>(feature[static_cast<std::size_t>(i)]);

    std::vector<double> acc(static_cast<std::size_t>(N * D), 0.0);
    std::vector<double> p0(static_cast<std::size_t>(D), 0.0);
    double pscale = 0.0;
    for (std::int64_t i = 0; i < N; ++i) {
        double pv = 0.0;
        for (std::int64_t k = 0; k < D; ++k) {
            const double pk = st.mass[static_cast<std::size_t>(i)] * st.vel[i * D + k];
            p0[static_cast<std::size_t>(k)] += pk;
            pv += pk * pk;
        }
        pscale += std::sqrt(pv);
    }
    pscale = std::max(pscale, 1e-12);

    double e0 = 0.0, emin = 0.0, emax = 0.0;
    double pdrift = 0.0;
    bool first = true;

    double pot = accel(st, acc);
    for (std::int64_t f = 0; f < T; ++f) {
        if (f > 0) {
            for (std::int64_t s = 0; s < cfg.stride; ++s) {
                const double h = cfg.dt;
                for (std::int64_t i = 0; i < N * D; ++i)
                    st.vel[static_cast<std::size_t>(i)] += 0.5 * h * acc[static_cast<std::size_t>(i)];
                for (std::int64_t i = 0; i < N * D; ++i)
                    st.pos[static_cast<std::size_t>(i)] += h * st.vel[static_cast<std::size_t>(i)];
                if (box) reflect_box(st, cfg.box_halfwidth);
                pot = accel(st, acc);
                for (std::int64_t i = 0; i < N * D; ++i)
                    st.vel[static_cast<std::size_t>(i)] += 0.5 * h * acc[static_cast<std::size_t>(i)];
            }
        }
        // capture frame
        for (std::int64_t i = 0; i < N * D; ++i)
            out.X.data[f * N * D + i] = static_cast<float>(st.pos[static_cast<std::size_t>(i)]);
        // conservation bookkeeping
        std::vector<double> p(static_cast<std::size_t>(D), 0.0);
        for (std::int64_t i = 0; i < N; ++i)
            for (std::int64_t k = 0; k < D; ++k)
                p[static_cast<std::size_t>(k)] += st.mass[static_cast<std::size_t>(i)] * st.vel[i * D + k];
        double dn = 0.0;
        for (std::int64_t k = 0; k < D; ++k) {
            const double dd = p[static_cast<std::size_t>(k)] - p0[static_cast<std::size_t>(k)];
            dn += dd * dd;
        }
        pdrift = std::max(pdrift, std::sqrt(dn) / pscale);
        const double e = kinetic_energy(st) + pot;
        if (first) {
            e0 = emin = emax = e;
            first = false;
        } else {
            emin = std::min(emin, e);
            emax = std::max(emax, e);
        }
    }
    if (diag) {
        diag->momentum_drift_rel = pdrift;
        diag->energy_osc_rel = (emax - emin) / std::max(std::abs(e0), 1e-12);
    }
    return out;
}

SimState state_from_ic(const ScenarioConfig& cfg, const InitialConditions& ic, bool charge_mode) {
    const auto N = cfg.entities, D = cfg.coord_dim;
    if (static_cast<std::int64_t>(ic.pos.size()) != N * D ||
        static_cast<std::int64_t>(ic.vel.size()) != N * D ||
        static_cast<std::int64_t>(ic.particle.size()) != N)
        throw ShapeError("initial conditions do not match entity count / coord dim");
    SimState st;
    st.n = N;
    st.d = D;
    st.pos = ic.pos;
    st.vel = ic.vel;
    if (charge_mode) {
        st.charge = ic.particle;
        st.mass.assign(static_cast<std::size_t>(N), 1.0);
    } else {
        st.mass = ic.particle;
        for (double m : st.mass)
            if (!(m > 0)) throw RangeError("masses must be positive");
    }
    return st;
}

} // namespace

Trajectory simulate_spring_from(const ScenarioConfig& cfg, const InitialConditions& ic,
                                const std::vector<std::uint8_t>& adjacency, SimDiagnostics* diag) {
    validate_config(cfg);
    SimState st = state_from_ic(cfg, ic, false);
    if (static_cast<std::int64_t>(adjacency.size()) != cfg.entities * cfg.entities)
        throw ShapeError("adjacency must be N*N");
    return integrate(
        cfg, std::move(st),
        [&cfg, &adjacency](const SimState& s, std::vector<double>& a) {
            return accel_spring(cfg, s, adjacency, a);
        },
        false, ic.particle, diag);
}

Trajectory simulate_charged_from(const ScenarioConfig& cfg, const InitialConditions& ic,
                                 SimDiagnostics* diag) {
    validate_config(cfg);
    SimState st = state_from_ic(cfg, ic, true);
    return integrate(
        cfg, std::move(st),
        [&cfg](const SimState& s, std::vector<double>& a) { return accel_charged(cfg, s, a); },
        true, ic.particle, diag);
}

Trajectory simulate_gravity_from(const ScenarioConfig& cfg, const InitialConditions& ic,
                                 SimDiagnostics* diag) {
    validate_config(cfg);
    SimState st = state_from_ic(cfg, ic, false);
    return integrate(
        cfg, std::move(st),
        [&cfg](const SimState& s, std::vector<double>& a) { return accel_gravity(cfg, s, a); },
        false, ic.particle, diag);
}

Trajectory simulate_spring(const ScenarioConfig& cfg, Rng& rng, SimDiagnostics* diag) {
    validate_config(cfg);
    const auto N = cfg.entities, D = cfg.coord_dim;
    InitialConditions ic;
    ic.particle.resize(static_cast<std::size_t>(N));
    ic.pos.resize(static_cast<std::size_t>(N * D));
    ic.vel.resize(static_cast<std::size_t>(N * D));
    for (auto& m : ic.particle) m = rng.uniform(cfg.mass_lo, cfg.mass_hi);
    for (auto& x : ic.pos) x = rng.normal(0.0, cfg.pos_std);
    for (auto& v : ic.vel) v = rng.normal(0.0, cfg.vel_std);
    std::vector<std::uint8_t> adj(static_cast<std::size_t>(N * N), 0);
    for (std::int64_t i = 0; i < N; ++i)
        for (std::int64_t j = i + 1; j < N; ++j) {
            const std::uint8_t on = rng.uniform() < cfg.connect_prob ? 1 : 0;
            adj[static_cast<std::size_t>(i * N + j)] = on;
            adj[static_cast<std::size_t>(j * N + i)] = on;
        }
    return simulate_spring_from(cfg, ic, adj, diag);
}

Trajectory simulate_charged(const ScenarioConfig& cfg, Rng& rng, SimDiagnostics* diag) {
    validate_config(cfg);
    const auto N = cfg.entities, D = cfg.coord_dim;
    InitialConditions ic;
    ic.particle.resize(static_cast<std::size_t>(N));
    ic.pos.resize(static_cast<std::size_t>(N * D));
    ic.vel.resize(static_cast<std::size_t>(N * D));
    for (auto& q : ic.particle) q = rng.uniform() < 0.5 ? -1.0 : 1.0;
    for (auto& x : ic.pos) x = rng.normal(0.0, cfg.pos_std);
    for (auto& v : ic.vel) v = rng.normal(0.0, cfg.vel_std);
    return simulate_charged_from(cfg, ic, diag);
}

Trajectory simulate_gravity(const ScenarioConfig& cfg, Rng& rng, SimDiagnostics* diag) {
    validate_config(cfg);
    const auto N = cfg.entities, D = cfg.coord_dim;
    InitialConditions ic;
    ic.particle.resize(static_cast<std::size_t>(N));
    ic.pos.resize(static_cast<std::size_t>(N * D));
    ic.vel.resize(static_cast<std::size_t>(N * D));
    for (auto& m : ic.particle) m = rng.uniform(cfg.mass_lo, cfg.mass_hi);
    for (auto& x : ic.pos) x = rng.normal(0.0, cfg.pos_std);
    for (auto& v : ic.vel) v = rng.normal(0.0, cfg.vel_std);
    return simulate_gravity_from(cfg, ic, diag);
}

Trajectory simulate(const ScenarioConfig& cfg, Rng& rng, SimDiagnostics* diag) {
    switch (cfg.scenario) {
        case Scenario::Charged: return simulate_charged(cfg, rng, diag);
        case Scenario::Spring: return simulate_spring(cfg, rng, diag);
        case Scenario::Gravity: return simulate_gravity(cfg, rng, diag);
    }
    throw Error("unreachable");
}

// ----- dataset generation and serialization -----

std::array<TrajectoryDataset, 3> generate_dataset(const ScenarioConfig& cfg,
                                                  const SplitCounts& counts,
                                                  std::uint64_t master_seed) {
    validate_config(cfg);
    if (counts.train < 1 || counts.val < 1 || counts.test < 1)
        throw ConfigError("every split needs at least one trajectory");

    const char* names[3] = {"train", "val", "test"};
    const std::int64_t sizes[3] = {counts.train, counts.val, counts.test};
    const bool desk = counts.train < kFullScaleCounts.train ||
                      counts.val < kFullScaleCounts.val || counts.test < kFullScaleCounts.test;
    std::array<TrajectoryDataset, 3> out;
    for (int s = 0; s < 3; ++s) {
        auto& ds = out[static_cast<std::size_t>(s)];
        ds.split = names[s];
        ds.config = cfg;
        ds.master_seed = master_seed;
        ds.desk_scale = desk;
        const std::uint64_t split_seed = derive_seed(master_seed, static_cast<std::uint64_t>(s));
        ds.trajectories.reserve(static_cast<std::size_t>(sizes[s]));
        for (std::int64_t i = 0; i < sizes[s]; ++i) {
            const std::uint64_t tseed = derive_seed(split_seed, static_cast<std::uint64_t>(i));
            ds.traj_seeds.push_back(tseed);
            Rng rng(tseed);
            ds.trajectories.push_back(simulate(cfg, rng));
        }
    }
    return out;
}

std::string config_to_json(const ScenarioConfig& cfg) {
    json j;
    j["scenario"] = scenario_to_string(cfg.scenario);
    j["entities"] = cfg.entities;
    j["coord_dim"] = cfg.coord_dim;
    j["frames"] = cfg.frames;
    j["dt"] = cfg.dt;
    j["stride"] = cfg.stride;
    j["softening"] = cfg.softening;
    j["spring_k"] = cfg.spring_k;
    j["connect_prob"] = cfg.connect_prob;
    j["box_halfwidth"] = cfg.box_halfwidth;
    j["grav_g"] = cfg.grav_g;
    j["mass_lo"] = cfg.mass_lo;
    j["mass_hi"] = cfg.mass_hi;
    j["pos_std"] = cfg.pos_std;
    j["vel_std"] = cfg.vel_std;
    return j.dump(2);
}

ScenarioConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad scenario config json: ") + e.what());
    }
    ScenarioConfig cfg;
    try {
        cfg.scenario = scenario_from_string(j.at("scenario").get<std::string>());
        cfg.entities = j.at("entities").get<std::int64_t>();
        cfg.coord_dim = j.at("coord_dim").get<std::int64_t>();
        cfg.frames = j.at("frames").get<std::int64_t>();
        cfg.dt = j.at("dt").get<double>();
        cfg.stride = j.at("stride").get<std::int64_t>();
        cfg.softening = j.at("softening").get<double>();
        cfg.spring_k = j.at("spring_k").get<double>();
        cfg.connect_prob = j.at("connect_prob").get<double>();
        cfg.box_halfwidth = j.at("box_halfwidth").get<double>();
        cfg.grav_g = j.at("grav_g").get<double>();
        cfg.mass_lo = j.at("mass_lo").get<double>();
        cfg.mass_hi = j.at("mass_hi").get<double>();
        cfg.pos_std = j.at("pos_std").get<double>();
        cfg.vel_std = j.at("vel_std").get<double>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("scenario config missing field: ") + e.what());
    }
    validate_config(cfg);
    return cfg;
}

namespace {

constexpr int kSchemaVersion = 1;

void write_blob(const std::string& path, const float* data, std::size_t count) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write: " + path);
    out.write(reinterpret_cast<const char*>(data),
              static_cast<std::streamsize>(count * sizeof(float)));
    if (!out) throw IoError("short write: " + path);
}

std::vector<float> read_blob(const std::string& path, std::size_t expected_count) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open: " + path);
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes != expected_count * sizeof(float))
        throw IoError(path + " holds " + std::to_string(bytes) + " bytes but metadata implies " +
                      std::to_string(expected_count * sizeof(float)));
    in.seekg(0);
    std::vector<float> data(expected_count);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw IoError("short read: " + path);
    return data;
}

} // namespace

void save_dataset(const TrajectoryDataset& ds, const std::string& dir) {
    if (ds.trajectories.empty()) throw ConfigError("refusing to save an empty dataset");
    const auto num = static_cast<std::int64_t>(ds.trajectories.size());
    const auto& first = ds.trajectories.front();
    const auto T = first.frames(), N = first.entities(), Dx = first.coord_dim(), Dm = first.feat_dim();
    for (const auto& t : ds.trajectories)
        if (t.frames() != T || t.entities() != N || t.coord_dim() != Dx || t.feat_dim() != Dm)
            throw ShapeError("dataset trajectories are not homogeneous");

    fs::create_directories(dir);

    std::vector<float> xs;
    xs.reserve(static_cast<std::size_t>(num * T * N * Dx));
    std::vector<float> ms;
    ms.reserve(static_cast<std::size_t>(num * N * Dm));
    for (const auto& t : ds.trajectories) {
        xs.insert(xs.end(), t.X.data.begin(), t.X.data.end());
        ms.insert(ms.end(), t.M.data.begin(), t.M.data.end());
    }
    write_blob(dir + "/X.bin", xs.data(), xs.size());
    write_blob(dir + "/M.bin", ms.data(), ms.size());

    json meta;
    meta["schema_version"] = kSchemaVersion;
    meta["split"] = ds.split;
    meta["num_trajectories"] = num;
    meta["x_shape"] = {num, T, N, Dx};
    meta["m_shape"] = {num, N, Dm};
    meta["dtype"] = "float32";
    meta["endianness"] = "little";
    meta["master_seed"] = ds.master_seed;
    meta["desk_scale"] = ds.desk_scale;
    meta["traj_seeds"] = ds.traj_seeds;
    meta["config"] = json::parse(config_to_json(ds.config));
    write_json_file(dir + "/meta.json", meta.dump(2));
}

TrajectoryDataset load_dataset(const std::string& dir) {
    json meta;
    try {
        meta = json::parse(read_text_file(dir + "/meta.json"));
    } catch (const json::exception& e) {
        throw IoError("corrupt meta.json in " + dir + ": " + e.what());
    }
    TrajectoryDataset ds;
    try {
        const int version = meta.at("schema_version").get<int>();
        if (version != kSchemaVersion)
            throw IoError("dataset schema_version " + std::to_string(version) +
                          " is not supported (expected " + std::to_string(kSchemaVersion) + ")");
        ds.split = meta.at("split").get<std::string>();
        ds.master_seed = meta.at("master_seed").get<std::uint64_t>();
        ds.desk_scale = meta.at("desk_scale").get<bool>();
        ds.traj_seeds = meta.at("traj_seeds").get<std::vector<std::uint64_t>>();
        ds.config = config_from_json(meta.at("config").dump());

        const auto xshape = meta.at("x_shape").get<std::vector<std::int64_t>>();
        const auto mshape = meta.at("m_shape").get<std::vector<std::int64_t>>();
        if (xshape.size() != 4 || mshape.size() != 3)
            throw IoError("bad shape ranks in meta.json of " + dir);
        const auto num = xshape[0], T = xshape[1], N = xshape[2], Dx = xshape[3];
        if (mshape[0] != num || mshape[1] != N)
            throw IoError("x_shape and m_shape disagree in meta.json of " + dir);
        const auto Dm = mshape[2];
        if (meta.at("num_trajectories").get<std::int64_t>() != num)
            throw IoError("num_trajectories disagrees with x_shape in " + dir);

        const auto xs = read_blob(dir + "/X.bin",
                                  static_cast<std::size_t>(num * T * N * Dx));
        const auto msb = read_blob(dir + "/M.bin", static_cast<std::size_t>(num * N * Dm));
        ds.trajectories.resize(static_cast<std::size_t>(num));
        for (std::int64_t i = 0; i < num; ++i) {
            auto& t = ds.trajectories[static_cast<std::size_t>(i)];
            t.X = Tensor({T, N, Dx});
            t.M = Tensor({N, Dm});
            std::copy_n(xs.begin() + i * T * N * Dx, T * N * Dx, t.X.data.begin());
            std::copy_n(msb.begin() + i * N * Dm, N * Dm, t.M.data.begin());
            validate_trajectory(t);
        }
    } catch (const json::exception& e) {
        throw IoError("meta.json in " + dir + " missing field: " + e.what());
    }
    return ds;
}

} // namespace latflow::nbody
