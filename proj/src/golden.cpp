#include "latflow/golden.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "latflow/checkpoint.hpp"
#include "latflow/error.hpp"
#include "latflow/evaluation.hpp"
#include "latflow/flow_model.hpp"
#include "latflow/identifiers.hpp"
#include "latflow/interpolants.hpp"
#include "latflow/latent_autoencoder.hpp"
#include "latflow/metrics.hpp"
#include "latflow/nbody.hpp"
#include "latflow/run_config.hpp"
#include "latflow/sampler.hpp"

namespace latflow::golden {

using nlohmann::json;

namespace fs = std::filesystem;

namespace {

// ----- bookkeeping ----------------------------------------------------------

struct Gate {
    bool pass = true;
    std::string detail;

    void append(const std::string& text) {
        if (!detail.empty()) detail += "; ";
        detail += text;
    }
    void require(bool ok, const std::string& text) {
        if (!ok) pass = false;
        append((ok ? std::string() : std::string("FAIL: ")) + text);
    }
};

std::string fmt_g(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

std::string work_root() {
    if (const char* v = std::getenv("LATFLOW_GOLDEN_WORK")) return v;
    return "golden-work";
}

double json_num(const json& j, const char* key) {
    try {
        return j.at(key).get<double>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("golden expectation missing '") + key + "': " + e.what());
    }
}

// ----- algebraic goldens ----------------------------------------------------

// independent enumeration: depth-first over unused pool slots
std::uint64_t brute_injective(std::int64_t n, std::int64_t u, std::uint64_t used) {
    if (n == 0) return 1;
    std::uint64_t total = 0;
    for (std::int64_t i = 0; i < u; ++i)
        if (!(used >> i & 1)) total += brute_injective(n - 1, u, used | (1ull << i));
    return total;
}

Gate golden_identifier_counting(const json& expect) {
    const auto max_pool = static_cast<std::int64_t>(json_num(expect, "max_pool"));
    Gate g;
    std::int64_t pairs = 0;
    bool all = true;
    for (std::int64_t u = 0; u <= max_pool; ++u)
        for (std::int64_t n = 0; n <= u + 1; ++n) { // n = u+1 must count zero
            all = all && ids::count_assignments(n, u) == brute_injective(n, u, 0);
            ++pairs;
        }
    g.require(all, std::to_string(pairs) + " (N,u) pairs match brute-force enumeration");
    return g;
}

Gate golden_interpolant_algebra(const json& expect) {
    const double tol_b = json_num(expect, "tol_boundary");
    const double tol_g = json_num(expect, "tol_gvp");
    const auto grid = static_cast<std::int64_t>(json_num(expect, "grid_points"));
    Gate g;
    double dev_b = 0.0;
    for (const auto s : {Schedule::Linear, Schedule::Gvp}) {
        const auto at0 = schedule_eval(s, 0.0), at1 = schedule_eval(s, 1.0);
        dev_b = std::max({dev_b, std::abs(at0.alpha), std::abs(at1.sigma),
                          std::abs(at1.alpha - 1.0), std::abs(at0.sigma - 1.0)});
    }
    g.require(dev_b < tol_b, "boundary deviation " + fmt_g(dev_b) + " (tol " + fmt_g(tol_b) + ")");

    double dev_g = 0.0;
    for (std::int64_t i = 0; i < grid; ++i) {
        const double tau = static_cast<double>(i) / static_cast<double>(grid - 1);
        const auto se = schedule_eval(Schedule::Gvp, tau);
        dev_g = std::max(dev_g, std::abs(se.alpha * se.alpha + se.sigma * se.sigma - 1.0));
    }
    g.require(dev_g < tol_g, "gvp unit-norm deviation " + fmt_g(dev_g) + " on " +
                                 std::to_string(grid) + " points (tol " + fmt_g(tol_g) + ")");
    return g;
}

Gate golden_velocity_reparameterization(const json& expect, std::uint64_t seed) {
    const auto reps = static_cast<std::int64_t>(json_num(expect, "reps"));
    const double tol_cf = json_num(expect, "tol_closed_form");
    const double tol_cons = json_num(expect, "tol_consistency");
    const double tol_tensor = json_num(expect, "tol_tensor");
    Gate g;
    Rng rng(seed);

    // the double-precision scalar core against the eliminated-score form
    double dev_cf = 0.0;
    for (std::int64_t t = 0; t < reps; ++t) {
        const double tau = rng.uniform(0.05, 0.95);
        const auto se = schedule_eval(Schedule::Linear, tau);
        const double o = rng.normal() * 3.0, oh = rng.normal() * 3.0;
        dev_cf = std::max(dev_cf, std::abs(velocity_from_data_prediction(o, oh, se) -
                                           (oh - o) / (1.0 - tau)));
    }
    g.require(dev_cf < tol_cf, "linear closed-form deviation " + fmt_g(dev_cf) + " over " +
                                   std::to_string(reps) + " draws (tol " + fmt_g(tol_cf) + ")");

    // perfect prediction o_hat = o1 must recover dalpha o1 + dsigma eps
    double dev_cons = 0.0;
    for (const auto s : {Schedule::Linear, Schedule::Gvp})
        for (std::int64_t t = 0; t < reps; ++t) {
            const double tau = rng.uniform(0.05, 0.95);
            const auto se = schedule_eval(s, tau);
            const double o1 = rng.normal() * 2.0, eps = rng.normal();
            const double got =
                velocity_from_data_prediction(se.alpha * o1 + se.sigma * eps, o1, se);
            dev_cons = std::max(dev_cons,
                                std::abs(got - (se.dalpha * o1 + se.dsigma * eps)));
        }
    g.require(dev_cons < tol_cons, "perfect-prediction consistency deviation " + fmt_g(dev_cons) +
                                       " (tol " + fmt_g(tol_cons) + ")");

    // the float32 tensor path agrees with the scalar core
    double dev_t = 0.0;
    for (std::int64_t t = 0; t < 100; ++t) {
        const double tau = rng.uniform(0.05, 0.95);
        const auto se = schedule_eval(t % 2 ? Schedule::Gvp : Schedule::Linear, tau);
        const Tensor o = Tensor::randn(rng, {4, 6}), oh = Tensor::randn(rng, {4, 6});
        Tensor v({4, 6});
        velocity_field(t % 2 ? Schedule::Gvp : Schedule::Linear, tau, 1e-3, o.ptr(), oh.ptr(),
                       v.ptr(), v.numel());
        for (std::int64_t i = 0; i < v.numel(); ++i)
            dev_t = std::max(dev_t, std::abs(v.data[static_cast<std::size_t>(i)] -
                                             velocity_from_data_prediction(
                                                 o.data[static_cast<std::size_t>(i)],
                                                 oh.data[static_cast<std::size_t>(i)], se)));
    }
    g.require(dev_t < tol_tensor, "tensor path deviation from the scalar core " + fmt_g(dev_t) +
                                      " (tol " + fmt_g(tol_tensor) + ")");
    return g;
}

Gate golden_metric_oracles(const json& expect, std::uint64_t seed) {
    const double tol = json_num(expect, "tol_exact");
    const auto instances = static_cast<std::int64_t>(json_num(expect, "instances"));
    Gate g;

    // hand-computed cases
    {
        Tensor truth = Tensor::zeros({2, 1, 3}), off({2, 1, 3});
        off.data = {3, 4, 0, 3, 4, 0};
        const bool exact0 = metrics::ade(truth, truth) == 0.0 && metrics::fde(truth, truth) == 0.0;
        Tensor two({2, 1, 3});
        two.data = {5, 0, 0, 0, 10, 0}; // norms 5 then 10
        Tensor final2({1, 2, 3});
        Tensor final2_pred({1, 2, 3});
        final2_pred.data = {3, 0, 0, 0, 5, 0}; // final-frame offsets 3 and 5
        const bool hand = std::abs(metrics::ade(truth, off) - 5.0) < tol &&
                          std::abs(metrics::ade(truth, two) - 7.5) < tol &&
                          std::abs(metrics::fde(truth, two) - 10.0) < tol &&
                          std::abs(metrics::fde(final2, final2_pred) - 4.0) < tol;
        const auto mm = metrics::min_metrics(truth, {two, off});
        const bool mins = std::abs(mm.min_ade - 5.0) < tol &&
                          metrics::min_metrics(truth, {off, truth}).min_ade == 0.0;
        g.require(exact0 && hand && mins, "hand-computed ADE/FDE/minADE cases within " + fmt_g(tol));
    }

    // naive double-loop oracle on random instances
    Rng rng(seed);
    double dev = 0.0;
    for (std::int64_t t = 0; t < instances; ++t) {
        const std::int64_t F = 1 + static_cast<std::int64_t>(rng.uniform_int(5));
        const std::int64_t N = 1 + static_cast<std::int64_t>(rng.uniform_int(5));
        const std::int64_t D = 1 + static_cast<std::int64_t>(rng.uniform_int(4));
        const Tensor truth = Tensor::randn(rng, {F, N, D}), pred = Tensor::randn(rng, {F, N, D});
        double acc = 0.0, last = 0.0;
        for (std::int64_t f = 0; f < F; ++f) {
            double frame = 0.0;
            for (std::int64_t i = 0; i < N; ++i) {
                double r2 = 0.0;
                for (std::int64_t d = 0; d < D; ++d) {
                    const auto at = static_cast<std::size_t>((f * N + i) * D + d);
                    const double diff =
                        static_cast<double>(truth.data[at]) - static_cast<double>(pred.data[at]);
                    r2 += diff * diff;
                }
                frame += std::sqrt(r2);
            }
            acc += frame;
            if (f == F - 1) last = frame;
        }
        dev = std::max(dev, std::abs(metrics::ade(truth, pred) -
                                     acc / static_cast<double>(F * N)));
        dev = std::max(dev, std::abs(metrics::fde(truth, pred) - last / static_cast<double>(N)));
    }
    g.require(dev < tol, "double-loop oracle deviation " + fmt_g(dev) + " over " +
                             std::to_string(instances) + " instances (tol " + fmt_g(tol) + ")");
    return g;
}

Gate golden_codec_structure(const json& expect, std::uint64_t seed) {
    const auto max_n = static_cast<std::int64_t>(json_num(expect, "max_entities"));
    const double tol_eq = json_num(expect, "tol_equivariance");
    const double tol_mean = json_num(expect, "tol_ln_mean");
    const double tol_var = json_num(expect, "tol_ln_var");
    Gate g;

    ae::Stage1Config cfg;
    cfg.pool_size = max_n;
    cfg.id_dim = 64;
    Rng rng(seed);
    auto m = ae::build_autoencoder(cfg, 3, 1, rng);
    const auto L = cfg.encoder.latents, Dz = cfg.encoder.latent_dim;

    bool shapes = true;
    double dev_mean = 0.0, dev_var = 0.0;
    Rng data_rng(derive_seed(seed, 1));
    for (std::int64_t n = 1; n <= max_n; ++n) {
        std::vector<std::int64_t> assignment(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) assignment[static_cast<std::size_t>(i)] = i;
        const Tensor X = Tensor::randn(data_rng, {n, 3});
        const Tensor M = Tensor::randn(data_rng, {n, 1});
        const Tensor U = ae::id_embeddings(m, assignment);
        const Tensor Z = ae::encode_frame(m, X, M, U);
        shapes = shapes && Z.shape.size() == 2 && Z.shape[0] == L && Z.shape[1] == Dz;
        for (std::int64_t l = 0; l < L; ++l) {
            double mean = 0.0, var = 0.0;
            for (std::int64_t d = 0; d < Dz; ++d)
                mean += Z.data[static_cast<std::size_t>(l * Dz + d)];
            mean /= static_cast<double>(Dz);
            for (std::int64_t d = 0; d < Dz; ++d) {
                const double c = Z.data[static_cast<std::size_t>(l * Dz + d)] - mean;
                var += c * c;
            }
            var /= static_cast<double>(Dz);
            dev_mean = std::max(dev_mean, std::abs(mean));
            dev_var = std::max(dev_var, std::abs(var - 1.0));
        }
    }
    g.require(shapes, "latent shape (" + std::to_string(L) + ", " + std::to_string(Dz) +
                          ") for every entity count up to " + std::to_string(max_n));
    g.require(dev_mean < tol_mean && dev_var < tol_var,
              "latent row statistics |mean| " + fmt_g(dev_mean) + ", |var-1| " + fmt_g(dev_var));

    // decoding a permuted identifier matrix permutes the rows and nothing else
    const std::int64_t n = 8;
    std::vector<std::int64_t> ids_fwd{3, 1, 7, 0, 5, 2, 6, 4};
    std::vector<std::int64_t> perm{5, 2, 7, 1, 0, 6, 3, 4};
    const Tensor X = Tensor::randn(data_rng, {n, 3});
    const Tensor M = Tensor::randn(data_rng, {n, 1});
    const Tensor U = ae::id_embeddings(m, ids_fwd);
    const Tensor Z = ae::encode_frame(m, X, M, U);
    const auto dec = ae::decode_frame(m, Z, U);
    std::vector<std::int64_t> ids_perm(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
        ids_perm[static_cast<std::size_t>(i)] = ids_fwd[static_cast<std::size_t>(perm[i])];
    const auto dec_perm = ae::decode_frame(m, Z, ae::id_embeddings(m, ids_perm));
    double dev_eq = 0.0;
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t d = 0; d < 3; ++d)
            dev_eq = std::max(dev_eq,
                              std::abs(static_cast<double>(dec_perm.first.data[static_cast<
                                           std::size_t>(i * 3 + d)]) -
                                       dec.first.data[static_cast<std::size_t>(perm[i] * 3 + d)]));
    g.require(dev_eq < tol_eq, "decoder permutation equivariance deviation " + fmt_g(dev_eq) +
                                   " (tol " + fmt_g(tol_eq) + ")");
    return g;
}

Gate golden_euler_integrator(const json& expect) {
    const double want = json_num(expect, "value");
    const double tol = json_num(expect, "tol");
    const auto steps = static_cast<std::int64_t>(json_num(expect, "steps"));
    Gate g;
    std::int64_t nfe = 0;
    const auto field = [&nfe](const Tensor& z, double) {
        ++nfe;
        return z;
    };
    const Tensor out = sampler::integrate_euler(field, Tensor::full({1}, 1.0f), steps);
    const double got = out.data[0];
    g.require(std::abs(got - want) < tol,
              "compound growth " + fmt_g(got) + " vs " + fmt_g(want) + " (tol " + fmt_g(tol) + ")");
    g.require(nfe == steps, "NFE " + std::to_string(nfe) + " equals step count " +
                                std::to_string(steps));
    return g;
}

Gate golden_physics_conservation(const json& expect, std::uint64_t seed) {
    const double tol_p = json_num(expect, "tol_momentum_rel");
    const double tol_r = json_num(expect, "tol_orbit_radius_rel");
    const auto scenes = static_cast<std::int64_t>(json_num(expect, "scenes"));
    Gate g;

    double drift = 0.0;
    for (const auto s : {nbody::Scenario::Spring, nbody::Scenario::Gravity})
        for (std::int64_t i = 0; i < scenes; ++i) {
            const auto cfg = nbody::default_config(s);
            Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i) * 2 +
                                          (s == nbody::Scenario::Gravity ? 1 : 0)));
            nbody::SimDiagnostics diag;
            nbody::simulate(cfg, rng, &diag);
            drift = std::max(drift, diag.momentum_drift_rel);
        }
    g.require(drift < tol_p, "momentum drift " + fmt_g(drift) + " over " +
                                 std::to_string(2 * scenes) + " scenes (tol " + fmt_g(tol_p) + ")");

    // equal unit masses, separation 2, G=1: each body circles the origin at
    // radius 1 with speed 0.5 and period 4*pi
    auto orbit = nbody::default_config(nbody::Scenario::Gravity);
    orbit.entities = 2;
    orbit.softening = 0.0;
    orbit.grav_g = 1.0;
    orbit.frames = 30;
    orbit.dt = 0.001;
    orbit.stride = 434; // 29 * 434 * 0.001 just past one period
    nbody::InitialConditions ic;
    ic.particle = {1.0, 1.0};
    ic.pos = {1.0, 0.0, 0.0, -1.0, 0.0, 0.0};
    ic.vel = {0.0, 0.5, 0.0, 0.0, -0.5, 0.0};
    const auto traj = nbody::simulate_gravity_from(orbit, ic);
    double dev_r = 0.0;
    for (std::int64_t f = 0; f < orbit.frames; ++f)
        for (std::int64_t i = 0; i < 2; ++i) {
            double r2 = 0.0;
            for (std::int64_t d = 0; d < 3; ++d) {
                const double x = traj.X.data[static_cast<std::size_t>((f * 2 + i) * 3 + d)];
                r2 += x * x;
            }
            dev_r = std::max(dev_r, std::abs(std::sqrt(r2) - 1.0));
        }
    g.require(dev_r < tol_r, "circular orbit radius deviation " + fmt_g(dev_r) + " (tol " +
                                 fmt_g(tol_r) + ")");

    // one master seed reproduces every byte
    const auto cfg = nbody::default_config(nbody::Scenario::Spring);
    Rng ra(seed), rb(seed);
    const auto ta = nbody::simulate_spring(cfg, ra), tb = nbody::simulate_spring(cfg, rb);
    const bool rerun_eq = ta.X.data == tb.X.data && ta.M.data == tb.M.data;
    const auto da = nbody::generate_dataset(cfg, {2, 1, 1}, seed);
    const auto db = nbody::generate_dataset(cfg, {2, 1, 1}, seed);
    bool ds_eq = true;
    for (std::size_t s = 0; s < da.size(); ++s)
        for (std::size_t t = 0; t < da[s].trajectories.size(); ++t)
            ds_eq = ds_eq && da[s].trajectories[t].X.data == db[s].trajectories[t].X.data;
    g.require(rerun_eq && ds_eq, "simulation and dataset generation bitwise reproducible");
    return g;
}

// small real-physics datasets for the training-loop goldens
nbody::TrajectoryDataset tiny_split(std::int64_t count, std::int64_t frames, std::uint64_t seed,
                                    const std::string& split) {
    auto cfg = nbody::default_config(nbody::Scenario::Spring);
    cfg.entities = 3;
    cfg.frames = frames;
    cfg.stride = 20;
    nbody::TrajectoryDataset ds;
    ds.split = split;
    ds.config = cfg;
    ds.master_seed = seed;
    for (std::int64_t i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        ds.traj_seeds.push_back(derive_seed(seed, static_cast<std::uint64_t>(i)));
        ds.trajectories.push_back(nbody::simulate_spring(cfg, rng));
    }
    return ds;
}

ae::Autoencoder tiny_stage1(std::uint64_t seed) {
    ae::Stage1Config cfg;
    cfg.encoder = {4, 8, 2, 4, 1, 2};
    cfg.decoder = {2, 4, 1, 2};
    cfg.id_dim = 16;
    cfg.pool_size = 10;
    cfg.seed = seed;
    Rng rng(seed);
    auto m = ae::build_autoencoder(cfg, 3, 1, rng);
    for (auto& v : m.x_std.data) v = 1.0f;
    return m;
}

flow::FlowModel tiny_stage2(std::uint64_t seed, std::int64_t condition_frames) {
    flow::LatentFlowConfig cfg;
    cfg.hidden = 16;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.ffn_mult = 2;
    cfg.condition_frames = condition_frames;
    cfg.epochs = 3;
    cfg.batch = 4;
    cfg.seed = seed;
    Rng rng(seed);
    auto m = flow::build_flow_model(cfg, 4, 8, rng);
    Rng stir(derive_seed(seed, 9));
    for (const auto& name : m.params.names())
        if (name.find(".mod.") != std::string::npos || name.rfind("head.mod", 0) == 0)
            for (auto& v : m.params.get(name)->val.data)
                v = static_cast<float>(stir.normal(0.0, 0.05));
    return m;
}

Gate golden_freeze_and_ema(const json& expect, std::uint64_t seed) {
    Gate g;

    // closed-form EMA cases
    nn::ParamStore ps;
    ps.add("w", Tensor::zeros({1}), false);
    nn::Ema half(ps, 0.999);
    ps.get("w")->val.data[0] = 1.0f;
    half.update(ps);
    const bool beta_mid = std::abs(half.shadow().at("w").data[0] - 0.001) < 1e-9;
    nn::Ema frozen(ps, 1.0);
    ps.get("w")->val.data[0] = 5.0f;
    frozen.update(ps);
    const bool beta_one = frozen.shadow().at("w").data[0] == 1.0f;
    nn::Ema tracking(ps, 0.0);
    ps.get("w")->val.data[0] = -2.5f;
    tracking.update(ps);
    const bool beta_zero = tracking.shadow().at("w").data[0] == -2.5f;
    g.require(beta_mid && beta_one && beta_zero, "EMA closed forms for beta in {0, 0.999, 1}");

    // the frozen first stage stays bitwise identical through stage-2 training
    auto s1 = tiny_stage1(derive_seed(seed, 1));
    const auto before = s1.params.fingerprint();
    auto m = tiny_stage2(derive_seed(seed, 2), 2);
    const auto train =
        tiny_split(static_cast<std::int64_t>(json_num(expect, "train_trajectories")), 5,
                   derive_seed(seed, 3), "train");
    const auto val = tiny_split(2, 5, derive_seed(seed, 4), "val");
    nn::Ema ema(m.params, m.cfg.ema_beta);
    flow::train_second_stage(m, s1, train, val, ema);
    g.require(s1.params.fingerprint() == before && m.stage1_hash == hash_hex(before),
              "first-stage weights bitwise unchanged through stage-2 training");
    return g;
}

Gate golden_cascaded_rollout(const json& expect, std::uint64_t seed) {
    const auto blocks = static_cast<std::int64_t>(json_num(expect, "blocks"));
    const auto block_len = static_cast<std::int64_t>(json_num(expect, "block_len"));
    const auto want_frames = static_cast<std::int64_t>(json_num(expect, "frames"));
    Gate g;

    const auto s1 = tiny_stage1(derive_seed(seed, 1));
    const auto s2 = tiny_stage2(derive_seed(seed, 2), 1);
    Rng rng(derive_seed(seed, 3));
    SystemState init{Tensor::randn(rng, {3, 3}), Tensor::randn(rng, {3, 1})};

    sampler::SamplerConfig cfg;
    cfg.steps = 5;
    cfg.seed = derive_seed(seed, 4);
    const auto out = sampler::cascaded_rollout(s2, s1, init, {0, 1, 2}, {block_len, blocks}, cfg);

    g.require(out.traj.frames() == want_frames,
              std::to_string(blocks) + " blocks of " + std::to_string(block_len) + " give " +
                  std::to_string(out.traj.frames()) + " frames (want " +
                  std::to_string(want_frames) + ")");
    bool finite = true;
    for (const auto v : out.traj.X.data) finite = finite && std::isfinite(v);
    g.require(finite, "every generated coordinate is finite");
    bool seeded = true;
    for (std::size_t i = 0; i < init.x.data.size(); ++i)
        seeded = seeded && out.traj.X.data[i] == init.x.data[i];
    g.require(seeded, "frame 0 is the conditioning state, verbatim");

    // overlap-1 continuity: a single block is a bitwise prefix of the cascade
    const auto single =
        sampler::cascaded_rollout(s2, s1, init, {0, 1, 2}, {block_len, 1}, cfg);
    bool prefix = true;
    for (std::size_t i = 0; i < single.traj.X.data.size(); ++i)
        prefix = prefix && single.traj.X.data[i] == out.traj.X.data[i];
    g.require(prefix, "one block is a bitwise prefix of the cascade (seam frames shared)");
    g.require(out.nfe == blocks * cfg.steps, "NFE " + std::to_string(out.nfe) + " = blocks x steps");
    return g;
}

// ----- desk-scale goldens ---------------------------------------------------

struct DeskSetup {
    nbody::ScenarioConfig scenario;
    nbody::SplitCounts counts;
    std::uint64_t data_seed = 0;
    cfg::RunConfig rc;
    std::string data_dir, stage1_dir, stage2_dir;
};

nbody::SplitCounts parse_counts_text(const std::string& text) {
    long long train = 0, val = 0, test = 0;
    char extra = 0;
    if (std::sscanf(text.c_str(), "%lld,%lld,%lld%c", &train, &val, &test, &extra) != 3 ||
        train < 1 || val < 1 || test < 1)
        throw ConfigError("golden dataset counts must be three positive integers");
    return {train, val, test};
}

std::string key_of(const std::string& text) {
    return hash_hex(fnv1a64(text.data(), text.size()));
}

DeskSetup desk_setup(const json& spec) {
    DeskSetup d;
    const json dataset = spec.at("dataset");
    const auto scenario_name = dataset.at("scenario").get<std::string>();
    d.scenario = nbody::default_config(nbody::scenario_from_string(scenario_name));
    if (dataset.contains("entities")) d.scenario.entities = dataset.at("entities").get<std::int64_t>();
    if (dataset.contains("frames")) d.scenario.frames = dataset.at("frames").get<std::int64_t>();
    d.counts = parse_counts_text(dataset.at("counts").get<std::string>());
    d.data_seed = dataset.at("seed").get<std::uint64_t>();
    d.rc = cfg::run_config_from_json(spec.value("config", json::object()).dump());

    const auto root = work_root();
    const auto data_key = key_of(dataset.dump());
    d.data_dir = root + "/data-" + scenario_name + "-" + data_key;
    const auto s1_key = key_of(dataset.dump() + ae::stage1_config_to_json(d.rc.first_stage));
    d.stage1_dir = root + "/stage1-" + s1_key;
    const auto s2_key =
        key_of(dataset.dump() + ae::stage1_config_to_json(d.rc.first_stage) +
               flow::flow_config_to_json(d.rc.second_stage));
    d.stage2_dir = root + "/stage2-" + s2_key;
    return d;
}

void ensure_dataset(const DeskSetup& d) {
    if (fs::exists(d.data_dir + "/test/meta.json")) return;
    const auto splits = nbody::generate_dataset(d.scenario, d.counts, d.data_seed);
    fs::create_directories(d.data_dir);
    for (const auto& ds : splits) nbody::save_dataset(ds, d.data_dir + "/" + ds.split);
}

// trains (or reuses) the first stage; returns the EMA model for scoring
ae::Autoencoder ensure_stage1(const DeskSetup& d) {
    if (!fs::exists(d.stage1_dir + "/config.json")) {
        const auto train = nbody::load_dataset(d.data_dir + "/train");
        const auto val = nbody::load_dataset(d.data_dir + "/val");
        Rng rng(d.rc.first_stage.seed);
        auto m = ae::build_autoencoder(d.rc.first_stage, train.trajectories[0].coord_dim(),
                                       train.trajectories[0].feat_dim(), rng);
        nn::Ema ema(m.params, m.cfg.ema_beta);
        ae::train_first_stage(m, train, val, ema);
        fs::create_directories(d.stage1_dir);
        ae::save_stage1(m, ema, d.stage1_dir);
    }
    return ae::load_stage1(d.stage1_dir, true);
}

flow::FlowModel ensure_stage2(const DeskSetup& d, const ae::Autoencoder& s1) {
    if (!fs::exists(d.stage2_dir + "/config.json")) {
        const auto train = nbody::load_dataset(d.data_dir + "/train");
        const auto val = nbody::load_dataset(d.data_dir + "/val");
        Rng rng(d.rc.second_stage.seed);
        auto m = flow::build_flow_model(d.rc.second_stage, s1.cfg.encoder.latents,
                                        s1.cfg.encoder.latent_dim, rng);
        nn::Ema ema(m.params, m.cfg.ema_beta);
        flow::train_second_stage(m, s1, train, val, ema);
        fs::create_directories(d.stage2_dir);
        flow::save_stage2(m, ema, d.stage2_dir);
    }
    return flow::load_stage2(d.stage2_dir, true);
}

// pooled per-component standard deviation of every coordinate in the split
double coordinate_std(const nbody::TrajectoryDataset& ds) {
    double sum = 0.0, sum2 = 0.0, count = 0.0;
    for (const auto& t : ds.trajectories)
        for (const auto v : t.X.data) {
            sum += v;
            sum2 += static_cast<double>(v) * v;
            count += 1.0;
        }
    const double mean = sum / count;
    return std::sqrt(std::max(sum2 / count - mean * mean, 0.0));
}

Gate golden_desk_stage1(const json& spec) {
    const json expect = spec.at("expect");
    const double recon_rel_max = json_num(expect, "recon_rel_max");
    const double cv_max = json_num(expect, "assignment_cv_max");
    const auto epochs_max = static_cast<std::int64_t>(json_num(expect, "epochs_max"));
    Gate g;

    const auto d = desk_setup(spec);
    g.require(d.rc.first_stage.epochs <= epochs_max,
              "trains " + std::to_string(d.rc.first_stage.epochs) + " epochs (cap " +
                  std::to_string(epochs_max) + ")");
    ensure_dataset(d);
    const auto m = ensure_stage1(d);
    const auto test = nbody::load_dataset(d.data_dir + "/test");

    const double scale = coordinate_std(test);
    const auto report = ae::reconstruction_report(m, test, 1);
    const double rel = report.pos_error / scale;
    g.require(rel <= recon_rel_max, "reconstruction error " + fmt_g(report.pos_error) + " = " +
                                        fmt_g(rel) + " of coordinate std " + fmt_g(scale) +
                                        " (cap " + fmt_g(recon_rel_max) + ")");

    // robustness across identifier assignments: five draws, spread over mean
    double sum = 0.0, sum2 = 0.0;
    for (std::uint64_t k = 0; k < 5; ++k) {
        const double e = ae::reconstruction_report(m, test, derive_seed(11, k)).pos_error;
        sum += e;
        sum2 += e * e;
    }
    const double mean = sum / 5.0;
    const double var = std::max(sum2 / 5.0 - mean * mean, 0.0);
    const double cv = std::sqrt(var) / mean;
    g.require(cv < cv_max, "assignment sensitivity: std/mean " + fmt_g(cv) + " over 5 draws (cap " +
                               fmt_g(cv_max) + ")");
    return g;
}

Gate golden_desk_forecast(const json& spec) {
    const json expect = spec.at("expect");
    const auto k = static_cast<std::int64_t>(json_num(expect, "k"));
    const auto epochs_max = static_cast<std::int64_t>(json_num(expect, "epochs_max"));
    Gate g;

    const auto d = desk_setup(spec);
    g.require(d.rc.second_stage.epochs <= epochs_max,
              "trains " + std::to_string(d.rc.second_stage.epochs) + " epochs (cap " +
                  std::to_string(epochs_max) + ")");
    ensure_dataset(d);
    const auto s1 = ensure_stage1(d);
    const auto s2 = ensure_stage2(d, s1);
    const auto test = nbody::load_dataset(d.data_dir + "/test");

    eval::EvalProtocol p;
    p.k = k;
    p.condition_frames = s2.cfg.condition_frames;
    p.integrator = d.rc.inference.integrator;
    p.steps = d.rc.inference.steps;
    p.eps_clamp = d.rc.inference.eps_clamp;
    p.keep_forecasts = 0;
    p.seed = spec.value("eval_seed", 101);
    const auto res = eval::evaluate_model(s2, s1, test, p);

    const auto& r = res.report;
    g.require(r.ade < r.static_ade && r.ade < r.linear_ade,
              "ADE " + fmt_g(r.ade) + " vs static " + fmt_g(r.static_ade) + ", linear " +
                  fmt_g(r.linear_ade));
    g.require(r.fde < r.static_fde && r.fde < r.linear_fde,
              "FDE " + fmt_g(r.fde) + " vs static " + fmt_g(r.static_fde) + ", linear " +
                  fmt_g(r.linear_fde));
    return g;
}

} // namespace

std::vector<std::string> golden_names() {
    return {"identifier-counting",  "interpolant-algebra", "velocity-reparameterization",
            "metric-oracles",       "codec-structure",     "euler-integrator",
            "physics-conservation", "freeze-and-ema",      "cascaded-rollout",
            "spring-desk-stage1",   "spring-desk-forecast"};
}

GoldenOutcome run_golden(const std::string& name, const std::string& goldens_dir) {
    const auto names = golden_names();
    if (std::find(names.begin(), names.end(), name) == names.end())
        throw ConfigError("unknown golden: " + name);

    json spec;
    try {
        spec = json::parse(read_text_file(goldens_dir + "/" + name + ".json"));
    } catch (const json::exception& e) {
        throw IoError("corrupt golden spec for " + name + ": " + e.what());
    }
    const auto seed = spec.value("seed", 1);
    const json expect = spec.value("expect", json::object());

    const auto t0 = std::chrono::steady_clock::now();
    Gate g;
    if (name == "identifier-counting") g = golden_identifier_counting(expect);
    else if (name == "interpolant-algebra") g = golden_interpolant_algebra(expect);
    else if (name == "velocity-reparameterization") g = golden_velocity_reparameterization(expect, seed);
    else if (name == "metric-oracles") g = golden_metric_oracles(expect, seed);
    else if (name == "codec-structure") g = golden_codec_structure(expect, seed);
    else if (name == "euler-integrator") g = golden_euler_integrator(expect);
    else if (name == "physics-conservation") g = golden_physics_conservation(expect, seed);
    else if (name == "freeze-and-ema") g = golden_freeze_and_ema(expect, seed);
    else if (name == "cascaded-rollout") g = golden_cascaded_rollout(expect, seed);
    else if (name == "spring-desk-stage1") g = golden_desk_stage1(spec);
    else if (name == "spring-desk-forecast") g = golden_desk_forecast(spec);

    GoldenOutcome out;
    out.name = name;
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.pass = g.pass;
    out.detail = g.detail;
    if (spec.contains("budget_seconds") && out.seconds > spec.at("budget_seconds").get<double>()) {
        out.pass = false;
        out.detail += "; FAIL: ran " + fmt_g(out.seconds) + "s over the " +
                      fmt_g(spec.at("budget_seconds").get<double>()) + "s budget";
    }
    return out;
}

} // namespace latflow::golden
