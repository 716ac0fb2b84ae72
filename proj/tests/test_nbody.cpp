#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "latflow/error.hpp"
#include "latflow/nbody.hpp"

using namespace latflow;
using namespace latflow::nbody;

namespace {

namespace fs = std::filesystem;

double sep(const Tensor& X, std::int64_t t, std::int64_t i, std::int64_t j) {
    const auto N = X.shape[1], D = X.shape[2];
    double s = 0;
    for (std::int64_t d = 0; d < D; ++d) {
        const double diff = static_cast<double>(X.data[(t * N + i) * D + d]) -
                            X.data[(t * N + j) * D + d];
        s += diff * diff;
    }
    return std::sqrt(s);
}

std::string fresh_dir(const std::string& tag) {
    auto p = fs::temp_directory_path() / ("latflow_nbody_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

} // namespace

TEST_CASE("scenario string round trip") {
    for (auto s : {Scenario::Charged, Scenario::Spring, Scenario::Gravity})
        CHECK(scenario_from_string(scenario_to_string(s)) == s);
    CHECK_THROWS_AS(scenario_from_string("plasma"), ConfigError);
}

TEST_CASE("config validation rejects out-of-range fields") {
    auto cfg = default_config(Scenario::Spring);
    CHECK_NOTHROW(validate_config(cfg));

    auto bad = cfg;
    bad.entities = 1;
    CHECK_THROWS_AS(validate_config(bad), ConfigError);
    bad = cfg;
    bad.dt = 0.0;
    CHECK_THROWS_AS(validate_config(bad), ConfigError);
    bad = cfg;
    bad.stride = 0;
    CHECK_THROWS_AS(validate_config(bad), ConfigError);
    bad = cfg;
    bad.connect_prob = 1.5;
    CHECK_THROWS_AS(validate_config(bad), ConfigError);
    bad = cfg;
    bad.mass_hi = bad.mass_lo - 0.1;
    CHECK_THROWS_AS(validate_config(bad), ConfigError);
    bad = cfg;
    bad.frames = 0;
    CHECK_THROWS_AS(validate_config(bad), ConfigError);
}

TEST_CASE("config json round trip preserves every field") {
    auto cfg = default_config(Scenario::Gravity);
    cfg.softening = 0.25;
    cfg.vel_std = 0.125;
    const auto back = config_from_json(config_to_json(cfg));
    CHECK(back.scenario == cfg.scenario);
    CHECK(back.entities == cfg.entities);
    CHECK(back.coord_dim == cfg.coord_dim);
    CHECK(back.frames == cfg.frames);
    CHECK(back.dt == cfg.dt);
    CHECK(back.stride == cfg.stride);
    CHECK(back.softening == cfg.softening);
    CHECK(back.spring_k == cfg.spring_k);
    CHECK(back.connect_prob == cfg.connect_prob);
    CHECK(back.box_halfwidth == cfg.box_halfwidth);
    CHECK(back.grav_g == cfg.grav_g);
    CHECK(back.mass_lo == cfg.mass_lo);
    CHECK(back.mass_hi == cfg.mass_hi);
    CHECK(back.pos_std == cfg.pos_std);
    CHECK(back.vel_std == cfg.vel_std);
    CHECK_THROWS_AS(config_from_json("{\"scenario\":\"spring\"}"), ConfigError);
    CHECK_THROWS_AS(config_from_json("not json"), ConfigError);
}

// Force-free limit: with no springs sampled, x(t) = x0 + t*v0 exactly.
TEST_CASE("spring with empty graph gives straight lines") {
    auto cfg = default_config(Scenario::Spring);
    cfg.entities = 3;
    InitialConditions ic;
    ic.particle = {1.0, 0.7, 1.3};
    ic.pos = {0.0, 0.0, 0.0, 1.0, -1.0, 0.5, -2.0, 0.3, 0.1};
    ic.vel = {0.1, -0.2, 0.05, 0.0, 0.3, -0.1, 0.25, 0.0, 0.2};
    std::vector<std::uint8_t> adj(9, 0);
    const auto traj = simulate_spring_from(cfg, ic, adj);

    for (std::int64_t f = 0; f < cfg.frames; ++f) {
        const double t = static_cast<double>(f) * cfg.stride * cfg.dt;
        for (std::int64_t i = 0; i < 3; ++i)
            for (std::int64_t d = 0; d < 3; ++d) {
                const double expect = ic.pos[static_cast<std::size_t>(i * 3 + d)] +
                                      t * ic.vel[static_cast<std::size_t>(i * 3 + d)];
                CHECK(std::abs(traj.X.data[(f * 3 + i) * 3 + d] - expect) < 1e-5);
            }
    }
}

TEST_CASE("two equal masses on one spring keep the center of mass still") {
    auto cfg = default_config(Scenario::Spring);
    cfg.entities = 2;
    InitialConditions ic;
    ic.particle = {1.0, 1.0};
    ic.pos = {1.0, 0.5, -0.25, -1.0, -0.5, 0.25};
    ic.vel = {0.3, -0.1, 0.2, -0.3, 0.1, -0.2};
    std::vector<std::uint8_t> adj = {0, 1, 1, 0};
    const auto traj = simulate_spring_from(cfg, ic, adj);

    for (std::int64_t f = 0; f < cfg.frames; ++f)
        for (std::int64_t d = 0; d < 3; ++d) {
            const double com = 0.5 * (static_cast<double>(traj.X.data[(f * 2 + 0) * 3 + d]) +
                                      traj.X.data[(f * 2 + 1) * 3 + d]);
            CHECK(std::abs(com) < 1e-6);
        }
}

TEST_CASE("spring momentum and energy stay put over a stored trajectory") {
    auto cfg = default_config(Scenario::Spring);
    for (std::uint64_t seed : {11ull, 12ull, 13ull, 14ull, 15ull}) {
        Rng rng(seed);
        SimDiagnostics diag;
        const auto traj = simulate_spring(cfg, rng, &diag);
        CHECK(diag.momentum_drift_rel < 1e-6);
        CHECK(diag.energy_osc_rel < 0.01);
        CHECK(traj.X.shape == Shape{cfg.frames, cfg.entities, cfg.coord_dim});
        CHECK(traj.M.shape == Shape{cfg.entities, 1});
        for (float m : traj.M.data) {
            CHECK(m >= cfg.mass_lo);
            CHECK(m <= cfg.mass_hi);
        }
    }
}

TEST_CASE("gravity momentum conservation") {
    auto cfg = default_config(Scenario::Gravity);
    for (std::uint64_t seed : {21ull, 22ull, 23ull}) {
        Rng rng(seed);
        SimDiagnostics diag;
        const auto traj = simulate_gravity(cfg, rng, &diag);
        CHECK(diag.momentum_drift_rel < 1e-6);
        validate_trajectory(traj);
    }
}

// Analytic oracle: equal unit masses, separation 2, G=1. Relative orbital
// speed sqrt(G*m_total/r) = 1, so each body circles the origin at radius 1
// with speed 0.5 and period 4*pi. Softening off so the law is exact.
TEST_CASE("two-body circular orbit holds its radius over one period") {
    ScenarioConfig cfg = default_config(Scenario::Gravity);
    cfg.entities = 2;
    cfg.softening = 0.0;
    cfg.grav_g = 1.0;
    cfg.frames = 30;
    cfg.dt = 0.001;
    cfg.stride = 434; // 29 * 434 * 0.001 = 12.586 > 4*pi

    InitialConditions ic;
    ic.particle = {1.0, 1.0};
    ic.pos = {1.0, 0.0, 0.0, -1.0, 0.0, 0.0};
    ic.vel = {0.0, 0.5, 0.0, 0.0, -0.5, 0.0};
    const auto traj = simulate_gravity_from(cfg, ic);

    for (std::int64_t f = 0; f < cfg.frames; ++f)
        for (std::int64_t i = 0; i < 2; ++i) {
            double r2 = 0;
            for (std::int64_t d = 0; d < 3; ++d) {
                const double x = traj.X.data[(f * 2 + i) * 3 + d];
                r2 += x * x;
            }
            CHECK(std::abs(std::sqrt(r2) - 1.0) < 0.01);
        }

    // after one full period (frame 29 is 0.02 t.u. past it) the bodies are
    // nearly back where they started
    for (std::int64_t d = 0; d < 3; ++d)
        CHECK(std::abs(traj.X.data[(29 * 2 + 0) * 3 + d] -
                       static_cast<float>(ic.pos[static_cast<std::size_t>(d)])) < 0.05);
}

// Equal masses with negated initial conditions stay exactly negated: the
// pairwise force is computed once and applied with opposite signs, and IEEE
// arithmetic is symmetric under negation.
TEST_CASE("mirror-symmetric gravity stays mirror-symmetric") {
    ScenarioConfig cfg = default_config(Scenario::Gravity);
    cfg.entities = 2;
    InitialConditions ic;
    ic.particle = {1.5, 1.5};
    ic.pos = {0.8, -0.3, 0.6, -0.8, 0.3, -0.6};
    ic.vel = {0.1, 0.2, -0.15, -0.1, -0.2, 0.15};
    const auto traj = simulate_gravity_from(cfg, ic);

    for (std::int64_t f = 0; f < cfg.frames; ++f)
        for (std::int64_t d = 0; d < 3; ++d)
            CHECK(traj.X.data[(f * 2 + 0) * 3 + d] == -traj.X.data[(f * 2 + 1) * 3 + d]);
}

TEST_CASE("opposite charges approach, like charges separate") {
    ScenarioConfig cfg = default_config(Scenario::Charged);
    cfg.entities = 2;
    cfg.frames = 5;
    cfg.stride = 100;

    InitialConditions ic;
    ic.pos = {1.0, 0.0, 0.0, -1.0, 0.0, 0.0};
    ic.vel = {0.0, 0.0, 0.0, 0.0, 0.0, 0.0};

    ic.particle = {1.0, -1.0};
    const auto attract = simulate_charged_from(cfg, ic);
    for (std::int64_t f = 1; f < cfg.frames; ++f)
        CHECK(sep(attract.X, f, 0, 1) < sep(attract.X, f - 1, 0, 1));

    ic.particle = {1.0, 1.0};
    const auto repel = simulate_charged_from(cfg, ic);
    for (std::int64_t f = 1; f < cfg.frames; ++f)
        CHECK(sep(repel.X, f, 0, 1) > sep(repel.X, f - 1, 0, 1));
}

TEST_CASE("charged runs stay finite and inside the box across many seeds") {
    auto cfg = default_config(Scenario::Charged);
    cfg.frames = 10; // short horizon keeps 1000 runs cheap; every step still softened
    std::int64_t bad = 0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        Rng rng(derive_seed(99, seed));
        const auto traj = simulate_charged(cfg, rng);
        for (float x : traj.X.data) {
            if (!std::isfinite(x) || std::abs(x) > cfg.box_halfwidth + 1e-4f) {
                ++bad;
                break;
            }
        }
        for (float q : traj.M.data)
            CHECK(std::abs(q) == 1.0f);
    }
    CHECK(bad == 0);
}

TEST_CASE("dispatcher routes on the scenario tag") {
    for (auto s : {Scenario::Charged, Scenario::Spring, Scenario::Gravity}) {
        auto cfg = default_config(s);
        cfg.frames = 3;
        cfg.stride = 5;
        Rng rng(5);
        const auto traj = simulate(cfg, rng);
        CHECK(traj.X.shape[1] == cfg.entities);
        if (s == Scenario::Charged)
            for (float q : traj.M.data) CHECK(std::abs(q) == 1.0f);
        else
            for (float m : traj.M.data) CHECK(m > 0.0f);
    }
}

TEST_CASE("same seed same trajectory, different seed different trajectory") {
    auto cfg = default_config(Scenario::Spring);
    cfg.frames = 5;
    Rng a(123), b(123), c(124);
    const auto ta = simulate_spring(cfg, a);
    const auto tb = simulate_spring(cfg, b);
    const auto tc = simulate_spring(cfg, c);
    CHECK(ta.X.data == tb.X.data);
    CHECK(ta.M.data == tb.M.data);
    CHECK(ta.X.data != tc.X.data);
}

TEST_CASE("dataset generation is deterministic with disjoint split seeds") {
    auto cfg = default_config(Scenario::Spring);
    cfg.frames = 4;
    cfg.stride = 10;
    const SplitCounts counts{4, 2, 2};
    const auto one = generate_dataset(cfg, counts, 7);
    const auto two = generate_dataset(cfg, counts, 7);

    for (int s = 0; s < 3; ++s) {
        CHECK(one[s].trajectories.size() == two[s].trajectories.size());
        for (std::size_t i = 0; i < one[s].trajectories.size(); ++i) {
            CHECK(one[s].trajectories[i].X.data == two[s].trajectories[i].X.data);
            CHECK(one[s].trajectories[i].M.data == two[s].trajectories[i].M.data);
        }
        CHECK(one[s].desk_scale);
    }
    CHECK(one[0].split == "train");
    CHECK(one[1].split == "val");
    CHECK(one[2].split == "test");
    CHECK(one[0].trajectories.size() == 4);

    // no seed appears in two splits
    std::vector<std::uint64_t> all;
    for (const auto& ds : one) all.insert(all.end(), ds.traj_seeds.begin(), ds.traj_seeds.end());
    std::sort(all.begin(), all.end());
    CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());

    const auto other = generate_dataset(cfg, counts, 8);
    CHECK(other[0].trajectories[0].X.data != one[0].trajectories[0].X.data);

    CHECK_THROWS_AS(generate_dataset(cfg, SplitCounts{0, 1, 1}, 7), ConfigError);
}

TEST_CASE("dataset save and load round-trips bit-exactly") {
    auto cfg = default_config(Scenario::Gravity);
    cfg.frames = 3;
    cfg.stride = 5;
    cfg.entities = 4;
    const auto splits = generate_dataset(cfg, SplitCounts{3, 1, 1}, 42);
    const auto dir = fresh_dir("roundtrip");
    save_dataset(splits[0], dir);
    const auto back = load_dataset(dir);

    CHECK(back.split == "train");
    CHECK(back.master_seed == 42);
    CHECK(back.desk_scale);
    CHECK(back.traj_seeds == splits[0].traj_seeds);
    CHECK(back.config.scenario == cfg.scenario);
    CHECK(back.config.entities == cfg.entities);
    REQUIRE(back.trajectories.size() == splits[0].trajectories.size());
    for (std::size_t i = 0; i < back.trajectories.size(); ++i) {
        CHECK(back.trajectories[i].X.data == splits[0].trajectories[i].X.data);
        CHECK(back.trajectories[i].M.data == splits[0].trajectories[i].M.data);
    }
}

TEST_CASE("loader rejects truncation, version bumps, and corrupt metadata") {
    auto cfg = default_config(Scenario::Spring);
    cfg.frames = 3;
    cfg.stride = 5;
    const auto splits = generate_dataset(cfg, SplitCounts{2, 1, 1}, 9);

    const auto trunc = fresh_dir("trunc");
    save_dataset(splits[0], trunc);
    fs::resize_file(fs::path(trunc) / "X.bin", 17);
    CHECK_THROWS_AS(load_dataset(trunc), IoError);

    const auto vdir = fresh_dir("version");
    save_dataset(splits[0], vdir);
    {
        std::ifstream in(vdir + "/meta.json");
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        auto pos = text.find("\"schema_version\": 1");
        REQUIRE(pos != std::string::npos);
        text.replace(pos, 19, "\"schema_version\": 2");
        std::ofstream out(vdir + "/meta.json", std::ios::trunc);
        out << text;
    }
    CHECK_THROWS_WITH_AS(load_dataset(vdir), doctest::Contains("schema_version"), IoError);

    const auto cdir = fresh_dir("corrupt");
    save_dataset(splits[0], cdir);
    {
        std::ofstream out(cdir + "/meta.json", std::ios::trunc);
        out << "{ not json";
    }
    CHECK_THROWS_AS(load_dataset(cdir), IoError);

    CHECK_THROWS_AS(load_dataset("/nonexistent/latflow/dataset"), IoError);
}

TEST_CASE("defaults describe the three scenarios") {
    const auto sp = default_config(Scenario::Spring);
    CHECK(sp.entities == 5);
    CHECK(sp.frames == 30);
    CHECK(sp.connect_prob == 0.5);
    const auto ch = default_config(Scenario::Charged);
    CHECK(ch.entities == 5);
    CHECK(ch.box_halfwidth == 5.0);
    const auto gr = default_config(Scenario::Gravity);
    CHECK(gr.entities == 10);
    CHECK(gr.mass_lo == 0.1);
    CHECK(kFullScaleCounts.train == 3000);
    CHECK(kFullScaleCounts.val == 2000);
    CHECK(kFullScaleCounts.test == 2000);
}
