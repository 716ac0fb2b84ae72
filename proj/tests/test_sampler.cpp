#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "latflow/error.hpp"
#include "latflow/sampler.hpp"

using namespace latflow;
using namespace latflow::sampler;
using doctest::Approx;

namespace {

// first-stage shell with identity coordinate statistics
ae::Autoencoder toy_stage1(std::int64_t latents, std::int64_t latent_dim, std::uint64_t seed) {
    ae::Stage1Config cfg;
    cfg.encoder = {latents, latent_dim, 2, 4, 1, 2};
    cfg.decoder = {2, 4, 1, 2};
    cfg.id_dim = 16;
    cfg.pool_size = 10;
    cfg.seed = seed;
    Rng rng(seed);
    auto m = ae::build_autoencoder(cfg, 3, 1, rng);
    for (auto& v : m.x_std.data) v = 1.0f;
    return m;
}

flow::FlowModel toy_stage2(std::int64_t latents, std::int64_t latent_dim, std::uint64_t seed) {
    flow::LatentFlowConfig cfg;
    cfg.hidden = 16;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.ffn_mult = 2;
    cfg.condition_frames = 1;
    Rng rng(seed);
    auto m = flow::build_flow_model(cfg, latents, latent_dim, rng);
    Rng stir(derive_seed(seed, 9));
    for (const auto& name : m.params.names())
        if (name.find(".mod.") != std::string::npos || name.rfind("head.mod", 0) == 0)
            for (auto& v : m.params.get(name)->val.data)
                v = static_cast<float>(stir.normal(0.0, 0.05));
    return m;
}

Trajectory toy_observed(std::int64_t frames, std::int64_t entities, std::uint64_t seed) {
    Rng rng(seed);
    Trajectory t;
    t.X = Tensor::randn(rng, {frames, entities, 3});
    t.M = Tensor::randn(rng, {entities, 1});
    return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - b.data[i]));
    return m;
}

} // namespace

TEST_CASE("euler closed forms") {
    SUBCASE("constant field reaches its integral") {
        const auto field = [](const Tensor& z, double) { return Tensor::full(z.shape, 1.0f); };
        const Tensor out = integrate_euler(field, Tensor::zeros({3}), 10);
        for (const auto v : out.data) CHECK(v == Approx(1.0).epsilon(1e-6));
    }

    SUBCASE("linear field compounds like the scalar recursion") {
        const auto field = [](const Tensor& z, double) { return z; };
        const Tensor out = integrate_euler(field, Tensor::full({2}, 1.0f), 10);
        for (const auto v : out.data) CHECK(v == Approx(2.59374).epsilon(1e-5));

        // bitwise match of the elementwise update arithmetic
        float ref = 1.0f;
        for (int k = 0; k < 10; ++k)
            ref = static_cast<float>(static_cast<double>(ref) +
                                     0.1 * static_cast<double>(ref));
        CHECK(out.data[0] == ref);
    }

    SUBCASE("zero field returns the initial state unchanged") {
        Rng rng(3);
        const Tensor z0 = Tensor::randn(rng, {4});
        const auto field = [](const Tensor& z, double) { return Tensor::zeros(z.shape); };
        const Tensor out = integrate_euler(field, z0, 7);
        for (std::size_t i = 0; i < z0.data.size(); ++i) CHECK(out.data[i] == z0.data[i]);
    }

    SUBCASE("non-finite field names the failing step") {
        const auto field = [](const Tensor& z, double tau) {
            Tensor v = Tensor::full(z.shape, 1.0f);
            if (tau >= 0.3) v.data[0] = std::numeric_limits<float>::quiet_NaN();
            return v;
        };
        CHECK_THROWS_WITH_AS(integrate_euler(field, Tensor::zeros({2}), 10),
                             doctest::Contains("step 3"), NumericError);
    }

    SUBCASE("step and shape guards") {
        const auto field = [](const Tensor&, double) { return Tensor::zeros({5}); };
        CHECK_THROWS_AS(integrate_euler(field, Tensor::zeros({2}), 0), RangeError);
        CHECK_THROWS_AS(integrate_euler(field, Tensor::zeros({2}), 4), ShapeError);
    }
}

TEST_CASE("euler refinement converges toward the exact flow") {
    const auto field = [](const Tensor& z, double) { return z; };
    const double exact = std::exp(1.0);
    const double e10 =
        std::abs(integrate_euler(field, Tensor::full({1}, 1.0f), 10).data[0] - exact);
    const double e100 =
        std::abs(integrate_euler(field, Tensor::full({1}, 1.0f), 100).data[0] - exact);
    CHECK(e100 < e10);
}

TEST_CASE("adaptive integrator accuracy") {
    SUBCASE("exponential growth") {
        const auto field = [](const Tensor& z, double) { return z; };
        const Tensor out = integrate_adaptive(field, Tensor::full({3}, 1.0f), 1e-5, 1e-5);
        for (const auto v : out.data) CHECK(v == Approx(std::exp(1.0)).epsilon(1e-4));
    }

    SUBCASE("time-dependent field integrates the cosine") {
        const auto field = [](const Tensor& z, double tau) {
            return Tensor::full(z.shape, static_cast<float>(std::cos(tau)));
        };
        const Tensor out = integrate_adaptive(field, Tensor::zeros({1}), 1e-5, 1e-5);
        CHECK(out.data[0] == Approx(std::sin(1.0)).epsilon(1e-4));
    }

    SUBCASE("stiff-ish oscillation stays on the circle") {
        // z' = (-z1, z0) rotates; at tau = 1 the angle is exactly 1 radian
        const auto field = [](const Tensor& z, double) {
            Tensor v(z.shape);
            v.data[0] = -z.data[1];
            v.data[1] = z.data[0];
            return v;
        };
        Tensor z0({2});
        z0.data = {1.0f, 0.0f};
        const Tensor out = integrate_adaptive(field, z0, 1e-6, 1e-6);
        CHECK(out.data[0] == Approx(std::cos(1.0)).epsilon(1e-4));
        CHECK(out.data[1] == Approx(std::sin(1.0)).epsilon(1e-4));
    }
}

TEST_CASE("sampler config plumbing") {
    SamplerConfig cfg;
    CHECK_NOTHROW(validate_sampler(cfg));
    cfg.steps = 0;
    CHECK_THROWS_AS(validate_sampler(cfg), ConfigError);
    cfg = {};
    cfg.k_samples = 0;
    CHECK_THROWS_AS(validate_sampler(cfg), ConfigError);
    cfg = {};
    cfg.eps_clamp = 0.6;
    CHECK_THROWS_AS(validate_sampler(cfg), ConfigError);

    CHECK(integrator_from_string("euler-fixed") == Integrator::EulerFixed);
    CHECK(integrator_from_string("adaptive") == Integrator::Adaptive);
    CHECK_THROWS_AS(integrator_from_string("rk4"), ConfigError);
    CHECK(integrator_to_string(Integrator::Adaptive) == "adaptive");
}

TEST_CASE("forecast shapes, determinism and function evaluations") {
    const auto s1 = toy_stage1(4, 8, 211);
    auto s2 = toy_stage2(4, 8, 223);
    const auto observed = toy_observed(2, 3, 227);
    const std::vector<std::int64_t> assign{4, 0, 7};
    SamplerConfig cfg;
    cfg.seed = 229;

    const auto fc = sample_forecast(s2, s1, observed, assign, 6, cfg);
    CHECK(fc.predicted.X.shape == Shape{4, 3, 3});
    CHECK(fc.predicted.M.data == observed.M.data);
    CHECK(fc.nfe == 10); // one velocity evaluation per Euler step
    for (const auto v : fc.predicted.X.data) REQUIRE(std::isfinite(v));

    const auto again = sample_forecast(s2, s1, observed, assign, 6, cfg);
    CHECK(max_abs_diff(fc.predicted.X, again.predicted.X) == 0.0);

    auto other = cfg;
    other.seed = 231;
    const auto moved = sample_forecast(s2, s1, observed, assign, 6, other);
    CHECK(max_abs_diff(fc.predicted.X, moved.predicted.X) > 1e-6);

    auto adaptive = cfg;
    adaptive.integrator = Integrator::Adaptive;
    const auto smooth = sample_forecast(s2, s1, observed, assign, 6, adaptive);
    CHECK(smooth.predicted.X.shape == Shape{4, 3, 3});
    CHECK(smooth.nfe > 10);
    for (const auto v : smooth.predicted.X.data) REQUIRE(std::isfinite(v));
}

TEST_CASE("forecast input guards") {
    const auto s1 = toy_stage1(4, 8, 233);
    auto s2 = toy_stage2(4, 8, 239);
    const auto observed = toy_observed(2, 3, 241);
    const std::vector<std::int64_t> assign{4, 0, 7};
    SamplerConfig cfg;

    CHECK_THROWS_AS(sample_forecast(s2, s1, observed, assign, 2, cfg), RangeError);
    CHECK_THROWS_AS(sample_forecast(s2, s1, observed, {4, 4, 7}, 6, cfg), PoolError);
    CHECK_THROWS_AS(sample_forecast(s2, s1, observed, {4, 0, 12}, 6, cfg), PoolError);
    CHECK_THROWS_AS(sample_forecast(s2, s1, observed, {4, 0}, 6, cfg), ShapeError);

    auto wrong_dims = toy_stage2(4, 6, 251);
    CHECK_THROWS_AS(sample_forecast(wrong_dims, s1, observed, assign, 6, cfg), ConfigError);

    // a trained checkpoint remembers its first stage
    s2.stage1_hash = "feedfacefeedface";
    CHECK_THROWS_AS(sample_forecast(s2, s1, observed, assign, 6, cfg), ConfigError);
    s2.stage1_hash = hash_hex(s1.params.fingerprint());
    CHECK_NOTHROW(sample_forecast(s2, s1, observed, assign, 6, cfg));
}

TEST_CASE("k-sample draws share everything but the noise") {
    const auto s1 = toy_stage1(4, 8, 257);
    const auto s2 = toy_stage2(4, 8, 263);
    const auto observed = toy_observed(2, 3, 269);
    const std::vector<std::int64_t> assign{1, 5, 3};
    SamplerConfig cfg;
    cfg.seed = 271;

    cfg.k_samples = 1;
    const auto one = sample_k(s2, s1, observed, assign, 5, cfg);
    REQUIRE(one.size() == 1);
    const auto direct = sample_forecast(s2, s1, observed, assign, 5, cfg);
    CHECK(max_abs_diff(one[0].predicted.X, direct.predicted.X) == 0.0);

    cfg.k_samples = 5;
    const auto many = sample_k(s2, s1, observed, assign, 5, cfg);
    REQUIRE(many.size() == 5);
    CHECK(max_abs_diff(many[0].predicted.X, direct.predicted.X) == 0.0);
    for (std::size_t a = 0; a < many.size(); ++a)
        for (std::size_t b = a + 1; b < many.size(); ++b)
            CHECK(max_abs_diff(many[a].predicted.X, many[b].predicted.X) > 0.0);
}

TEST_CASE("cascaded rollout length, continuity and seeding") {
    const auto s1 = toy_stage1(4, 8, 277);
    const auto s2 = toy_stage2(4, 8, 281);
    Rng rng(283);
    SystemState init;
    init.x = Tensor::randn(rng, {3, 3});
    init.m = Tensor::randn(rng, {3, 1});
    const std::vector<std::int64_t> assign{2, 8, 5};
    SamplerConfig cfg;
    cfg.seed = 293;

    RolloutPlan plan;
    plan.block_len = 30;
    plan.blocks = 3;
    const auto roll = cascaded_rollout(s2, s1, init, assign, plan, cfg);
    CHECK(roll.traj.X.shape == Shape{88, 3, 3});
    CHECK(roll.nfe == 3 * 10);
    CHECK(std::isfinite(roll.recon_drift));
    for (const auto v : roll.traj.X.data) REQUIRE(std::isfinite(v));
    for (std::int64_t d = 0; d < 9; ++d)
        CHECK(roll.traj.X.data[static_cast<std::size_t>(d)] == init.x.data[static_cast<std::size_t>(d)]);

    // replaying the per-block forecasts by hand reproduces the cascade
    // exactly, conditioning each block on the previous final frame verbatim
    Trajectory window;
    window.M = init.m;
    window.X = init.x;
    window.X.shape = {1, 3, 3};
    std::vector<float> manual(init.x.data.begin(), init.x.data.end());
    for (std::int64_t b = 0; b < plan.blocks; ++b) {
        auto block_cfg = cfg;
        block_cfg.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(b));
        const auto fc = sample_forecast(s2, s1, window, assign, plan.block_len, block_cfg);
        manual.insert(manual.end(), fc.predicted.X.data.begin(), fc.predicted.X.data.end());
        std::copy_n(fc.predicted.X.data.end() - 9, 9, window.X.data.begin());
    }
    REQUIRE(manual.size() == roll.traj.X.data.size());
    for (std::size_t i = 0; i < manual.size(); ++i) REQUIRE(manual[i] == roll.traj.X.data[i]);

    SUBCASE("single block equals a plain forecast") {
        plan.blocks = 1;
        plan.block_len = 6;
        const auto single = cascaded_rollout(s2, s1, init, assign, plan, cfg);
        Trajectory w;
        w.M = init.m;
        w.X = init.x;
        w.X.shape = {1, 3, 3};
        auto block_cfg = cfg;
        block_cfg.seed = derive_seed(cfg.seed, 0);
        const auto fc = sample_forecast(s2, s1, w, assign, plan.block_len, block_cfg);
        CHECK(single.traj.X.shape == Shape{6, 3, 3});
        for (std::int64_t i = 0; i < fc.predicted.X.numel(); ++i)
            CHECK(single.traj.X.data[static_cast<std::size_t>(9 + i)] ==
                  fc.predicted.X.data[static_cast<std::size_t>(i)]);
    }

    SUBCASE("plan guards") {
        plan.block_len = 1;
        CHECK_THROWS_AS(cascaded_rollout(s2, s1, init, assign, plan, cfg), ConfigError);
        plan.block_len = 5;
        plan.blocks = 0;
        CHECK_THROWS_AS(cascaded_rollout(s2, s1, init, assign, plan, cfg), ConfigError);
    }

    SUBCASE("errors carry the block index") {
        plan.block_len = 4;
        plan.blocks = 2;
        CHECK_THROWS_WITH_AS(cascaded_rollout(s2, s1, init, {3, 3, 1}, plan, cfg),
                             doctest::Contains("block 0"), PoolError);
    }
}

TEST_CASE("forecast smoke sweep stays finite") {
    const auto s1 = toy_stage1(2, 4, 307);
    const auto s2 = toy_stage2(2, 4, 311);
    const auto observed = toy_observed(1, 2, 313);
    const std::vector<std::int64_t> assign{6, 1};
    SamplerConfig cfg;
    cfg.steps = 4;

    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        cfg.seed = seed;
        const auto fc = sample_forecast(s2, s1, observed, assign, 3, cfg);
        for (const auto v : fc.predicted.X.data) REQUIRE(std::isfinite(v));
    }
}
