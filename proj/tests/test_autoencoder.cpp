#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "latflow/error.hpp"
#include "latflow/latent_autoencoder.hpp"
#include "latflow/metrics.hpp"

using namespace latflow;
using namespace latflow::ae;

namespace {

namespace fs = std::filesystem;

Stage1Config tiny_config() {
    Stage1Config cfg;
    cfg.encoder = {4, 8, 2, 4, 1, 2}; // L=4, D_z=8
    cfg.decoder = {2, 4, 1, 2};
    cfg.id_dim = 16;
    cfg.pool_size = 70; // covers the N sweep below
    cfg.seed = 3;
    return cfg;
}

Autoencoder tiny_model(std::int64_t coord_dim = 3, std::int64_t feat_dim = 1) {
    auto cfg = tiny_config();
    Rng rng(11);
    return build_autoencoder(cfg, coord_dim, feat_dim, rng);
}

nbody::TrajectoryDataset toy_dataset(std::int64_t count, std::uint64_t seed) {
    auto cfg = nbody::default_config(nbody::Scenario::Spring);
    cfg.frames = 10;
    cfg.stride = 20;
    nbody::TrajectoryDataset ds;
    ds.split = "train";
    ds.config = cfg;
    ds.master_seed = seed;
    for (std::int64_t i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        ds.traj_seeds.push_back(derive_seed(seed, static_cast<std::uint64_t>(i)));
        ds.trajectories.push_back(nbody::simulate_spring(cfg, rng));
    }
    return ds;
}

// central finite differences against the analytic gradient of a scalar loss
void gradcheck_loss(const std::function<ad::Value(const ad::Value&)>& make_loss, Tensor x0) {
    auto x = ad::leaf(x0);
    auto loss = make_loss(x);
    ad::backward(loss);
    const double h = 7e-3; // near-optimal central-difference step for float32
    for (std::size_t i = 0; i < x0.data.size(); ++i) {
        Tensor xp = x0, xm = x0;
        xp.data[i] += static_cast<float>(h);
        xm.data[i] -= static_cast<float>(h);
        const double fp = make_loss(ad::constant(xp))->val.data[0];
        const double fm = make_loss(ad::constant(xm))->val.data[0];
        const double fd = (fp - fm) / (2 * h);
        const double an = x->grad.data[i];
        const double denom = std::max({std::abs(fd), std::abs(an), 1e-3});
        CHECK(std::abs(fd - an) / denom < 1e-3);
    }
}

} // namespace

TEST_CASE("config validation and json round trip") {
    auto cfg = tiny_config();
    CHECK_NOTHROW(validate_stage1(cfg));
    const auto back = stage1_config_from_json(stage1_config_to_json(cfg));
    CHECK(back.encoder.latents == cfg.encoder.latents);
    CHECK(back.decoder.head_dim == cfg.decoder.head_dim);
    CHECK(back.pool_size == cfg.pool_size);
    CHECK(back.seed == cfg.seed);

    auto bad = cfg;
    bad.encoder.latents = 0;
    CHECK_THROWS_AS(validate_stage1(bad), ConfigError);
    bad = cfg;
    bad.lr_min = bad.lr * 2;
    CHECK_THROWS_AS(validate_stage1(bad), ConfigError);
    bad = cfg;
    bad.ema_beta = 1.5;
    CHECK_THROWS_AS(validate_stage1(bad), ConfigError);
    CHECK_THROWS_AS(stage1_config_from_json("{}"), ConfigError);
}

TEST_CASE("encoder output shape is fixed for any entity count") {
    auto m = tiny_model();
    Rng rng(21);
    for (std::int64_t N : {1, 2, 3, 5, 8, 13, 21, 34, 64}) {
        const auto X = Tensor::randn(rng, {N, 3});
        const auto M = Tensor::randn(rng, {N, 1});
        const auto U = Tensor::randn(rng, {N, 16});
        const auto Z = encode_frame(m, X, M, U);
        CHECK(Z.shape == Shape{4, 8});
    }
}

TEST_CASE("encoder rows come out normalized") {
    auto m = tiny_model();
    Rng rng(22);
    const auto Z = encode_frame(m, Tensor::randn(rng, {6, 3}), Tensor::randn(rng, {6, 1}),
                                Tensor::randn(rng, {6, 16}));
    for (std::int64_t r = 0; r < 4; ++r) {
        double mu = 0, var = 0;
        for (std::int64_t c = 0; c < 8; ++c) mu += Z.data[static_cast<std::size_t>(r * 8 + c)];
        mu /= 8;
        for (std::int64_t c = 0; c < 8; ++c) {
            const double d = Z.data[static_cast<std::size_t>(r * 8 + c)] - mu;
            var += d * d;
        }
        var /= 8;
        CHECK(std::abs(mu) < 1e-5);
        CHECK(std::abs(var - 1.0) < 1e-3);
    }
}

TEST_CASE("encoder is insensitive to entity order") {
    auto m = tiny_model();
    Rng rng(23);
    const std::int64_t N = 7;
    const auto X = Tensor::randn(rng, {N, 3});
    const auto M = Tensor::randn(rng, {N, 1});
    const auto U = Tensor::randn(rng, {N, 16});

    std::vector<std::int64_t> perm = {3, 0, 6, 1, 5, 2, 4};
    Tensor Xp({N, 3}), Mp({N, 1}), Up({N, 16});
    for (std::int64_t n = 0; n < N; ++n) {
        const auto src = perm[static_cast<std::size_t>(n)];
        std::copy_n(X.data.data() + src * 3, 3, Xp.data.data() + n * 3);
        std::copy_n(M.data.data() + src, 1, Mp.data.data() + n);
        std::copy_n(U.data.data() + src * 16, 16, Up.data.data() + n * 16);
    }
    const auto Z = encode_frame(m, X, M, U);
    const auto Zp = encode_frame(m, Xp, Mp, Up);
    for (std::size_t i = 0; i < Z.data.size(); ++i) CHECK(std::abs(Z.data[i] - Zp.data[i]) < 1e-4);
}

TEST_CASE("decoder rows are independent and permutation-equivariant") {
    auto m = tiny_model();
    Rng rng(24);
    const std::int64_t N = 6;
    const auto Z = Tensor::randn(rng, {4, 8});
    const auto U = Tensor::randn(rng, {N, 16});

    const auto [X0, M0] = decode_frame(m, Z, U);
    CHECK(X0.shape == Shape{N, 3});
    CHECK(M0.shape == Shape{N, 1});

    // zeroing one query row leaves every other output row unchanged
    Tensor Um = U;
    for (std::int64_t c = 0; c < 16; ++c) Um.data[static_cast<std::size_t>(2 * 16 + c)] = 0.0f;
    const auto [X1, M1] = decode_frame(m, Z, Um);
    for (std::int64_t n = 0; n < N; ++n) {
        if (n == 2) continue;
        for (std::int64_t d = 0; d < 3; ++d)
            CHECK(std::abs(X0.data[static_cast<std::size_t>(n * 3 + d)] -
                           X1.data[static_cast<std::size_t>(n * 3 + d)]) < 1e-6);
    }

    // permuting the queries permutes the outputs identically
    std::vector<std::int64_t> perm = {5, 2, 0, 4, 1, 3};
    Tensor Up({N, 16});
    for (std::int64_t n = 0; n < N; ++n)
        std::copy_n(U.data.data() + perm[static_cast<std::size_t>(n)] * 16, 16,
                    Up.data.data() + n * 16);
    const auto [Xp, Mp] = decode_frame(m, Z, Up);
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t d = 0; d < 3; ++d)
            CHECK(std::abs(Xp.data[static_cast<std::size_t>(n * 3 + d)] -
                           X0.data[static_cast<std::size_t>(
                               perm[static_cast<std::size_t>(n)] * 3 + d)]) < 1e-5);

    // one query still works
    Tensor U1 = U;
    U1.shape = {N, 16};
    Tensor Urow({1, 16});
    std::copy_n(U.data.data(), 16, Urow.data.data());
    const auto [Xr, Mr] = decode_frame(m, Z, Urow);
    CHECK(Xr.shape == Shape{1, 3});
    CHECK(Mr.shape == Shape{1, 1});
}

TEST_CASE("position loss pinned values") {
    auto mk = [](std::vector<float> pred, std::vector<float> truth, Shape s) {
        Tensor p(s), t(s);
        p.data = pred;
        t.data = truth;
        return loss_pos(ad::constant(p), ad::constant(t))->val.data[0];
    };
    CHECK(mk({1, 2, 3}, {1, 2, 3}, {1, 3}) == 0.0f);
    CHECK(mk({3, 4, 0}, {0, 0, 0}, {1, 3}) == doctest::Approx(25.0).epsilon(1e-6));
    CHECK(mk({0, 0, 0, 0, 3, 4}, {0, 0, 0, 0, 0, 0}, {2, 3}) ==
          doctest::Approx(12.5).epsilon(1e-6));
    // batch of two frames averages the per-frame losses
    CHECK(mk({3, 4, 0, 0, 0, 0}, {0, 0, 0, 0, 0, 0}, {2, 1, 3}) ==
          doctest::Approx(12.5).epsilon(1e-6));

    CHECK_THROWS_AS(loss_pos(ad::constant(Tensor::zeros({2, 3})),
                             ad::constant(Tensor::zeros({3, 3}))),
                    ShapeError);
}

TEST_CASE("inter-distance loss pinned values and rigid invariance") {
    // two entities: true separation 5, predicted 3 -> 2*(5-3)^2 / 4 = 2
    Tensor truth({2, 3}), pred({2, 3});
    truth.data = {0, 0, 0, 5, 0, 0};
    pred.data = {0, 0, 0, 0, 3, 0};
    CHECK(loss_interdist(ad::constant(pred), ad::constant(truth))->val.data[0] ==
          doctest::Approx(2.0).epsilon(1e-6));
    CHECK(loss_interdist(ad::constant(truth), ad::constant(truth))->val.data[0] == 0.0f);

    // rotating one argument changes nothing
    Rng rng(31);
    for (int trial = 0; trial < 5; ++trial) {
        const auto X = Tensor::randn(rng, {6, 3});
        const auto Y = Tensor::randn(rng, {6, 3});
        const auto R = random_rotation(rng, 3);
        Tensor Yr({6, 3});
        for (std::int64_t n = 0; n < 6; ++n)
            for (std::int64_t i = 0; i < 3; ++i) {
                double s = 0.5; // translation too
                for (std::int64_t j = 0; j < 3; ++j)
                    s += R[static_cast<std::size_t>(i * 3 + j)] *
                         Y.data[static_cast<std::size_t>(n * 3 + j)];
                Yr.data[static_cast<std::size_t>(n * 3 + i)] = static_cast<float>(s);
            }
        const double a = loss_interdist(ad::constant(Y), ad::constant(X))->val.data[0];
        const double b = loss_interdist(ad::constant(Yr), ad::constant(X))->val.data[0];
        CHECK(std::abs(a - b) < 1e-5);

        // X_hat = rigid(X) drives the loss to zero
        Tensor Xr({6, 3});
        for (std::int64_t n = 0; n < 6; ++n)
            for (std::int64_t i = 0; i < 3; ++i) {
                double s = -1.25;
                for (std::int64_t j = 0; j < 3; ++j)
                    s += R[static_cast<std::size_t>(i * 3 + j)] *
                         X.data[static_cast<std::size_t>(n * 3 + j)];
                Xr.data[static_cast<std::size_t>(n * 3 + i)] = static_cast<float>(s);
            }
        CHECK(loss_interdist(ad::constant(Xr), ad::constant(X))->val.data[0] < 1e-5);
    }
}

TEST_CASE("cross entropy pinned values") {
    Tensor logits({1, 2});
    logits.data = {0.0f, 0.0f};
    CHECK(ad::cross_entropy_mean(ad::constant(logits), {0})->val.data[0] ==
          doctest::Approx(0.6931).epsilon(1e-3));
    Tensor l4({1, 4});
    l4.data = {0, 0, 0, 0};
    CHECK(ad::cross_entropy_mean(ad::constant(l4), {2})->val.data[0] ==
          doctest::Approx(1.3863).epsilon(1e-3));
    Tensor sure({1, 3});
    sure.data = {30.0f, -30.0f, -30.0f};
    CHECK(ad::cross_entropy_mean(ad::constant(sure), {0})->val.data[0] < 1e-5);
}

TEST_CASE("loss gradients match finite differences") {
    Rng rng(41);
    const auto target = Tensor::randn(rng, {3, 3});
    gradcheck_loss(
        [&](const ad::Value& x) { return loss_pos(x, ad::constant(target)); },
        Tensor::randn(rng, {3, 3}));
    gradcheck_loss(
        [&](const ad::Value& x) { return loss_interdist(x, ad::constant(target)); },
        Tensor::randn(rng, {3, 3}));
    gradcheck_loss(
        [&](const ad::Value& x) { return ad::cross_entropy_mean(x, {1, 0}); },
        Tensor::randn(rng, {2, 4}));
}

TEST_CASE("short training run reduces the loss") {
    auto cfg = tiny_config();
    cfg.pool_size = 8;
    cfg.epochs = 50;
    cfg.batch = 64;
    cfg.lr = 3e-3;
    cfg.seed = 5;
    Rng rng(55);
    auto m = build_autoencoder(cfg, 3, 1, rng);

    const auto train = toy_dataset(10, 100);
    const auto val = toy_dataset(2, 200);
    nn::Ema ema(m.params, cfg.ema_beta);
    const auto res = train_first_stage(m, train, val, ema);

    REQUIRE(res.curve.size() == 50);
    CHECK(res.curve.back().train_loss < res.curve.front().train_loss);
    CHECK(std::isfinite(res.val_report.pos_error));
    CHECK(res.val_report.pos_error >= 0.0);
}

TEST_CASE("training aborts with a diagnostic when the loss diverges") {
    auto cfg = tiny_config();
    cfg.pool_size = 8;
    cfg.epochs = 10;
    cfg.batch = 64;
    Rng rng(66);
    auto m = build_autoencoder(cfg, 3, 1, rng);
    // poison one weight; the first forward pass then yields a NaN loss
    m.z_init->val.data[0] = std::numeric_limits<float>::quiet_NaN();
    const auto train = toy_dataset(4, 300);
    const auto val = toy_dataset(1, 301);
    nn::Ema ema(m.params, cfg.ema_beta);
    CHECK_THROWS_AS(train_first_stage(m, train, val, ema), NumericError);
}

TEST_CASE("checkpoint round trip restores the exact model") {
    auto cfg = tiny_config();
    cfg.pool_size = 8;
    cfg.epochs = 3;
    cfg.batch = 64;
    cfg.seed = 7;
    Rng rng(77);
    auto m = build_autoencoder(cfg, 3, 1, rng);
    const auto train = toy_dataset(4, 400);
    const auto val = toy_dataset(2, 401);
    nn::Ema ema(m.params, cfg.ema_beta);
    train_first_stage(m, train, val, ema);

    const auto dir = (fs::temp_directory_path() / "latflow_ae_ckpt").string();
    fs::remove_all(dir);
    save_stage1(m, ema, dir);

    auto live = load_stage1(dir, false);
    CHECK(live.params.fingerprint() == m.params.fingerprint());
    CHECK(live.x_mean.data == m.x_mean.data);
    CHECK(live.x_std.data == m.x_std.data);

    // identical weights give identical validation numbers
    const auto r0 = reconstruction_report(m, val, 123);
    const auto r1 = reconstruction_report(live, val, 123);
    CHECK(std::abs(r0.pos_error - r1.pos_error) < 1e-6);
    CHECK(std::abs(r0.loss_pos - r1.loss_pos) < 1e-6);

    // the ema weights differ from live after training but load cleanly
    auto shadow = load_stage1(dir, true);
    CHECK(shadow.params.fingerprint() != live.params.fingerprint());
    const auto snap = shadow.params.snapshot();
    for (const auto& [k, v] : ema.shadow()) {
        const auto& got = snap.at(k);
        CHECK(got.data == v.data);
    }

    CHECK_THROWS_AS(load_stage1("/nonexistent/ckpt", false), IoError);
}

TEST_CASE("reconstruction report is deterministic in the assignment seed") {
    auto m = tiny_model();
    const auto ds = toy_dataset(3, 500);
    const auto a = reconstruction_report(m, ds, 9);
    const auto b = reconstruction_report(m, ds, 9);
    CHECK(a.pos_error == b.pos_error);
    CHECK(a.loss_int == b.loss_int);
    const auto c = reconstruction_report(m, ds, 10);
    CHECK(a.pos_error != c.pos_error);
    CHECK(a.feature_sign_accuracy.size() == 1);
}

TEST_CASE("identifier embeddings flow into encode and decode") {
    auto m = tiny_model();
    const std::vector<std::int64_t> assign = {4, 9, 1};
    const auto U = id_embeddings(m, assign);
    CHECK(U.shape == Shape{3, 16});
    // gather semantics: row n equals table row assign[n]
    const auto table = m.id_table->val;
    for (std::int64_t n = 0; n < 3; ++n)
        for (std::int64_t c = 0; c < 16; ++c)
            CHECK(U.data[static_cast<std::size_t>(n * 16 + c)] ==
                  table.data[static_cast<std::size_t>(assign[static_cast<std::size_t>(n)] * 16 +
                                                      c)]);
}
