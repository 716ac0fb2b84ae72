#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "latflow/error.hpp"
#include "latflow/interpolants.hpp"

using namespace latflow;

TEST_CASE("schedule closed forms at pinned points") {
    const auto lin0 = schedule_eval(Schedule::Linear, 0.0);
    CHECK(lin0.alpha == 0.0);
    CHECK(lin0.sigma == 1.0);
    CHECK(lin0.dalpha == 1.0);
    CHECK(lin0.dsigma == -1.0);

    const auto g = schedule_eval(Schedule::Gvp, 0.5);
    CHECK(g.alpha == doctest::Approx(0.70711).epsilon(1e-5));
    CHECK(g.sigma == doctest::Approx(0.70711).epsilon(1e-5));
    CHECK(g.dalpha == doctest::Approx(1.11072).epsilon(1e-4));

    CHECK_THROWS_AS(schedule_eval(Schedule::Linear, -0.01), RangeError);
    CHECK_THROWS_AS(schedule_eval(Schedule::Gvp, 1.01), RangeError);
}

TEST_CASE("boundary conditions hold to 1e-12 for both schedules") {
    for (auto s : {Schedule::Linear, Schedule::Gvp}) {
        const auto a = schedule_eval(s, 0.0);
        const auto b = schedule_eval(s, 1.0);
        CHECK(std::abs(a.alpha) < 1e-12);       // alpha_0 = 0
        CHECK(std::abs(a.sigma - 1.0) < 1e-12); // sigma_0 = 1
        CHECK(std::abs(b.alpha - 1.0) < 1e-12); // alpha_1 = 1
        CHECK(std::abs(b.sigma) < 1e-12);       // sigma_1 = 0
    }
}

TEST_CASE("gvp preserves alpha^2 + sigma^2 = 1 on a 101-point grid") {
    for (int i = 0; i <= 100; ++i) {
        const double tau = static_cast<double>(i) / 100.0;
        const auto e = schedule_eval(Schedule::Gvp, tau);
        CHECK(std::abs(e.alpha * e.alpha + e.sigma * e.sigma - 1.0) < 1e-12);
    }
}

TEST_CASE("schedule derivatives match central differences") {
    const double h = 1e-6;
    for (auto s : {Schedule::Linear, Schedule::Gvp})
        for (int i = 0; i <= 100; ++i) {
            const double tau = 0.01 + 0.98 * static_cast<double>(i) / 100.0;
            const auto e = schedule_eval(s, tau);
            const auto up = schedule_eval(s, tau + h);
            const auto dn = schedule_eval(s, tau - h);
            const double fda = (up.alpha - dn.alpha) / (2 * h);
            const double fds = (up.sigma - dn.sigma) / (2 * h);
            CHECK(std::abs(e.dalpha - fda) <= 1e-6 * std::max(1.0, std::abs(fda)));
            CHECK(std::abs(e.dsigma - fds) <= 1e-6 * std::max(1.0, std::abs(fds)));
        }
}

TEST_CASE("interpolate endpoints are exact") {
    Rng rng(1);
    Tensor o1 = Tensor::randn(rng, {4, 5});
    Tensor eps = Tensor::randn(rng, {4, 5});
    const auto at0 = interpolate(o1, eps, 0.0, Schedule::Linear);
    const auto at1 = interpolate(o1, eps, 1.0, Schedule::Linear);
    CHECK(at0.data == eps.data);
    CHECK(at1.data == o1.data);

    const auto g0 = interpolate(o1, eps, 0.0, Schedule::Gvp);
    CHECK(g0.data == eps.data);

    Tensor two = Tensor::full({3}, 2.0f);
    Tensor zero = Tensor::zeros({3});
    const auto mid = interpolate(two, zero, 0.5, Schedule::Linear);
    CHECK(mid.data[0] == doctest::Approx(1.0f));

    Tensor bad = Tensor::zeros({2});
    CHECK_THROWS_AS(interpolate(o1, bad, 0.5, Schedule::Linear), ShapeError);
}

TEST_CASE("data prediction loss examples") {
    CHECK(data_prediction_loss(Tensor::scalar(1.0f), Tensor::scalar(0.0f)) == doctest::Approx(1.0));
    Tensor a = Tensor::from({2}, {1.0f, 0.0f});
    Tensor b = Tensor::from({2}, {0.0f, 1.0f});
    CHECK(data_prediction_loss(a, b) == doctest::Approx(1.0)); // mean of squares of (1,-1)
    CHECK(data_prediction_loss(a, a) == 0.0);
}

TEST_CASE("score reconstruction pinned example and zero") {
    const auto se = schedule_eval(Schedule::Linear, 0.5);
    CHECK(score_from_data_prediction(1.0, 1.0, se) == doctest::Approx(-2.0).epsilon(1e-12));
    // o_hat = o / alpha makes the residual vanish
    CHECK(score_from_data_prediction(0.8, 0.8 / se.alpha, se) == doctest::Approx(0.0));
}

TEST_CASE("strict mode rejects singular tau, clamping keeps it finite") {
    CHECK_THROWS_AS(clamp_tau(1.0, 0.0), NumericError);
    CHECK_THROWS_AS(clamp_tau(0.0, 0.0), NumericError);
    CHECK(clamp_tau(0.5, 0.0) == 0.5);
    CHECK(clamp_tau(0.0, 1e-3) == 1e-3);
    CHECK(clamp_tau(1.0, 1e-3) == 1.0 - 1e-3);
    CHECK_THROWS_AS(clamp_tau(0.5, 0.6), RangeError);

    float o = 1.0f, ohat = 2.0f, v = 0.0f;
    velocity_field(Schedule::Linear, 0.0, 1e-3, &o, &ohat, &v, 1);
    CHECK(std::isfinite(v));
    velocity_field(Schedule::Gvp, 1.0, 1e-3, &o, &ohat, &v, 1);
    CHECK(std::isfinite(v));
}

TEST_CASE("linear velocity equals its closed form to 1e-9") {
    // v = (o_hat - o_tau) / (1 - tau), derived by eliminating the score
    Rng rng(7);
    double worst = 0.0;
    for (int rep = 0; rep < 1000; ++rep) {
        const double tau = rng.uniform(0.05, 0.95);
        const auto se = schedule_eval(Schedule::Linear, tau);
        const double o = rng.normal() * 3.0;
        const double oh = rng.normal() * 3.0;
        const double got = velocity_from_data_prediction(o, oh, se);
        const double want = (oh - o) / (1.0 - tau);
        worst = std::max(worst, std::abs(got - want));
    }
    CHECK(worst < 1e-9);
}

TEST_CASE("velocity field matches the scalar core on tensors") {
    Rng rng(11);
    const double tau = 0.37;
    Tensor o = Tensor::randn(rng, {10, 10, 10});
    Tensor oh = Tensor::randn(rng, {10, 10, 10});
    Tensor v({10, 10, 10});
    velocity_field(Schedule::Linear, tau, 1e-3, o.ptr(), oh.ptr(), v.ptr(), v.numel());
    const auto se = schedule_eval(Schedule::Linear, tau);
    for (std::int64_t i = 0; i < v.numel(); ++i) {
        const double want = velocity_from_data_prediction(o.data[i], oh.data[i], se);
        CHECK(std::abs(v.data[i] - want) < 1e-5);
        const double closed = (static_cast<double>(oh.data[i]) - o.data[i]) / (1.0 - tau);
        CHECK(std::abs(want - closed) < 1e-9);
    }
}

TEST_CASE("velocity consistency: perfect prediction recovers the true velocity") {
    // with o_tau = alpha o1 + sigma eps and o_hat = o1, the reconstruction
    // must return dalpha * o1 + dsigma * eps
    Rng rng(13);
    for (auto s : {Schedule::Linear, Schedule::Gvp}) {
        double worst = 0.0;
        for (int rep = 0; rep < 1000; ++rep) {
            const double tau = rng.uniform(0.05, 0.95);
            const auto se = schedule_eval(s, tau);
            const double o1 = rng.normal() * 2.0;
            const double eps = rng.normal();
            const double ot = se.alpha * o1 + se.sigma * eps;
            const double got = velocity_from_data_prediction(ot, o1, se);
            const double want = se.dalpha * o1 + se.dsigma * eps;
            worst = std::max(worst, std::abs(got - want));
        }
        CHECK(worst < 1e-6);
    }
}

TEST_CASE("schedule name round trip") {
    CHECK(schedule_from_string("linear") == Schedule::Linear);
    CHECK(schedule_from_string("gvp") == Schedule::Gvp);
    CHECK(schedule_to_string(Schedule::Gvp) == "gvp");
    CHECK_THROWS_AS(schedule_from_string("cosine"), ConfigError);
}
