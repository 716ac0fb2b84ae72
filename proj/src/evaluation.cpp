#include "latflow/evaluation.hpp"

#include <cstdio>
#include <utility>

#include <nlohmann/json.hpp>

#include "latflow/error.hpp"
#include "latflow/identifiers.hpp"

namespace latflow::eval {

using nlohmann::json;

void validate_protocol(const EvalProtocol& p) {
    if (p.k < 1) throw ConfigError("protocol needs at least one sample per trajectory");
    // two observed frames, because the linear baseline needs a velocity
    if (p.condition_frames < 2)
        throw ConfigError("protocol needs at least two conditioning frames");
    if (p.steps < 1) throw ConfigError("integrator needs at least one step");
    if (!(p.rtol > 0) || !(p.atol > 0))
        throw ConfigError("adaptive tolerances must be positive");
    if (!(p.eps_clamp >= 0.0) || p.eps_clamp >= 0.5)
        throw ConfigError("eps_clamp must lie in [0, 0.5)");
    if (p.keep_forecasts < 0) throw ConfigError("keep_forecasts must be >= 0");
}

namespace {

// first t frames of a [T, N, D] coordinate block
Tensor frames_prefix(const Tensor& X, std::int64_t t) {
    const auto N = X.shape[1], D = X.shape[2];
    Tensor out({t, N, D});
    std::copy_n(X.data.begin(), static_cast<std::size_t>(t * N * D), out.data.begin());
    return out;
}

Tensor frames_suffix(const Tensor& X, std::int64_t from) {
    const auto T = X.shape[0], N = X.shape[1], D = X.shape[2];
    Tensor out({T - from, N, D});
    std::copy_n(X.data.begin() + from * N * D, static_cast<std::size_t>((T - from) * N * D),
                out.data.begin());
    return out;
}

} // namespace

EvalResult evaluate_forecaster(const Forecaster& forecaster,
                               const nbody::TrajectoryDataset& test, const EvalProtocol& p) {
    validate_protocol(p);
    if (!forecaster) throw ConfigError("no forecaster given");
    const auto total = static_cast<std::int64_t>(test.trajectories.size());
    const auto count =
        p.max_trajectories >= 0 ? std::min<std::int64_t>(p.max_trajectories, total) : total;
    if (count < 1) throw RangeError("evaluation needs at least one trajectory");

    EvalResult res;
    res.report.k = p.k;
    double ade_acc = 0, fde_acc = 0, min_ade_acc = 0, min_fde_acc = 0;
    double st_ade_acc = 0, st_fde_acc = 0, ln_ade_acc = 0, ln_fde_acc = 0;

    for (std::int64_t ti = 0; ti < count; ++ti) {
        with_error_context("trajectory " + std::to_string(ti), [&] {
            const Trajectory& traj = test.trajectories[static_cast<std::size_t>(ti)];
            validate_trajectory(traj);
            const auto T = traj.frames();
            if (T <= p.condition_frames)
                throw RangeError("trajectory has " + std::to_string(T) +
                                 " frames, nothing to predict after " +
                                 std::to_string(p.condition_frames) + " observed");
            const auto T_o = p.condition_frames;
            const Tensor observed = frames_prefix(traj.X, T_o);
            const Tensor future = frames_suffix(traj.X, T_o);

            const auto samples = forecaster(traj, T_o, p.k, derive_seed(p.seed, ti));
            if (static_cast<std::int64_t>(samples.size()) != p.k)
                throw ShapeError("forecaster returned " + std::to_string(samples.size()) +
                                 " samples, protocol asked for " + std::to_string(p.k));
            double ade_k = 0, fde_k = 0;
            for (const auto& s : samples) {
                if (!shape_eq(s.shape, future.shape))
                    throw ShapeError("forecast shape " + shape_str(s.shape) +
                                     " does not match the future " + shape_str(future.shape));
                ade_k += metrics::ade(future, s);
                fde_k += metrics::fde(future, s);
            }
            ade_k /= static_cast<double>(p.k);
            fde_k /= static_cast<double>(p.k);
            const auto mins = metrics::min_metrics(future, samples);

            const auto horizon = T - T_o;
            const Tensor pred_static = metrics::baseline_static(observed, horizon);
            const Tensor pred_linear = metrics::baseline_linear(observed, horizon);
            const double st_ade = metrics::ade(future, pred_static);
            const double st_fde = metrics::fde(future, pred_static);
            const double ln_ade = metrics::ade(future, pred_linear);
            const double ln_fde = metrics::fde(future, pred_linear);

            res.report.rows.push_back({ti, "model", ade_k, fde_k, mins.min_ade, mins.min_fde});
            res.report.rows.push_back({ti, "baseline_static", st_ade, st_fde, st_ade, st_fde});
            res.report.rows.push_back({ti, "baseline_linear", ln_ade, ln_fde, ln_ade, ln_fde});

            ade_acc += ade_k;
            fde_acc += fde_k;
            min_ade_acc += mins.min_ade;
            min_fde_acc += mins.min_fde;
            st_ade_acc += st_ade;
            st_fde_acc += st_fde;
            ln_ade_acc += ln_ade;
            ln_fde_acc += ln_fde;

            if (ti < p.keep_forecasts) {
                TrajectoryForecasts tf;
                tf.traj_id = ti;
                tf.observed = observed;
                tf.future = future;
                tf.samples = samples;
                res.forecasts.push_back(std::move(tf));
            }
        });
    }

    const auto n = static_cast<double>(count);
    res.report.ade = ade_acc / n;
    res.report.fde = fde_acc / n;
    res.report.min_ade = min_ade_acc / n;
    res.report.min_fde = min_fde_acc / n;
    res.report.static_ade = st_ade_acc / n;
    res.report.static_fde = st_fde_acc / n;
    res.report.linear_ade = ln_ade_acc / n;
    res.report.linear_fde = ln_fde_acc / n;
    return res;
}

EvalResult evaluate_model(const flow::FlowModel& s2, const ae::Autoencoder& s1,
                          const nbody::TrajectoryDataset& test, const EvalProtocol& p) {
    std::int64_t nfe_total = 0;
    const Forecaster forecaster = [&](const Trajectory& traj, std::int64_t t_obs,
                                      std::int64_t k, std::uint64_t seed) {
        Trajectory obs;
        obs.X = Tensor({t_obs, traj.entities(), traj.coord_dim()});
        std::copy_n(traj.X.data.begin(), obs.X.data.size(), obs.X.data.begin());
        obs.M = traj.M;

        Rng assign_rng(derive_seed(seed, 1));
        const ids::IdentifierPool pool{s1.cfg.pool_size};
        const auto assignment = ids::sample_assignment(traj.entities(), pool, assign_rng);

        sampler::SamplerConfig cfg;
        cfg.integrator = p.integrator;
        cfg.steps = p.steps;
        cfg.rtol = p.rtol;
        cfg.atol = p.atol;
        cfg.k_samples = k;
        cfg.eps_clamp = p.eps_clamp;
        cfg.seed = derive_seed(seed, 2);
        auto draws = sampler::sample_k(s2, s1, obs, assignment, traj.frames(), cfg);

        std::vector<Tensor> out;
        out.reserve(draws.size());
        for (auto& d : draws) {
            nfe_total += d.nfe;
            out.push_back(std::move(d.predicted.X));
        }
        return out;
    };
    auto res = evaluate_forecaster(forecaster, test, p);
    res.nfe = nfe_total;
    return res;
}

std::string report_json(const metrics::MetricReport& report, const std::string& scenario,
                        const EvalProtocol& p, const std::string& stage1_fingerprint,
                        const std::string& stage2_fingerprint) {
    json j;
    j["scenario"] = scenario;
    j["metrics"] = {{"ade", report.ade},
                    {"fde", report.fde},
                    {"min_ade", report.min_ade},
                    {"min_fde", report.min_fde}};
    j["baselines"] = {{"static", {{"ade", report.static_ade}, {"fde", report.static_fde}}},
                      {"linear", {{"ade", report.linear_ade}, {"fde", report.linear_fde}}}};
    j["protocol"] = {{"k", p.k},
                     {"condition_frames", p.condition_frames},
                     {"integrator", sampler::integrator_to_string(p.integrator)},
                     {"steps", p.steps},
                     {"seed", p.seed}};
    j["trajectories"] = report.rows.size() / 3;
    j["checkpoints"] = {{"stage1", stage1_fingerprint}, {"stage2", stage2_fingerprint}};
    return j.dump(2);
}

} // namespace latflow::eval
