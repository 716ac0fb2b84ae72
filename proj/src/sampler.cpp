#include "latflow/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "latflow/error.hpp"
#include "latflow/identifiers.hpp"
#include "latflow/interpolants.hpp"

namespace latflow::sampler {

Integrator integrator_from_string(const std::string& s) {
    if (s == "euler-fixed") return Integrator::EulerFixed;
    if (s == "adaptive") return Integrator::Adaptive;
    throw ConfigError("unknown integrator: " + s);
}

std::string integrator_to_string(Integrator kind) {
    return kind == Integrator::EulerFixed ? "euler-fixed" : "adaptive";
}

void validate_sampler(const SamplerConfig& cfg) {
    if (cfg.steps < 1) throw ConfigError("integrator needs at least one step");
    if (!(cfg.rtol > 0) || !(cfg.atol > 0))
        throw ConfigError("adaptive tolerances must be positive");
    if (cfg.k_samples < 1) throw ConfigError("need at least one sample");
    if (cfg.eps_clamp < 0 || cfg.eps_clamp >= 0.5)
        throw ConfigError("eps_clamp must lie in [0, 0.5)");
}

namespace {

void require_finite(const Tensor& t, std::int64_t step) {
    for (const float v : t.data)
        if (!std::isfinite(v))
            throw NumericError("integration produced a non-finite value at step " +
                               std::to_string(step));
}

} // namespace

Tensor integrate_euler(const VectorField& field, Tensor z0, std::int64_t steps) {
    if (steps < 1) throw RangeError("integrator needs at least one step");
    const double dt = 1.0 / static_cast<double>(steps);
    for (std::int64_t k = 0; k < steps; ++k) {
        const double tau = static_cast<double>(k) / static_cast<double>(steps);
        const Tensor v = field(z0, tau);
        if (!shape_eq(v.shape, z0.shape))
            throw ShapeError("field output shape " + shape_str(v.shape) +
                             " does not match the state " + shape_str(z0.shape));
        require_finite(v, k);
        for (std::size_t i = 0; i < z0.data.size(); ++i)
            z0.data[i] = static_cast<float>(static_cast<double>(z0.data[i]) +
                                            dt * static_cast<double>(v.data[i]));
    }
    return z0;
}

Tensor integrate_adaptive(const VectorField& field, Tensor z0, double rtol, double atol) {
    if (!(rtol > 0) || !(atol > 0)) throw RangeError("tolerances must be positive");
    const auto n = z0.data.size();
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = z0.data[i];

    // Dormand-Prince 4(5) tableau
    static const double c[7] = {0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
    static const double a[7][6] = {
        {},
        {1.0 / 5},
        {3.0 / 40, 9.0 / 40},
        {44.0 / 45, -56.0 / 15, 32.0 / 9},
        {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
        {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
        {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84}};
    static const double b5[7] = {35.0 / 384,     0.0,        500.0 / 1113, 125.0 / 192,
                                 -2187.0 / 6784, 11.0 / 84, 0.0};
    static const double b4[7] = {5179.0 / 57600,     0.0,          7571.0 / 16695, 393.0 / 640,
                                 -92097.0 / 339200, 187.0 / 2100, 1.0 / 40};

    auto eval = [&](const std::vector<double>& state, double tau, std::int64_t step) {
        Tensor zs = z0;
        for (std::size_t i = 0; i < n; ++i) zs.data[i] = static_cast<float>(state[i]);
        const Tensor v = field(zs, tau);
        if (!shape_eq(v.shape, z0.shape))
            throw ShapeError("field output shape " + shape_str(v.shape) +
                             " does not match the state " + shape_str(z0.shape));
        require_finite(v, step);
        std::vector<double> out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = v.data[i];
        return out;
    };

    double t = 0.0;
    double h = 0.1;
    std::int64_t step = 0;
    const std::int64_t max_steps = 100000;
    std::vector<std::vector<double>> k(7);
    std::vector<double> stage(n), y5(n), y4(n);

    while (t < 1.0) {
        if (++step > max_steps)
            throw NumericError("adaptive integrator exceeded " + std::to_string(max_steps) +
                               " attempted steps");
        h = std::min(h, 1.0 - t);

        for (int s = 0; s < 7; ++s) {
            for (std::size_t i = 0; i < n; ++i) {
                double acc = y[i];
                for (int j = 0; j < s; ++j) acc += h * a[s][j] * k[static_cast<std::size_t>(j)][i];
                stage[i] = acc;
            }
            k[static_cast<std::size_t>(s)] = eval(stage, t + c[s] * h, step);
        }

        double err = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double d5 = y[i], d4 = y[i];
            for (int s = 0; s < 7; ++s) {
                d5 += h * b5[s] * k[static_cast<std::size_t>(s)][i];
                d4 += h * b4[s] * k[static_cast<std::size_t>(s)][i];
            }
            y5[i] = d5;
            y4[i] = d4;
            const double scale = atol + rtol * std::max(std::abs(y[i]), std::abs(d5));
            const double e = (d5 - d4) / scale;
            err += e * e;
        }
        err = std::sqrt(err / static_cast<double>(n));

        if (err <= 1.0) {
            t += h;
            y = y5;
        }
        const double factor =
            err > 0 ? std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0) : 5.0;
        h *= factor;
        if (!(h > 1e-12)) throw NumericError("adaptive integrator step size underflowed");
    }

    for (std::size_t i = 0; i < n; ++i) z0.data[i] = static_cast<float>(y[i]);
    return z0;
}

namespace {

// everything a forecast needs besides the noise draw
struct ForecastSetup {
    flow::ConditioningTensor cond;
    Tensor u_rows; // [N, D_u]
    std::int64_t T = 0, T_o = 0, N = 0;
};

Tensor tile_rows(const Tensor& rows, std::int64_t copies) {
    const auto n = rows.shape[0], d = rows.shape[1];
    Tensor out({copies, n, d});
    for (std::int64_t f = 0; f < copies; ++f)
        std::copy_n(rows.data.data(), n * d, out.data.data() + f * n * d);
    return out;
}

// frozen-encoder latents of raw frames X [F, N, D_x], detached
Tensor encode_frames(const ae::Autoencoder& s1, const Tensor& X, const Tensor& M,
                     const Tensor& u_rows) {
    const auto F = X.shape[0];
    auto z = ae::encode_batch(s1, ad::constant(ae::standardize_coords(s1, X)),
                              ad::constant(tile_rows(M, F)), ad::constant(tile_rows(u_rows, F)));
    return z->val; // [F, L, D_z]
}

// raw-unit positions decoded from latents z [F, L, D_z]
Tensor decode_frames(const ae::Autoencoder& s1, const Tensor& z, const Tensor& u_rows) {
    const auto F = z.shape[0];
    auto dec = ae::decode_batch(s1, ad::constant(z), ad::constant(tile_rows(u_rows, F)));
    return ae::unstandardize_coords(s1, dec.x_std->val); // [F, N, D_x]
}

ForecastSetup prepare_forecast(const flow::FlowModel& s2, const ae::Autoencoder& s1,
                               const Trajectory& observed,
                               const std::vector<std::int64_t>& assignment,
                               std::int64_t total_frames, const SamplerConfig& cfg) {
    validate_sampler(cfg);
    if (s2.latents != s1.cfg.encoder.latents || s2.latent_dim != s1.cfg.encoder.latent_dim)
        throw ConfigError("first-stage latent dims do not match the approximator");
    if (!s2.stage1_hash.empty() && s2.stage1_hash != hash_hex(s1.params.fingerprint()))
        throw ConfigError("approximator was trained against a different first-stage checkpoint");
    validate_trajectory(observed);
    if (observed.coord_dim() != s1.coord_dim || observed.feat_dim() != s1.feat_dim)
        throw ShapeError("observed frames do not match the first-stage dims");

    ForecastSetup fs;
    fs.T = total_frames;
    fs.T_o = observed.frames();
    fs.N = observed.entities();
    if (fs.T_o < 1) throw RangeError("need at least one observed frame");
    if (fs.T <= fs.T_o)
        throw RangeError("total frames " + std::to_string(fs.T) +
                         " leave nothing to predict after " + std::to_string(fs.T_o) +
                         " observed frames");
    ids::validate_assignment(assignment, s1.cfg.pool_size);
    if (static_cast<std::int64_t>(assignment.size()) != fs.N)
        throw ShapeError("assignment size does not match the entity count");

    fs.u_rows = ae::id_embeddings(s1, assignment);
    const Tensor z_obs = encode_frames(s1, observed.X, observed.M, fs.u_rows);
    fs.cond = flow::build_conditioning(z_obs, fs.T);
    return fs;
}

Forecast run_forecast(const flow::FlowModel& s2, const ae::Autoencoder& s1,
                      const Trajectory& observed, const ForecastSetup& fs,
                      const SamplerConfig& cfg, std::uint64_t noise_seed) {
    Rng rng(noise_seed);
    Tensor z = Tensor::randn(rng, {fs.T, s2.latents, s2.latent_dim});

    Forecast out;
    const auto field = [&](const Tensor& state, double tau) {
        const double tc = clamp_tau(tau, cfg.eps_clamp);
        const Tensor o_hat = flow::forward_data_prediction(s2, state, tc, fs.cond);
        Tensor v(state.shape);
        velocity_field(s2.cfg.schedule, tc, cfg.eps_clamp, state.ptr(), o_hat.ptr(), v.ptr(),
                       state.numel());
        ++out.nfe;
        return v;
    };

    const Tensor z1 = cfg.integrator == Integrator::EulerFixed
                          ? integrate_euler(field, std::move(z), cfg.steps)
                          : integrate_adaptive(field, std::move(z), cfg.rtol, cfg.atol);

    // decode only the unobserved tail
    const auto F = fs.T - fs.T_o;
    Tensor z_tail({F, s2.latents, s2.latent_dim});
    std::copy_n(z1.data.begin() + fs.T_o * s2.latents * s2.latent_dim, z_tail.numel(),
                z_tail.data.begin());
    out.predicted.X = decode_frames(s1, z_tail, fs.u_rows);
    out.predicted.M = observed.M;
    return out;
}

} // namespace

Forecast sample_forecast(const flow::FlowModel& s2, const ae::Autoencoder& s1,
                         const Trajectory& observed,
                         const std::vector<std::int64_t>& assignment,
                         std::int64_t total_frames, const SamplerConfig& cfg) {
    const auto fs = prepare_forecast(s2, s1, observed, assignment, total_frames, cfg);
    return run_forecast(s2, s1, observed, fs, cfg, derive_seed(cfg.seed, 0));
}

std::vector<Forecast> sample_k(const flow::FlowModel& s2, const ae::Autoencoder& s1,
                               const Trajectory& observed,
                               const std::vector<std::int64_t>& assignment,
                               std::int64_t total_frames, const SamplerConfig& cfg) {
    const auto fs = prepare_forecast(s2, s1, observed, assignment, total_frames, cfg);
    std::vector<Forecast> out;
    out.reserve(static_cast<std::size_t>(cfg.k_samples));
    for (std::int64_t j = 0; j < cfg.k_samples; ++j)
        out.push_back(run_forecast(s2, s1, observed, fs, cfg,
                                   derive_seed(cfg.seed, static_cast<std::uint64_t>(j))));
    return out;
}

void validate_plan(const RolloutPlan& plan) {
    if (plan.block_len < 2) throw ConfigError("rollout blocks need at least two frames");
    if (plan.blocks < 1) throw ConfigError("rollout needs at least one block");
}

namespace {

template <typename Fn>
auto with_block_context(std::int64_t block, Fn&& fn) {
    return with_error_context("block " + std::to_string(block), std::forward<Fn>(fn));
}

} // namespace

RolloutResult cascaded_rollout(const flow::FlowModel& s2, const ae::Autoencoder& s1,
                               const SystemState& initial,
                               const std::vector<std::int64_t>& assignment,
                               const RolloutPlan& plan, const SamplerConfig& cfg) {
    validate_plan(plan);
    if (initial.x.rank() != 2 || initial.m.rank() != 2 ||
        initial.x.shape[0] != initial.m.shape[0])
        throw ShapeError("initial state must hold one frame of entities");

    const auto N = initial.x.shape[0], D = initial.x.shape[1];
    const auto total = plan.blocks * (plan.block_len - 1) + 1;
    RolloutResult res;
    res.traj.X = Tensor({total, N, D});
    res.traj.M = initial.m;
    std::copy(initial.x.data.begin(), initial.x.data.end(), res.traj.X.data.begin());

    Trajectory window;
    window.M = initial.m;
    window.X = initial.x;
    window.X.shape = {1, N, D};

    double drift_acc = 0.0;
    for (std::int64_t b = 0; b < plan.blocks; ++b) {
        auto block_cfg = cfg;
        block_cfg.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(b));
        const Forecast fc = with_block_context(b, [&] {
            return sample_forecast(s2, s1, window, assignment, plan.block_len, block_cfg);
        });

        // one encode/decode pass over the conditioning frame, the only
        // reconstruction drift a seam can introduce
        const Tensor u_rows = ae::id_embeddings(s1, assignment);
        const Tensor z_seam = encode_frames(s1, window.X, window.M, u_rows);
        const Tensor x_seam = decode_frames(s1, z_seam, u_rows);
        double err = 0.0;
        for (std::int64_t i = 0; i < N; ++i) {
            double r2 = 0.0;
            for (std::int64_t d = 0; d < D; ++d) {
                const auto at = static_cast<std::size_t>(i * D + d);
                const double diff =
                    static_cast<double>(window.X.data[at]) - x_seam.data[at];
                r2 += diff * diff;
            }
            err += std::sqrt(r2);
        }
        drift_acc += err / static_cast<double>(N);

        const auto frames = plan.block_len - 1;
        std::copy(fc.predicted.X.data.begin(), fc.predicted.X.data.end(),
                  res.traj.X.data.begin() + (1 + b * frames) * N * D);
        res.nfe += fc.nfe;

        // the final decoded frame is reused verbatim as the next condition
        std::copy_n(fc.predicted.X.data.end() - N * D, N * D, window.X.data.begin());
    }
    res.recon_drift = drift_acc / static_cast<double>(plan.blocks);
    return res;
}

} // namespace latflow::sampler
