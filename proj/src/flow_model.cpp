#include "latflow/flow_model.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "latflow/checkpoint.hpp"
#include "latflow/error.hpp"
#include "latflow/identifiers.hpp"

namespace latflow::flow {

using nlohmann::json;

void validate_flow(const LatentFlowConfig& cfg) {
    if (cfg.hidden < 2 || cfg.layers < 1 || cfg.heads < 1 || cfg.ffn_mult < 1)
        throw ConfigError("network dimensions must be positive");
    if (cfg.hidden % cfg.heads != 0)
        throw ConfigError("heads must divide the hidden width");
    if ((cfg.hidden / cfg.heads) % 2 != 0)
        throw ConfigError("head width must be even for rotary pairs");
    if (cfg.hidden % 2 != 0) throw ConfigError("hidden width must be even");
    if (!(cfg.rope_base > 1.0)) throw ConfigError("rotary base must exceed 1");
    if (cfg.eps_clamp < 0 || cfg.eps_clamp >= 0.5)
        throw ConfigError("eps_clamp must lie in [0, 0.5)");
    if (cfg.w_pos_aux < 0 || cfg.w_int_aux < 0)
        throw ConfigError("auxiliary loss weights must be nonnegative");
    if (cfg.condition_frames < 1) throw ConfigError("need at least one conditioning frame");
    if (!(cfg.lr > 0) || cfg.lr_min < 0 || cfg.lr_min > cfg.lr)
        throw ConfigError("learning rate range must satisfy 0 < lr_min <= lr");
    if (cfg.weight_decay < 0) throw ConfigError("weight decay must be nonnegative");
    if (cfg.epochs < 0 || cfg.batch < 1) throw ConfigError("epochs >= 0 and batch >= 1 required");
    if (cfg.ema_beta < 0 || cfg.ema_beta > 1) throw ConfigError("ema beta must lie in [0, 1]");
}

std::string flow_config_to_json(const LatentFlowConfig& cfg) {
    json j{{"hidden", cfg.hidden},
           {"layers", cfg.layers},
           {"heads", cfg.heads},
           {"ffn_mult", cfg.ffn_mult},
           {"rope_base", cfg.rope_base},
           {"rope_latent", cfg.rope_latent},
           {"schedule", schedule_to_string(cfg.schedule)},
           {"eps_clamp", cfg.eps_clamp},
           {"w_pos_aux", cfg.w_pos_aux},
           {"w_int_aux", cfg.w_int_aux},
           {"condition_frames", cfg.condition_frames},
           {"lr", cfg.lr},
           {"lr_min", cfg.lr_min},
           {"weight_decay", cfg.weight_decay},
           {"epochs", cfg.epochs},
           {"batch", cfg.batch},
           {"ema_beta", cfg.ema_beta},
           {"seed", cfg.seed}};
    return j.dump(2);
}

LatentFlowConfig flow_config_from_json(const std::string& text) {
    LatentFlowConfig cfg;
    try {
        const json j = json::parse(text);
        cfg.hidden = j.at("hidden").get<std::int64_t>();
        cfg.layers = j.at("layers").get<std::int64_t>();
        cfg.heads = j.at("heads").get<std::int64_t>();
        cfg.ffn_mult = j.at("ffn_mult").get<std::int64_t>();
        cfg.rope_base = j.at("rope_base").get<double>();
        cfg.rope_latent = j.at("rope_latent").get<bool>();
        cfg.schedule = schedule_from_string(j.at("schedule").get<std::string>());
        cfg.eps_clamp = j.at("eps_clamp").get<double>();
        cfg.w_pos_aux = j.at("w_pos_aux").get<double>();
        cfg.w_int_aux = j.at("w_int_aux").get<double>();
        cfg.condition_frames = j.at("condition_frames").get<std::int64_t>();
        cfg.lr = j.at("lr").get<double>();
        cfg.lr_min = j.at("lr_min").get<double>();
        cfg.weight_decay = j.at("weight_decay").get<double>();
        cfg.epochs = j.at("epochs").get<std::int64_t>();
        cfg.batch = j.at("batch").get<std::int64_t>();
        cfg.ema_beta = j.at("ema_beta").get<double>();
        cfg.seed = j.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad approximator config: ") + e.what());
    }
    validate_flow(cfg);
    return cfg;
}

ConditioningTensor build_conditioning(const Tensor& z_obs, std::int64_t total_frames) {
    if (z_obs.rank() != 3)
        throw ShapeError("observed latents must be [frames, latents, dim], got " +
                         shape_str(z_obs.shape));
    const auto T_o = z_obs.shape[0];
    if (T_o < 1) throw RangeError("need at least one observed frame");
    if (T_o > total_frames)
        throw RangeError("observed frames " + std::to_string(T_o) +
                         " exceed total frames " + std::to_string(total_frames));
    ConditioningTensor out;
    out.C = Tensor::zeros({total_frames, z_obs.shape[1], z_obs.shape[2]});
    std::copy(z_obs.data.begin(), z_obs.data.end(), out.C.data.begin());
    out.flags.assign(static_cast<std::size_t>(total_frames), 0);
    for (std::int64_t t = 0; t < T_o; ++t) out.flags[static_cast<std::size_t>(t)] = 1;
    return out;
}

namespace {

Sublayer make_sublayer(nn::ParamStore& ps, Rng& rng, const std::string& name,
                       const LatentFlowConfig& cfg) {
    const auto H = cfg.hidden;
    Sublayer sl;
    sl.q = nn::Linear(ps, rng, name + ".q", H, H);
    sl.k = nn::Linear(ps, rng, name + ".k", H, H);
    sl.v = nn::Linear(ps, rng, name + ".v", H, H);
    sl.o = nn::Linear(ps, rng, name + ".o", H, H);
    sl.ff1 = nn::Linear(ps, rng, name + ".ff1", H, H * cfg.ffn_mult);
    sl.ff2 = nn::Linear(ps, rng, name + ".ff2", H * cfg.ffn_mult, H);
    sl.mod = nn::Linear::zeros(ps, name + ".mod", H, 3 * H);
    return sl;
}

ad::Value split_heads(const ad::Value& x, std::int64_t heads) {
    const auto B = x->val.shape[0], S = x->val.shape[1], W = x->val.shape[2];
    return ad::permute(ad::reshape(x, {B, S, heads, W / heads}), {0, 2, 1, 3});
}

ad::Value merge_heads(const ad::Value& x) {
    const auto& s = x->val.shape; // [B, heads, S, dh]
    return ad::reshape(ad::permute(x, {0, 2, 1, 3}), {s[0], s[2], s[1] * s[3]});
}

// scale/shift/gate triple from the tau embedding, each [B, 1, 1, H]
struct Modulation {
    ad::Value s, b, g;
};

Modulation read_modulation(const nn::Linear& mod, const ad::Value& tau_act, std::int64_t H) {
    const auto B = tau_act->val.shape[0];
    auto all = mod(tau_act); // [B, 3H]
    Modulation out;
    out.s = ad::reshape(ad::slice(all, 1, 0, H), {B, 1, 1, H});
    out.b = ad::reshape(ad::slice(all, 1, H, H), {B, 1, 1, H});
    out.g = ad::reshape(ad::slice(all, 1, 2 * H, H), {B, 1, 1, H});
    return out;
}

// One gated residual sublayer on the [B, T, L, H] stream. attend_latent
// selects which axis carries the attention sequence; the other axis is
// absorbed into the batch. Attention and MLP branches share one modulated
// normalization and their sum is gated back into the stream.
ad::Value parallel_sublayer(const Sublayer& sl, const ad::Value& stream,
                            const ad::Value& tau_act, bool attend_latent,
                            const LatentFlowConfig& cfg) {
    const auto B = stream->val.shape[0], T = stream->val.shape[1];
    const auto L = stream->val.shape[2], H = stream->val.shape[3];
    const auto m = read_modulation(sl.mod, tau_act, H);

    auto h = ad::add(ad::mul(ad::add_scalar(m.s, 1.0), ad::layer_norm(stream)), m.b);
    const bool use_rope = attend_latent ? cfg.rope_latent : true;
    auto hs = attend_latent ? ad::reshape(h, {B * T, L, H})
                            : ad::reshape(ad::permute(h, {0, 2, 1, 3}), {B * L, T, H});

    auto q = split_heads(sl.q(hs), cfg.heads);
    auto k = split_heads(sl.k(hs), cfg.heads);
    if (use_rope) {
        q = ad::rope(q, cfg.rope_base);
        k = ad::rope(k, cfg.rope_base);
    }
    auto attn = sl.o(merge_heads(ad::attention(q, k, split_heads(sl.v(hs), cfg.heads))));
    auto ff = sl.ff2(ad::gelu(sl.ff1(hs)));
    auto branch = ad::add(attn, ff);

    auto back = attend_latent
                    ? ad::reshape(branch, {B, T, L, H})
                    : ad::permute(ad::reshape(branch, {B, L, T, H}), {0, 2, 1, 3});
    return ad::add(stream, ad::mul(m.g, back));
}

void check_finite(const Tensor& t, const char* what) {
    for (const float v : t.data)
        if (!std::isfinite(v)) throw NumericError(std::string(what) + " contains a non-finite value");
}

} // namespace

FlowModel build_flow_model(const LatentFlowConfig& cfg, std::int64_t latents,
                           std::int64_t latent_dim, Rng& rng) {
    validate_flow(cfg);
    if (latents < 1 || latent_dim < 1) throw ConfigError("latent dims must be positive");
    FlowModel m;
    m.cfg = cfg;
    m.latents = latents;
    m.latent_dim = latent_dim;
    const auto H = cfg.hidden;

    m.in_proj = nn::Linear(m.params, rng, "in", latent_dim, H);
    m.cond_proj = nn::Linear(m.params, rng, "cond", latent_dim, H);
    m.mask_emb = m.params.add("mask", nn::init_normal(rng, {2, H}, 0.02f), false);
    m.t0 = nn::Linear(m.params, rng, "t0", H, H);
    m.t1 = nn::Linear(m.params, rng, "t1", H, H);
    for (std::int64_t i = 0; i < cfg.layers; ++i) {
        const std::string base = "blk" + std::to_string(i);
        FlowLayer layer;
        layer.lat = make_sublayer(m.params, rng, base + ".lat", cfg);
        layer.tmp = make_sublayer(m.params, rng, base + ".tmp", cfg);
        m.layers.push_back(std::move(layer));
    }
    m.head.mod = nn::Linear::zeros(m.params, "head.mod", H, 3 * H);
    m.head.ff1 = nn::Linear(m.params, rng, "head.ff1", H, H * cfg.ffn_mult);
    m.head.ff2 = nn::Linear(m.params, rng, "head.ff2", H * cfg.ffn_mult, H);
    m.out_proj = nn::Linear(m.params, rng, "out", H, latent_dim);
    return m;
}

Tensor tau_features(const std::vector<double>& taus, std::int64_t hidden) {
    if (hidden < 2 || hidden % 2 != 0) throw RangeError("tau feature width must be even");
    const auto B = static_cast<std::int64_t>(taus.size());
    const auto half = hidden / 2;
    Tensor out({B, hidden});
    for (std::int64_t i = 0; i < B; ++i)
        for (std::int64_t j = 0; j < half; ++j) {
            // geometric frequency ladder; times are scaled so the fastest
            // channel sweeps many periods over [0, 1]
            const double w = std::exp(-std::log(10000.0) * static_cast<double>(j) /
                                      static_cast<double>(half));
            const double arg = 1000.0 * taus[static_cast<std::size_t>(i)] * w;
            out.data[static_cast<std::size_t>(i * hidden + j)] = static_cast<float>(std::cos(arg));
            out.data[static_cast<std::size_t>(i * hidden + half + j)] =
                static_cast<float>(std::sin(arg));
        }
    return out;
}

ad::Value forward_batch(const FlowModel& m, const ad::Value& o_inter,
                        const std::vector<double>& taus, const ad::Value& C,
                        const std::vector<std::int64_t>& flags) {
    const auto& s = o_inter->val.shape;
    if (s.size() != 4 || s[3] != m.latent_dim)
        throw ShapeError("interpolated latents must be [batch, frames, latents, " +
                         std::to_string(m.latent_dim) + "], got " + shape_str(o_inter->val.shape));
    if (!shape_eq(C->val.shape, s))
        throw ShapeError("conditioning shape " + shape_str(C->val.shape) +
                         " does not match input " + shape_str(s));
    const auto B = s[0], T = s[1];
    if (static_cast<std::int64_t>(taus.size()) != B)
        throw ShapeError("need one tau per batch item");
    if (static_cast<std::int64_t>(flags.size()) != T)
        throw ShapeError("need one conditioning flag per frame");
    for (const auto f : flags)
        if (f != 0 && f != 1) throw RangeError("conditioning flags must be 0 or 1");

    auto t_emb = m.t1(ad::silu(m.t0(ad::constant(tau_features(taus, m.cfg.hidden)))));
    auto tau_act = ad::silu(t_emb); // shared by every modulation head

    auto stream = ad::add(m.in_proj(o_inter), m.cond_proj(C));
    stream = ad::add(stream, ad::reshape(ad::embed(m.mask_emb, flags), {1, T, 1, m.cfg.hidden}));

    for (const auto& layer : m.layers) {
        stream = parallel_sublayer(layer.lat, stream, tau_act, true, m.cfg);
        stream = parallel_sublayer(layer.tmp, stream, tau_act, false, m.cfg);
    }

    const auto mod = read_modulation(m.head.mod, tau_act, m.cfg.hidden);
    auto h = ad::add(ad::mul(ad::add_scalar(mod.s, 1.0), ad::layer_norm(stream)), mod.b);
    stream = ad::add(stream, ad::mul(mod.g, m.head.ff2(ad::gelu(m.head.ff1(h)))));
    return m.out_proj(stream);
}

Tensor forward_data_prediction(const FlowModel& m, const Tensor& o_inter, double tau,
                               const ConditioningTensor& cond) {
    if (o_inter.rank() != 3 || o_inter.shape[1] != m.latents || o_inter.shape[2] != m.latent_dim)
        throw ShapeError("expected latents [frames, " + std::to_string(m.latents) + ", " +
                         std::to_string(m.latent_dim) + "], got " + shape_str(o_inter.shape));
    if (!shape_eq(cond.C.shape, o_inter.shape))
        throw ShapeError("conditioning shape " + shape_str(cond.C.shape) +
                         " does not match input " + shape_str(o_inter.shape));
    if (static_cast<std::int64_t>(cond.flags.size()) != o_inter.shape[0])
        throw ShapeError("conditioning flag count does not match the frame count");
    check_finite(o_inter, "interpolated latents");
    check_finite(cond.C, "conditioning");
    if (!std::isfinite(tau)) throw NumericError("tau is not finite");

    const auto T = o_inter.shape[0];
    Tensor oi = o_inter;
    oi.shape = {1, T, m.latents, m.latent_dim};
    Tensor c = cond.C;
    c.shape = oi.shape;
    auto out = forward_batch(m, ad::constant(std::move(oi)), {tau}, ad::constant(std::move(c)),
                             cond.flags);
    Tensor res = out->val;
    res.shape = {T, m.latents, m.latent_dim};
    return res;
}

namespace {

// frame batch of one trajectory, standardized coordinates plus tiled
// features and identifier embeddings
struct EncodedInputs {
    Tensor x_std, x_raw, feat, u;
};

EncodedInputs trajectory_inputs(const ae::Autoencoder& s1, const Trajectory& traj,
                                const std::vector<std::int64_t>& assign) {
    const auto T = traj.frames(), N = traj.entities();
    EncodedInputs in;
    in.x_raw = traj.X;
    in.x_std = ae::standardize_coords(s1, traj.X);
    in.x_std.shape = {T, N, traj.coord_dim()};
    in.x_raw.shape = in.x_std.shape;
    in.feat = Tensor({T, N, s1.feat_dim});
    for (std::int64_t f = 0; f < T; ++f)
        std::copy_n(traj.M.data.data(), N * s1.feat_dim,
                    in.feat.data.data() + f * N * s1.feat_dim);
    Tensor rows = ae::id_embeddings(s1, assign);
    in.u = Tensor({T, N, s1.cfg.id_dim});
    for (std::int64_t f = 0; f < T; ++f)
        std::copy_n(rows.data.data(), N * s1.cfg.id_dim, in.u.data.data() + f * N * s1.cfg.id_dim);
    return in;
}

// clean latents of every frame under the frozen encoder, detached
Tensor encode_clean(const ae::Autoencoder& s1, const EncodedInputs& in) {
    auto z = ae::encode_batch(s1, ad::constant(in.x_std), ad::constant(in.feat),
                              ad::constant(in.u));
    return z->val; // [T, L, D_z]
}

double validation_loss(const FlowModel& m, const ae::Autoencoder& s1,
                       const nbody::TrajectoryDataset& val, std::uint64_t seed,
                       std::int64_t max_items) {
    const auto count = std::min<std::int64_t>(max_items,
                                              static_cast<std::int64_t>(val.trajectories.size()));
    const ids::IdentifierPool pool{s1.cfg.pool_size};
    double acc = 0.0;
    for (std::int64_t ti = 0; ti < count; ++ti) {
        const auto& traj = val.trajectories[static_cast<std::size_t>(ti)];
        const auto T = traj.frames();
        const auto T_o = std::min<std::int64_t>(m.cfg.condition_frames, T);
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(ti)));
        const auto assign = ids::sample_assignment(traj.entities(), pool, rng);
        const auto in = trajectory_inputs(s1, traj, assign);
        Tensor z1 = encode_clean(s1, in);

        Tensor z_obs = z1;
        z_obs.shape = {T, m.latents, m.latent_dim};
        z_obs.data.resize(static_cast<std::size_t>(T_o * m.latents * m.latent_dim));
        z_obs.shape[0] = T_o;
        auto cond = build_conditioning(z_obs, T);

        const double tau = rng.uniform();
        const auto se = schedule_eval(m.cfg.schedule, tau);
        Tensor o_inter(z1.shape);
        for (std::size_t i = 0; i < o_inter.data.size(); ++i)
            o_inter.data[i] = static_cast<float>(se.alpha * z1.data[i] + se.sigma * rng.normal());
        Tensor o_hat = forward_data_prediction(m, o_inter, tau, cond);
        acc += data_prediction_loss(o_hat, z1);
    }
    return acc / static_cast<double>(count);
}

} // namespace

FlowTrainResult train_second_stage(FlowModel& m, const ae::Autoencoder& stage1,
                                   const nbody::TrajectoryDataset& train,
                                   const nbody::TrajectoryDataset& val, nn::Ema& ema) {
    const auto& cfg = m.cfg;
    validate_flow(cfg);
    if (stage1.cfg.encoder.latents != m.latents || stage1.cfg.encoder.latent_dim != m.latent_dim)
        throw ConfigError("first-stage latent dims do not match the approximator");
    if (train.trajectories.empty() || val.trajectories.empty())
        throw ConfigError("training needs nonempty train and val splits");
    const auto& probe = train.trajectories.front();
    const auto T = probe.frames(), N = probe.entities();
    if (cfg.condition_frames > T)
        throw ConfigError("condition frames " + std::to_string(cfg.condition_frames) +
                          " exceed trajectory length " + std::to_string(T));

    const auto frozen = stage1.params.fingerprint();
    m.stage1_hash = hash_hex(frozen);

    std::vector<std::int64_t> items(train.trajectories.size());
    for (std::size_t i = 0; i < items.size(); ++i) items[i] = static_cast<std::int64_t>(i);
    const auto steps_per_epoch =
        (static_cast<std::int64_t>(items.size()) + cfg.batch - 1) / cfg.batch;
    const auto total_steps = steps_per_epoch * cfg.epochs;

    Rng rng(derive_seed(cfg.seed, 1));
    nn::AdamW opt(0.9, 0.999, 1e-8, cfg.weight_decay);
    const ids::IdentifierPool pool{stage1.cfg.pool_size};
    const auto L = m.latents, Dz = m.latent_dim;
    const auto T_o = cfg.condition_frames;
    std::vector<std::int64_t> flags(static_cast<std::size_t>(T), 0);
    for (std::int64_t t = 0; t < T_o; ++t) flags[static_cast<std::size_t>(t)] = 1;

    FlowTrainResult res;
    std::int64_t global_step = 0;

    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = items.size(); i > 1; --i)
            std::swap(items[i - 1], items[static_cast<std::size_t>(rng.uniform_int(i))]);

        double epoch_loss = 0.0;
        double lr = cfg.lr;
        for (std::int64_t s = 0; s < steps_per_epoch; ++s) {
            const auto begin = static_cast<std::size_t>(s * cfg.batch);
            const auto end = std::min(items.size(), begin + static_cast<std::size_t>(cfg.batch));
            const auto B = static_cast<std::int64_t>(end - begin);

            Tensor z1({B, T, L, Dz});
            Tensor C = Tensor::zeros({B, T, L, Dz});
            Tensor o_inter({B, T, L, Dz});
            std::vector<double> taus(static_cast<std::size_t>(B));
            Tensor x_raw({B * T, N, stage1.coord_dim});
            Tensor u_all({B * T, N, stage1.cfg.id_dim});

            const auto frame_n = T * L * Dz;
            for (std::int64_t bi = 0; bi < B; ++bi) {
                const auto& traj =
                    train.trajectories[static_cast<std::size_t>(items[begin + bi])];
                const auto assign = ids::sample_assignment(N, pool, rng);
                const auto in = trajectory_inputs(stage1, traj, assign);
                const Tensor z = encode_clean(stage1, in);

                std::copy(z.data.begin(), z.data.end(), z1.data.begin() + bi * frame_n);
                // conditioning carries the clean observed frames, zeros elsewhere
                std::copy_n(z.data.begin(), T_o * L * Dz, C.data.begin() + bi * frame_n);
                std::copy(in.x_raw.data.begin(), in.x_raw.data.end(),
                          x_raw.data.begin() + bi * in.x_raw.numel());
                std::copy(in.u.data.begin(), in.u.data.end(),
                          u_all.data.begin() + bi * in.u.numel());

                const double tau = rng.uniform();
                taus[static_cast<std::size_t>(bi)] = tau;
                const auto se = schedule_eval(cfg.schedule, tau);
                for (std::int64_t i = 0; i < frame_n; ++i) {
                    const auto at = static_cast<std::size_t>(bi * frame_n + i);
                    o_inter.data[at] =
                        static_cast<float>(se.alpha * z1.data[at] + se.sigma * rng.normal());
                }
            }

            m.params.zero_grad();
            auto o_hat = forward_batch(m, ad::constant(o_inter), taus, ad::constant(C), flags);
            auto total = ad::mse(o_hat, ad::constant(z1));
            if (cfg.w_pos_aux > 0 || cfg.w_int_aux > 0) {
                // reach through the frozen decoder; its weights get gradients
                // but the optimizer never visits them
                auto dec = ae::decode_batch(stage1, ad::reshape(o_hat, {B * T, L, Dz}),
                                            ad::constant(u_all));
                auto x_hat = ae::unstandardize_coords_graph(stage1, dec.x_std);
                auto target = ad::constant(x_raw);
                if (cfg.w_pos_aux > 0)
                    total = ad::add(total, ad::scale(ae::loss_pos(x_hat, target), cfg.w_pos_aux));
                if (cfg.w_int_aux > 0)
                    total = ad::add(total,
                                    ad::scale(ae::loss_interdist(x_hat, target), cfg.w_int_aux));
            }

            const double loss = total->val.data[0];
            if (!std::isfinite(loss))
                throw NumericError("stage-2 loss diverged at epoch " + std::to_string(epoch) +
                                   " step " + std::to_string(s));
            ad::backward(total);
            lr = nn::cosine_lr(global_step, total_steps, cfg.lr, cfg.lr_min);
            opt.step(m.params, lr);
            ema.update(m.params);
            epoch_loss += loss;
            ++global_step;
        }

        FlowEpochStats st;
        st.epoch = epoch;
        st.train_loss = epoch_loss / static_cast<double>(steps_per_epoch);
        st.lr = lr;
        st.val_loss = validation_loss(m, stage1, val, derive_seed(cfg.seed, 2), 8);
        res.curve.push_back(st);
    }

    if (stage1.params.fingerprint() != frozen)
        throw NumericError("frozen first-stage weights changed during training");
    return res;
}

void save_stage2(const FlowModel& m, const nn::Ema& ema, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::map<std::string, Tensor> blob = m.params.snapshot();
    for (const auto& [k, v] : ema.shadow()) blob["ema." + k] = v;
    save_tensors(dir + "/weights.bin", blob);

    json side;
    side["kind"] = "latent-flow-approximator";
    side["config"] = json::parse(flow_config_to_json(m.cfg));
    side["latents"] = m.latents;
    side["latent_dim"] = m.latent_dim;
    side["param_count"] = m.params.param_count();
    side["weights_fingerprint"] = hash_hex(m.params.fingerprint());
    side["stage1_fingerprint"] = m.stage1_hash;
    side["ema_beta"] = ema.beta();
    write_json_file(dir + "/config.json", side.dump(2));
}

FlowModel load_stage2(const std::string& dir, bool use_ema) {
    json side;
    try {
        side = json::parse(read_text_file(dir + "/config.json"));
    } catch (const json::exception& e) {
        throw IoError("corrupt approximator sidecar in " + dir + ": " + e.what());
    }
    LatentFlowConfig cfg;
    std::int64_t latents = 0, latent_dim = 0;
    std::string stage1_hash;
    try {
        if (side.at("kind").get<std::string>() != "latent-flow-approximator")
            throw IoError(dir + " does not hold a second-stage checkpoint");
        cfg = flow_config_from_json(side.at("config").dump());
        latents = side.at("latents").get<std::int64_t>();
        latent_dim = side.at("latent_dim").get<std::int64_t>();
        stage1_hash = side.at("stage1_fingerprint").get<std::string>();
    } catch (const json::exception& e) {
        throw IoError("approximator sidecar in " + dir + " missing field: " + e.what());
    }

    Rng scratch(0); // initial weights are immediately overwritten
    FlowModel m = build_flow_model(cfg, latents, latent_dim, scratch);
    m.stage1_hash = stage1_hash;

    const auto blob = load_tensors(dir + "/weights.bin");
    std::map<std::string, Tensor> live, shadow;
    for (const auto& [k, v] : blob) {
        if (k.rfind("ema.", 0) == 0)
            shadow[k.substr(4)] = v;
        else
            live[k] = v;
    }
    if (use_ema) {
        if (shadow.size() != live.size())
            throw IoError("checkpoint lacks a complete set of ema shadow weights");
        m.params.load(shadow);
    } else {
        m.params.load(live);
    }
    return m;
}

} // namespace latflow::flow
