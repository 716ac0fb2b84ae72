#include "latflow/latent_autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "latflow/checkpoint.hpp"
#include "latflow/error.hpp"

namespace latflow::ae {

using nlohmann::json;

void validate_stage1(const Stage1Config& cfg) {
    const auto& e = cfg.encoder;
    const auto& d = cfg.decoder;
    if (e.latents < 1 || e.latent_dim < 1 || e.heads < 1 || e.head_dim < 1 || e.layers < 1 ||
        e.ffn_mult < 1)
        throw ConfigError("encoder dimensions must be positive");
    if (d.heads < 1 || d.head_dim < 1 || d.layers < 1 || d.ffn_mult < 1)
        throw ConfigError("decoder dimensions must be positive");
    if (cfg.id_dim < 1) throw ConfigError("identifier embedding dim must be positive");
    if (cfg.pool_size < 1) throw ConfigError("identifier pool must be nonempty");
    if (cfg.w_pos < 0 || cfg.w_int < 0 || cfg.w_feat < 0)
        throw ConfigError("loss weights must be nonnegative");
    if (!(cfg.lr > 0) || cfg.lr_min < 0 || cfg.lr_min > cfg.lr)
        throw ConfigError("learning rate range must satisfy 0 < lr_min <= lr");
    if (cfg.weight_decay < 0) throw ConfigError("weight decay must be nonnegative");
    if (cfg.epochs < 0 || cfg.batch < 1) throw ConfigError("epochs >= 0 and batch >= 1 required");
    if (cfg.ema_beta < 0 || cfg.ema_beta > 1) throw ConfigError("ema beta must lie in [0, 1]");
    if (cfg.aug_shift < 0) throw ConfigError("augmentation shift must be nonnegative");
}

namespace {

json encoder_to_json(const EncoderConfig& e) {
    return json{{"latents", e.latents},   {"latent_dim", e.latent_dim}, {"heads", e.heads},
                {"head_dim", e.head_dim}, {"layers", e.layers},         {"ffn_mult", e.ffn_mult}};
}

EncoderConfig encoder_from_json(const json& j) {
    EncoderConfig e;
    e.latents = j.at("latents").get<std::int64_t>();
    e.latent_dim = j.at("latent_dim").get<std::int64_t>();
    e.heads = j.at("heads").get<std::int64_t>();
    e.head_dim = j.at("head_dim").get<std::int64_t>();
    e.layers = j.at("layers").get<std::int64_t>();
    e.ffn_mult = j.at("ffn_mult").get<std::int64_t>();
    return e;
}

json decoder_to_json(const DecoderConfig& d) {
    return json{{"heads", d.heads},
                {"head_dim", d.head_dim},
                {"layers", d.layers},
                {"ffn_mult", d.ffn_mult}};
}

DecoderConfig decoder_from_json(const json& j) {
    DecoderConfig d;
    d.heads = j.at("heads").get<std::int64_t>();
    d.head_dim = j.at("head_dim").get<std::int64_t>();
    d.layers = j.at("layers").get<std::int64_t>();
    d.ffn_mult = j.at("ffn_mult").get<std::int64_t>();
    return d;
}

} // namespace

std::string stage1_config_to_json(const Stage1Config& cfg) {
    json j;
    j["encoder"] = encoder_to_json(cfg.encoder);
    j["decoder"] = decoder_to_json(cfg.decoder);
    j["id_dim"] = cfg.id_dim;
    j["pool_size"] = cfg.pool_size;
    j["w_pos"] = cfg.w_pos;
    j["w_int"] = cfg.w_int;
    j["w_feat"] = cfg.w_feat;
    j["lr"] = cfg.lr;
    j["lr_min"] = cfg.lr_min;
    j["weight_decay"] = cfg.weight_decay;
    j["epochs"] = cfg.epochs;
    j["batch"] = cfg.batch;
    j["ema_beta"] = cfg.ema_beta;
    j["augment"] = cfg.augment;
    j["aug_shift"] = cfg.aug_shift;
    j["seed"] = cfg.seed;
    return j.dump(2);
}

Stage1Config stage1_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad autoencoder config json: ") + e.what());
    }
    Stage1Config cfg;
    try {
        cfg.encoder = encoder_from_json(j.at("encoder"));
        cfg.decoder = decoder_from_json(j.at("decoder"));
        cfg.id_dim = j.at("id_dim").get<std::int64_t>();
        cfg.pool_size = j.at("pool_size").get<std::int64_t>();
        cfg.w_pos = j.at("w_pos").get<double>();
        cfg.w_int = j.at("w_int").get<double>();
        cfg.w_feat = j.at("w_feat").get<double>();
        cfg.lr = j.at("lr").get<double>();
        cfg.lr_min = j.at("lr_min").get<double>();
        cfg.weight_decay = j.at("weight_decay").get<double>();
        cfg.epochs = j.at("epochs").get<std::int64_t>();
        cfg.batch = j.at("batch").get<std::int64_t>();
        cfg.ema_beta = j.at("ema_beta").get<double>();
        cfg.augment = j.at("augment").get<bool>();
        cfg.aug_shift = j.at("aug_shift").get<double>();
        cfg.seed = j.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("autoencoder config missing field: ") + e.what());
    }
    validate_stage1(cfg);
    return cfg;
}

namespace {

AttnBlock make_block(nn::ParamStore& ps, Rng& rng, const std::string& name, std::int64_t stream,
                     std::int64_t kv_width, std::int64_t inner, std::int64_t ffn_mult) {
    AttnBlock b;
    b.q = nn::Linear(ps, rng, name + ".q", stream, inner);
    b.k = nn::Linear(ps, rng, name + ".k", kv_width, inner);
    b.v = nn::Linear(ps, rng, name + ".v", kv_width, inner);
    b.o = nn::Linear(ps, rng, name + ".o", inner, stream);
    b.ff1 = nn::Linear(ps, rng, name + ".ff1", stream, stream * ffn_mult);
    b.ff2 = nn::Linear(ps, rng, name + ".ff2", stream * ffn_mult, stream);
    return b;
}

DecoderHead make_head(nn::ParamStore& ps, Rng& rng, const std::string& name,
                      const DecoderConfig& dc, std::int64_t id_dim, std::int64_t latent_dim,
                      std::int64_t out_dim) {
    DecoderHead h;
    const auto width = dc.heads * dc.head_dim;
    h.in = nn::Linear(ps, rng, name + ".in", id_dim, width);
    for (std::int64_t i = 0; i < dc.layers; ++i)
        h.blocks.push_back(make_block(ps, rng, name + "." + std::to_string(i), width, latent_dim,
                                      width, dc.ffn_mult));
    h.out = nn::Linear(ps, rng, name + ".out", width, out_dim);
    return h;
}

// [B, S, H*hd] -> [B, H, S, hd]
ad::Value split_heads(const ad::Value& x, std::int64_t heads, std::int64_t head_dim) {
    const auto& s = x->val.shape;
    auto r = ad::reshape(x, {s[0], s[1], heads, head_dim});
    return ad::permute(r, {0, 2, 1, 3});
}

// [B, H, S, hd] -> [B, S, H*hd]
ad::Value merge_heads(const ad::Value& x) {
    const auto& s = x->val.shape;
    auto p = ad::permute(x, {0, 2, 1, 3});
    return ad::reshape(p, {s[0], s[2], s[1] * s[3]});
}

ad::Value cross_attention(const AttnBlock& b, const ad::Value& stream, const ad::Value& kv_src,
                          std::int64_t heads, std::int64_t head_dim) {
    auto qh = split_heads(b.q(ad::layer_norm(stream)), heads, head_dim);
    auto kh = split_heads(b.k(kv_src), heads, head_dim);
    auto vh = split_heads(b.v(kv_src), heads, head_dim);
    auto a = merge_heads(ad::attention(qh, kh, vh));
    auto h = ad::add(stream, b.o(a));
    auto f = b.ff2(ad::gelu(b.ff1(ad::layer_norm(h))));
    return ad::add(h, f);
}

constexpr float kStdFloor = 1e-6f;

} // namespace

Autoencoder build_autoencoder(const Stage1Config& cfg, std::int64_t coord_dim,
                              std::int64_t feat_dim, Rng& rng) {
    validate_stage1(cfg);
    if (coord_dim < 1 || feat_dim < 0) throw ConfigError("bad data dims for autoencoder");
    Autoencoder m;
    m.cfg = cfg;
    m.coord_dim = coord_dim;
    m.feat_dim = feat_dim;

    const auto& e = cfg.encoder;
    m.z_init = m.params.add("z_init", nn::init_normal(rng, {e.latents, e.latent_dim}, 0.02f),
                            false);
    m.id_table = m.params.add("ids", nn::init_normal(rng, {cfg.pool_size, cfg.id_dim}, 0.02f),
                              false);

    const auto token_dim = coord_dim + feat_dim + cfg.id_dim;
    const auto enc_inner = e.heads * e.head_dim;
    for (std::int64_t i = 0; i < e.layers; ++i)
        m.enc_blocks.push_back(make_block(m.params, rng, "enc." + std::to_string(i), e.latent_dim,
                                          token_dim, enc_inner, e.ffn_mult));

    m.dec_pos = make_head(m.params, rng, "dec.pos", cfg.decoder, cfg.id_dim, e.latent_dim,
                          coord_dim);
    m.dec_feat = make_head(m.params, rng, "dec.feat", cfg.decoder, cfg.id_dim, e.latent_dim,
                           std::max<std::int64_t>(feat_dim, 1));

    m.x_mean = Tensor::zeros({coord_dim});
    m.x_std = Tensor::full({coord_dim}, 1.0f);
    return m;
}

ad::Value encode_batch(const Autoencoder& m, const ad::Value& x_std, const ad::Value& feat,
                       const ad::Value& u) {
    const auto& xs = x_std->val.shape;
    if (xs.size() != 3 || xs[2] != m.coord_dim)
        throw ShapeError("encode expects coordinates [batch, entities, " +
                         std::to_string(m.coord_dim) + "], got " + shape_str(xs));
    if (feat->val.shape.size() != 3 || feat->val.shape[2] != m.feat_dim ||
        feat->val.shape[0] != xs[0] || feat->val.shape[1] != xs[1])
        throw ShapeError("encode feature block mismatches coordinates: " +
                         shape_str(feat->val.shape));
    if (u->val.shape.size() != 3 || u->val.shape[2] != m.cfg.id_dim ||
        u->val.shape[0] != xs[0] || u->val.shape[1] != xs[1])
        throw ShapeError("encode identifier block mismatches coordinates: " +
                         shape_str(u->val.shape));

    const auto B = xs[0];
    const auto& e = m.cfg.encoder;
    auto tokens = ad::concat({x_std, feat, u}, 2); // [B, N, token_dim]

    // learned latent queries, shared across the batch
    auto h = ad::add(ad::constant(Tensor::zeros({B, e.latents, e.latent_dim})), m.z_init);
    for (const auto& b : m.enc_blocks) h = cross_attention(b, h, tokens, e.heads, e.head_dim);
    return ad::layer_norm(h); // without learnable affine
}

Decoded decode_batch(const Autoencoder& m, const ad::Value& z, const ad::Value& u) {
    const auto& zs = z->val.shape;
    const auto& e = m.cfg.encoder;
    if (zs.size() != 3 || zs[1] != e.latents || zs[2] != e.latent_dim)
        throw ShapeError("decode expects latents [batch, " + std::to_string(e.latents) + ", " +
                         std::to_string(e.latent_dim) + "], got " + shape_str(zs));
    if (u->val.shape.size() != 3 || u->val.shape[2] != m.cfg.id_dim || u->val.shape[0] != zs[0])
        throw ShapeError("decode identifier block mismatches latents: " +
                         shape_str(u->val.shape));

    auto zn = ad::layer_norm(z); // incoming latents may be model samples
    const auto& d = m.cfg.decoder;
    auto run_head = [&](const DecoderHead& head) {
        auto h = head.in(u);
        for (const auto& b : head.blocks) h = cross_attention(b, h, zn, d.heads, d.head_dim);
        return head.out(ad::layer_norm(h));
    };
    Decoded out;
    out.x_std = run_head(m.dec_pos);
    out.feat = run_head(m.dec_feat);
    return out;
}

Tensor standardize_coords(const Autoencoder& m, const Tensor& X) {
    Tensor out = X;
    const auto D = m.coord_dim;
    const auto rows = shape_numel(X.shape) / D;
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t d = 0; d < D; ++d) {
            const auto i = static_cast<std::size_t>(r * D + d);
            const double sd = std::max(m.x_std.data[static_cast<std::size_t>(d)], kStdFloor);
            out.data[i] = static_cast<float>((static_cast<double>(X.data[i]) -
                                              m.x_mean.data[static_cast<std::size_t>(d)]) /
                                             sd);
        }
    return out;
}

Tensor unstandardize_coords(const Autoencoder& m, const Tensor& X) {
    Tensor out = X;
    const auto D = m.coord_dim;
    const auto rows = shape_numel(X.shape) / D;
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t d = 0; d < D; ++d) {
            const auto i = static_cast<std::size_t>(r * D + d);
            const double sd = std::max(m.x_std.data[static_cast<std::size_t>(d)], kStdFloor);
            out.data[i] = static_cast<float>(static_cast<double>(X.data[i]) * sd +
                                             m.x_mean.data[static_cast<std::size_t>(d)]);
        }
    return out;
}

ad::Value unstandardize_coords_graph(const Autoencoder& m, const ad::Value& x_std) {
    Tensor sd = m.x_std;
    for (auto& v : sd.data) v = std::max(v, kStdFloor);
    return ad::add(ad::mul(x_std, ad::constant(sd)), ad::constant(m.x_mean));
}

Tensor encode_frame(const Autoencoder& m, const Tensor& X, const Tensor& M, const Tensor& U) {
    if (X.shape.size() != 2 || M.shape.size() != 2 || U.shape.size() != 2)
        throw ShapeError("encode_frame expects rank-2 inputs [entities, features]");
    const auto N = X.shape[0];
    Tensor xs = standardize_coords(m, X);
    xs.shape = {1, N, X.shape[1]};
    Tensor mf = M;
    mf.shape = {1, N, M.shape[1]};
    Tensor uf = U;
    uf.shape = {1, N, U.shape[1]};
    auto z = encode_batch(m, ad::constant(xs), ad::constant(mf), ad::constant(uf));
    Tensor out = z->val;
    out.shape = {m.cfg.encoder.latents, m.cfg.encoder.latent_dim};
    return out;
}

std::pair<Tensor, Tensor> decode_frame(const Autoencoder& m, const Tensor& Z, const Tensor& U) {
    if (Z.shape.size() != 2 || U.shape.size() != 2)
        throw ShapeError("decode_frame expects rank-2 inputs");
    const auto N = U.shape[0];
    Tensor zf = Z;
    zf.shape = {1, Z.shape[0], Z.shape[1]};
    Tensor uf = U;
    uf.shape = {1, N, U.shape[1]};
    auto dec = decode_batch(m, ad::constant(zf), ad::constant(uf));
    Tensor x = dec.x_std->val;
    x.shape = {N, m.coord_dim};
    x = unstandardize_coords(m, x);
    Tensor f = dec.feat->val;
    f.shape = {N, dec.feat->val.shape[2]};
    return {x, f};
}

Tensor id_embeddings(const Autoencoder& m, const std::vector<std::int64_t>& assignment) {
    return ids::embed_assignment(m.id_table, assignment)->val;
}

ad::Value loss_pos(const ad::Value& pred, const ad::Value& truth) {
    if (!shape_eq(pred->val.shape, truth->val.shape) || pred->val.shape.size() < 2)
        throw ShapeError("position loss expects matching [..., entities, coords]");
    auto diff = ad::sub(pred, truth);
    auto sq = ad::mul(diff, diff);
    return ad::scale(ad::mean_all(sq), static_cast<double>(pred->val.shape.back()));
}

ad::Value loss_interdist(const ad::Value& pred, const ad::Value& truth) {
    if (!shape_eq(pred->val.shape, truth->val.shape) || pred->val.shape.size() < 2)
        throw ShapeError("inter-distance loss expects matching [..., entities, coords]");
    auto dp = ad::pairwise_dist(pred);
    auto dt = ad::pairwise_dist(truth);
    auto diff = ad::sub(dp, dt);
    return ad::mean_all(ad::mul(diff, diff));
}

namespace {

struct Batch {
    Tensor x_raw;  // [B, N, D_x] augmented scene coordinates
    Tensor feat;   // [B, N, D_m]
    std::vector<std::int64_t> ids; // B*N pool indices
};

// Assembles one training batch: per item a frame is pulled, rigidly
// augmented, and given a fresh identifier assignment.
Batch make_batch(const Autoencoder& m, const nbody::TrajectoryDataset& ds,
                 const std::vector<std::pair<std::int64_t, std::int64_t>>& items,
                 std::size_t begin, std::size_t end, Rng& rng) {
    const auto B = static_cast<std::int64_t>(end - begin);
    const auto N = ds.trajectories.front().entities();
    const auto D = m.coord_dim;
    const auto Dm = m.feat_dim;
    Batch out;
    out.x_raw = Tensor({B, N, D});
    out.feat = Tensor({B, N, Dm});
    out.ids.reserve(static_cast<std::size_t>(B * N));
    const ids::IdentifierPool pool{m.cfg.pool_size};

    for (std::int64_t b = 0; b < B; ++b) {
        const auto [ti, fi] = items[begin + static_cast<std::size_t>(b)];
        const auto& traj = ds.trajectories[static_cast<std::size_t>(ti)];
        const float* x = traj.X.data.data() + fi * N * D;

        if (m.cfg.augment) {
            const auto R = random_rotation(rng, static_cast<int>(D));
            std::vector<double> t(static_cast<std::size_t>(D));
            for (auto& v : t) v = rng.uniform(-m.cfg.aug_shift, m.cfg.aug_shift);
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t i = 0; i < D; ++i) {
                    double s = t[static_cast<std::size_t>(i)];
                    for (std::int64_t j = 0; j < D; ++j)
                        s += R[static_cast<std::size_t>(i * D + j)] * x[n * D + j];
                    out.x_raw.data[static_cast<std::size_t>((b * N + n) * D + i)] =
                        static_cast<float>(s);
                }
        } else {
            std::copy_n(x, N * D, out.x_raw.data.data() + b * N * D);
        }
        std::copy_n(traj.M.data.data(), N * Dm, out.feat.data.data() + b * N * Dm);

        const auto assign = ids::sample_assignment(N, pool, rng);
        out.ids.insert(out.ids.end(), assign.begin(), assign.end());
    }
    return out;
}

void fit_standardizer(Autoencoder& m, const nbody::TrajectoryDataset& train) {
    const auto D = m.coord_dim;
    std::vector<double> mean(static_cast<std::size_t>(D), 0.0);
    std::vector<double> sq(static_cast<std::size_t>(D), 0.0);
    std::int64_t rows = 0;
    for (const auto& traj : train.trajectories) {
        const auto n = shape_numel(traj.X.shape) / D;
        for (std::int64_t r = 0; r < n; ++r)
            for (std::int64_t d = 0; d < D; ++d) {
                const double v = traj.X.data[static_cast<std::size_t>(r * D + d)];
                mean[static_cast<std::size_t>(d)] += v;
                sq[static_cast<std::size_t>(d)] += v * v;
            }
        rows += n;
    }
    if (rows == 0) throw ConfigError("cannot fit coordinate statistics on an empty dataset");
    for (std::int64_t d = 0; d < D; ++d) {
        const double mu = mean[static_cast<std::size_t>(d)] / static_cast<double>(rows);
        const double var = sq[static_cast<std::size_t>(d)] / static_cast<double>(rows) - mu * mu;
        m.x_mean.data[static_cast<std::size_t>(d)] = static_cast<float>(mu);
        m.x_std.data[static_cast<std::size_t>(d)] =
            static_cast<float>(std::sqrt(std::max(var, 0.0)));
    }
}

} // namespace

TrainResult train_first_stage(Autoencoder& m, const nbody::TrajectoryDataset& train,
                              const nbody::TrajectoryDataset& val, nn::Ema& ema) {
    const auto& cfg = m.cfg;
    validate_stage1(cfg);
    if (train.trajectories.empty() || val.trajectories.empty())
        throw ConfigError("training needs nonempty train and val splits");
    const auto& probe = train.trajectories.front();
    if (probe.coord_dim() != m.coord_dim || probe.feat_dim() != m.feat_dim)
        throw ShapeError("dataset dims do not match the model");

    fit_standardizer(m, train);

    const auto T = probe.frames();
    std::vector<std::pair<std::int64_t, std::int64_t>> items;
    items.reserve(train.trajectories.size() * static_cast<std::size_t>(T));
    for (std::int64_t ti = 0; ti < static_cast<std::int64_t>(train.trajectories.size()); ++ti)
        for (std::int64_t fi = 0; fi < T; ++fi) items.emplace_back(ti, fi);

    const auto steps_per_epoch =
        (static_cast<std::int64_t>(items.size()) + cfg.batch - 1) / cfg.batch;
    const auto total_steps = steps_per_epoch * cfg.epochs;

    Rng rng(derive_seed(cfg.seed, 1));
    nn::AdamW opt(0.9, 0.999, 1e-8, cfg.weight_decay);
    TrainResult res;
    std::int64_t global_step = 0;

    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates shuffle through the deterministic stream
        for (std::size_t i = items.size(); i > 1; --i)
            std::swap(items[i - 1], items[static_cast<std::size_t>(rng.uniform_int(i))]);

        double epoch_loss = 0.0;
        double lr = cfg.lr;
        for (std::int64_t s = 0; s < steps_per_epoch; ++s) {
            const auto begin = static_cast<std::size_t>(s * cfg.batch);
            const auto end = std::min(items.size(), begin + static_cast<std::size_t>(cfg.batch));
            auto batch = make_batch(m, train, items, begin, end, rng);
            const auto B = batch.x_raw.shape[0];
            const auto N = batch.x_raw.shape[1];

            m.params.zero_grad();
            // raw gather: each item's assignment is injective on its own, but
            // ids repeat across the batch by design
            auto u = ad::reshape(ad::embed(m.id_table, batch.ids), {B, N, cfg.id_dim});
            auto x_std_in = ad::constant(standardize_coords(m, batch.x_raw));
            auto feat_in = ad::constant(batch.feat);
            auto z = encode_batch(m, x_std_in, feat_in, u);
            auto dec = decode_batch(m, z, u);

            auto x_hat = unstandardize_coords_graph(m, dec.x_std);
            auto target = ad::constant(batch.x_raw);
            auto total = ad::scale(loss_pos(x_hat, target), cfg.w_pos);
            total = ad::add(total, ad::scale(loss_interdist(x_hat, target), cfg.w_int));
            if (cfg.w_feat > 0 && m.feat_dim > 0) {
                auto lf = ad::scale(ad::mse(dec.feat, feat_in),
                                    static_cast<double>(m.feat_dim));
                total = ad::add(total, ad::scale(lf, cfg.w_feat));
            }

            const double loss = total->val.data[0];
            if (!std::isfinite(loss))
                throw NumericError("stage-1 loss diverged at epoch " + std::to_string(epoch) +
                                   " step " + std::to_string(s));
            ad::backward(total);
            lr = nn::cosine_lr(global_step, total_steps, cfg.lr, cfg.lr_min);
            opt.step(m.params, lr);
            ema.update(m.params);
            epoch_loss += loss;
            ++global_step;
        }

        EpochStats st;
        st.epoch = epoch;
        st.train_loss = epoch_loss / static_cast<double>(steps_per_epoch);
        st.lr = lr;
        st.val_pos_error =
            reconstruction_report(m, val, derive_seed(cfg.seed, 2), 8).pos_error;
        res.curve.push_back(st);
    }

    // final report under the EMA weights, the inference default
    const auto live = m.params.snapshot();
    m.params.load(ema.shadow());
    res.val_report = reconstruction_report(m, val, derive_seed(cfg.seed, 2));
    m.params.load(live);
    return res;
}

ReconstructionReport reconstruction_report(const Autoencoder& m,
                                           const nbody::TrajectoryDataset& ds,
                                           std::uint64_t assignment_seed,
                                           std::int64_t max_trajectories) {
    if (ds.trajectories.empty()) throw ConfigError("cannot evaluate an empty dataset");
    const auto count = max_trajectories < 0
                           ? static_cast<std::int64_t>(ds.trajectories.size())
                           : std::min<std::int64_t>(max_trajectories,
                                                    static_cast<std::int64_t>(
                                                        ds.trajectories.size()));
    const ids::IdentifierPool pool{m.cfg.pool_size};
    ReconstructionReport rep;
    double dist_acc = 0.0, pos_acc = 0.0, int_acc = 0.0, feat_acc = 0.0;
    std::vector<double> sign_hits(static_cast<std::size_t>(m.feat_dim), 0.0);
    std::int64_t frames_total = 0, rows_total = 0;

    for (std::int64_t ti = 0; ti < count; ++ti) {
        const auto& traj = ds.trajectories[static_cast<std::size_t>(ti)];
        const auto T = traj.frames(), N = traj.entities(), D = traj.coord_dim();

        // one assignment per trajectory, fixed across its frames
        Rng arng(derive_seed(assignment_seed, static_cast<std::uint64_t>(ti)));
        const auto assign = ids::sample_assignment(N, pool, arng);
        Tensor u_rows = id_embeddings(m, assign); // [N, D_u]
        Tensor u({T, N, m.cfg.id_dim});
        for (std::int64_t f = 0; f < T; ++f)
            std::copy_n(u_rows.data.data(), N * m.cfg.id_dim,
                        u.data.data() + f * N * m.cfg.id_dim);
        Tensor feat({T, N, m.feat_dim});
        for (std::int64_t f = 0; f < T; ++f)
            std::copy_n(traj.M.data.data(), N * m.feat_dim,
                        feat.data.data() + f * N * m.feat_dim);

        Tensor x = traj.X; // [T, N, D] as a batch of frames
        auto z = encode_batch(m, ad::constant(standardize_coords(m, x)), ad::constant(feat),
                              ad::constant(u));
        auto dec = decode_batch(m, z, ad::constant(u));
        auto x_hat = unstandardize_coords_graph(m, dec.x_std);

        pos_acc += loss_pos(x_hat, ad::constant(x))->val.data[0] * static_cast<double>(T);
        int_acc += loss_interdist(x_hat, ad::constant(x))->val.data[0] * static_cast<double>(T);
        if (m.feat_dim > 0)
            feat_acc += ad::mse(dec.feat, ad::constant(feat))->val.data[0] *
                        static_cast<double>(m.feat_dim) * static_cast<double>(T);

        for (std::int64_t f = 0; f < T; ++f)
            for (std::int64_t n = 0; n < N; ++n) {
                double r2 = 0.0;
                for (std::int64_t d = 0; d < D; ++d) {
                    const auto i = static_cast<std::size_t>((f * N + n) * D + d);
                    const double diff = static_cast<double>(x.data[i]) - x_hat->val.data[i];
                    r2 += diff * diff;
                }
                dist_acc += std::sqrt(r2);
                for (std::int64_t d = 0; d < m.feat_dim; ++d) {
                    const auto i = static_cast<std::size_t>((f * N + n) * m.feat_dim + d);
                    const bool same = (feat.data[i] >= 0) == (dec.feat->val.data[i] >= 0);
                    sign_hits[static_cast<std::size_t>(d)] += same ? 1.0 : 0.0;
                }
                ++rows_total;
            }
        frames_total += T;
    }

    rep.pos_error = dist_acc / static_cast<double>(rows_total);
    rep.loss_pos = pos_acc / static_cast<double>(frames_total);
    rep.loss_int = int_acc / static_cast<double>(frames_total);
    rep.loss_feat = feat_acc / static_cast<double>(frames_total);
    for (auto h : sign_hits)
        rep.feature_sign_accuracy.push_back(h / static_cast<double>(rows_total));
    return rep;
}

void save_stage1(const Autoencoder& m, const nn::Ema& ema, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::map<std::string, Tensor> blob = m.params.snapshot();
    for (const auto& [k, v] : ema.shadow()) blob["ema." + k] = v;
    blob["stats.x_mean"] = m.x_mean;
    blob["stats.x_std"] = m.x_std;
    save_tensors(dir + "/weights.bin", blob);

    json side;
    side["kind"] = "entity-latent-autoencoder";
    side["config"] = json::parse(stage1_config_to_json(m.cfg));
    side["coord_dim"] = m.coord_dim;
    side["feat_dim"] = m.feat_dim;
    side["param_count"] = m.params.param_count();
    side["weights_fingerprint"] = hash_hex(m.params.fingerprint());
    side["ema_beta"] = ema.beta();
    write_json_file(dir + "/config.json", side.dump(2));
}

Autoencoder load_stage1(const std::string& dir, bool use_ema) {
    json side;
    try {
        side = json::parse(read_text_file(dir + "/config.json"));
    } catch (const json::exception& e) {
        throw IoError("corrupt autoencoder sidecar in " + dir + ": " + e.what());
    }
    Stage1Config cfg;
    std::int64_t coord_dim = 0, feat_dim = 0;
    try {
        if (side.at("kind").get<std::string>() != "entity-latent-autoencoder")
            throw IoError(dir + " does not hold a first-stage checkpoint");
        cfg = stage1_config_from_json(side.at("config").dump());
        coord_dim = side.at("coord_dim").get<std::int64_t>();
        feat_dim = side.at("feat_dim").get<std::int64_t>();
    } catch (const json::exception& e) {
        throw IoError("autoencoder sidecar in " + dir + " missing field: " + e.what());
    }

    Rng scratch(0); // initial weights are immediately overwritten
    Autoencoder m = build_autoencoder(cfg, coord_dim, feat_dim, scratch);

    const auto blob = load_tensors(dir + "/weights.bin");
    std::map<std::string, Tensor> live, shadow;
    for (const auto& [k, v] : blob) {
        if (k.rfind("ema.", 0) == 0)
            shadow[k.substr(4)] = v;
        else if (k.rfind("stats.", 0) != 0)
            live[k] = v;
    }
    auto stat = blob.find("stats.x_mean");
    if (stat == blob.end()) throw IoError("checkpoint lacks coordinate statistics");
    m.x_mean = stat->second;
    m.x_std = blob.at("stats.x_std");

    if (use_ema) {
        if (shadow.size() != live.size())
            throw IoError("checkpoint lacks a complete set of ema shadow weights");
        m.params.load(shadow);
    } else {
        m.params.load(live);
    }
    return m;
}

} // namespace latflow::ae
