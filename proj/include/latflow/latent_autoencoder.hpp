#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "latflow/autodiff.hpp"
#include "latflow/identifiers.hpp"
#include "latflow/nbody.hpp"
#include "latflow/nn.hpp"
#include "latflow/tensor.hpp"
#include "latflow/trajectory.hpp"

namespace latflow::ae {

struct EncoderConfig {
    std::int64_t latents = 16;    // L
    std::int64_t latent_dim = 32; // D_z
    std::int64_t heads = 2;
    std::int64_t head_dim = 16;
    std::int64_t layers = 1;
    std::int64_t ffn_mult = 4;
};

struct DecoderConfig {
    std::int64_t heads = 2;
    std::int64_t head_dim = 16;
    std::int64_t layers = 1;
    std::int64_t ffn_mult = 4;
};

struct Stage1Config {
    EncoderConfig encoder;
    DecoderConfig decoder;
    std::int64_t id_dim = 128;   // D_u
    std::int64_t pool_size = 10; // identifier pool, must be >= entity count
    double w_pos = 1.0;
    double w_int = 1.0;
    double w_feat = 0.0; // per-entity feature reconstruction, off by default
    double lr = 1e-3;
    double lr_min = 1e-7;
    double weight_decay = 0.0;
    std::int64_t epochs = 200;
    std::int64_t batch = 128;
    double ema_beta = 0.999;
    bool augment = true;
    double aug_shift = 1.0;
    std::uint64_t seed = 1;
};

void validate_stage1(const Stage1Config& cfg);

std::string stage1_config_to_json(const Stage1Config& cfg);
Stage1Config stage1_config_from_json(const std::string& text);

/// One pre-norm transformer block: cross-attention into an external key/value
/// source plus a feed-forward sublayer, both residual.
struct AttnBlock {
    nn::Linear q, k, v, o;
    nn::Linear ff1, ff2;
};

/// One decoder output family: its own query projection, cross-attention
/// stack over the latent tokens, and output head.
struct DecoderHead {
    nn::Linear in;
    std::vector<AttnBlock> blocks;
    nn::Linear out;
};

/// Frame autoencoder over entity sets. Encoding compresses N entity tokens
/// [x, m, u] into L latent tokens via cross-attention; decoding retrieves
/// per-entity states by querying with the same identifier embeddings.
struct Autoencoder {
    Stage1Config cfg;
    std::int64_t coord_dim = 0;
    std::int64_t feat_dim = 0;
    nn::ParamStore params;
    ad::Value z_init;   // [L, D_z] learned latent queries
    ad::Value id_table; // [pool_size, id_dim]
    std::vector<AttnBlock> enc_blocks;
    DecoderHead dec_pos;
    DecoderHead dec_feat;
    // training-set coordinate statistics; inputs are standardized with these
    // before encoding and predictions are mapped back afterwards
    Tensor x_mean, x_std; // [coord_dim]
};

Autoencoder build_autoencoder(const Stage1Config& cfg, std::int64_t coord_dim,
                              std::int64_t feat_dim, Rng& rng);

// ----- graph-building forward passes (batched, standardized coordinates) ---

/// x_std [B,N,D_x], feat [B,N,D_m], u [B,N,D_u] -> latents [B,L,D_z].
/// Output rows are layer-normalized without learnable affine.
ad::Value encode_batch(const Autoencoder& m, const ad::Value& x_std, const ad::Value& feat,
                       const ad::Value& u);

struct Decoded {
    ad::Value x_std; // [B,N,D_x]
    ad::Value feat;  // [B,N,D_m]
};

/// z [B,L,D_z], u [B,N,D_u] -> per-entity predictions. Row n of the output
/// depends only on z and row n of u.
Decoded decode_batch(const Autoencoder& m, const ad::Value& z, const ad::Value& u);

// ----- single-frame convenience in raw scene units (inference) -----

/// X [N,D_x], M [N,D_m], U [N,D_u] -> Z [L,D_z].
Tensor encode_frame(const Autoencoder& m, const Tensor& X, const Tensor& M, const Tensor& U);

/// Z [L,D_z], U [N,D_u] -> (X_hat [N,D_x], M_hat [N,D_m]).
std::pair<Tensor, Tensor> decode_frame(const Autoencoder& m, const Tensor& Z, const Tensor& U);

/// Identifier embeddings for an assignment, as a plain tensor [N, id_dim].
Tensor id_embeddings(const Autoencoder& m, const std::vector<std::int64_t>& assignment);

// ----- coordinate standardization (training-set statistics) -----

/// (x - mean) / std per coordinate, over the last axis. The inverse map and
/// a graph-building inverse for losses that reach through the decoder.
Tensor standardize_coords(const Autoencoder& m, const Tensor& X);
Tensor unstandardize_coords(const Autoencoder& m, const Tensor& X);
ad::Value unstandardize_coords_graph(const Autoencoder& m, const ad::Value& x_std);

// ----- losses -----

/// Mean over leading axes of the squared Euclidean norm per entity:
/// (1/N) sum_i ||pred_i - truth_i||^2 for [N,D], batch-averaged otherwise.
ad::Value loss_pos(const ad::Value& pred, const ad::Value& truth);

/// Mean squared discrepancy of the pairwise-distance matrices, normalized
/// by N^2. Invariant under rigid motion of either argument.
ad::Value loss_interdist(const ad::Value& pred, const ad::Value& truth);

// Discrete-feature cross entropy is ad::cross_entropy_mean.

// ----- training, evaluation, checkpointing -----

struct ReconstructionReport {
    double pos_error = 0.0; // mean Euclidean distance, scene units
    double loss_pos = 0.0;
    double loss_int = 0.0;
    double loss_feat = 0.0;
    std::vector<double> feature_sign_accuracy; // for +-1 style features
};

struct EpochStats {
    std::int64_t epoch = 0;
    double train_loss = 0.0;
    double val_pos_error = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> curve;
    ReconstructionReport val_report; // EMA weights, fixed assignment
};

/// Trains the autoencoder in place. Identifier assignments are resampled per
/// item per step; rigid augmentation per item when enabled. Aborts with
/// NumericError if the loss stops being finite.
TrainResult train_first_stage(Autoencoder& m, const nbody::TrajectoryDataset& train,
                              const nbody::TrajectoryDataset& val, nn::Ema& ema);

/// Mean reconstruction quality over a dataset. One identifier assignment is
/// drawn per trajectory (from assignment_seed) and held fixed across its
/// frames. max_trajectories < 0 means the whole dataset.
ReconstructionReport reconstruction_report(const Autoencoder& m,
                                           const nbody::TrajectoryDataset& ds,
                                           std::uint64_t assignment_seed,
                                           std::int64_t max_trajectories = -1);

/// Directory checkpoint: weights.bin (live + ema.* + stats.*) and
/// config.json sidecar (architecture, dims, training settings).
void save_stage1(const Autoencoder& m, const nn::Ema& ema, const std::string& dir);

/// Rebuilds the model from the sidecar. use_ema = true loads the shadow
/// weights (the inference default); false restores the live weights.
Autoencoder load_stage1(const std::string& dir, bool use_ema);

} // namespace latflow::ae
