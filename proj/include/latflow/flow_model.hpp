#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latflow/autodiff.hpp"
#include "latflow/interpolants.hpp"
#include "latflow/latent_autoencoder.hpp"
#include "latflow/nbody.hpp"
#include "latflow/nn.hpp"
#include "latflow/tensor.hpp"

namespace latflow::flow {

/// Network and training settings for the latent flow approximator.
struct LatentFlowConfig {
    std::int64_t hidden = 256; // trunk width H
    std::int64_t layers = 6;
    std::int64_t heads = 4;   // must divide hidden
    std::int64_t ffn_mult = 4;
    double rope_base = 10000.0;
    bool rope_latent = true; // rotate positions on the latent axis too
    Schedule schedule = Schedule::Linear;
    double eps_clamp = 1e-4; // sampling-time clamp away from tau = 0, 1
    double w_pos_aux = 0.0;  // decoded-position auxiliary loss
    double w_int_aux = 0.0;  // decoded inter-distance auxiliary loss
    std::int64_t condition_frames = 10; // T_o
    // training
    double lr = 1e-3;
    double lr_min = 1e-7;
    double weight_decay = 0.0;
    std::int64_t epochs = 100;
    std::int64_t batch = 64;
    double ema_beta = 0.999;
    std::uint64_t seed = 1;
};

void validate_flow(const LatentFlowConfig& cfg);

std::string flow_config_to_json(const LatentFlowConfig& cfg);
LatentFlowConfig flow_config_from_json(const std::string& text);

/// Observed-frame conditioning for one trajectory. C carries the encoded
/// latents of the known frames and exact zeros everywhere else; flags[t] is
/// 1 where frame t is known and 0 where it is masked.
struct ConditioningTensor {
    Tensor C;                          // [T, L, D_z]
    std::vector<std::int64_t> flags;   // T entries in {0, 1}
};

/// Places z_obs into frames 0..T_o-1 of a T-frame conditioning tensor and
/// marks the remaining frames as masked. z_obs is [T_o, L, D_z].
ConditioningTensor build_conditioning(const Tensor& z_obs, std::int64_t total_frames);

/// One ParallelMLP residual sublayer: a single modulated normalization feeds
/// an attention branch and an MLP branch whose sum is gated back into the
/// stream. The modulation head starts at zero, so the sublayer begins as the
/// identity; the normalized scale enters as (1 + s) to keep the branches
/// alive at that starting point.
struct Sublayer {
    nn::Linear q, k, v, o; // attention branch
    nn::Linear ff1, ff2;   // MLP branch
    nn::Linear mod;        // SiLU(tau_emb) -> [3H]: scale, shift, gate
};

/// One trunk layer: sublayer attending over the latent axis (frames absorbed
/// into the batch), then one attending over the temporal axis (latents
/// absorbed into the batch).
struct FlowLayer {
    Sublayer lat, tmp;
};

/// Final residual head, gated and modulated like the sublayers but with a
/// plain MLP in place of the branch pair.
struct FinalHead {
    nn::Linear mod; // SiLU(tau_emb) -> [3H]
    nn::Linear ff1, ff2;
};

/// Data-prediction network over latent trajectories. Input and output live
/// in the frozen autoencoder's latent space [T, L, D_z].
struct FlowModel {
    LatentFlowConfig cfg;
    std::int64_t latents = 0;    // L of the paired first stage
    std::int64_t latent_dim = 0; // D_z of the paired first stage
    nn::ParamStore params;
    nn::Linear in_proj;   // D_z -> H, interpolated latents
    nn::Linear cond_proj; // D_z -> H, conditioning latents
    ad::Value mask_emb;   // [2, H], row 0 = masked frame, row 1 = known frame
    nn::Linear t0, t1;    // sinusoidal tau features -> tau embedding
    std::vector<FlowLayer> layers;
    FinalHead head;
    nn::Linear out_proj; // H -> D_z
    // fingerprint of the first-stage weights this model was trained against;
    // empty until training or checkpoint load
    std::string stage1_hash;
};

FlowModel build_flow_model(const LatentFlowConfig& cfg, std::int64_t latents,
                           std::int64_t latent_dim, Rng& rng);

/// Sinusoidal tau features [B, hidden], fixed function of the time values.
Tensor tau_features(const std::vector<double>& taus, std::int64_t hidden);

/// Batched forward pass building a gradient graph. o_inter and C are
/// [B, T, L, D_z], taus has B entries, flags has T entries shared by the
/// whole batch. Returns the data prediction [B, T, L, D_z].
ad::Value forward_batch(const FlowModel& m, const ad::Value& o_inter,
                        const std::vector<double>& taus, const ad::Value& C,
                        const std::vector<std::int64_t>& flags);

/// Single-trajectory inference wrapper: o_inter [T, L, D_z] plus one tau and
/// the conditioning tensor. Validates shapes and finiteness.
Tensor forward_data_prediction(const FlowModel& m, const Tensor& o_inter, double tau,
                               const ConditioningTensor& cond);

struct FlowEpochStats {
    std::int64_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0; // data-prediction MSE on held-out trajectories
    double lr = 0.0;
};

struct FlowTrainResult {
    std::vector<FlowEpochStats> curve;
};

/// Trains the approximator in place against a frozen first stage. Per step:
/// encode every frame of each sampled trajectory, interpolate all frames
/// between noise and the clean latents at a per-item uniform tau, and
/// regress the clean latents; conditioning enters only through C. The
/// first-stage weights are checksummed before and after. Aborts with
/// NumericError on a non-finite loss.
FlowTrainResult train_second_stage(FlowModel& m, const ae::Autoencoder& stage1,
                                   const nbody::TrajectoryDataset& train,
                                   const nbody::TrajectoryDataset& val, nn::Ema& ema);

/// Directory checkpoint: weights.bin (live + ema.*) and config.json sidecar
/// (architecture, latent dims, the paired first-stage fingerprint).
void save_stage2(const FlowModel& m, const nn::Ema& ema, const std::string& dir);

/// Rebuilds the model from the sidecar. use_ema = true loads the shadow
/// weights (the inference default); false restores the live weights.
FlowModel load_stage2(const std::string& dir, bool use_ema);

} // namespace latflow::flow
