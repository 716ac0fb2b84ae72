#pragma once

#include <cstdint>
#include <string>

#include "latflow/flow_model.hpp"
#include "latflow/latent_autoencoder.hpp"
#include "latflow/nbody.hpp"
#include "latflow/sampler.hpp"

namespace latflow::cfg {

/// One experiment end to end: dataset, both training stages, and inference.
/// The top-level seed drives dataset generation; each stage carries its own
/// training seed inside its section.
struct RunConfig {
    std::uint64_t seed = 1;
    nbody::ScenarioConfig scenario;
    nbody::SplitCounts counts{500, 100, 100}; // desk-scale default
    ae::Stage1Config first_stage;
    flow::LatentFlowConfig second_stage;
    sampler::SamplerConfig inference;
};

RunConfig default_run_config();

/// Cross-section checks on top of the per-section validators: the identifier
/// pool must cover the entity count, and the conditioning horizon must leave
/// frames to predict.
void validate_run_config(const RunConfig& rc);

std::string run_config_to_json(const RunConfig& rc);

/// Parses a possibly partial document: given keys override the defaults,
/// section by section. Unknown keys anywhere in the tree and type mismatches
/// are ConfigErrors, so typos cannot silently fall back to a default.
RunConfig run_config_from_json(const std::string& text);

/// run_config_from_json over a file. IoError when unreadable.
RunConfig load_run_config(const std::string& path);

} // namespace latflow::cfg
