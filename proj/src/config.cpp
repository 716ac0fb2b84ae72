#include "latflow/run_config.hpp"

#include <nlohmann/json.hpp>

#include "latflow/checkpoint.hpp"
#include "latflow/error.hpp"

namespace latflow::cfg {

using nlohmann::json;

namespace {

json sampler_to_json(const sampler::SamplerConfig& c) {
    return json{{"integrator", sampler::integrator_to_string(c.integrator)},
                {"steps", c.steps},
                {"rtol", c.rtol},
                {"atol", c.atol},
                {"k_samples", c.k_samples},
                {"eps_clamp", c.eps_clamp},
                {"seed", c.seed}};
}

sampler::SamplerConfig sampler_from_json(const json& j) {
    sampler::SamplerConfig c;
    try {
        c.integrator = sampler::integrator_from_string(j.at("integrator").get<std::string>());
        c.steps = j.at("steps").get<std::int64_t>();
        c.rtol = j.at("rtol").get<double>();
        c.atol = j.at("atol").get<double>();
        c.k_samples = j.at("k_samples").get<std::int64_t>();
        c.eps_clamp = j.at("eps_clamp").get<double>();
        c.seed = j.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("inference section missing field: ") + e.what());
    }
    sampler::validate_sampler(c);
    return c;
}

// Every key of doc must exist in schema with a compatible kind; recurses into
// sub-objects. The schema is the serialized default config, so the two stay
// in sync by construction.
void reject_unknown(const json& doc, const json& schema, const std::string& path) {
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        const std::string where = path.empty() ? it.key() : path + "." + it.key();
        if (!schema.contains(it.key())) throw ConfigError("unknown config key: " + where);
        const json& ref = schema.at(it.key());
        const bool both_numbers = it.value().is_number() && ref.is_number();
        if (!both_numbers && it.value().type() != ref.type())
            throw ConfigError("wrong type for config key: " + where);
        if (it.value().is_object()) reject_unknown(it.value(), ref, where);
    }
}

void deep_merge(json& base, const json& over) {
    for (auto it = over.begin(); it != over.end(); ++it) {
        if (it.value().is_object() && base.contains(it.key()))
            deep_merge(base.at(it.key()), it.value());
        else
            base[it.key()] = it.value();
    }
}

} // namespace

RunConfig default_run_config() {
    RunConfig rc;
    rc.inference.k_samples = 5; // the evaluation protocol draws five forecasts
    return rc;
}

void validate_run_config(const RunConfig& rc) {
    nbody::validate_config(rc.scenario);
    ae::validate_stage1(rc.first_stage);
    flow::validate_flow(rc.second_stage);
    sampler::validate_sampler(rc.inference);
    if (rc.counts.train < 1 || rc.counts.val < 1 || rc.counts.test < 1)
        throw ConfigError("every dataset split needs at least one trajectory");
    if (rc.first_stage.pool_size < rc.scenario.entities)
        throw ConfigError("identifier pool (" + std::to_string(rc.first_stage.pool_size) +
                          ") is smaller than the entity count (" +
                          std::to_string(rc.scenario.entities) + ")");
    if (rc.second_stage.condition_frames >= rc.scenario.frames)
        throw ConfigError("conditioning on " + std::to_string(rc.second_stage.condition_frames) +
                          " frames leaves nothing to predict in " +
                          std::to_string(rc.scenario.frames) + "-frame trajectories");
}

std::string run_config_to_json(const RunConfig& rc) {
    json j;
    j["seed"] = rc.seed;
    j["data"] = {{"scenario", json::parse(nbody::config_to_json(rc.scenario))},
                 {"counts",
                  {{"train", rc.counts.train}, {"val", rc.counts.val}, {"test", rc.counts.test}}}};
    j["first_stage"] = json::parse(ae::stage1_config_to_json(rc.first_stage));
    j["second_stage"] = {{"model", json::parse(flow::flow_config_to_json(rc.second_stage))},
                         {"inference", sampler_to_json(rc.inference)}};
    return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text) {
    json user;
    try {
        user = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad run config json: ") + e.what());
    }
    if (!user.is_object()) throw ConfigError("run config must be a json object");

    json merged = json::parse(run_config_to_json(default_run_config()));
    reject_unknown(user, merged, "");
    deep_merge(merged, user);

    RunConfig rc;
    try {
        rc.seed = merged.at("seed").get<std::uint64_t>();
        rc.scenario = nbody::config_from_json(merged.at("data").at("scenario").dump());
        const json& counts = merged.at("data").at("counts");
        rc.counts.train = counts.at("train").get<std::int64_t>();
        rc.counts.val = counts.at("val").get<std::int64_t>();
        rc.counts.test = counts.at("test").get<std::int64_t>();
        rc.first_stage = ae::stage1_config_from_json(merged.at("first_stage").dump());
        rc.second_stage = flow::flow_config_from_json(merged.at("second_stage").at("model").dump());
        rc.inference = sampler_from_json(merged.at("second_stage").at("inference"));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("run config missing field: ") + e.what());
    }
    validate_run_config(rc);
    return rc;
}

RunConfig load_run_config(const std::string& path) {
    return run_config_from_json(read_text_file(path));
}

} // namespace latflow::cfg
