#include "latflow/pipeline.hpp"

#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "latflow/checkpoint.hpp"
#include "latflow/error.hpp"
#include "latflow/evaluation.hpp"
#include "latflow/identifiers.hpp"
#include "latflow/run_config.hpp"

namespace latflow::pipeline {

using nlohmann::json;

namespace fs = std::filesystem;

std::string resolve_out(const CommonOpts& common, const std::string& out) {
    if (out.empty()) throw ConfigError("an output directory is required");
    if (common.out_root.empty() || fs::path(out).is_absolute()) return out;
    return common.out_root + "/" + out;
}

namespace {

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
}

std::string now_utc() {
    const std::time_t t = std::time(nullptr);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_manifest(const std::string& dir, json body, const CommonOpts& common) {
    if (!common.no_timestamp) body["written_at"] = now_utc();
    write_json_file(dir + "/manifest.json", body.dump(2));
}

nbody::SplitCounts parse_counts(const std::string& text) {
    long long train = 0, val = 0, test = 0;
    char extra = 0;
    const int got = std::sscanf(text.c_str(), "%lld,%lld,%lld%c", &train, &val, &test, &extra);
    if (got != 3 || train < 1 || val < 1 || test < 1)
        throw ConfigError("counts must be three positive integers, got '" + text + "'");
    return {train, val, test};
}

nbody::TrajectoryDataset load_split(const std::string& root, const std::string& split) {
    return nbody::load_dataset(root + "/" + split);
}

// a dataset root with a test/ subdirectory, or a split directory itself
nbody::TrajectoryDataset load_test_split(const std::string& data) {
    if (fs::exists(data + "/test/meta.json")) return load_split(data, "test");
    return nbody::load_dataset(data);
}

cfg::RunConfig resolve_config(const std::string& path) {
    return path.empty() ? cfg::default_run_config() : cfg::load_run_config(path);
}

// rows already written by an earlier run, for resumed epoch numbering
std::int64_t csv_row_count(const std::string& path) {
    std::ifstream in(path);
    if (!in.good()) return 0;
    std::string line;
    std::int64_t rows = -1; // skip the header
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    return std::max<std::int64_t>(rows, 0);
}

void write_curve_csv(const std::string& path, const std::string& header,
                     const std::vector<std::array<double, 4>>& rows) {
    std::string text = header;
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g\n",
                      static_cast<long long>(r[0]), r[1], r[2], r[3]);
        text += buf;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << text;
}

Trajectory clip_frames(const Trajectory& traj, std::int64_t frames) {
    Trajectory out;
    out.X = Tensor({frames, traj.entities(), traj.coord_dim()});
    std::copy_n(traj.X.data.begin(), out.X.data.size(), out.X.data.begin());
    out.M = traj.M;
    return out;
}

} // namespace

void cmd_generate(const GenerateOpts& opts, const CommonOpts& common) {
    const auto scenario = nbody::scenario_from_string(opts.scenario);
    const auto counts = parse_counts(opts.counts);
    auto scfg = nbody::default_config(scenario);
    if (opts.entities > 0) scfg.entities = opts.entities;
    if (opts.frames > 0) scfg.frames = opts.frames;
    nbody::validate_config(scfg);

    const auto out = resolve_out(common, opts.out);
    ensure_dir(out);
    const auto splits = nbody::generate_dataset(scfg, counts, opts.seed);
    for (const auto& ds : splits) nbody::save_dataset(ds, out + "/" + ds.split);

    json manifest;
    manifest["command"] = "generate";
    manifest["scenario"] = opts.scenario;
    manifest["counts"] = {{"train", counts.train}, {"val", counts.val}, {"test", counts.test}};
    manifest["seed"] = opts.seed;
    manifest["config"] = json::parse(nbody::config_to_json(scfg));
    manifest["desk_scale"] = splits[0].desk_scale;
    manifest["splits"] = {{"train", out + "/train"}, {"val", out + "/val"},
                          {"test", out + "/test"}};
    write_manifest(out, manifest, common);
    std::cout << manifest.dump(2) << "\n";
}

void cmd_train_stage1(const TrainStage1Opts& opts, const CommonOpts& common) {
    if (!opts.resume.empty() && !opts.config.empty())
        throw ConfigError("--resume continues with the checkpoint's own config; "
                          "pass either --config or --resume");
    if (common.print_config) {
        std::cout << cfg::run_config_to_json(resolve_config(opts.config)) << "\n";
        return;
    }

    const auto out = resolve_out(common, opts.out);
    const auto train = load_split(opts.data, "train");
    const auto val = load_split(opts.data, "val");
    if (train.trajectories.empty()) throw ConfigError("train split is empty");
    const auto coord = train.trajectories[0].coord_dim();
    const auto feat = train.trajectories[0].feat_dim();

    ae::Autoencoder m;
    std::int64_t epoch_offset = 0;
    if (!opts.resume.empty()) {
        m = ae::load_stage1(opts.resume, false);
        epoch_offset = csv_row_count(opts.resume + "/curve.csv");
    } else {
        const auto rc = resolve_config(opts.config);
        Rng rng(rc.first_stage.seed);
        m = ae::build_autoencoder(rc.first_stage, coord, feat, rng);
    }

    nn::Ema ema(m.params, m.cfg.ema_beta);
    const auto res = ae::train_first_stage(m, train, val, ema);

    ensure_dir(out);
    ae::save_stage1(m, ema, out);
    std::vector<std::array<double, 4>> rows;
    for (const auto& st : res.curve)
        rows.push_back({static_cast<double>(st.epoch + epoch_offset), st.train_loss,
                        st.val_pos_error, st.lr});
    write_curve_csv(out + "/curve.csv", "epoch,train_loss,val_pos_error,lr\n", rows);

    json manifest;
    manifest["command"] = "train-stage1";
    manifest["data"] = opts.data;
    manifest["config"] = json::parse(ae::stage1_config_to_json(m.cfg));
    manifest["epochs_run"] = res.curve.size();
    manifest["epoch_offset"] = epoch_offset;
    manifest["weights_fingerprint"] = hash_hex(m.params.fingerprint());
    manifest["val"] = {{"pos_error", res.val_report.pos_error},
                       {"loss_pos", res.val_report.loss_pos},
                       {"loss_int", res.val_report.loss_int}};
    write_manifest(out, manifest, common);
    std::cout << "stage-1 checkpoint written to " << out << " (val pos error "
              << res.val_report.pos_error << ")\n";
}

void cmd_train_stage2(const TrainStage2Opts& opts, const CommonOpts& common) {
    const auto rc = resolve_config(opts.config);
    if (common.print_config) {
        std::cout << cfg::run_config_to_json(rc) << "\n";
        return;
    }
    if (opts.stage1.empty()) throw ConfigError("train-stage2 needs --stage1");

    const auto out = resolve_out(common, opts.out);
    const auto s1 = ae::load_stage1(opts.stage1, true);
    const auto train = load_split(opts.data, "train");
    const auto val = load_split(opts.data, "val");

    Rng rng(rc.second_stage.seed);
    auto m = flow::build_flow_model(rc.second_stage, s1.cfg.encoder.latents,
                                    s1.cfg.encoder.latent_dim, rng);
    nn::Ema ema(m.params, m.cfg.ema_beta);
    const auto res = flow::train_second_stage(m, s1, train, val, ema);

    ensure_dir(out);
    flow::save_stage2(m, ema, out);
    std::vector<std::array<double, 4>> rows;
    for (const auto& st : res.curve)
        rows.push_back({static_cast<double>(st.epoch), st.train_loss, st.val_loss, st.lr});
    write_curve_csv(out + "/curve.csv", "epoch,train_loss,val_loss,lr\n", rows);

    // embed the frozen first stage so sampling needs only this directory
    std::error_code ec;
    fs::create_directories(out + "/stage1", ec);
    fs::copy(opts.stage1, out + "/stage1",
             fs::copy_options::recursive | fs::copy_options::overwrite_existing, ec);
    if (ec) throw IoError("cannot copy the first-stage checkpoint: " + ec.message());

    json manifest;
    manifest["command"] = "train-stage2";
    manifest["data"] = opts.data;
    manifest["stage1"] = opts.stage1;
    manifest["stage1_fingerprint"] = m.stage1_hash;
    manifest["config"] = json::parse(flow::flow_config_to_json(m.cfg));
    manifest["epochs_run"] = res.curve.size();
    manifest["weights_fingerprint"] = hash_hex(m.params.fingerprint());
    manifest["val_loss"] = res.curve.empty() ? 0.0 : res.curve.back().val_loss;
    write_manifest(out, manifest, common);
    std::cout << "stage-2 checkpoint written to " << out << " (val loss "
              << (res.curve.empty() ? 0.0 : res.curve.back().val_loss) << ")\n";
}

namespace {

struct LoadedStages {
    ae::Autoencoder s1;
    flow::FlowModel s2;
};

LoadedStages load_stages(const std::string& stage2, const std::string& stage1) {
    LoadedStages out{ae::load_stage1(stage1.empty() ? stage2 + "/stage1" : stage1, true),
                     flow::load_stage2(stage2, true)};
    return out;
}

} // namespace

void cmd_sample(const SampleOpts& opts, const CommonOpts& common) {
    const auto out = resolve_out(common, opts.out);
    const auto stages = load_stages(opts.stage2, opts.stage1);
    const auto ds = nbody::load_dataset(opts.input);
    if (opts.traj < 0 || opts.traj >= static_cast<std::int64_t>(ds.trajectories.size()))
        throw ConfigError("trajectory index " + std::to_string(opts.traj) +
                          " outside the split of " + std::to_string(ds.trajectories.size()));
    const auto& full = ds.trajectories[static_cast<std::size_t>(opts.traj)];

    const auto observed = opts.observed > 0 ? opts.observed : stages.s2.cfg.condition_frames;
    const auto frames = opts.frames > 0 ? opts.frames : full.frames();
    if (observed >= full.frames())
        throw ConfigError("cannot observe " + std::to_string(observed) + " of " +
                          std::to_string(full.frames()) + " frames");
    if (frames <= observed)
        throw ConfigError("--frames must exceed the observed span");
    if (opts.k < 1) throw ConfigError("--k must be positive");

    sampler::SamplerConfig scfg;
    scfg.integrator = sampler::integrator_from_string(opts.integrator);
    scfg.steps = opts.steps;
    scfg.k_samples = opts.k;
    scfg.eps_clamp = stages.s2.cfg.eps_clamp;
    scfg.seed = opts.seed;

    Rng assign_rng(derive_seed(opts.seed, 1));
    const ids::IdentifierPool pool{stages.s1.cfg.pool_size};
    const auto assignment = ids::sample_assignment(full.entities(), pool, assign_rng);
    const Trajectory obs = clip_frames(full, observed);

    const auto draws = sampler::sample_k(stages.s2, stages.s1, obs, assignment, frames, scfg);

    ensure_dir(out);
    std::map<std::string, Tensor> blob;
    blob["observed.X"] = obs.X;
    blob["observed.M"] = obs.M;
    blob["truth.X"] = full.X;
    std::int64_t nfe_total = 0;
    for (std::size_t j = 0; j < draws.size(); ++j) {
        blob["draw" + std::to_string(j) + ".X"] = draws[j].predicted.X;
        nfe_total += draws[j].nfe;
    }
    save_tensors(out + "/forecast.bin", blob);

    json manifest;
    manifest["command"] = "sample";
    manifest["stage2"] = opts.stage2;
    manifest["input"] = opts.input;
    manifest["traj"] = opts.traj;
    manifest["observed"] = observed;
    manifest["frames"] = frames;
    manifest["k"] = opts.k;
    manifest["integrator"] = opts.integrator;
    manifest["steps"] = opts.steps;
    manifest["seed"] = opts.seed;
    manifest["nfe"] = draws.empty() ? 0 : draws[0].nfe;
    manifest["nfe_total"] = nfe_total;
    write_manifest(out, manifest, common);
    std::cout << manifest.dump(2) << "\n";
}

void cmd_evaluate(const EvaluateOpts& opts, const CommonOpts& common) {
    const auto out = resolve_out(common, opts.out);
    const auto stages = load_stages(opts.stage2, opts.stage1);
    const auto ds = load_test_split(opts.data);

    eval::EvalProtocol p;
    p.k = opts.k;
    p.condition_frames = stages.s2.cfg.condition_frames;
    p.integrator = sampler::integrator_from_string(opts.integrator);
    p.steps = opts.steps;
    p.eps_clamp = stages.s2.cfg.eps_clamp;
    p.max_trajectories = opts.max_traj;
    p.keep_forecasts = opts.keep;
    p.seed = opts.seed;

    const auto res = eval::evaluate_model(stages.s2, stages.s1, ds, p);
    const auto scenario = nbody::scenario_to_string(ds.config.scenario);

    ensure_dir(out);
    json report = json::parse(eval::report_json(
        res.report, scenario, p, hash_hex(stages.s1.params.fingerprint()),
        hash_hex(stages.s2.params.fingerprint())));
    report["nfe"] = res.nfe;
    report["seed"] = opts.seed;
    json rows = json::array();
    for (const auto& r : res.report.rows)
        rows.push_back({{"traj_id", r.traj_id},
                        {"method", r.method},
                        {"ade", r.ade},
                        {"fde", r.fde},
                        {"min_ade", r.min_ade},
                        {"min_fde", r.min_fde}});
    report["rows"] = rows;
    write_json_file(out + "/report.json", report.dump(2));

    std::map<std::string, Tensor> blob;
    for (const auto& tf : res.forecasts) {
        const auto base = "t" + std::to_string(tf.traj_id);
        blob[base + ".observed"] = tf.observed;
        blob[base + ".future"] = tf.future;
        for (std::size_t j = 0; j < tf.samples.size(); ++j)
            blob[base + ".s" + std::to_string(j)] = tf.samples[j];
    }
    if (!blob.empty()) save_tensors(out + "/overlays.bin", blob);

    eval::emit_plots(res.report, res.forecasts, scenario, opts.seed, out);

    json manifest;
    manifest["command"] = "evaluate";
    manifest["stage2"] = opts.stage2;
    manifest["data"] = opts.data;
    manifest["k"] = opts.k;
    manifest["nfe"] = res.nfe;
    manifest["metrics"] = {{"ade", res.report.ade},
                           {"fde", res.report.fde},
                           {"min_ade", res.report.min_ade},
                           {"min_fde", res.report.min_fde}};
    write_manifest(out, manifest, common);

    char line[256];
    std::snprintf(line, sizeof(line),
                  "ade %.6g  fde %.6g  | static %.6g/%.6g  linear %.6g/%.6g  (K=%lld)\n",
                  res.report.ade, res.report.fde, res.report.static_ade, res.report.static_fde,
                  res.report.linear_ade, res.report.linear_fde,
                  static_cast<long long>(opts.k));
    std::cout << line;
}

void cmd_plot(const PlotOpts& opts, const CommonOpts& common) {
    const auto out = resolve_out(common, opts.out);
    json report;
    try {
        report = json::parse(read_text_file(opts.report + "/report.json"));
    } catch (const json::exception& e) {
        throw IoError("corrupt report in " + opts.report + ": " + e.what());
    }

    metrics::MetricReport rep;
    std::string scenario;
    std::uint64_t seed = 0;
    try {
        scenario = report.at("scenario").get<std::string>();
        seed = report.at("seed").get<std::uint64_t>();
        rep.k = report.at("protocol").at("k").get<std::int64_t>();
        rep.ade = report.at("metrics").at("ade").get<double>();
        rep.fde = report.at("metrics").at("fde").get<double>();
        rep.min_ade = report.at("metrics").at("min_ade").get<double>();
        rep.min_fde = report.at("metrics").at("min_fde").get<double>();
        for (const auto& r : report.at("rows"))
            rep.rows.push_back({r.at("traj_id").get<std::int64_t>(),
                                r.at("method").get<std::string>(), r.at("ade").get<double>(),
                                r.at("fde").get<double>(), r.at("min_ade").get<double>(),
                                r.at("min_fde").get<double>()});
    } catch (const json::exception& e) {
        throw IoError("report in " + opts.report + " missing field: " + e.what());
    }

    std::vector<eval::TrajectoryForecasts> forecasts;
    if (fs::exists(opts.report + "/overlays.bin")) {
        const auto blob = load_tensors(opts.report + "/overlays.bin");
        std::map<std::int64_t, eval::TrajectoryForecasts> by_id;
        for (const auto& [name, tensor] : blob) {
            const auto dot = name.find('.');
            if (dot == std::string::npos || name[0] != 't') continue;
            const auto id = std::stoll(name.substr(1, dot - 1));
            auto& tf = by_id[id];
            tf.traj_id = id;
            const auto field = name.substr(dot + 1);
            if (field == "observed") {
                tf.observed = tensor;
            } else if (field == "future") {
                tf.future = tensor;
            } else {
                const auto idx = std::stoll(field.substr(1));
                if (static_cast<std::int64_t>(tf.samples.size()) <= idx)
                    tf.samples.resize(static_cast<std::size_t>(idx) + 1);
                tf.samples[static_cast<std::size_t>(idx)] = tensor;
            }
        }
        for (auto& [id, tf] : by_id) forecasts.push_back(std::move(tf));
    }

    const auto written = eval::emit_plots(rep, forecasts, scenario, seed, out);

    json manifest;
    manifest["command"] = "plot";
    manifest["report"] = opts.report;
    manifest["files"] = written;
    write_manifest(out, manifest, common);
    std::cout << written.size() << " file(s) written to " << out << "\n";
}

} // namespace latflow::pipeline
