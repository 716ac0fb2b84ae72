// End-to-end checks of the command-line surface: exit codes, artifact
// layout, determinism of re-runs, and the manifest contract. Each case
// shells out to the real binary (LATFLOW_BIN, injected by the build).

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kBin = LATFLOW_BIN;

struct Run {
    int exit_code = -1;
    std::string out, err;
};

// std::system through a shell; stdout/stderr land in scratch files
Run run(const std::string& args) {
    static int counter = 0;
    const auto tag = std::to_string(counter++);
    const auto out_path = fs::temp_directory_path() / ("latflow-cli-out-" + tag);
    const auto err_path = fs::temp_directory_path() / ("latflow-cli-err-" + tag);
    const auto cmd = kBin + " " + args + " >" + out_path.string() + " 2>" + err_path.string();
    const int raw = std::system(cmd.c_str());
    Run r;
    r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    const auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    r.out = slurp(out_path);
    r.err = slurp(err_path);
    fs::remove(out_path);
    fs::remove(err_path);
    return r;
}

std::string slurp_file(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// one scratch tree per process run, fresh every time
const std::string& scratch() {
    static const std::string root = [] {
        const auto p = fs::temp_directory_path() / "latflow-cli-scratch";
        fs::remove_all(p);
        fs::create_directories(p);
        return p.string();
    }();
    return root;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    REQUIRE(out.good());
    out << text;
}

// tiny models and an 8-frame 3-entity dataset keep every command sub-second
const char* kTinyConfig = R"({
  "seed": 3,
  "first_stage": {
    "encoder": {"latents": 4, "latent_dim": 8, "heads": 2, "head_dim": 4, "layers": 1, "ffn_mult": 2},
    "decoder": {"heads": 2, "head_dim": 4, "layers": 1, "ffn_mult": 2},
    "id_dim": 16, "epochs": 2, "batch": 8, "seed": 5
  },
  "second_stage": {
    "model": {"hidden": 16, "layers": 1, "heads": 2, "ffn_mult": 2,
              "condition_frames": 2, "epochs": 2, "batch": 4, "seed": 9}
  }
})";

std::string tiny_config_path() {
    static const std::string path = [] {
        const auto p = scratch() + "/tiny-config.json";
        write_text(p, kTinyConfig);
        return p;
    }();
    return path;
}

// shared pipeline artifacts, built once in dependency order
const std::string& data_dir() {
    static const std::string dir = [] {
        const auto d = scratch() + "/data";
        const auto r = run("generate --scenario spring --counts 6,2,2 --entities 3 --frames 8 "
                           "--seed 3 --out " + d);
        REQUIRE(r.exit_code == 0);
        return d;
    }();
    return dir;
}

const std::string& stage1_dir() {
    static const std::string dir = [] {
        const auto d = scratch() + "/stage1";
        const auto r = run("train-stage1 --data " + data_dir() + " --out " + d + " --config " +
                           tiny_config_path());
        REQUIRE(r.exit_code == 0);
        return d;
    }();
    return dir;
}

const std::string& stage2_dir() {
    static const std::string dir = [] {
        const auto d = scratch() + "/stage2";
        const auto r = run("train-stage2 --stage1 " + stage1_dir() + " --data " + data_dir() +
                           " --out " + d + " --config " + tiny_config_path());
        REQUIRE(r.exit_code == 0);
        return d;
    }();
    return dir;
}

} // namespace

TEST_CASE("usage errors exit with 2") {
    CHECK(run("").exit_code == 2);                       // no subcommand
    CHECK(run("generate").exit_code == 2);               // missing --out
    CHECK(run("train-stage2 --data x --out y").exit_code == 2); // missing --stage1
    CHECK(run("frobnicate").exit_code == 2);             // unknown subcommand
    const auto bad = run("generate --scenario plasma --out " + scratch() + "/bad");
    CHECK(bad.exit_code == 2);
    CHECK(bad.err.find("config error:") != std::string::npos);
}

TEST_CASE("generate writes a dataset and reruns byte-identically") {
    const auto& d = data_dir();
    CHECK(fs::exists(d + "/manifest.json"));
    CHECK(fs::exists(d + "/train/X.bin"));
    CHECK(fs::exists(d + "/test/meta.json"));
    const auto meta = json::parse(slurp_file(d + "/train/meta.json"));
    CHECK(meta.at("num_trajectories").get<int>() == 6);

    const auto d2 = scratch() + "/data-rerun";
    CHECK(run("--no-timestamp generate --scenario spring --counts 6,2,2 --entities 3 --frames 8 "
              "--seed 3 --out " + d2).exit_code == 0);
    const auto d3 = scratch() + "/data-rerun2";
    CHECK(run("--no-timestamp generate --scenario spring --counts 6,2,2 --entities 3 --frames 8 "
              "--seed 3 --out " + d3).exit_code == 0);
    CHECK(slurp_file(d2 + "/train/X.bin") == slurp_file(d3 + "/train/X.bin"));
    CHECK(slurp_file(d2 + "/manifest.json") == slurp_file(d3 + "/manifest.json"));
    CHECK(slurp_file(d2 + "/train/X.bin") == slurp_file(d + "/train/X.bin"));
}

TEST_CASE("config file errors exit with 2") {
    const auto bad_key = scratch() + "/bad-key.json";
    write_text(bad_key, R"({"first_stage": {"epoch": 3}})"); // misspelled key
    const auto r = run("train-stage1 --data " + data_dir() + " --out " + scratch() +
                       "/nope --config " + bad_key);
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("unknown config key: first_stage.epoch") != std::string::npos);

    const auto bad_type = scratch() + "/bad-type.json";
    write_text(bad_type, R"({"seed": "seven"})");
    const auto r2 = run("train-stage1 --data " + data_dir() + " --out " + scratch() +
                        "/nope2 --config " + bad_type);
    CHECK(r2.exit_code == 2);
    CHECK(r2.err.find("wrong type for config key: seed") != std::string::npos);
}

TEST_CASE("print-effective-config dumps the merged json and writes nothing") {
    const auto r = run("train-stage1 --data " + data_dir() + " --out " + scratch() +
                       "/cfg-only --config " + tiny_config_path() + " --print-effective-config");
    CHECK(r.exit_code == 0);
    const auto j = json::parse(r.out);
    CHECK(j.at("first_stage").at("epochs").get<int>() == 2);
    CHECK(j.at("first_stage").at("encoder").at("latents").get<int>() == 4);
    CHECK(j.at("second_stage").at("inference").at("k_samples").get<int>() == 5);
    CHECK(!fs::exists(scratch() + "/cfg-only"));
}

TEST_CASE("train-stage1 leaves a loadable checkpoint with a training curve") {
    const auto& d = stage1_dir();
    CHECK(fs::exists(d + "/weights.bin"));
    CHECK(fs::exists(d + "/config.json"));
    const auto manifest = json::parse(slurp_file(d + "/manifest.json"));
    CHECK(manifest.at("command").get<std::string>() == "train-stage1");
    CHECK(manifest.at("epochs_run").get<int>() == 2);
    // header plus one row per epoch
    std::istringstream curve(slurp_file(d + "/curve.csv"));
    std::string line;
    int rows = 0;
    while (std::getline(curve, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 3);

    // --resume and --config on the same invocation contradict each other
    const auto r = run("train-stage1 --data " + data_dir() + " --out " + scratch() +
                       "/resumed --resume " + d + " --config " + tiny_config_path());
    CHECK(r.exit_code == 2);
}

TEST_CASE("train-stage2 embeds the first stage so later commands need one path") {
    const auto& d = stage2_dir();
    CHECK(fs::exists(d + "/weights.bin"));
    CHECK(fs::exists(d + "/stage1/weights.bin"));
    const auto manifest = json::parse(slurp_file(d + "/manifest.json"));
    CHECK(manifest.at("command").get<std::string>() == "train-stage2");
    CHECK(manifest.at("stage1_fingerprint").get<std::string>().size() == 16);
}

TEST_CASE("sample reports the NFE of its integrator") {
    const auto out = scratch() + "/fc";
    const auto r = run("sample --stage2 " + stage2_dir() + " --input " + data_dir() +
                       "/test --traj 0 --k 2 --steps 10 --seed 4 --out " + out);
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(out + "/forecast.bin"));
    const auto manifest = json::parse(slurp_file(out + "/manifest.json"));
    CHECK(manifest.at("nfe").get<int>() == 10);
    CHECK(manifest.at("nfe_total").get<int>() == 20);
    CHECK(manifest.at("k").get<int>() == 2);

    // out-of-range trajectory index is a usage error
    CHECK(run("sample --stage2 " + stage2_dir() + " --input " + data_dir() +
              "/test --traj 99 --out " + scratch() + "/fc-bad").exit_code == 2);
}

TEST_CASE("evaluate emits report, csv, and figures; plot reproduces them") {
    const auto out = scratch() + "/report";
    const auto r = run("evaluate --stage2 " + stage2_dir() + " --data " + data_dir() +
                       " --k 2 --keep 2 --seed 6 --out " + out);
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("ade") != std::string::npos);
    const auto report = json::parse(slurp_file(out + "/report.json"));
    CHECK(report.at("protocol").at("k").get<int>() == 2);
    CHECK(report.at("rows").size() == 6); // 2 trajectories x 3 methods
    const auto csv = slurp_file(out + "/metrics.csv");
    CHECK(csv.rfind("scenario,traj_id,method,ade,fde,min_ade,min_fde,K,seed", 0) == 0);

    // a second evaluation of the same checkpoint is byte-identical
    const auto out2 = scratch() + "/report2";
    CHECK(run("evaluate --stage2 " + stage2_dir() + " --data " + data_dir() +
              " --k 2 --keep 2 --seed 6 --out " + out2).exit_code == 0);
    CHECK(slurp_file(out2 + "/metrics.csv") == csv);

    // plot re-emits the same figure from the stored report
    const auto replot = scratch() + "/replot";
    CHECK(run("plot --report " + out + " --out " + replot).exit_code == 0);
    std::string fig;
    for (const auto& e : fs::directory_iterator(out))
        if (e.path().extension() == ".svg") fig = e.path().filename().string();
    REQUIRE(!fig.empty());
    CHECK(slurp_file(replot + "/" + fig) == slurp_file(out + "/" + fig));
}

TEST_CASE("out root env var anchors relative output paths") {
    const auto root = scratch() + "/anchored";
    const auto cmd = "LATFLOW_OUT_ROOT=" + root + " " + kBin +
                     " generate --scenario spring --counts 2,1,1 --entities 3 --frames 8 "
                     "--seed 3 --out nested/data >/dev/null 2>&1";
    REQUIRE(std::system(cmd.c_str()) == 0);
    CHECK(fs::exists(root + "/nested/data/manifest.json"));
}

TEST_CASE("golden subcommand lists names and rejects unknown ones") {
    const auto r = run("golden --list");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("identifier-counting") != std::string::npos);
    CHECK(r.out.find("spring-desk-forecast") != std::string::npos);
    CHECK(run("golden --name no-such-check").exit_code == 2);
}
