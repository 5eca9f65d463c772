#include "fwrl/cli.hpp"
#include "fwrl/run_config.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

namespace fs = std::filesystem;
using namespace fwrl;

namespace {

const fs::path kCli = FWRL_CLI_PATH;
const fs::path kConfigDir = FWRL_CONFIG_DIR;

struct TempDir {
    fs::path path;
    TempDir() {
        std::string tmpl = (fs::temp_directory_path() / "fwrl_cli_XXXXXX").string();
        path = ::mkdtemp(tmpl.data());
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

// Runs the CLI binary from `cwd` and returns its exit status.
int run(const std::string& args, const fs::path& cwd, const std::string& env = "") {
    const std::string cmd = "cd '" + cwd.string() + "' && " + env + " '" + kCli.string() + "' " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::vector<fs::path> tree(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) out.push_back(fs::relative(e.path(), dir));
    std::sort(out.begin(), out.end());
    return out;
}

// A short training config with absolute input paths.
fs::path tiny_config(const fs::path& dir) {
    const fs::path p = dir / "tiny.cfg";
    std::ofstream f(p);
    f << "schema = fwrl.run/1\n"
      << "uav.file = " << (kConfigDir / "x8_nominal.params").string() << '\n'
      << "pid.gains_file = " << (kConfigDir / "pid_gains.cfg").string() << '\n'
      << "env.length = 150\nenv.resample_interval = 50\n"
      << "model.history = 3\nmodel.hidden = 16\n"
      << "train.total_steps = 300\ntrain.checkpoint_steps = 300\ntrain.prefill = 100\ntrain.batch_size = 16\n";
    return p;
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
    TempDir tmp;
    CHECK(run("", tmp.path) == cli::kUsage);
    CHECK(run("fly", tmp.path) == cli::kUsage);
    CHECK(run("eval --no-such-flag", tmp.path) == cli::kUsage);
    CHECK(run("eval --controller mpc", tmp.path) == cli::kUsage);
    CHECK(run("train --workers 4 --out-dir out", tmp.path) == cli::kUsage);
    CHECK(run("eval --config missing.cfg --out-dir out", tmp.path) == cli::kUsage);
    CHECK(run("--help", tmp.path) == cli::kOk);
}

TEST_CASE("PID evaluation writes metrics and a manifest") {
    TempDir tmp;
    const fs::path out = tmp.path / "eval";
    REQUIRE(run("eval --controller pid --seed 3 --out-dir '" + out.string() + "'", tmp.path) == cli::kOk);
    const std::string metrics = slurp(out / "metrics.csv");
    CHECK(metrics.rfind("label,steps,diverged", 0) == 0);
    CHECK(metrics.find("\npid") != std::string::npos);
    CHECK(fs::file_size(out / "trace.csv") > 0);
    const auto m = cli::RunManifest::load(out / "manifest.txt");
    CHECK(m.command == "eval");
    CHECK(m.seed == 3);
    CHECK(m.status == "ok");
    CHECK(!m.outputs.empty());
    // nothing is written next to the out dir
    CHECK(tree(tmp.path).front() == fs::path("eval"));
    for (const auto& p : tree(tmp.path)) CHECK(p.begin()->string() == "eval");
}

TEST_CASE("output directory precedence") {
    TempDir tmp;
    CHECK(run("eval --controller pid", tmp.path, "FWRL_OUT_DIR=from_env") == cli::kOk);
    CHECK(fs::exists(tmp.path / "from_env" / "metrics.csv"));
    CHECK(run("eval --controller pid --out-dir flag", tmp.path, "FWRL_OUT_DIR=from_env2") == cli::kOk);
    CHECK(fs::exists(tmp.path / "flag" / "metrics.csv"));
    CHECK_FALSE(fs::exists(tmp.path / "from_env2"));
    CHECK(run("eval --controller pid", tmp.path, "env -u FWRL_OUT_DIR") == cli::kOk);
    CHECK(fs::exists(tmp.path / "fwrl_out" / "metrics.csv"));
}

TEST_CASE("run config round trip") {
    const auto cfg = RunConfig::load(kConfigDir / "nominal.cfg");
    const auto text = cfg.to_keyvalue().serialize();
    const auto again = RunConfig::parse(text);
    CHECK(again == cfg);
    CHECK(again.to_keyvalue().serialize() == text);
    CHECK_THROWS_AS(RunConfig::parse("schema = fwrl.run/1\nuav.wingspan_typo = 2\n"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("schema = fwrl.run/1\nenv.history = 4\nmodel.history = 5\n"), ConfigError);
}

TEST_CASE("training replay is byte-identical") {
    TempDir tmp;
    const fs::path cfg = tiny_config(tmp.path);
    const fs::path first = tmp.path / "first";
    REQUIRE(cli::dispatch({"fwrl", "train", "--config", cfg.string(), "--seed", "5", "--baseline-episodes", "2",
                           "--out-dir", first.string()}) == cli::kOk);
    CHECK(fs::exists(first / "policy_300.bin"));
    CHECK(fs::exists(first / "metrics.csv"));
    const fs::path second = tmp.path / "second";
    CHECK(cli::dispatch({"fwrl", "replay", "--manifest", (first / "manifest.txt").string(), "--out-dir",
                         second.string()}) == cli::kOk);
    for (const auto& name : {"policy_300.bin", "metrics.csv", "baseline.csv"}) {
        CHECK(slurp(first / name) == slurp(second / name));
    }

    // the replay reads the embedded config snapshot, not the edited file
    std::ofstream(cfg, std::ios::app) << "train.total_steps = 200\n";
    const fs::path third = tmp.path / "third";
    CHECK(cli::dispatch({"fwrl", "replay", "--manifest", (first / "manifest.txt").string(), "--out-dir",
                         third.string()}) == cli::kOk);
    CHECK(slurp(first / "policy_300.bin") == slurp(third / "policy_300.bin"));
}

TEST_CASE("manifest round trip") {
    cli::RunManifest m;
    m.command = "eval";
    m.argv = {"fwrl", "eval", "--seed", "9"};
    m.seed = 9;
    m.version = "x";
    m.inputs = {{"config", "/a/b.cfg 0123456789abcdef"}};
    m.outputs = {{"metrics.csv", "fedcba9876543210"}};
    m.config.set("schema", "fwrl.run/1");
    const auto back = cli::RunManifest::from_keyvalue(m.to_keyvalue());
    CHECK(back.command == m.command);
    CHECK(back.argv == m.argv);
    CHECK(back.seed == 9);
    CHECK(back.inputs == m.inputs);
    CHECK(back.outputs == m.outputs);
}
