#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
    int code;
    std::string err;
};

fs::path work() {
    static const fs::path dir = [] {
        fs::path p = fs::temp_directory_path() / "difforge_cli_tests";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

Result run(const std::string& args) {
    const fs::path err = work() / "stderr.txt";
    const std::string cmd = std::string(DIFFORGE_CLI) + " " + args + " > /dev/null 2> " + err.string();
    const int status = std::system(cmd.c_str());
    std::ifstream is(err);
    std::stringstream ss;
    ss << is.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

json error_line(const Result& r) {
    const auto nl = r.err.find('\n');
    EXPECT_NE(nl, std::string::npos);
    EXPECT_EQ(r.err.find('\n', nl + 1), std::string::npos) << r.err;
    return json::parse(r.err.substr(0, nl));
}

json read(const fs::path& p) { return json::parse(std::ifstream(p)); }

const fs::path& small_corpus() {
    static const fs::path out = [] {
        fs::path o = work() / "corpus";
        EXPECT_EQ(run("gen-corpus --n 20 --size 8 --seed 5 --out " + o.string()).code, 0);
        return o;
    }();
    return out;
}

}  // namespace

TEST(Cli, ConfigErrorsExitOne) {
    const fs::path cfg = work() / "bad.json";
    std::ofstream(cfg) << R"({"epochz": 3})";
    const Result r = run("train-diffusion --config " + cfg.string() + " --corpus " + small_corpus().string() + "/train --out " + (work() / "x").string());
    EXPECT_EQ(r.code, 1);
    const json line = error_line(r);
    EXPECT_EQ(line.at("kind"), "config");
    EXPECT_EQ(line.at("exit_code"), 1);
    EXPECT_NE(line.at("message").get<std::string>().find("epochz"), std::string::npos);
    EXPECT_EQ(run("train-seg --bogus-flag").code, 1);
}

TEST(Cli, MissingInputsExitTwo) {
    const Result r = run("train-seg --corpus " + (work() / "does-not-exist").string() + " --out " + (work() / "y").string());
    EXPECT_EQ(r.code, 2);
    EXPECT_EQ(error_line(r).at("kind"), "input");
    EXPECT_EQ(run("eval --pred " + (work() / "nope").string() + " --target " + (work() / "nope").string() + " --out " + (work() / "z").string()).code, 2);
}

TEST(Cli, NumericalFailureExitsThree) {
    const fs::path cfg = work() / "diverge.json";
    std::ofstream(cfg) << R"({"optimizer": {"lr": 1e200, "clip_norm": 0}, "cbmat": {"delta0": 0},
                            "schedule": {"steps": 20}, "arch": {"base_channels": 4, "levels": 1, "groups": 2, "convs_per_block": 1}})";
    const Result r = run("train-diffusion --config " + cfg.string() + " --corpus " + small_corpus().string() + "/train --epochs 2 --out " +
                         (work() / "diverge").string());
    EXPECT_EQ(r.code, 3);
    EXPECT_EQ(error_line(r).at("kind"), "numerical");
    EXPECT_TRUE(fs::exists(work() / "diverge" / "checkpoints" / "ckpt_diverged.dfck"));
}

TEST(Cli, EvalOfIdenticalMasksIsPerfect) {
    const fs::path out = work() / "eval_same";
    const std::string test = small_corpus().string() + "/test";
    ASSERT_EQ(run("eval --pred " + test + " --target " + test + " --out " + out.string()).code, 0);
    const json m = read(out / "metrics.json");
    for (const auto& [name, v] : m.at("dice").items())
        if (!v.is_null()) EXPECT_EQ(v.get<double>(), 1.0) << name;
    ASSERT_EQ(run("report --baseline " + (out / "metrics.json").string() + " --augmented " + (out / "metrics.json").string() + " --out " +
                  (work() / "report_same").string())
                  .code,
              0);
    const json d = read(work() / "report_same" / "delta_report.json");
    for (const auto& c : d.at("classes"))
        if (!c.at("delta").is_null()) EXPECT_EQ(c.at("delta").get<double>(), 0.0);
    std::ifstream csv(work() / "report_same" / "table.csv");
    std::string header, row1, row2, extra;
    std::getline(csv, header);
    std::getline(csv, row1);
    std::getline(csv, row2);
    EXPECT_EQ(header, "run,healthy,emphysema,fibrosis");
    EXPECT_EQ(row1.rfind("baseline,", 0), 0u);
    EXPECT_EQ(row2.rfind("augmented,", 0), 0u);
    EXPECT_FALSE(std::getline(csv, extra));
}

TEST(Cli, OutputDirectoryFromEnvironment) {
    const fs::path base = work() / "env_out";
    setenv("DIFFORGE_OUT", base.c_str(), 1);
    const Result r = run("gen-corpus --n 20 --size 8");
    unsetenv("DIFFORGE_OUT");
    ASSERT_EQ(r.code, 0) << r.err;
    const json manifest = read(base / "gen-corpus" / "manifest.json");
    EXPECT_EQ(manifest.at("command"), "gen-corpus");
    EXPECT_EQ(manifest.at("config").at("corpus").at("n_samples"), 20);
}
