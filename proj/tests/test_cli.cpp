#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "taskvec/arith.hpp"
#include "taskvec/config.hpp"
#include "taskvec/hash.hpp"
#include "taskvec/io.hpp"
#include "taskvec/tensor.hpp"

namespace fs = std::filesystem;
using namespace taskvec;

namespace {

// The binary under test comes from the environment so the suite follows
// whatever build the harness wired up.
std::string cli_path() {
    if (const char* p = std::getenv("TASKVEC_CLI"); p && *p) return p;
    const fs::path fallback = fs::path("build") / "taskvec";
    if (fs::exists(fallback)) return fallback.string();
    FAIL("TASKVEC_CLI is not set and build/taskvec-cli does not exist");
    return "";
}

struct RunResult {
    int exit_code = -1;
    std::string output; // stdout and stderr interleaved
};

RunResult run_cli(const std::string& args) {
    static int counter = 0;
    const fs::path log =
        fs::temp_directory_path() /
        ("taskvec_cli_log_" + std::to_string(counter++) + ".txt");
    const std::string cmd =
        cli_path() + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream is(log);
    std::stringstream ss;
    ss << is.rdbuf();
    r.output = ss.str();
    fs::remove(log);
    return r;
}

// Fresh scratch directory per test case.
fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("taskvec_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc);
    os << text;
    REQUIRE(static_cast<bool>(os));
}

// Small, fast training setup shared by the file-producing tests.
std::string small_train_config(int seed) {
    nlohmann::json j;
    j["arch"] = {{"input_dim", 16},
                 {"trunk_widths", {16}},
                 {"num_classes", 4},
                 {"recon_dim", 0}};
    j["train"] = {{"steps", 40},
                  {"batch_size", 16},
                  {"warmup_steps", 5},
                  {"snapshot_every", 20},
                  {"seed", seed}};
    j["tasks"] = {"bank-1"};
    return j.dump(2);
}

bool same_weights(const Checkpoint& a, const Checkpoint& b) {
    return content_hash(a.weights) == content_hash(b.weights);
}

} // namespace

TEST_CASE("a missing config file fails fast and names the path") {
    const RunResult r =
        run_cli("train --config /nonexistent/nope.json --out /tmp/unused");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("/nonexistent/nope.json") != std::string::npos);
}

TEST_CASE("unknown config keys are rejected rather than ignored") {
    const fs::path dir = scratch("strict");
    nlohmann::json j = nlohmann::json::parse(small_train_config(1));
    j["outputs"] = "typo-for-output_dir";
    write_file(dir / "cfg.json", j.dump());
    const RunResult r = run_cli("train --config " +
                                (dir / "cfg.json").string() + " --out " +
                                (dir / "run").string());
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("outputs") != std::string::npos);
}

TEST_CASE("training writes a loadable checkpoint and reruns bit-identically") {
    const fs::path dir = scratch("train");
    write_file(dir / "cfg.json", small_train_config(3));

    const RunResult first = run_cli("train --config " +
                                    (dir / "cfg.json").string() + " --out " +
                                    (dir / "a").string());
    REQUIRE(first.exit_code == 0);
    REQUIRE(fs::exists(dir / "a" / "final.tvkp"));
    REQUIRE(fs::exists(dir / "a" / "manifest.json"));
    REQUIRE(fs::exists(dir / "a" / "config.resolved.json"));
    CHECK(fs::exists(dir / "a" / "snap-000000.tvkp"));
    CHECK(fs::exists(dir / "a" / "snap-000040.tvkp"));

    const Checkpoint final = load_checkpoint(dir / "a" / "final.tvkp");
    CHECK(final.meta.step == 40);
    CHECK(final.weights.size() > 0);

    // The manifest's recorded hash matches the artifact on disk.
    std::ifstream mf(dir / "a" / "manifest.json");
    const auto manifest = nlohmann::json::parse(mf);
    CHECK(manifest["final"]["hash"] == content_hash(final.weights));

    // Same config, fresh directory: identical weights, identical manifest
    // hashes.
    const RunResult second = run_cli("train --config " +
                                     (dir / "cfg.json").string() + " --out " +
                                     (dir / "b").string());
    REQUIRE(second.exit_code == 0);
    std::ifstream mf2(dir / "b" / "manifest.json");
    const auto manifest2 = nlohmann::json::parse(mf2);
    CHECK(manifest["final"]["hash"] == manifest2["final"]["hash"]);
    CHECK(manifest["snapshots"] == manifest2["snapshots"]);
}

TEST_CASE("vector algebra round-trips through files") {
    const fs::path dir = scratch("algebra");
    write_file(dir / "cfg.json", small_train_config(5));
    REQUIRE(run_cli("train --config " + (dir / "cfg.json").string() +
                    " --out " + (dir / "run").string())
                .exit_code == 0);
    const std::string base = (dir / "run" / "snap-000000.tvkp").string();
    const std::string ft = (dir / "run" / "final.tvkp").string();
    const std::string mid = (dir / "run" / "snap-000020.tvkp").string();

    // diff against itself is the zero vector.
    REQUIRE(run_cli("vector diff " + ft + " " + ft + " --out " +
                    (dir / "zero.tvkp").string())
                .exit_code == 0);
    CHECK(l2_norm(load_task_vector(dir / "zero.tvkp").delta) == 0.0);

    // The real fine-tune delta.
    REQUIRE(run_cli("vector diff " + ft + " " + base + " --task-id bank-1 " +
                    "--out " + (dir / "v.tvkp").string())
                .exit_code == 0);
    const TaskVector v = load_task_vector(dir / "v.tvkp");
    CHECK(v.provenance.task_id == "bank-1");
    CHECK(l2_norm(v.delta) > 0.0);

    SUBCASE("adding three copies and applying a third matches one copy") {
        const std::string vf = (dir / "v.tvkp").string();
        REQUIRE(run_cli("vector add " + vf + " " + vf + " " + vf +
                        " --out " + (dir / "v3.tvkp").string())
                    .exit_code == 0);
        REQUIRE(run_cli("apply " + base + " " + (dir / "v3.tvkp").string() +
                        " --lambda 0.3333333333333333 --out " +
                        (dir / "third.tvkp").string())
                    .exit_code == 0);
        REQUIRE(run_cli("apply " + base + " " + (dir / "v.tvkp").string() +
                        " --lambda 1 --out " + (dir / "whole.tvkp").string())
                    .exit_code == 0);
        const Checkpoint third = load_checkpoint(dir / "third.tvkp");
        const Checkpoint whole = load_checkpoint(dir / "whole.tvkp");
        for (const auto& [name, t] : whole.weights) {
            const auto& u = third.weights.at(name);
            for (std::size_t i = 0; i < t.data.size(); ++i)
                CHECK(std::abs(t.data[i] - u.data[i]) < 1e-6f);
        }
    }

    SUBCASE("an analogy whose first two arms agree returns the third") {
        REQUIRE(run_cli("vector diff " + mid + " " + base + " --out " +
                        (dir / "c.tvkp").string())
                    .exit_code == 0);
        REQUIRE(run_cli("vector analogy " + (dir / "v.tvkp").string() + " " +
                        (dir / "v.tvkp").string() + " " +
                        (dir / "c.tvkp").string() + " --out " +
                        (dir / "d.tvkp").string())
                    .exit_code == 0);
        const TaskVector c = load_task_vector(dir / "c.tvkp");
        const TaskVector d = load_task_vector(dir / "d.tvkp");
        for (const auto& [name, t] : c.delta)
            CHECK(t.data == d.delta.at(name).data);
    }

    SUBCASE("applying at zero is a no-op on the weights") {
        REQUIRE(run_cli("apply " + base + " " + (dir / "v.tvkp").string() +
                        " --lambda 0 --out " + (dir / "same.tvkp").string())
                    .exit_code == 0);
        CHECK(same_weights(load_checkpoint(dir / "same.tvkp"),
                           load_checkpoint(base)));
    }

    SUBCASE("negative strength equals applying the negated vector") {
        REQUIRE(run_cli("vector negate " + (dir / "v.tvkp").string() +
                        " --out " + (dir / "nv.tvkp").string())
                    .exit_code == 0);
        REQUIRE(run_cli("apply " + base + " " + (dir / "nv.tvkp").string() +
                        " --lambda 1 --out " + (dir / "away1.tvkp").string())
                    .exit_code == 0);
        REQUIRE(run_cli("apply " + base + " " + (dir / "v.tvkp").string() +
                        " --lambda=-1 --out " + (dir / "away2.tvkp").string())
                    .exit_code == 0);
        CHECK(same_weights(load_checkpoint(dir / "away1.tvkp"),
                           load_checkpoint(dir / "away2.tvkp")));
    }

    SUBCASE("expression files compose the same algebra") {
        nlohmann::json expr;
        expr["sum"] = {nlohmann::json{{"leaf", "v.tvkp"}},
                       nlohmann::json{
                           {"scaled", {-1.0, {{"leaf", "v.tvkp"}}}}}};
        write_file(dir / "expr.json", expr.dump());
        REQUIRE(run_cli("apply " + base + " --expr " +
                        (dir / "expr.json").string() + " --out " +
                        (dir / "noop.tvkp").string())
                    .exit_code == 0);
        CHECK(same_weights(load_checkpoint(dir / "noop.tvkp"),
                           load_checkpoint(base)));
    }
}

TEST_CASE("incompatible inputs exit with the compatibility code, no output") {
    const fs::path dir = scratch("compat");
    Checkpoint a, b;
    a.meta.model_id = "a";
    a.weights.insert("w", Tensor({2}, {1.0f, 2.0f}));
    b.meta.model_id = "b";
    b.weights.insert("w", Tensor({3}, {1.0f, 2.0f, 3.0f}));
    save_checkpoint(a, dir / "a.tvkp");
    save_checkpoint(b, dir / "b.tvkp");

    const RunResult r = run_cli("vector diff " + (dir / "a.tvkp").string() +
                                " " + (dir / "b.tvkp").string() + " --out " +
                                (dir / "d.tvkp").string());
    CHECK(r.exit_code == 4);
    CHECK(r.output.find("shape mismatch") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "d.tvkp"));
}

TEST_CASE("unknown experiment names list the valid ones") {
    const RunResult r = run_cli("experiment bogus --out /tmp/unused");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("bogus") != std::string::npos);
    CHECK(r.output.find("forget") != std::string::npos);
    CHECK(r.output.find("trajectory") != std::string::npos);
}

TEST_CASE("a config claiming another experiment is refused") {
    const fs::path dir = scratch("mismatch");
    write_file(dir / "cfg.json", R"({"experiment": {"name": "forget"}})");
    const RunResult r = run_cli("experiment trajectory --config " +
                                (dir / "cfg.json").string() + " --out " +
                                (dir / "out").string());
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("forget") != std::string::npos);
}

TEST_CASE("experiments emit report, plot data, and the resolved config") {
    const fs::path dir = scratch("experiment");
    nlohmann::json cfg;
    cfg["experiment"] = {
        {"name", "trajectory"},
        {"snapshot_every", 20},
        {"pretrain",
         {{"steps", 100}, {"warmup_steps", 10}, {"batch_size", 32}}},
        {"finetune",
         {{"steps", 60}, {"warmup_steps", 6}, {"batch_size", 32}}}};
    write_file(dir / "cfg.json", cfg.dump(2));

    const std::string cmd = "experiment trajectory --config " +
                            (dir / "cfg.json").string() + " --seed 5 --out ";
    const RunResult r = run_cli(cmd + (dir / "out").string());
    REQUIRE(r.exit_code == 0);
    for (const char* name :
         {"report.json", "report.csv", "plot.csv", "config.resolved.json"})
        CHECK(fs::exists(dir / "out" / name));

    std::ifstream rf(dir / "out" / "report.json");
    const auto report = nlohmann::json::parse(rf);
    CHECK(report["experiment_id"] == "trajectory");
    CHECK(report["rows"].size() > 1u);

    std::ifstream cf(dir / "out" / "config.resolved.json");
    const auto resolved = nlohmann::json::parse(cf);
    CHECK(resolved["experiment"]["name"] == "trajectory");
    CHECK(resolved["seed"] == 5);
    CHECK(resolved["finetune"]["steps"] == 60);

    // Rerunning the resolved setup reproduces the report byte for byte.
    const RunResult again = run_cli(cmd + (dir / "out2").string());
    REQUIRE(again.exit_code == 0);
    std::ifstream f1(dir / "out" / "report.json"), f2(dir / "out2" /
                                                      "report.json");
    std::stringstream s1, s2;
    s1 << f1.rdbuf();
    s2 << f2.rdbuf();
    CHECK(s1.str() == s2.str());
}
