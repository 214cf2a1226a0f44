#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "dpssl/io.hpp"
#include "dpssl/pipeline.hpp"

using namespace dpssl;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir()
    {
        const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
        path = fs::temp_directory_path() / ("dpssl_test_" + std::to_string(stamp));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

json features_config()
{
    return json{
        {"seed", 5},
        {"synth",
         {{"mode", "features"},
          {"features",
           {{"num_classes", 3},
            {"dim", 4},
            {"positions", 2},
            {"n_labeled", 15},
            {"n_unlabeled", 90},
            {"n_test", 30}}}}},
        {"mcl",
         {{"num_heads", 3},
          {"rho", 0.34},
          {"warmup_max_epochs", 20},
          {"ssl_epochs", 2},
          {"batch_unlabeled", 32}}},
        {"label_model", {{"mode", "off"}, {"max_iterations", 50}}},
        {"end_model", {{"epochs", 5}}},
    };
}

json votes_config()
{
    return json{
        {"seed", 9},
        {"synth",
         {{"mode", "votes"},
          {"votes",
           {{"num_classes", 3},
            {"tau", {{1, 2, 3}, {1, 2, 3}, {1, 2, 3}, {1, 2, 3}, {1}}},
            {"lf_defaults", {{"accuracy_in", 0.75}, {"abstain_rate_in", 0.2}, {"abstain_rate_out", 0.2}}},
            {"n_samples", 2000},
            {"n_labeled", 30}}}}},
        {"label_model", {{"mode", "estimated"}, {"max_iterations", 100}}},
    };
}

fs::path write_config(const fs::path& dir, const json& j, const std::string& name = "config.json")
{
    const fs::path p = dir / name;
    std::ofstream(p) << j.dump(2);
    return p;
}

int run_cli(const std::string& command, const fs::path& config, const fs::path& out)
{
    const std::string line = std::string("\"") + DPSSL_CLI + "\" " + command + " --config \"" +
                             config.string() + "\" --out \"" + out.string() + "\" 2>/dev/null";
    const int status = std::system(line.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

pipeline::PipelineConfig parse(const json& j) { return pipeline::PipelineConfig::from_json(j); }

}  // namespace

TEST_CASE("config parsing")
{
    const auto c = parse(features_config());
    CHECK(c.seed == 5);
    CHECK(c.mcl.num_heads == 3);
    CHECK(c.num_classes() == 3);
    CHECK_NOTHROW(c.validate());

    json bad = features_config();
    bad["mcl"]["bogus"] = 1;
    CHECK_THROWS_AS(parse(bad), ValidationError);
    bad = features_config();
    bad["extra"] = true;
    CHECK_THROWS_AS(parse(bad), ValidationError);
    bad = features_config();
    bad["label_model"]["mode"] = "sometimes";
    CHECK_THROWS_AS(parse(bad), ValidationError);
    bad = features_config();
    bad["mcl"]["rho"] = 0.2;
    CHECK_THROWS_AS(parse(bad).validate(), ValidationError);

    json v = votes_config();
    v["synth"]["votes"]["n_samples"] = 0;
    CHECK_THROWS_AS(parse(v).validate(), ValidationError);
    v = votes_config();
    v["synth"]["votes"]["lfs"] = json::array({json::object()});
    CHECK_THROWS_AS(parse(v), ValidationError);
}

TEST_CASE("lineage hashes track upstream configuration")
{
    const auto a = pipeline::lineage(parse(features_config()));
    json j = features_config();
    j["end_model"]["epochs"] = 6;
    const auto b = pipeline::lineage(parse(j));
    CHECK(a.lm == b.lm);
    CHECK(a.end != b.end);
    j["mcl"]["gamma"] = 0.6;
    const auto c = pipeline::lineage(parse(j));
    CHECK(c.synth == a.synth);
    CHECK(c.lf != a.lf);
    CHECK(c.votes != a.votes);
    CHECK(c.infer != a.infer);
}

TEST_CASE("CLI feature chain runs end to end and is byte-identical on rerun")
{
    TempDir tmp;
    const fs::path cfg = write_config(tmp.path, features_config());
    const char* steps[] = {"synth", "lf-train", "lf-apply", "lm-train", "lm-infer", "end-train", "eval"};
    for (const fs::path& out : {tmp.path / "a", tmp.path / "b"})
        for (const char* s : steps)
            REQUIRE_MESSAGE(run_cli(s, cfg, out) == 0, s);

    for (const char* f : {"features.csv", "heads.json", "votes.csv", "tau.json", "theta.csv", "pi.csv",
                          "model.json", "report.csv", "lf_train_log.csv"})
        CHECK_MESSAGE(slurp(tmp.path / "a" / f) == slurp(tmp.path / "b" / f), f);

    const ProbLabels pi = io::read_prob_labels_csv(tmp.path / "a" / "pi.csv");
    CHECK(pi.rows() == 90);
    for (std::size_t n = 0; n < pi.rows(); ++n)
        if (pi.covered[n])
            CHECK(pi.pi.row(n).sum() == doctest::Approx(1.0).epsilon(1e-12));

    const std::string report = slurp(tmp.path / "a" / "report.csv");
    CHECK(report.rfind("seed,n_labeled,error_rate,macro_precision,macro_recall,macro_f1,coverage,"
                       "annotation_accuracy\n",
                       0) == 0);
}

TEST_CASE("CLI vote chain with estimated regularizer")
{
    TempDir tmp;
    const fs::path cfg = write_config(tmp.path, votes_config());
    const fs::path out = tmp.path / "run";
    CHECK(run_cli("lm-train", cfg, out) == 4);
    for (const char* s : {"synth", "estimate", "lm-train", "lm-infer", "eval"})
        REQUIRE_MESSAGE(run_cli(s, cfg, out) == 0, s);
    CHECK(fs::exists(out / "estimates.csv"));
    CHECK(fs::exists(out / "theta.csv.meta.json"));
    // end-train needs feature maps.
    CHECK(run_cli("end-train", cfg, out) == 2);

    // A changed label-model config invalidates theta for lm-infer.
    json changed = votes_config();
    changed["label_model"]["lambda"] = 2.0;
    const fs::path cfg2 = write_config(tmp.path, changed, "changed.json");
    CHECK(run_cli("lm-infer", cfg2, out) == 4);

    json broken = votes_config();
    broken["synth"]["votes"]["n_samples"] = 0;
    CHECK(run_cli("synth", write_config(tmp.path, broken, "broken.json"), out) == 2);
    CHECK(run_cli("synth", tmp.path / "missing.json", out) == 4);
}

TEST_CASE("eval over seeds writes mean and std rows")
{
    TempDir tmp;
    json j = features_config();
    j["eval"] = {{"seeds", {1, 2}}};
    const fs::path cfg = write_config(tmp.path, j);
    REQUIRE(run_cli("eval", cfg, tmp.path) == 0);
    std::istringstream in(slurp(tmp.path / "report.csv"));
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);)
        lines.push_back(l);
    REQUIRE(lines.size() == 5);
    CHECK(lines[1].rfind("1,", 0) == 0);
    CHECK(lines[3].rfind("mean,", 0) == 0);
    CHECK(lines[4].rfind("std,", 0) == 0);
}

TEST_CASE("sweep grid, rejection and budget")
{
    TempDir tmp;
    json j = features_config();
    j["mcl"]["warmup_max_epochs"] = 5;
    j["mcl"]["ssl_epochs"] = 1;
    j["sweep"] = {{"K", {5, 10}}, {"rho", {0.2, 1.0}}};
    REQUIRE(run_cli("sweep", write_config(tmp.path, j), tmp.path) == 0);
    std::istringstream in(slurp(tmp.path / "sweep.csv"));
    int rows = -1;
    for (std::string l; std::getline(in, l);)
        ++rows;
    CHECK(rows == 4);
    CHECK(fs::exists(tmp.path / "sweep_matrix.csv"));

    j["sweep"]["rho"] = {0.05};
    CHECK(run_cli("sweep", write_config(tmp.path, j, "low.json"), tmp.path) == 2);
    j["sweep"] = {{"K", {5, 10}}, {"rho", {0.2, 1.0}}, {"max_runs", 3}};
    CHECK(run_cli("sweep", write_config(tmp.path, j, "budget.json"), tmp.path) == 2);
}

TEST_CASE("in-memory pipeline is deterministic per seed")
{
    const auto c = parse(votes_config());
    const auto a = pipeline::run_pipeline(c, 3);
    const auto b = pipeline::run_pipeline(c, 3);
    CHECK(a.annotation_accuracy == b.annotation_accuracy);
    CHECK(a.coverage == b.coverage);
    CHECK(a.annotation_accuracy > 0.5);
    CHECK_FALSE(a.error_rate.has_value());
}
