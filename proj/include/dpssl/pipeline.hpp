#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpssl/core.hpp"
#include "dpssl/endmodel.hpp"
#include "dpssl/labelmodel.hpp"
#include "dpssl/mcl.hpp"
#include "dpssl/synth.hpp"

namespace dpssl::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

enum class SynthMode { Features, Votes };

struct SynthConfig {
    SynthMode mode = SynthMode::Features;
    synth::ToyFeatureSpec features;
    synth::VoteScenarioSpec votes;
    /// Votes mode: the first n rows form the labeled subset.
    std::size_t votes_labeled = 0;
};

struct SweepConfig {
    std::vector<int> num_heads;
    std::vector<double> rho;
    std::vector<double> gamma;
    std::vector<double> lambda;
    std::vector<std::uint64_t> seeds;
    std::size_t max_runs = 64;
};

struct EvalConfig {
    std::vector<std::uint64_t> seeds;  ///< empty: score the artifacts on disk
    bool end_model = true;
    bool supervised_baseline = false;
};

/// Artifact file names, resolved against `out`.
struct Paths {
    fs::path out = ".";
    std::string heads = "heads.json";
    std::string lf_log = "lf_train_log.csv";
    std::string tau = "tau.json";
    std::string votes = "votes.csv";
    std::string estimates = "estimates.csv";
    std::string theta = "theta.csv";
    std::string theta_sidecar = "theta.json";
    std::string pi = "pi.csv";
    std::string model = "model.json";
    std::string report = "report.csv";
    std::string sweep = "sweep.csv";
    std::string sweep_matrix = "sweep_matrix.csv";

    fs::path operator()(const std::string& name) const { return out / name; }
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    Paths paths;
    SynthConfig synth;
    mcl::MclConfig mcl;
    double delta = 0.05;
    labelmodel::LmTrainConfig label_model;
    endmodel::EndModelConfig end_model;
    EvalConfig eval;
    SweepConfig sweep;

    static PipelineConfig from_json(const json& j);
    static PipelineConfig load(const fs::path& path);
    /// Checks every section before any compute.
    void validate() const;
    int num_classes() const;
};

/// Canonical JSON of each section, defaults filled in; these feed the
/// lineage hashes.
json to_json(const synth::ToyFeatureSpec& s);
json to_json(const synth::VoteScenarioSpec& s);
json to_json(const mcl::MclConfig& c);
json to_json(const labelmodel::LmTrainConfig& c);
json to_json(const endmodel::EndModelConfig& c);
json to_json(const PipelineConfig& c);

/// Per-module seeds derived from the global one.
std::uint64_t synth_seed(std::uint64_t seed);
std::uint64_t mcl_seed(std::uint64_t seed);
std::uint64_t lm_seed(std::uint64_t seed);
std::uint64_t end_seed(std::uint64_t seed);
std::uint64_t tie_seed(std::uint64_t seed);

/// Hash chain over the stages; each hash covers its own config section and
/// the hash of the stage it consumes.
struct Lineage {
    std::string synth, lf, votes, estimate, lm, infer, end;
};
Lineage lineage(const PipelineConfig& config);

struct RunMetrics {
    std::uint64_t seed = 0;
    std::size_t n_labeled = 0;
    double annotation_accuracy = 0.0;
    MacroScores annotation;
    double coverage = 0.0;
    double mv_accuracy = 0.0;
    MacroScores mv;
    double mv_coverage = 0.0;
    std::optional<double> error_rate;
    std::optional<double> supervised_error_rate;
    int lm_iterations = 0;
    std::vector<std::vector<int>> tau;
};

/// Whole pipeline in memory for one seed; nothing touches the disk.
RunMetrics run_pipeline(const PipelineConfig& config, std::uint64_t seed);

/// Regularizer targets with known truth: empirical one-vs-all accuracies.
std::vector<labelmodel::AccuracyTarget> oracle_targets(const NoisyLabelMatrix& votes,
                                                       const std::vector<int>& truth,
                                                       const SpecializedSets& tau);

/// Thread cap from DPSSL_THREADS, else hardware concurrency (at least 1).
unsigned thread_cap();

void cmd_synth(const PipelineConfig& config);
void cmd_lf_train(const PipelineConfig& config);
void cmd_lf_apply(const PipelineConfig& config);
void cmd_estimate(const PipelineConfig& config);
void cmd_lm_train(const PipelineConfig& config);
void cmd_lm_infer(const PipelineConfig& config);
void cmd_end_train(const PipelineConfig& config);
void cmd_eval(const PipelineConfig& config);
void cmd_sweep(const PipelineConfig& config);

}  // namespace dpssl::pipeline
