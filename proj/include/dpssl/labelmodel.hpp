#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpssl/core.hpp"

namespace dpssl::labelmodel {

enum class RegularizerMode { Off, Estimated, Oracle };

RegularizerMode parse_mode(const std::string& name);
std::string to_string(RegularizerMode mode);

struct LmTrainConfig {
    double learning_rate = 1.0;   ///< initial step on the per-sample-scaled objective
    int max_iterations = 2000;
    double tolerance = 1e-9;      ///< relative objective change that counts as converged
    double lambda = 1.0;
    RegularizerMode mode = RegularizerMode::Off;
    std::uint64_t seed = 0;
    double init_scale = 0.0;      ///< std-dev of the Gaussian theta initialisation
    double init_offset = 0.0;     ///< added to every theta entry at initialisation

    void validate() const;
};

/// Parameters of the factor graph: theta is K×C and tau gives the legal
/// vote domain of every LF.
struct LabelModel {
    SpecializedSets tau;
    Matrix theta;

    std::size_t num_lfs() const { return tau.size(); }
    int num_classes() const { return tau.num_classes(); }
};

/// Target for one (class i, LF k) regularizer term.
struct AccuracyTarget {
    int cls = 1;
    std::size_t lf = 0;
    double value = 0.0;
};

/// phi(y, vote) for LF k. Throws on a vote outside {0} ∪ tau_k.
double potential(const Matrix& theta, int y, int vote, std::size_t k, const SpecializedSets& tau);

/// Sum of phi(y, v) over v in `subset`.
double phi_sum(const Matrix& theta, int y, std::size_t k, const std::vector<int>& subset,
               const SpecializedSets& tau);

struct Normalizer {
    double z = 0.0;
    double log_z = 0.0;
};

/// Closed-form Z = sum_y prod_k Phi^k(y, {0} ∪ tau_k), computed in log space.
Normalizer normalizer(const Matrix& theta, const SpecializedSets& tau);

/// pi(y) ∝ prod_k phi(y, vote_k).
Vector posterior(const Matrix& theta, const SpecializedSets& tau, const std::vector<int>& vote_row);

/// sum_n log sum_y prod_k phi(y, votes[n][k]) - N log Z.
double marginal_loglik(const Matrix& theta, const SpecializedSets& tau,
                       const NoisyLabelMatrix& votes);

/// sum_n -log posterior(votes_l[n])[y_l[n]].
double labeled_ce(const Matrix& theta, const SpecializedSets& tau, const NoisyLabelMatrix& votes_l,
                  const std::vector<int>& y_l);

/// P_theta(z_hat_i^k = z_i | z_hat_i^k != 0). Requires i in tau_k.
double conditional_accuracy(const Matrix& theta, const SpecializedSets& tau, int i, std::size_t k);

/// P_theta(z_hat_i^k = z_i | z_hat_i^k = 1). Requires i in tau_k.
double conditional_accuracy_positive(const Matrix& theta, const SpecializedSets& tau, int i,
                                     std::size_t k);

/// Sum of binary cross-entropies between each target and the matching
/// conditional accuracy; 0 for mode Off. Targets with i outside tau_k
/// are skipped.
double regularizer(const Matrix& theta, const SpecializedSets& tau,
                   const std::vector<AccuracyTarget>& targets, RegularizerMode mode);

/// Training data for the objective.
struct LmData {
    NoisyLabelMatrix votes_l;
    std::vector<int> y_l;
    NoisyLabelMatrix votes_u;
    std::vector<AccuracyTarget> targets;
};

struct ObjectiveTerms {
    double labeled = 0.0;
    double unlabeled = 0.0;   ///< negative marginal log-likelihood
    double regularizer = 0.0; ///< unweighted
    double total = 0.0;
};

/// Objective value and its analytic gradient with respect to theta.
/// `grad` may be null.
ObjectiveTerms objective(const Matrix& theta, const SpecializedSets& tau, const LmData& data,
                         double lambda, RegularizerMode mode, Matrix* grad);

struct LmTrainLog {
    int iterations = 0;
    bool converged = false;
    std::vector<double> objective;  ///< accepted objective values, first entry at init
};

LabelModel train_label_model(const LmData& data, const SpecializedSets& tau,
                             const LmTrainConfig& config, LmTrainLog* log = nullptr);

/// Posterior for every row; all-abstain rows are uncovered and uniform.
ProbLabels infer(const Matrix& theta, const SpecializedSets& tau, const NoisyLabelMatrix& votes);

struct MajorityVote {
    std::vector<int> labels;  ///< 0 for uncovered rows
    std::vector<bool> covered;
};

/// Most frequent non-abstain vote per row, seeded uniform tie-breaking.
MajorityVote majority_vote(const NoisyLabelMatrix& votes, int num_classes, std::uint64_t seed);

}  // namespace dpssl::labelmodel
