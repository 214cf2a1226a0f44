#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dpssl/core.hpp"

namespace dpssl::synth {

/// Behaviour of one simulated labeling function.
struct LfBehavior {
    double abstain_rate_in = 0.0;   ///< P(abstain | truth in tau_k)
    double abstain_rate_out = 1.0;  ///< P(abstain | truth not in tau_k)
    double accuracy_in = 1.0;       ///< P(vote = truth | truth in tau_k, voted)
    /// Distribution over tau_k used for out-of-set votes; empty means uniform.
    std::vector<double> confusion_out;
};

/// Conditionally independent vote population given the true class.
struct VoteScenarioSpec {
    int num_classes = 2;
    std::vector<std::vector<int>> tau;
    std::vector<double> class_prior;  ///< empty means uniform
    std::vector<LfBehavior> lfs;
    std::size_t n_samples = 0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct VotePopulation {
    std::vector<int> truth;
    NoisyLabelMatrix votes;
};

VotePopulation gen_votes(const VoteScenarioSpec& spec);

enum class Split { Labeled, Unlabeled, Test };

struct ToyFeatureSpec {
    int num_classes = 2;
    int dim = 8;            ///< D
    int positions = 4;      ///< P
    /// Explicit C×D class means; when empty they are generated so that
    /// classes sit `mean_separation` apart.
    std::vector<std::vector<double>> means;
    double mean_separation = 6.0;
    double spread = 1.0;
    /// Positions per sample that carry the class mean; the rest are drawn
    /// around one of `num_background` shared prototypes. Defaults to P.
    std::optional<int> informative_positions;
    int num_background = 4;
    double background_scale = 0.0;  ///< prototype norm; 0 means mean_separation
    double sigma_weak = 0.1;
    double sigma_strong = 1.0;
    std::size_t n_labeled = 0;
    std::size_t n_unlabeled = 0;
    std::size_t n_test = 0;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Feature maps flattened row-wise: sample n occupies row n with P·D
/// entries, position-major.
struct FeatureDataset {
    int num_classes = 0;
    int positions = 0;
    int dim = 0;
    Matrix raw, weak, strong;
    std::vector<int> truth;
    std::vector<Split> split;

    std::size_t size() const { return truth.size(); }
    std::vector<std::size_t> indices(Split s) const;
    LabeledSubset labeled_subset() const;
};

FeatureDataset gen_toy_features(const ToyFeatureSpec& spec);

/// Class means used by gen_toy_features for this spec.
Matrix class_means(const ToyFeatureSpec& spec);

/// Enumerates y directly from the four-case potential and normalizes.
Vector brute_force_posterior(const Matrix& theta, const SpecializedSets& tau,
                             const std::vector<int>& vote_row);

/// Exhaustive sum of the unnormalized joint over every legal (y, votes).
double brute_force_Z(const Matrix& theta, const SpecializedSets& tau, const LabelSpace& space,
                     std::size_t budget = 20'000'000);

/// Brute-force joint probabilities for a single LF k: returns the pair
/// (P(z_hat = z | z_hat != 0), P(z_hat = z | z_hat = 1)) for task i.
std::pair<double, double> brute_force_conditional_accuracy(const Matrix& theta,
                                                           const SpecializedSets& tau, int i,
                                                           std::size_t k,
                                                           std::size_t budget = 20'000'000);

/// Empirical one-vs-all accuracies computed with known truth. Rows are
/// classes (index i-1), columns LFs.
struct AccuracyTable {
    Matrix accuracy;   ///< P(z_hat = z | z_hat != 0)
    Matrix positive;   ///< P(z_hat = z | z_hat = 1)
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> accuracy_defined;
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> positive_defined;
};

AccuracyTable empirical_accuracy(const NoisyLabelMatrix& votes, const std::vector<int>& truth,
                                 const SpecializedSets& tau);

}  // namespace dpssl::synth
