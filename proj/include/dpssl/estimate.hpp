#pragma once

#include <array>
#include <optional>
#include <vector>

#include "dpssl/core.hpp"
#include "dpssl/labelmodel.hpp"

namespace dpssl::estimate {

inline constexpr double kDefaultDelta = 0.05;

/// Estimated statistics for one (class i, LF k) pair with i in tau_k.
struct AccuracyEntry {
    int cls = 1;
    std::size_t lf = 0;
    double magnitude = 0.0;     ///< |E[z_hat z]|, clamped to [0,1]
    int sign = 1;
    double abstain_rate = 0.0;  ///< P(z_hat = 0)
    double accuracy = 0.0;      ///< P(z_hat = z | z_hat != 0)
    bool valid = false;
};

struct AccuracyEstimates {
    int num_classes = 0;
    std::size_t num_lfs = 0;
    std::vector<Matrix> moments;  ///< per class, K×K pairwise moments
    std::vector<AccuracyEntry> entries;

    /// Regularizer targets from the valid entries.
    std::vector<labelmodel::AccuracyTarget> targets() const;
    const AccuracyEntry* find(int cls, std::size_t lf) const;
};

/// Ternary recoding for task i: +1 if vote == i, 0 if abstain, -1 otherwise.
VoteMatrix one_vs_all(const NoisyLabelMatrix& votes, int i);

/// Empirical E[z_j z_k] over rows; diagonal is the non-abstain rate.
Matrix pairwise_moments(const VoteMatrix& z_hat);

struct TripletResult {
    std::array<double, 3> magnitude{};
    std::array<bool, 3> valid{};
};

/// Magnitudes |E[z_j z]|, |E[z_k z]|, |E[z_l z]| from the three pairwise
/// moments; an output whose denominator is below delta is invalid.
TripletResult triplet_solve(double m_jk, double m_jl, double m_kl, double delta = kDefaultDelta);

/// Mean of valid triplet magnitudes for LF k over pairs drawn from `members`
/// (k itself excluded). Empty when no triplet is valid.
std::optional<double> aggregate_triplets(const Matrix& moments, std::size_t k,
                                         const std::vector<std::size_t>& members,
                                         double delta = kDefaultDelta);
/// Same, using every other LF as a partner.
std::optional<double> aggregate_triplets(const Matrix& moments, std::size_t k,
                                         double delta = kDefaultDelta);

struct SignResolution {
    std::vector<int> signs;
    bool ambiguous = false;
};

/// Signs maximizing sum_{j<k} s_j s_k m_jk over `members`, oriented so that
/// most LFs are better than random. Exact for up to 20 LFs, greedy beyond.
SignResolution resolve_signs(const Matrix& moments, const std::vector<std::size_t>& members,
                             double delta = kDefaultDelta);

/// Inverts E = 2 P(z_hat = z) + P(z_hat = 0) - 1 and conditions on voting.
double accuracy_from_moment(double signed_moment, double abstain_rate);

AccuracyEstimates estimate_accuracies(const NoisyLabelMatrix& votes_u, const SpecializedSets& tau,
                                      const LabelSpace& space, double delta = kDefaultDelta);

}  // namespace dpssl::estimate
