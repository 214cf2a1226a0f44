#include "dpssl/synth.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "dpssl/random.hpp"

namespace dpssl::synth {

namespace {

bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

int draw_categorical(std::mt19937_64& rng, const std::vector<double>& weights)
{
    std::discrete_distribution<int> dist(weights.begin(), weights.end());
    return dist(rng);
}

// Four-case potential, written out directly.
double raw_potential(const Matrix& theta, const SpecializedSets& tau, std::size_t k, int y, int v)
{
    const double e = std::exp(theta(k, y - 1));
    const bool y_in = tau.contains(k, y);
    const bool v_in = v != kAbstain && tau.contains(k, v);
    if (y_in && v_in && v == y)
        return 1.0 + e;
    if (y_in && v_in)
        return 1.0 / (1.0 + e);
    if (!y_in && v_in)
        return e;
    return 1.0;
}

// Calls fn(y, votes) for every legal joint configuration.
template <class Fn>
void enumerate_joint(const SpecializedSets& tau, int num_classes, std::size_t budget, Fn&& fn)
{
    const std::size_t K = tau.size();
    std::size_t total = static_cast<std::size_t>(num_classes);
    for (std::size_t k = 0; k < K; ++k) {
        total *= tau[k].size() + 1;
        if (total > budget)
            throw ValidationError("brute-force enumeration exceeds budget of " +
                                  std::to_string(budget) + " configurations");
    }
    std::vector<std::size_t> digit(K, 0);
    std::vector<int> votes(K, kAbstain);
    for (int y = 1; y <= num_classes; ++y) {
        std::fill(digit.begin(), digit.end(), 0);
        while (true) {
            for (std::size_t k = 0; k < K; ++k)
                votes[k] = digit[k] == 0 ? kAbstain : tau[k][digit[k] - 1];
            fn(y, votes);
            std::size_t k = 0;
            for (; k < K; ++k) {
                if (++digit[k] <= tau[k].size())
                    break;
                digit[k] = 0;
            }
            if (k == K)
                break;
        }
    }
}

}  // namespace

void VoteScenarioSpec::validate() const
{
    LabelSpace space(num_classes);
    SpecializedSets sets(tau, space);
    if (n_samples == 0)
        throw ValidationError("vote scenario: n_samples must be positive");
    if (lfs.size() != tau.size())
        throw ValidationError("vote scenario: one behaviour per LF required");
    if (!class_prior.empty()) {
        if (class_prior.size() != static_cast<std::size_t>(num_classes))
            throw ValidationError("vote scenario: class_prior must have C entries");
        double sum = 0.0;
        for (double p : class_prior) {
            if (!is_probability(p))
                throw ValidationError("vote scenario: class_prior entries must lie in [0,1]");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw ValidationError("vote scenario: class_prior must sum to 1");
    }
    bool any_active = false;
    for (std::size_t k = 0; k < lfs.size(); ++k) {
        const auto& b = lfs[k];
        if (!is_probability(b.abstain_rate_in) || !is_probability(b.abstain_rate_out) ||
            !is_probability(b.accuracy_in))
            throw ValidationError("vote scenario: LF " + std::to_string(k) +
                                  " has a probability outside [0,1]");
        if (!b.confusion_out.empty()) {
            if (b.confusion_out.size() != tau[k].size())
                throw ValidationError("vote scenario: confusion_out of LF " + std::to_string(k) +
                                      " must have |tau_k| entries");
            for (double p : b.confusion_out)
                if (p < 0.0)
                    throw ValidationError("vote scenario: negative confusion weight");
        }
        any_active = any_active || !tau[k].empty();
    }
    if (!any_active)
        throw ValidationError("vote scenario: every LF has an empty specialized set");
}

VotePopulation gen_votes(const VoteScenarioSpec& spec)
{
    spec.validate();
    const LabelSpace space(spec.num_classes);
    const SpecializedSets tau(spec.tau, space);
    const std::size_t K = tau.size();
    std::vector<double> prior = spec.class_prior;
    if (prior.empty())
        prior.assign(spec.num_classes, 1.0 / spec.num_classes);

    VotePopulation out;
    out.truth.resize(spec.n_samples);
    out.votes.votes = VoteMatrix::Zero(spec.n_samples, K);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    for (std::size_t n = 0; n < spec.n_samples; ++n) {
        auto rng = make_stream(spec.seed, n);
        const int y = draw_categorical(rng, prior) + 1;
        out.truth[n] = y;
        for (std::size_t k = 0; k < K; ++k) {
            const auto& set = tau[k];
            const auto& b = spec.lfs[k];
            // Three uniforms per LF on every branch.
            const double u_abstain = unit(rng);
            const double u_correct = unit(rng);
            const double u_pick = unit(rng);
            if (set.empty())
                continue;
            int vote = kAbstain;
            if (tau.contains(k, y)) {
                if (u_abstain >= b.abstain_rate_in) {
                    if (u_correct < b.accuracy_in || set.size() == 1) {
                        vote = y;
                    } else {
                        auto idx = static_cast<std::size_t>(u_pick * double(set.size() - 1));
                        idx = std::min(idx, set.size() - 2);
                        int pos = tau.index_of(k, y);
                        vote = set[idx >= static_cast<std::size_t>(pos) ? idx + 1 : idx];
                    }
                }
            } else if (u_abstain >= b.abstain_rate_out) {
                if (b.confusion_out.empty()) {
                    auto idx = static_cast<std::size_t>(u_pick * double(set.size()));
                    vote = set[std::min(idx, set.size() - 1)];
                } else {
                    const double total = std::accumulate(b.confusion_out.begin(),
                                                         b.confusion_out.end(), 0.0);
                    double acc = 0.0;
                    vote = set.back();
                    for (std::size_t t = 0; t < set.size(); ++t) {
                        acc += b.confusion_out[t] / total;
                        if (u_pick < acc) {
                            vote = set[t];
                            break;
                        }
                    }
                }
            }
            out.votes.votes(n, k) = vote;
        }
    }
    validate_votes(out.votes, tau, space);
    return out;
}

void ToyFeatureSpec::validate() const
{
    LabelSpace space(num_classes);
    if (dim < 1 || positions < 1)
        throw ValidationError("toy features: dim and positions must be positive");
    if (!(sigma_weak < sigma_strong) || sigma_weak < 0.0)
        throw ValidationError("toy features: need 0 <= sigma_weak < sigma_strong");
    if (n_labeled < static_cast<std::size_t>(num_classes))
        throw ValidationError("toy features: n_labeled must be at least C");
    if (spread < 0.0)
        throw ValidationError("toy features: spread must be non-negative");
    if (!means.empty()) {
        if (means.size() != static_cast<std::size_t>(num_classes))
            throw ValidationError("toy features: means must have C rows");
        for (const auto& m : means)
            if (m.size() != static_cast<std::size_t>(dim))
                throw ValidationError("toy features: every mean must have D entries");
    }
    if (informative_positions && (*informative_positions < 1 || *informative_positions > positions))
        throw ValidationError("toy features: informative_positions must lie in 1..P");
    if (informative_positions && *informative_positions < positions && num_background < 1)
        throw ValidationError("toy features: background positions need num_background >= 1");
}

Matrix class_means(const ToyFeatureSpec& spec)
{
    const int C = spec.num_classes, D = spec.dim;
    Matrix means(C, D);
    if (!spec.means.empty()) {
        for (int c = 0; c < C; ++c)
            for (int d = 0; d < D; ++d)
                means(c, d) = spec.means[c][d];
        return means;
    }
    if (D >= C) {
        // Scaled axis vectors: every pair sits exactly mean_separation apart.
        means.setZero();
        for (int c = 0; c < C; ++c)
            means(c, c) = spec.mean_separation / std::sqrt(2.0);
        return means;
    }
    auto rng = make_stream(spec.seed, streams::kClassMeans);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int c = 0; c < C; ++c) {
        for (int d = 0; d < D; ++d)
            means(c, d) = normal(rng);
        means.row(c) *= spec.mean_separation / std::sqrt(2.0) / means.row(c).norm();
    }
    return means;
}

std::vector<std::size_t> FeatureDataset::indices(Split s) const
{
    std::vector<std::size_t> out;
    for (std::size_t n = 0; n < split.size(); ++n)
        if (split[n] == s)
            out.push_back(n);
    return out;
}

LabeledSubset FeatureDataset::labeled_subset() const
{
    LabeledSubset subset;
    subset.indices = indices(Split::Labeled);
    for (auto n : subset.indices)
        subset.labels.push_back(truth[n]);
    return subset;
}

FeatureDataset gen_toy_features(const ToyFeatureSpec& spec)
{
    spec.validate();
    const int C = spec.num_classes, D = spec.dim, P = spec.positions;
    const int informative = spec.informative_positions.value_or(P);
    const Matrix means = class_means(spec);

    Matrix background(std::max(spec.num_background, 1), D);
    {
        auto rng = make_stream(spec.seed ^ 0xb4c6ULL, streams::kClassMeans);
        std::normal_distribution<double> normal(0.0, 1.0);
        const double scale =
            spec.background_scale > 0.0 ? spec.background_scale : spec.mean_separation;
        for (Eigen::Index b = 0; b < background.rows(); ++b) {
            for (int d = 0; d < D; ++d)
                background(b, d) = normal(rng);
            background.row(b) *= scale / std::sqrt(2.0) / background.row(b).norm();
        }
    }

    const std::size_t N = spec.n_labeled + spec.n_unlabeled + spec.n_test;
    FeatureDataset data;
    data.num_classes = C;
    data.positions = P;
    data.dim = D;
    data.raw.resize(N, P * D);
    data.weak.resize(N, P * D);
    data.strong.resize(N, P * D);
    data.truth.resize(N);
    data.split.resize(N);

    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<int> any_class(1, C);
    for (std::size_t n = 0; n < N; ++n) {
        auto rng = make_stream(spec.seed, n);
        int y;
        if (n < spec.n_labeled) {
            data.split[n] = Split::Labeled;
            y = static_cast<int>(n % C) + 1;  // stratified round robin
            (void)any_class(rng);
        } else {
            data.split[n] = n < spec.n_labeled + spec.n_unlabeled ? Split::Unlabeled : Split::Test;
            y = any_class(rng);
        }
        data.truth[n] = y;

        // Informative positions occupy a random subset of the P slots.
        std::vector<int> order(P);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        std::uniform_int_distribution<int> any_background(0, static_cast<int>(background.rows()) - 1);
        for (int slot = 0; slot < P; ++slot) {
            const int j = order[slot];
            Eigen::RowVectorXd center = slot < informative
                                            ? Eigen::RowVectorXd(means.row(y - 1))
                                            : Eigen::RowVectorXd(background.row(any_background(rng)));
            for (int d = 0; d < D; ++d)
                data.raw(n, j * D + d) = center(d) + spec.spread * normal(rng);
        }
        for (int t = 0; t < P * D; ++t)
            data.weak(n, t) = data.raw(n, t) + spec.sigma_weak * normal(rng);
        for (int t = 0; t < P * D; ++t)
            data.strong(n, t) = data.raw(n, t) + spec.sigma_strong * normal(rng);
    }
    return data;
}

Vector brute_force_posterior(const Matrix& theta, const SpecializedSets& tau,
                             const std::vector<int>& vote_row)
{
    const int C = static_cast<int>(theta.cols());
    if (vote_row.size() != tau.size())
        throw ValidationError("brute_force_posterior: vote row length differs from K");
    for (std::size_t k = 0; k < tau.size(); ++k)
        if (vote_row[k] != kAbstain && !tau.contains(k, vote_row[k]))
            throw ValidationError("brute_force_posterior: illegal vote " +
                                  std::to_string(vote_row[k]) + " for LF " + std::to_string(k));
    Vector p(C);
    for (int y = 1; y <= C; ++y) {
        double prod = 1.0;
        for (std::size_t k = 0; k < tau.size(); ++k)
            prod *= raw_potential(theta, tau, k, y, vote_row[k]);
        p(y - 1) = prod;
    }
    return p / p.sum();
}

double brute_force_Z(const Matrix& theta, const SpecializedSets& tau, const LabelSpace& space,
                     std::size_t budget)
{
    double z = 0.0;
    enumerate_joint(tau, space.num_classes(), budget, [&](int y, const std::vector<int>& votes) {
        double prod = 1.0;
        for (std::size_t k = 0; k < votes.size(); ++k)
            prod *= raw_potential(theta, tau, k, y, votes[k]);
        z += prod;
    });
    return z;
}

std::pair<double, double> brute_force_conditional_accuracy(const Matrix& theta,
                                                           const SpecializedSets& tau, int i,
                                                           std::size_t k, std::size_t budget)
{
    double agree_nonzero = 0.0, nonzero = 0.0, agree_positive = 0.0, positive = 0.0;
    enumerate_joint(tau, static_cast<int>(theta.cols()), budget,
                    [&](int y, const std::vector<int>& votes) {
                        double w = 1.0;
                        for (std::size_t kk = 0; kk < votes.size(); ++kk)
                            w *= raw_potential(theta, tau, kk, y, votes[kk]);
                        const int v = votes[k];
                        if (v == kAbstain)
                            return;
                        const int z_hat = v == i ? 1 : -1;
                        const int z = y == i ? 1 : -1;
                        nonzero += w;
                        if (z_hat == z)
                            agree_nonzero += w;
                        if (z_hat == 1) {
                            positive += w;
                            if (z == 1)
                                agree_positive += w;
                        }
                    });
    if (nonzero <= 0.0 || positive <= 0.0)
        throw ValidationError("brute-force conditional accuracy: conditioning event is empty");
    return {agree_nonzero / nonzero, agree_positive / positive};
}

AccuracyTable empirical_accuracy(const NoisyLabelMatrix& votes, const std::vector<int>& truth,
                                 const SpecializedSets& tau)
{
    const int C = tau.num_classes();
    const std::size_t K = votes.cols(), N = votes.rows();
    if (truth.size() != N)
        throw ValidationError("empirical_accuracy: truth length differs from vote rows");
    Eigen::MatrixXd agree = Eigen::MatrixXd::Zero(C, K), voted = Eigen::MatrixXd::Zero(C, K);
    Eigen::MatrixXd agree_pos = Eigen::MatrixXd::Zero(C, K), voted_pos = Eigen::MatrixXd::Zero(C, K);
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t k = 0; k < K; ++k) {
            const int v = votes.votes(n, k);
            if (v == kAbstain)
                continue;
            for (int i = 1; i <= C; ++i) {
                const bool z_hat_pos = v == i;
                const bool z_pos = truth[n] == i;
                voted(i - 1, k) += 1.0;
                if (z_hat_pos == z_pos)
                    agree(i - 1, k) += 1.0;
                if (z_hat_pos) {
                    voted_pos(i - 1, k) += 1.0;
                    if (z_pos)
                        agree_pos(i - 1, k) += 1.0;
                }
            }
        }
    }
    AccuracyTable out;
    out.accuracy = Matrix::Zero(C, K);
    out.positive = Matrix::Zero(C, K);
    out.accuracy_defined.resize(C, K);
    out.positive_defined.resize(C, K);
    for (int i = 0; i < C; ++i) {
        for (std::size_t k = 0; k < K; ++k) {
            out.accuracy_defined(i, k) = voted(i, k) > 0.0;
            out.positive_defined(i, k) = voted_pos(i, k) > 0.0;
            if (voted(i, k) > 0.0)
                out.accuracy(i, k) = agree(i, k) / voted(i, k);
            if (voted_pos(i, k) > 0.0)
                out.positive(i, k) = agree_pos(i, k) / voted_pos(i, k);
        }
    }
    return out;
}

}  // namespace dpssl::synth
