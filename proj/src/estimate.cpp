#include "dpssl/estimate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

namespace dpssl::estimate {

std::vector<labelmodel::AccuracyTarget> AccuracyEstimates::targets() const
{
    std::vector<labelmodel::AccuracyTarget> out;
    for (const auto& e : entries)
        if (e.valid)
            out.push_back({e.cls, e.lf, e.accuracy});
    return out;
}

const AccuracyEntry* AccuracyEstimates::find(int cls, std::size_t lf) const
{
    for (const auto& e : entries)
        if (e.cls == cls && e.lf == lf)
            return &e;
    return nullptr;
}

VoteMatrix one_vs_all(const NoisyLabelMatrix& votes, int i)
{
    VoteMatrix z(votes.votes.rows(), votes.votes.cols());
    for (Eigen::Index n = 0; n < z.rows(); ++n)
        for (Eigen::Index k = 0; k < z.cols(); ++k) {
            const int v = votes.votes(n, k);
            z(n, k) = v == i ? 1 : (v == kAbstain ? 0 : -1);
        }
    return z;
}

Matrix pairwise_moments(const VoteMatrix& z_hat)
{
    if (z_hat.rows() < 1)
        throw ValidationError("pairwise_moments: need at least one row");
    const Eigen::MatrixXd z = z_hat.cast<double>();
    Matrix m = z.transpose() * z;
    return m / static_cast<double>(z_hat.rows());
}

TripletResult triplet_solve(double m_jk, double m_jl, double m_kl, double delta)
{
    TripletResult out;
    auto solve = [&](double a, double b, double denom, int slot) {
        if (std::abs(denom) < delta) {
            out.valid[slot] = false;
            out.magnitude[slot] = 0.0;
            return;
        }
        out.valid[slot] = true;
        out.magnitude[slot] = std::min(1.0, std::sqrt(std::abs(a * b / denom)));
    };
    solve(m_jk, m_jl, m_kl, 0);
    solve(m_jk, m_kl, m_jl, 1);
    solve(m_jl, m_kl, m_jk, 2);
    return out;
}

std::optional<double> aggregate_triplets(const Matrix& moments, std::size_t k,
                                         const std::vector<std::size_t>& members, double delta)
{
    std::vector<std::size_t> others;
    for (auto j : members)
        if (j != k)
            others.push_back(j);
    if (others.size() < 2)
        throw ValidationError("aggregate_triplets: need at least 3 LFs");
    double sum = 0.0;
    int count = 0;
    for (std::size_t a = 0; a < others.size(); ++a) {
        for (std::size_t b = a + 1; b < others.size(); ++b) {
            const std::size_t j = others[a], l = others[b];
            const TripletResult r = triplet_solve(moments(k, j), moments(k, l), moments(j, l), delta);
            if (r.valid[0]) {
                sum += r.magnitude[0];
                ++count;
            }
        }
    }
    if (count == 0)
        return std::nullopt;
    return sum / count;
}

std::optional<double> aggregate_triplets(const Matrix& moments, std::size_t k, double delta)
{
    std::vector<std::size_t> all(moments.rows());
    for (std::size_t j = 0; j < all.size(); ++j)
        all[j] = j;
    return aggregate_triplets(moments, k, all, delta);
}

SignResolution resolve_signs(const Matrix& moments, const std::vector<std::size_t>& members,
                             double delta)
{
    const std::size_t M = members.size();
    SignResolution out;
    out.signs.assign(M, 1);
    if (M == 0)
        return out;

    bool informative = false;
    for (std::size_t a = 0; a < M; ++a)
        for (std::size_t b = a + 1; b < M; ++b)
            informative = informative || std::abs(moments(members[a], members[b])) >= delta;
    if (!informative) {
        out.ambiguous = true;
        return out;
    }

    auto score = [&](const std::vector<int>& s) {
        double total = 0.0;
        for (std::size_t a = 0; a < M; ++a)
            for (std::size_t b = a + 1; b < M; ++b)
                total += s[a] * s[b] * moments(members[a], members[b]);
        return total;
    };

    std::vector<int> best(M, 1);
    if (M <= 20) {
        // First sign fixed; enumerate the remaining 2^(M-1) patterns.
        double best_score = -std::numeric_limits<double>::infinity();
        std::vector<int> s(M, 1);
        const std::uint32_t patterns = 1u << (M - 1);
        for (std::uint32_t mask = 0; mask < patterns; ++mask) {
            for (std::size_t a = 1; a < M; ++a)
                s[a] = (mask >> (a - 1)) & 1u ? -1 : 1;
            const double v = score(s);
            if (v > best_score + 1e-15) {
                best_score = v;
                best = s;
            }
        }
    } else {
        bool improved = true;
        double current = score(best);
        while (improved) {
            improved = false;
            for (std::size_t a = 0; a < M; ++a) {
                best[a] = -best[a];
                const double v = score(best);
                if (v > current + 1e-15) {
                    current = v;
                    improved = true;
                } else {
                    best[a] = -best[a];
                }
            }
        }
    }

    // Majority-better-than-random convention; an exact tie keeps the
    // orientation that makes the first LF positive.
    int balance = 0;
    for (int v : best)
        balance += v;
    if (balance < 0 || (balance == 0 && best[0] < 0))
        for (int& v : best)
            v = -v;
    out.signs = best;
    return out;
}

double accuracy_from_moment(double signed_moment, double abstain_rate)
{
    if (!(abstain_rate >= 0.0 && abstain_rate < 1.0))
        throw ValidationError("accuracy_from_moment: abstain rate must lie in [0,1)");
    const double agree = (signed_moment + 1.0 - abstain_rate) / 2.0;
    return std::clamp(agree / (1.0 - abstain_rate), 0.0, 1.0);
}

AccuracyEstimates estimate_accuracies(const NoisyLabelMatrix& votes_u, const SpecializedSets& tau,
                                      const LabelSpace& space, double delta)
{
    const int C = space.num_classes();
    const std::size_t K = votes_u.cols();
    validate_votes(votes_u, tau, space);

    AccuracyEstimates out;
    out.num_classes = C;
    out.num_lfs = K;
    std::vector<double> abstain(K, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
        long zeros = 0;
        for (std::size_t n = 0; n < votes_u.rows(); ++n)
            zeros += votes_u.votes(n, k) == kAbstain ? 1 : 0;
        abstain[k] = double(zeros) / double(votes_u.rows());
    }

    for (int i = 1; i <= C; ++i) {
        const Matrix m = pairwise_moments(one_vs_all(votes_u, i));
        out.moments.push_back(m);

        std::vector<std::size_t> members;
        for (std::size_t k = 0; k < K; ++k)
            if (tau.contains(k, i) && abstain[k] < 1.0)
                members.push_back(k);

        std::vector<double> magnitude(members.size(), 0.0);
        std::vector<bool> have(members.size(), false);
        if (members.size() >= 3) {
            for (std::size_t a = 0; a < members.size(); ++a) {
                if (auto mag = aggregate_triplets(m, members[a], members, delta)) {
                    magnitude[a] = std::clamp(*mag, 0.0, 1.0);
                    have[a] = true;
                }
            }
        }
        const SignResolution signs = resolve_signs(m, members, delta);

        for (std::size_t k = 0; k < K; ++k) {
            if (!tau.contains(k, i))
                continue;
            AccuracyEntry e;
            e.cls = i;
            e.lf = k;
            e.abstain_rate = abstain[k];
            auto it = std::find(members.begin(), members.end(), k);
            if (it != members.end()) {
                const std::size_t a = static_cast<std::size_t>(it - members.begin());
                e.magnitude = magnitude[a];
                e.sign = signs.signs[a];
                e.valid = have[a] && !signs.ambiguous;
                if (e.valid)
                    e.accuracy = accuracy_from_moment(e.sign * e.magnitude, e.abstain_rate);
            }
            out.entries.push_back(e);
        }
    }
    return out;
}

}  // namespace dpssl::estimate
