#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dpssl/labelmodel.hpp"
#include "dpssl/synth.hpp"

using namespace dpssl;
using namespace dpssl::labelmodel;

namespace {

struct Instance {
    Matrix theta;
    SpecializedSets tau;
    int C = 2;
};

// K <= 4, C <= 4, |tau_k| <= 3, theta ~ N(0,1).
Instance random_instance(std::mt19937_64& rng, bool allow_empty = true)
{
    std::uniform_int_distribution<int> kdist(1, 4), cdist(2, 4);
    std::normal_distribution<double> normal(0.0, 1.0);
    Instance in;
    in.C = cdist(rng);
    const int K = kdist(rng);
    std::vector<std::vector<int>> sets;
    for (int k = 0; k < K; ++k) {
        std::vector<int> classes(in.C);
        std::iota(classes.begin(), classes.end(), 1);
        std::shuffle(classes.begin(), classes.end(), rng);
        std::uniform_int_distribution<int> sz(allow_empty ? 0 : 1, std::min(3, in.C));
        classes.resize(sz(rng));
        sets.push_back(classes);
    }
    in.tau = SpecializedSets(sets, LabelSpace(in.C));
    in.theta.resize(K, in.C);
    for (Eigen::Index i = 0; i < in.theta.size(); ++i)
        in.theta.data()[i] = normal(rng);
    return in;
}

template <class Fn>
void for_each_row(const SpecializedSets& tau, Fn&& fn)
{
    std::vector<int> row(tau.size(), 0);
    std::vector<std::size_t> at(tau.size(), 0);
    while (true) {
        for (std::size_t k = 0; k < tau.size(); ++k)
            row[k] = at[k] == 0 ? 0 : tau[k][at[k] - 1];
        fn(row);
        std::size_t k = 0;
        for (; k < tau.size(); ++k) {
            if (++at[k] <= tau[k].size())
                break;
            at[k] = 0;
        }
        if (k == tau.size())
            return;
    }
}

NoisyLabelMatrix random_votes(std::mt19937_64& rng, const SpecializedSets& tau, std::size_t n)
{
    NoisyLabelMatrix v;
    v.votes.resize(n, tau.size());
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t k = 0; k < tau.size(); ++k) {
            std::uniform_int_distribution<std::size_t> pick(0, tau[k].size());
            const std::size_t j = pick(rng);
            v.votes(r, k) = j == 0 ? 0 : tau[k][j - 1];
        }
    return v;
}

double relative_error(const Matrix& a, const Matrix& b)
{
    const double scale = std::max({a.norm(), b.norm(), 1e-8});
    return (a - b).norm() / scale;
}

}  // namespace

TEST_CASE("potential cases")
{
    const LabelSpace two(2);
    const SpecializedSets both({{1, 2}}, two);
    const Matrix zero = Matrix::Zero(1, 2);
    CHECK(potential(zero, 1, 1, 0, both) == 2.0);
    CHECK(potential(zero, 1, 2, 0, both) == 0.5);
    const SpecializedSets one({{1}}, two);
    Matrix t = Matrix::Zero(1, 2);
    t(0, 1) = std::log(3.0);
    CHECK(potential(t, 2, 1, 0, one) == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(potential(t, 2, 0, 0, one) == 1.0);
    CHECK_THROWS_AS(potential(t, 1, 2, 0, one), ValidationError);
}

TEST_CASE("phi_sum")
{
    const LabelSpace three(3);
    const Matrix zero = Matrix::Zero(1, 3);
    CHECK(phi_sum(zero, 1, 0, {0, 1}, SpecializedSets({{1}}, three)) == 3.0);
    CHECK(phi_sum(zero, 3, 0, {1, 2}, SpecializedSets({{1, 2}}, three)) == 2.0);
    CHECK(phi_sum(zero, 3, 0, {}, SpecializedSets({{1, 2}}, three)) == 0.0);
}

TEST_CASE("normalizer hand values")
{
    const LabelSpace two(2), three(3);
    CHECK(normalizer(Matrix::Zero(1, 2), SpecializedSets({{1}}, two)).z == doctest::Approx(5.0));
    CHECK(normalizer(Matrix::Zero(1, 3), SpecializedSets({{1, 2}}, three)).z == doctest::Approx(10.0));
    const Normalizer empty = normalizer(Matrix::Zero(0, 3), SpecializedSets({}, three));
    CHECK(empty.z == 3.0);
    CHECK(empty.log_z == doctest::Approx(std::log(3.0)));
}

TEST_CASE("normalizer and posterior agree with brute-force enumeration on random instances")
{
    std::mt19937_64 rng(2024);
    double worst_z = 0.0, worst_post = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const Instance in = random_instance(rng);
        const double fast = normalizer(in.theta, in.tau).z;
        const double slow = synth::brute_force_Z(in.theta, in.tau, LabelSpace(in.C));
        worst_z = std::max(worst_z, std::abs(fast - slow) / slow);
        for_each_row(in.tau, [&](const std::vector<int>& row) {
            const Vector a = posterior(in.theta, in.tau, row);
            const Vector b = synth::brute_force_posterior(in.theta, in.tau, row);
            worst_post = std::max(worst_post, (a - b).cwiseAbs().maxCoeff());
        });
    }
    CHECK(worst_z < 1e-9);
    CHECK(worst_post < 1e-12);
}

TEST_CASE("normalizer stays finite for large parameters")
{
    const LabelSpace four(4);
    const Matrix big = Matrix::Constant(30, 4, 40.0);
    const Normalizer n = normalizer(big, SpecializedSets::full(30, four));
    CHECK(std::isfinite(n.log_z));
}

TEST_CASE("posterior hand values")
{
    const LabelSpace two(2);
    const SpecializedSets tau({{1, 2}, {1, 2}}, two);
    const Vector p = posterior(Matrix::Zero(2, 2), tau, {1, 1});
    CHECK(p(0) == doctest::Approx(0.9412).epsilon(1e-4));
    CHECK(p(1) == doctest::Approx(0.0588).epsilon(1e-3));
    const Vector u = posterior(Matrix::Zero(2, 2), tau, {0, 0});
    CHECK(u(0) == 0.5);

    const SpecializedSets single({{1}}, two);
    CHECK(posterior(Matrix::Zero(1, 2), single, {1})(0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    // pi(t) = (1+e)/((1+e) + e(C-1)) with a shared theta row; monotone in theta.
    double last = 1.0;
    for (double th : {-2.0, 0.0, 1.0, 3.0}) {
        const double e = std::exp(th);
        const double got = posterior(Matrix::Constant(1, 2, th), single, {1})(0);
        CHECK(got == doctest::Approx((1 + e) / ((1 + e) + e)).epsilon(1e-14));
        CHECK(got < last);
        last = got;
    }
}

TEST_CASE("marginal log-likelihood and labeled cross-entropy hand values")
{
    const LabelSpace two(2);
    const SpecializedSets one({{1}}, two);
    NoisyLabelMatrix v;
    v.votes.resize(1, 1);
    v.votes << 1;
    CHECK(marginal_loglik(Matrix::Zero(1, 2), one, v) == doctest::Approx(std::log(3.0) - std::log(5.0)));
    v.votes << 0;
    CHECK(marginal_loglik(Matrix::Zero(1, 2), one, v) == doctest::Approx(std::log(2.0) - std::log(5.0)));

    const SpecializedSets both({{1, 2}, {1, 2}}, two);
    NoisyLabelMatrix l;
    l.votes.resize(2, 2);
    l.votes << 1, 1, 0, 0;
    CHECK(labeled_ce(Matrix::Zero(2, 2), both, NoisyLabelMatrix{l.votes.topRows(1)}, {1}) ==
          doctest::Approx(-std::log(4.0 / 4.25)));
    CHECK(labeled_ce(Matrix::Zero(2, 2), both, NoisyLabelMatrix{l.votes.bottomRows(1)}, {2}) ==
          doctest::Approx(std::log(2.0)));

    // Additivity over rows.
    std::mt19937_64 rng(3);
    const Instance in = random_instance(rng, false);
    const NoisyLabelMatrix many = random_votes(rng, in.tau, 30);
    double sum = 0.0;
    for (Eigen::Index r = 0; r < 30; ++r)
        sum += marginal_loglik(in.theta, in.tau, NoisyLabelMatrix{many.votes.row(r)});
    CHECK(marginal_loglik(in.theta, in.tau, many) == doctest::Approx(sum).epsilon(1e-12));
}

TEST_CASE("conditional accuracies: hand value and brute-force agreement")
{
    const LabelSpace two(2);
    const SpecializedSets one({{1}}, two);
    CHECK(conditional_accuracy(Matrix::Zero(1, 2), one, 1, 0) == 2.0 / 3.0);
    CHECK(conditional_accuracy_positive(Matrix::Zero(1, 2), one, 1, 0) == 2.0 / 3.0);
    CHECK_THROWS_AS(conditional_accuracy(Matrix::Zero(1, 2), one, 2, 0), ValidationError);
    CHECK_THROWS_AS(conditional_accuracy_positive(Matrix::Zero(1, 2), one, 2, 0), ValidationError);
    Matrix sharp = Matrix::Zero(1, 2);
    sharp(0, 0) = 30.0;
    CHECK(conditional_accuracy(sharp, one, 1, 0) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(conditional_accuracy_positive(sharp, one, 1, 0) == doctest::Approx(1.0).epsilon(1e-9));

    std::mt19937_64 rng(2024);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const Instance in = random_instance(rng);
        for (std::size_t k = 0; k < in.tau.size(); ++k)
            for (int i : in.tau[k]) {
                const auto [acc, pos] = synth::brute_force_conditional_accuracy(in.theta, in.tau, i, k);
                const double a = conditional_accuracy(in.theta, in.tau, i, k);
                const double b = conditional_accuracy_positive(in.theta, in.tau, i, k);
                REQUIRE(a >= 0.0);
                REQUIRE(a <= 1.0);
                REQUIRE(b >= 0.0);
                REQUIRE(b <= 1.0);
                worst = std::max({worst, std::abs(a - acc), std::abs(b - pos)});
            }
    }
    CHECK(worst < 1e-9);
}

TEST_CASE("regularizer values")
{
    const LabelSpace two(2);
    const SpecializedSets one({{1}}, two);
    const std::vector<AccuracyTarget> t{{1, 0, 2.0 / 3.0}};
    const double expected = -(2.0 / 3.0 * std::log(2.0 / 3.0) + 1.0 / 3.0 * std::log(1.0 / 3.0));
    CHECK(regularizer(Matrix::Zero(1, 2), one, t, RegularizerMode::Estimated) ==
          doctest::Approx(expected).epsilon(1e-14));
    CHECK(expected == doctest::Approx(0.6365).epsilon(1e-4));
    CHECK(regularizer(Matrix::Zero(1, 2), one, t, RegularizerMode::Off) == 0.0);
    // Out-of-set pairs are skipped.
    CHECK(regularizer(Matrix::Zero(1, 2), one, {{2, 0, 0.5}}, RegularizerMode::Estimated) == 0.0);
    // Saturated model and a target at 1.
    Matrix sharp = Matrix::Zero(1, 2);
    sharp(0, 0) = 60.0;
    CHECK(regularizer(sharp, one, {{1, 0, 1.0}}, RegularizerMode::Estimated) < 1e-10);
}

TEST_CASE("objective at zero parameters composes the hand terms")
{
    const LabelSpace two(2);
    const SpecializedSets one({{1}}, two);
    LmData d;
    d.votes_l.votes.resize(1, 1);
    d.votes_l.votes << 1;
    d.y_l = {1};
    d.votes_u.votes.resize(1, 1);
    d.votes_u.votes << 1;
    d.targets = {{1, 0, 2.0 / 3.0}};
    const ObjectiveTerms t = objective(Matrix::Zero(1, 2), one, d, 1.0, RegularizerMode::Estimated, nullptr);
    const double reg = -(2.0 / 3.0 * std::log(2.0 / 3.0) + 1.0 / 3.0 * std::log(1.0 / 3.0));
    CHECK(t.labeled == doctest::Approx(std::log(1.5)));
    CHECK(t.unlabeled == doctest::Approx(std::log(5.0 / 3.0)));
    CHECK(t.regularizer == doctest::Approx(reg));
    CHECK(t.total == doctest::Approx(std::log(1.5) + std::log(5.0 / 3.0) + reg));
}

TEST_CASE("analytic gradient matches central differences")
{
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> unit(0.1, 0.9);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const Instance in = random_instance(rng, false);
        LmData d;
        d.votes_l = random_votes(rng, in.tau, 6);
        std::uniform_int_distribution<int> cls(1, in.C);
        for (int n = 0; n < 6; ++n)
            d.y_l.push_back(cls(rng));
        d.votes_u = random_votes(rng, in.tau, 25);
        for (std::size_t k = 0; k < in.tau.size(); ++k)
            for (int i : in.tau[k])
                d.targets.push_back({i, k, unit(rng)});
        const RegularizerMode mode = trial % 2 ? RegularizerMode::Oracle : RegularizerMode::Estimated;
        const double lambda = 0.7;

        Matrix g;
        objective(in.theta, in.tau, d, lambda, mode, &g);
        Matrix fd(in.theta.rows(), in.theta.cols());
        const double h = 1e-5;
        for (Eigen::Index i = 0; i < in.theta.size(); ++i) {
            Matrix p = in.theta, m = in.theta;
            p.data()[i] += h;
            m.data()[i] -= h;
            fd.data()[i] = (objective(p, in.tau, d, lambda, mode, nullptr).total -
                            objective(m, in.tau, d, lambda, mode, nullptr).total) /
                           (2 * h);
        }
        worst = std::max(worst, relative_error(g, fd));
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("objective is invariant under LF permutation")
{
    std::mt19937_64 rng(12);
    const Instance in = random_instance(rng, false);
    LmData d;
    d.votes_l = random_votes(rng, in.tau, 5);
    d.y_l.assign(5, 1);
    d.votes_u = random_votes(rng, in.tau, 20);
    for (std::size_t k = 0; k < in.tau.size(); ++k)
        d.targets.push_back({in.tau[k].front(), k, 0.7});
    const double base = objective(in.theta, in.tau, d, 1.0, RegularizerMode::Estimated, nullptr).total;

    const std::size_t K = in.tau.size();
    std::vector<std::size_t> perm(K);
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    std::vector<std::vector<int>> sets;
    Matrix theta(K, in.C);
    LmData q = d;
    for (std::size_t j = 0; j < K; ++j) {
        sets.push_back(in.tau[perm[j]]);
        theta.row(j) = in.theta.row(perm[j]);
        q.votes_l.votes.col(j) = d.votes_l.votes.col(perm[j]);
        q.votes_u.votes.col(j) = d.votes_u.votes.col(perm[j]);
    }
    for (auto& t : q.targets)
        t.lf = K - 1 - t.lf;
    const SpecializedSets tau(sets, LabelSpace(in.C));
    CHECK(objective(theta, tau, q, 1.0, RegularizerMode::Estimated, nullptr).total ==
          doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("training descends and is deterministic")
{
    synth::VoteScenarioSpec s;
    s.num_classes = 3;
    s.tau = {{1, 2, 3}, {1, 2, 3}, {1, 2}, {3}};
    synth::LfBehavior b;
    b.abstain_rate_in = 0.1;
    b.abstain_rate_out = 0.6;
    b.accuracy_in = 0.8;
    s.lfs.assign(4, b);
    s.n_samples = 600;
    s.seed = 5;
    const auto pop = synth::gen_votes(s);
    const SpecializedSets tau(s.tau, LabelSpace(3));
    LmData d;
    d.votes_l = NoisyLabelMatrix{pop.votes.votes.topRows(30)};
    d.y_l.assign(pop.truth.begin(), pop.truth.begin() + 30);
    d.votes_u = NoisyLabelMatrix{pop.votes.votes.bottomRows(570)};
    LmTrainConfig cfg;
    cfg.max_iterations = 300;
    LmTrainLog log;
    const LabelModel m = train_label_model(d, tau, cfg, &log);
    REQUIRE(log.objective.size() >= 2);
    for (std::size_t i = 1; i < log.objective.size(); ++i)
        CHECK(log.objective[i] <= log.objective[i - 1] + 1e-12);
    CHECK(log.objective.front() ==
          doctest::Approx(objective(Matrix::Zero(4, 3), tau, d, 1.0, RegularizerMode::Off, nullptr).total));
    const LabelModel again = train_label_model(d, tau, cfg);
    CHECK(again.theta == m.theta);

    LmTrainConfig bad;
    bad.lambda = -1.0;
    CHECK_THROWS_AS(train_label_model(d, tau, bad), ValidationError);
}

TEST_CASE("infer marks all-abstain rows uncovered")
{
    const LabelSpace two(2);
    const SpecializedSets tau({{1}, {2}}, two);
    NoisyLabelMatrix v;
    v.votes.resize(3, 2);
    v.votes << 1, 0, 0, 0, 1, 2;
    const ProbLabels p = infer(Matrix::Zero(2, 2), tau, v);
    CHECK(p.covered == std::vector<bool>{true, false, true});
    CHECK(p.pi(1, 0) == 0.5);
    for (int r = 0; r < 3; ++r)
        CHECK(p.pi.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(coverage(p.covered) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("majority vote")
{
    NoisyLabelMatrix v;
    v.votes.resize(3, 4);
    v.votes << 1, 1, 2, 0, 0, 0, 0, 0, 1, 2, 0, 0;
    const MajorityVote mv = majority_vote(v, 2, 9);
    CHECK(mv.labels[0] == 1);
    CHECK_FALSE(mv.covered[1]);
    CHECK(mv.labels[1] == 0);
    CHECK(mv.covered[2]);
    CHECK((mv.labels[2] == 1 || mv.labels[2] == 2));
    CHECK(majority_vote(v, 2, 9).labels == mv.labels);

    // Ties are split over both classes across many rows.
    NoisyLabelMatrix ties;
    ties.votes.resize(400, 2);
    for (int r = 0; r < 400; ++r)
        ties.votes.row(r) << 1, 2;
    const auto t = majority_vote(ties, 2, 4);
    const long ones = std::count(t.labels.begin(), t.labels.end(), 1);
    CHECK(ones > 150);
    CHECK(ones < 250);
}

TEST_CASE("zero parameters with shared sets reproduce majority vote")
{
    std::mt19937_64 rng(31);
    const LabelSpace space(4);
    const SpecializedSets tau = SpecializedSets::full(6, space);
    const NoisyLabelMatrix v = random_votes(rng, tau, 400);
    const MajorityVote mv = majority_vote(v, 4, 1);
    const ProbLabels p = infer(Matrix::Zero(6, 4), tau, v);
    const auto hard = p.hard_labels();
    int checked = 0;
    for (std::size_t r = 0; r < v.rows(); ++r) {
        std::vector<int> counts(5, 0);
        for (int k = 0; k < 6; ++k)
            counts[v.votes(r, k)]++;
        const int best = *std::max_element(counts.begin() + 1, counts.end());
        if (best == 0 || std::count(counts.begin() + 1, counts.end(), best) > 1)
            continue;
        ++checked;
        CHECK(hard[r] == mv.labels[r]);
    }
    CHECK(checked > 100);
}

TEST_CASE("imbalanced specialists: calibrated parameters overturn the vote count")
{
    // Class 1 has 4 singleton specialists, class 2 has 15. The sample fires
    // all four class-1 specialists and five class-2 specialists.
    const LabelSpace two(2);
    std::vector<std::vector<int>> sets(4, std::vector<int>{1});
    sets.resize(19, std::vector<int>{2});
    const SpecializedSets tau(sets, two);
    Matrix theta = Matrix::Zero(19, 2);
    for (int k = 0; k < 4; ++k)
        theta(k, 1) = -2.0;  // class-1 specialists rarely fire on class 2
    std::vector<int> row(19, 0);
    std::fill_n(row.begin(), 4, 1);
    std::fill_n(row.begin() + 4, 5, 2);
    NoisyLabelMatrix v;
    v.votes.resize(1, 19);
    for (int k = 0; k < 19; ++k)
        v.votes(0, k) = row[k];
    CHECK(majority_vote(v, 2, 0).labels[0] == 2);
    CHECK(posterior(theta, tau, row)(0) > 0.5);
}

TEST_CASE("label model beats majority vote with heterogeneous accuracies")
{
    synth::VoteScenarioSpec s;
    s.num_classes = 4;
    s.tau = SpecializedSets::full(8, LabelSpace(4)).sets();
    const double acc[8] = {0.95, 0.9, 0.85, 0.8, 0.7, 0.65, 0.6, 0.6};
    for (double a : acc) {
        synth::LfBehavior b;
        b.abstain_rate_in = 0.2;
        b.abstain_rate_out = 0.2;
        b.accuracy_in = a;
        s.lfs.push_back(b);
    }
    s.n_samples = 20040;
    s.seed = 99;
    const auto pop = synth::gen_votes(s);
    const SpecializedSets tau(s.tau, LabelSpace(4));
    LmData d;
    d.votes_l = NoisyLabelMatrix{pop.votes.votes.topRows(40)};
    d.y_l.assign(pop.truth.begin(), pop.truth.begin() + 40);
    d.votes_u = NoisyLabelMatrix{pop.votes.votes.bottomRows(20000)};
    const std::vector<int> truth_u(pop.truth.begin() + 40, pop.truth.end());
    const LabelModel m = train_label_model(d, tau, LmTrainConfig{});
    const ProbLabels p = infer(m.theta, tau, d.votes_u);
    const MajorityVote mv = majority_vote(d.votes_u, 4, 3);
    const double lm_acc = covered_accuracy(p.hard_labels(), p.covered, truth_u);
    const double mv_acc = covered_accuracy(mv.labels, mv.covered, truth_u);
    CHECK(lm_acc > mv_acc);
}

TEST_CASE("config validation and mode names")
{
    CHECK(parse_mode("off") == RegularizerMode::Off);
    CHECK(parse_mode("estimated") == RegularizerMode::Estimated);
    CHECK(parse_mode("oracle") == RegularizerMode::Oracle);
    CHECK(to_string(RegularizerMode::Oracle) == "oracle");
    CHECK_THROWS_AS(parse_mode("sometimes"), ValidationError);
    LmTrainConfig c;
    c.max_iterations = -1;
    CHECK_THROWS_AS(c.validate(), ValidationError);
}
