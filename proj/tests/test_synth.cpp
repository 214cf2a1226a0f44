#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dpssl/synth.hpp"

using namespace dpssl;
using namespace dpssl::synth;

namespace {

VoteScenarioSpec uniform_spec(int C, std::vector<std::vector<int>> tau, LfBehavior b, std::size_t n,
                              std::uint64_t seed)
{
    VoteScenarioSpec s;
    s.num_classes = C;
    s.lfs.assign(tau.size(), b);
    s.tau = std::move(tau);
    s.n_samples = n;
    s.seed = seed;
    return s;
}

}  // namespace

TEST_CASE("brute-force normalizer hand values")
{
    const LabelSpace two(2), three(3);
    CHECK(brute_force_Z(Matrix::Zero(1, 2), SpecializedSets({{1}}, two), two) == doctest::Approx(5.0));
    CHECK(brute_force_Z(Matrix::Zero(1, 3), SpecializedSets({{1, 2}}, three), three) ==
          doctest::Approx(10.0));
    CHECK(brute_force_Z(Matrix::Zero(0, 3), SpecializedSets({}, three), three) == 3.0);
    CHECK_THROWS_AS(brute_force_Z(Matrix::Zero(6, 3), SpecializedSets::full(6, three), three, 100),
                    ValidationError);
}

TEST_CASE("brute-force posterior hand values")
{
    const LabelSpace two(2);
    const SpecializedSets tau({{1, 2}, {1, 2}}, two);
    const Vector agree = brute_force_posterior(Matrix::Zero(2, 2), tau, {1, 1});
    CHECK(agree(0) == doctest::Approx(4.0 / 4.25).epsilon(1e-14));
    CHECK(agree(1) == doctest::Approx(0.25 / 4.25).epsilon(1e-14));
    CHECK(agree(0) == doctest::Approx(0.9412).epsilon(1e-4));
    const Vector conflict = brute_force_posterior(Matrix::Zero(2, 2), tau, {1, 2});
    CHECK(conflict(0) == doctest::Approx(0.5));
    const Vector none = brute_force_posterior(Matrix::Zero(2, 2), tau, {0, 0});
    CHECK(none(1) == doctest::Approx(0.5));
    CHECK_THROWS_AS(brute_force_posterior(Matrix::Zero(1, 2), SpecializedSets({{1}}, two), {2}),
                    ValidationError);
}

TEST_CASE("brute-force conditional accuracy hand value")
{
    const LabelSpace two(2);
    // P(z_hat = z, z_hat != 0) = 2/5 and P(z_hat != 0) = 3/5.
    const auto [acc, pos] = brute_force_conditional_accuracy(Matrix::Zero(1, 2), SpecializedSets({{1}}, two), 1, 0);
    CHECK(acc == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(pos == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("gen_votes noiseless and silent limits")
{
    LfBehavior perfect;
    perfect.abstain_rate_in = 0.0;
    perfect.abstain_rate_out = 0.0;
    perfect.accuracy_in = 1.0;
    const auto full = SpecializedSets::full(3, LabelSpace(4)).sets();
    const auto pop = gen_votes(uniform_spec(4, full, perfect, 500, 3));
    for (std::size_t n = 0; n < 500; ++n)
        for (int k = 0; k < 3; ++k)
            REQUIRE(pop.votes.votes(n, k) == pop.truth[n]);

    LfBehavior silent;
    silent.abstain_rate_in = 1.0;
    silent.abstain_rate_out = 1.0;
    const auto quiet = gen_votes(uniform_spec(4, full, silent, 200, 3));
    CHECK(quiet.votes.votes.isZero());
}

TEST_CASE("gen_votes rejects degenerate specs")
{
    LfBehavior b;
    CHECK_THROWS_AS(gen_votes(uniform_spec(3, {{1}}, b, 0, 1)), ValidationError);
    CHECK_THROWS_AS(gen_votes(uniform_spec(3, {{}, {}}, b, 10, 1)), ValidationError);
    b.accuracy_in = 1.5;
    CHECK_THROWS_AS(gen_votes(uniform_spec(3, {{1}}, b, 10, 1)), ValidationError);
}

TEST_CASE("gen_votes matches its accuracy parameter and passes validation")
{
    LfBehavior b;
    b.abstain_rate_in = 0.2;
    b.abstain_rate_out = 0.4;
    b.accuracy_in = 0.8;
    const LabelSpace space(3);
    const std::vector<std::vector<int>> tau{{1, 2, 3}, {1, 2}, {3}};
    const auto pop = gen_votes(uniform_spec(3, tau, b, 50000, 11));
    CHECK_NOTHROW(validate_votes(pop.votes, SpecializedSets(tau, space), space));
    double agree = 0.0, voted = 0.0;
    for (std::size_t n = 0; n < pop.truth.size(); ++n) {
        const int v = pop.votes.votes(n, 0);
        if (v == 0)
            continue;
        voted += 1.0;
        agree += v == pop.truth[n] ? 1.0 : 0.0;
    }
    CHECK(std::abs(agree / voted - 0.8) < 0.01);
}

TEST_CASE("gen_votes is deterministic and prefix-stable")
{
    LfBehavior b;
    b.abstain_rate_out = 0.5;
    b.accuracy_in = 0.7;
    const std::vector<std::vector<int>> tau{{1, 2}, {2, 3}, {1}};
    const auto a = gen_votes(uniform_spec(3, tau, b, 300, 42));
    const auto again = gen_votes(uniform_spec(3, tau, b, 300, 42));
    const auto longer = gen_votes(uniform_spec(3, tau, b, 600, 42));
    CHECK(a.votes.votes == again.votes.votes);
    CHECK(a.votes.votes == longer.votes.votes.topRows(300));
    const auto other = gen_votes(uniform_spec(3, tau, b, 300, 43));
    CHECK(a.votes.votes != other.votes.votes);
}

TEST_CASE("gen_votes conditional independence")
{
    LfBehavior b;
    b.abstain_rate_in = 0.1;
    b.abstain_rate_out = 0.1;
    b.accuracy_in = 0.75;
    const auto full = SpecializedSets::full(2, LabelSpace(2)).sets();
    const auto pop = gen_votes(uniform_spec(2, full, b, 100000, 9));
    for (int y = 1; y <= 2; ++y) {
        double n = 0, s0 = 0, s1 = 0, s01 = 0;
        for (std::size_t r = 0; r < pop.truth.size(); ++r) {
            if (pop.truth[r] != y)
                continue;
            auto code = [&](int v) { return v == 1 ? 1.0 : (v == 0 ? 0.0 : -1.0); };
            const double a = code(pop.votes.votes(r, 0)), c = code(pop.votes.votes(r, 1));
            n += 1;
            s0 += a;
            s1 += c;
            s01 += a * c;
        }
        CHECK(std::abs(s01 / n - (s0 / n) * (s1 / n)) < 0.01);
    }
}

TEST_CASE("empirical accuracy")
{
    const LabelSpace two(2);
    LfBehavior perfect;
    perfect.abstain_rate_out = 0.0;
    const std::vector<std::vector<int>> tau{{1, 2}, {1, 2}};
    auto spec = uniform_spec(2, tau, perfect, 1000, 1);
    spec.lfs[1].abstain_rate_in = 1.0;
    spec.lfs[1].abstain_rate_out = 1.0;
    const auto pop = gen_votes(spec);
    const auto t = empirical_accuracy(pop.votes, pop.truth, SpecializedSets(tau, two));
    CHECK(t.accuracy(0, 0) == 1.0);
    CHECK(t.accuracy(1, 0) == 1.0);
    CHECK(t.positive(0, 0) == 1.0);
    CHECK_FALSE(t.accuracy_defined(0, 1));
    CHECK_FALSE(t.positive_defined(1, 1));

    LfBehavior coin;
    coin.abstain_rate_out = 0.0;
    coin.accuracy_in = 0.5;
    const auto noisy = gen_votes(uniform_spec(2, {{1, 2}}, coin, 50000, 2));
    const auto r = empirical_accuracy(noisy.votes, noisy.truth, SpecializedSets({{1, 2}}, two));
    CHECK(std::abs(r.accuracy(0, 0) - 0.5) < 0.01);
    CHECK(std::abs(r.accuracy(1, 0) - 0.5) < 0.01);
}

TEST_CASE("toy features: views, splits, determinism")
{
    ToyFeatureSpec s;
    s.num_classes = 3;
    s.dim = 4;
    s.positions = 3;
    s.sigma_weak = 0.0;
    s.sigma_strong = 0.5;
    s.n_labeled = 7;
    s.n_unlabeled = 20;
    s.n_test = 10;
    s.seed = 4;
    const auto d = gen_toy_features(s);
    CHECK(d.size() == 37);
    CHECK(d.raw.cols() == 12);
    CHECK(d.weak == d.raw);
    CHECK(d.strong != d.raw);
    CHECK(d.indices(Split::Labeled).size() == 7);
    CHECK(d.indices(Split::Unlabeled).size() == 20);
    CHECK(d.indices(Split::Test).size() == 10);
    const auto l = d.labeled_subset();
    std::vector<int> per_class(4, 0);
    for (int y : l.labels)
        per_class[y]++;
    CHECK(per_class[1] >= 2);
    CHECK(per_class[2] >= 2);
    CHECK(per_class[3] >= 2);
    const auto again = gen_toy_features(s);
    CHECK(again.raw == d.raw);
    CHECK(again.strong == d.strong);

    s.n_labeled = 2;
    CHECK_THROWS_AS(gen_toy_features(s), ValidationError);
    s.n_labeled = 7;
    s.sigma_weak = 1.0;
    CHECK_THROWS_AS(gen_toy_features(s), ValidationError);
}

TEST_CASE("class means honour the requested separation")
{
    ToyFeatureSpec s;
    s.num_classes = 6;
    s.dim = 8;
    s.mean_separation = 6.0;
    const Matrix m = class_means(s);
    for (int a = 0; a < 6; ++a)
        for (int b = a + 1; b < 6; ++b)
            CHECK((m.row(a) - m.row(b)).norm() >= 6.0 - 1e-12);
}

TEST_CASE("identical class means give chance-level separability")
{
    ToyFeatureSpec s;
    s.num_classes = 2;
    s.dim = 2;
    s.positions = 1;
    s.means = {{0.0, 0.0}, {0.0, 0.0}};
    s.n_labeled = 2;
    s.n_unlabeled = 4000;
    s.seed = 8;
    const auto d = gen_toy_features(s);
    // Best threshold on the first coordinate cannot beat chance.
    long right = 0;
    for (std::size_t n = 0; n < d.size(); ++n)
        right += ((d.raw(n, 0) > 0.0 ? 1 : 2) == d.truth[n]) ? 1 : 0;
    CHECK(std::abs(double(right) / double(d.size()) - 0.5) < 0.03);
}
