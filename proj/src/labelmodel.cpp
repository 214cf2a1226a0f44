#include "dpssl/labelmodel.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "dpssl/random.hpp"

namespace dpssl::labelmodel {

namespace {

constexpr double kProbClamp = 1e-12;

double softplus(double t) { return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }
double sigmoid(double t)
{
    if (t >= 0.0)
        return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

double log_sum_exp(const Vector& v)
{
    const double m = v.maxCoeff();
    if (!std::isfinite(m))
        return m;
    return m + std::log((v.array() - m).exp().sum());
}

void check_vote(int vote, std::size_t k, const SpecializedSets& tau)
{
    if (vote != kAbstain && !tau.contains(k, vote))
        throw ValidationError("illegal vote " + std::to_string(vote) + " for LF " +
                              std::to_string(k));
}

// log phi and d log phi / d theta_ky.
struct LogPotential {
    double value;
    double slope;
};

LogPotential log_potential(double t, bool y_in, int vote, int y, bool vote_in)
{
    if (y_in && vote_in) {
        if (vote == y)
            return {softplus(t), sigmoid(t)};
        return {-softplus(t), -sigmoid(t)};
    }
    if (!y_in && vote_in)
        return {t, 1.0};
    return {0.0, 0.0};
}

// log Phi^k(y, {0} ∪ tau_k) and its derivative in theta_ky.
struct LogFactor {
    double value;
    double slope;
};

LogFactor log_factor(double t, bool y_in, std::size_t set_size)
{
    const double m = static_cast<double>(set_size);
    if (set_size == 0)
        return {0.0, 0.0};
    if (y_in) {
        // F = 2 + e + (m-1)/(1+e)
        const double e = std::exp(std::min(t, 700.0));
        const double s = 1.0 + e;
        double value;
        if (t > 0.0)
            value = t + std::log1p((2.0 + (m - 1.0) / s) * std::exp(-t));
        else
            value = std::log(2.0 + e + (m - 1.0) / s);
        // dF/dt / F with F' = e - (m-1) e / s^2
        const double f_over_e = 1.0 + (2.0 + (m - 1.0) / s) / e;
        const double slope = (1.0 - (m - 1.0) / (s * s)) / f_over_e;
        return {value, slope};
    }
    // F = 1 + m e
    const double value = t > 0.0 ? t + std::log(m + std::exp(-t)) : std::log1p(m * std::exp(t));
    const double slope = m / (m + std::exp(-t));
    return {value, slope};
}

// Distinct vote rows with multiplicities, in lexicographic order.
struct Patterns {
    std::vector<std::vector<int>> rows;
    std::vector<double> counts;
};

Patterns collapse(const NoisyLabelMatrix& votes)
{
    std::map<std::vector<int>, double> tally;
    std::vector<int> row(votes.cols());
    for (std::size_t n = 0; n < votes.rows(); ++n) {
        for (std::size_t k = 0; k < votes.cols(); ++k)
            row[k] = votes.votes(n, k);
        tally[row] += 1.0;
    }
    Patterns p;
    for (auto& [r, c] : tally) {
        p.rows.push_back(r);
        p.counts.push_back(c);
    }
    return p;
}

// Unnormalized log scores s_y = sum_k log phi(y, v_k).
Vector row_scores(const Matrix& theta, const SpecializedSets& tau, const std::vector<int>& row)
{
    const int C = static_cast<int>(theta.cols());
    Vector s = Vector::Zero(C);
    for (std::size_t k = 0; k < tau.size(); ++k) {
        const int v = row[k];
        if (v == kAbstain)
            continue;
        check_vote(v, k, tau);
        for (int y = 1; y <= C; ++y)
            s(y - 1) += log_potential(theta(k, y - 1), tau.contains(k, y), v, y, true).value;
    }
    return s;
}

void add_row_gradient(const Matrix& theta, const SpecializedSets& tau, const std::vector<int>& row,
                      const Vector& weight_per_y, Matrix& grad)
{
    const int C = static_cast<int>(theta.cols());
    for (std::size_t k = 0; k < tau.size(); ++k) {
        const int v = row[k];
        if (v == kAbstain)
            continue;
        for (int y = 1; y <= C; ++y) {
            if (weight_per_y(y - 1) == 0.0)
                continue;
            grad(k, y - 1) +=
                weight_per_y(y - 1) *
                log_potential(theta(k, y - 1), tau.contains(k, y), v, y, true).slope;
        }
    }
}

// log Z and d log Z / d theta.
double log_normalizer(const Matrix& theta, const SpecializedSets& tau, Matrix* grad, double scale)
{
    const int C = static_cast<int>(theta.cols());
    const std::size_t K = tau.size();
    Vector log_prod = Vector::Zero(C);
    Matrix slopes(K, C);
    for (std::size_t k = 0; k < K; ++k) {
        for (int y = 1; y <= C; ++y) {
            auto f = log_factor(theta(k, y - 1), tau.contains(k, y), tau[k].size());
            log_prod(y - 1) += f.value;
            slopes(k, y - 1) = f.slope;
        }
    }
    const double lz = log_sum_exp(log_prod);
    if (grad) {
        const Vector marg = (log_prod.array() - lz).exp();
        for (std::size_t k = 0; k < K; ++k)
            for (int y = 0; y < C; ++y)
                (*grad)(k, y) += scale * marg(y) * slopes(k, y);
    }
    return lz;
}

// Coefficients of the LF-k column in the closed-form ratio
// P = sum_y A_y W_y / sum_y B_y W_y, with W_y = prod_{k'!=k} Phi^{k'}(y, ·).
struct Coef {
    double a, da, b, db;
};

Coef ratio_coefficients(double t, int y, int i, bool y_in, std::size_t set_size, bool positive)
{
    const double m = static_cast<double>(set_size);
    const double e = std::exp(t);
    const double s = 1.0 + e;
    Coef c{};
    if (positive) {
        // numerator only y = i; denominator phi(y, i)
        if (y == i) {
            c.a = s;
            c.da = e;
            c.b = s;
            c.db = e;
        } else if (y_in) {
            c.b = 1.0 / s;
            c.db = -e / (s * s);
        } else {
            c.b = e;
            c.db = e;
        }
        return c;
    }
    if (y_in) {
        c.b = s + (m - 1.0) / s;
        c.db = e - (m - 1.0) * e / (s * s);
    } else {
        c.b = m * e;
        c.db = m * e;
    }
    if (y == i) {
        c.a = s;
        c.da = e;
    } else if (y_in) {
        c.a = s + (m - 2.0) / s;
        c.da = e - (m - 2.0) * e / (s * s);
    } else {
        c.a = (m - 1.0) * e;
        c.da = (m - 1.0) * e;
    }
    return c;
}

// Closed-form conditional accuracy with optional gradient dP/dtheta.
double closed_form_accuracy(const Matrix& theta, const SpecializedSets& tau, int i, std::size_t k,
                            bool positive, Matrix* dP)
{
    const int C = static_cast<int>(theta.cols());
    const std::size_t K = tau.size();
    if (k >= K || i < 1 || i > C)
        throw ValidationError("conditional accuracy: index out of range");
    if (!tau.contains(k, i))
        throw ValidationError("conditional accuracy: class " + std::to_string(i) +
                              " is not in tau[" + std::to_string(k) + "]");

    Vector log_w = Vector::Zero(C);
    for (std::size_t kk = 0; kk < K; ++kk) {
        if (kk == k)
            continue;
        for (int y = 1; y <= C; ++y)
            log_w(y - 1) += log_factor(theta(kk, y - 1), tau.contains(kk, y), tau[kk].size()).value;
    }
    const Vector w = (log_w.array() - log_w.maxCoeff()).exp();

    std::vector<Coef> coef(C);
    double num = 0.0, den = 0.0;
    for (int y = 1; y <= C; ++y) {
        coef[y - 1] =
            ratio_coefficients(theta(k, y - 1), y, i, tau.contains(k, y), tau[k].size(), positive);
        num += coef[y - 1].a * w(y - 1);
        den += coef[y - 1].b * w(y - 1);
    }
    const double p = num / den;
    if (dP) {
        dP->setZero(K, C);
        for (int y = 0; y < C; ++y) {
            const Coef& c = coef[y];
            (*dP)(k, y) = (c.da - p * c.db) * w(y) / den;
            const double common = (c.a - p * c.b) * w(y) / den;
            for (std::size_t kk = 0; kk < K; ++kk) {
                if (kk == k)
                    continue;
                (*dP)(kk, y) =
                    common * log_factor(theta(kk, y), tau.contains(kk, y + 1), tau[kk].size()).slope;
            }
        }
    }
    return p;
}

double regularizer_impl(const Matrix& theta, const SpecializedSets& tau,
                        const std::vector<AccuracyTarget>& targets, RegularizerMode mode,
                        Matrix* grad, double scale)
{
    if (mode == RegularizerMode::Off)
        return 0.0;
    const bool positive = mode == RegularizerMode::Oracle;
    double total = 0.0;
    Matrix dP;
    for (const auto& t : targets) {
        if (t.lf >= tau.size() || !tau.contains(t.lf, t.cls))
            continue;
        const double raw = closed_form_accuracy(theta, tau, t.cls, t.lf, positive, grad ? &dP : nullptr);
        const double p = std::clamp(raw, kProbClamp, 1.0 - kProbClamp);
        const double a = t.value;
        total += -(a * std::log(p) + (1.0 - a) * std::log(1.0 - p));
        if (grad && raw == p)
            *grad += scale * (-a / p + (1.0 - a) / (1.0 - p)) * dP;
    }
    return total;
}

void check_finite(const Matrix& m, const char* what)
{
    if (!m.allFinite())
        throw NumericalError(std::string("label model: non-finite ") + what);
}

}  // namespace

RegularizerMode parse_mode(const std::string& name)
{
    if (name == "off")
        return RegularizerMode::Off;
    if (name == "estimated")
        return RegularizerMode::Estimated;
    if (name == "oracle")
        return RegularizerMode::Oracle;
    throw ValidationError("unknown regularizer mode '" + name + "' (off|estimated|oracle)");
}

std::string to_string(RegularizerMode mode)
{
    switch (mode) {
    case RegularizerMode::Off: return "off";
    case RegularizerMode::Estimated: return "estimated";
    case RegularizerMode::Oracle: return "oracle";
    }
    return "off";
}

void LmTrainConfig::validate() const
{
    if (!(lambda >= 0.0))
        throw ValidationError("label model: lambda must be >= 0");
    if (!(learning_rate > 0.0))
        throw ValidationError("label model: learning_rate must be positive");
    if (max_iterations < 0)
        throw ValidationError("label model: max_iterations must be >= 0");
    if (!(tolerance >= 0.0))
        throw ValidationError("label model: tolerance must be >= 0");
    if (!(init_scale >= 0.0))
        throw ValidationError("label model: init_scale must be >= 0");
}

double potential(const Matrix& theta, int y, int vote, std::size_t k, const SpecializedSets& tau)
{
    check_vote(vote, k, tau);
    const bool vote_in = vote != kAbstain;
    return std::exp(log_potential(theta(k, y - 1), tau.contains(k, y), vote, y, vote_in).value);
}

double phi_sum(const Matrix& theta, int y, std::size_t k, const std::vector<int>& subset,
               const SpecializedSets& tau)
{
    double sum = 0.0;
    for (int v : subset)
        sum += potential(theta, y, v, k, tau);
    return sum;
}

Normalizer normalizer(const Matrix& theta, const SpecializedSets& tau)
{
    if (static_cast<std::size_t>(theta.rows()) != tau.size())
        throw ValidationError("normalizer: theta rows differ from K");
    Normalizer out;
    if (tau.size() == 0) {
        out.log_z = std::log(static_cast<double>(theta.cols()));
        out.z = static_cast<double>(theta.cols());
        return out;
    }
    out.log_z = log_normalizer(theta, tau, nullptr, 0.0);
    if (!std::isfinite(out.log_z))
        throw NumericalError("normalizer: non-finite log Z");
    out.z = std::exp(out.log_z);
    return out;
}

Vector posterior(const Matrix& theta, const SpecializedSets& tau, const std::vector<int>& vote_row)
{
    if (vote_row.size() != tau.size())
        throw ValidationError("posterior: vote row length differs from K");
    Vector s = row_scores(theta, tau, vote_row);
    return (s.array() - log_sum_exp(s)).exp();
}

double marginal_loglik(const Matrix& theta, const SpecializedSets& tau,
                       const NoisyLabelMatrix& votes)
{
    const Patterns p = collapse(votes);
    double ll = 0.0;
    for (std::size_t r = 0; r < p.rows.size(); ++r)
        ll += p.counts[r] * log_sum_exp(row_scores(theta, tau, p.rows[r]));
    return ll - static_cast<double>(votes.rows()) * normalizer(theta, tau).log_z;
}

double labeled_ce(const Matrix& theta, const SpecializedSets& tau, const NoisyLabelMatrix& votes_l,
                  const std::vector<int>& y_l)
{
    if (y_l.size() != votes_l.rows())
        throw ValidationError("labeled_ce: label count differs from vote rows");
    double ce = 0.0;
    std::vector<int> row(votes_l.cols());
    for (std::size_t n = 0; n < votes_l.rows(); ++n) {
        for (std::size_t k = 0; k < votes_l.cols(); ++k)
            row[k] = votes_l.votes(n, k);
        Vector s = row_scores(theta, tau, row);
        ce += log_sum_exp(s) - s(y_l[n] - 1);
    }
    return ce;
}

double conditional_accuracy(const Matrix& theta, const SpecializedSets& tau, int i, std::size_t k)
{
    return closed_form_accuracy(theta, tau, i, k, false, nullptr);
}

double conditional_accuracy_positive(const Matrix& theta, const SpecializedSets& tau, int i,
                                     std::size_t k)
{
    return closed_form_accuracy(theta, tau, i, k, true, nullptr);
}

double regularizer(const Matrix& theta, const SpecializedSets& tau,
                   const std::vector<AccuracyTarget>& targets, RegularizerMode mode)
{
    return regularizer_impl(theta, tau, targets, mode, nullptr, 0.0);
}

ObjectiveTerms objective(const Matrix& theta, const SpecializedSets& tau, const LmData& data,
                         double lambda, RegularizerMode mode, Matrix* grad)
{
    if (grad)
        grad->setZero(theta.rows(), theta.cols());
    ObjectiveTerms out;

    std::vector<int> row(tau.size());
    for (std::size_t n = 0; n < data.votes_l.rows(); ++n) {
        for (std::size_t k = 0; k < tau.size(); ++k)
            row[k] = data.votes_l.votes(n, k);
        const Vector s = row_scores(theta, tau, row);
        const double lse = log_sum_exp(s);
        const int y = data.y_l[n];
        out.labeled += lse - s(y - 1);
        if (grad) {
            Vector w = (s.array() - lse).exp();
            w(y - 1) -= 1.0;
            add_row_gradient(theta, tau, row, w, *grad);
        }
    }

    if (data.votes_u.rows() > 0) {
        const Patterns p = collapse(data.votes_u);
        double ll = 0.0;
        for (std::size_t r = 0; r < p.rows.size(); ++r) {
            const Vector s = row_scores(theta, tau, p.rows[r]);
            const double lse = log_sum_exp(s);
            ll += p.counts[r] * lse;
            if (grad) {
                const Vector w = -p.counts[r] * (s.array() - lse).exp();
                add_row_gradient(theta, tau, p.rows[r], w, *grad);
            }
        }
        const double n_u = static_cast<double>(data.votes_u.rows());
        const double lz = log_normalizer(theta, tau, grad, n_u);
        out.unlabeled = -(ll - n_u * lz);
    }

    out.regularizer = regularizer_impl(theta, tau, data.targets, mode, grad, lambda);
    out.total = out.labeled + out.unlabeled + lambda * out.regularizer;
    if (!std::isfinite(out.total))
        throw NumericalError("label model: non-finite objective");
    if (grad)
        check_finite(*grad, "gradient");
    return out;
}

LabelModel train_label_model(const LmData& data, const SpecializedSets& tau,
                             const LmTrainConfig& config, LmTrainLog* log)
{
    config.validate();
    const std::size_t K = tau.size();
    const int C = tau.num_classes();
    if (data.votes_l.rows() > 0 && data.votes_l.cols() != K)
        throw ValidationError("label model: labeled votes have the wrong number of LFs");
    if (data.votes_u.rows() > 0 && data.votes_u.cols() != K)
        throw ValidationError("label model: unlabeled votes have the wrong number of LFs");
    if (data.y_l.size() != data.votes_l.rows())
        throw ValidationError("label model: label count differs from labeled vote rows");
    if (data.votes_l.rows() == 0 && config.mode == RegularizerMode::Off && data.votes_u.rows() == 0)
        throw ValidationError("label model: no training data");
    const LabelSpace space(C);
    for (int y : data.y_l)
        if (!space.is_class(y))
            throw ValidationError("label model: labeled class outside 1..C");

    LabelModel model{tau, Matrix::Constant(K, C, config.init_offset)};
    if (config.init_scale > 0.0) {
        auto rng = make_stream(config.seed, streams::kThetaInit);
        std::normal_distribution<double> normal(0.0, config.init_scale);
        for (std::size_t k = 0; k < K; ++k)
            for (int y = 0; y < C; ++y)
                model.theta(k, y) += normal(rng);
    }

    const double scale =
        std::max(1.0, static_cast<double>(data.votes_l.rows() + data.votes_u.rows()));
    Matrix grad, trial_grad;
    ObjectiveTerms current = objective(model.theta, tau, data, config.lambda, config.mode, &grad);
    LmTrainLog local;
    local.objective.push_back(current.total);
    double step = config.learning_rate;

    for (int it = 0; it < config.max_iterations; ++it) {
        const Matrix g = grad / scale;
        const double g2 = g.squaredNorm();
        if (g2 == 0.0) {
            local.converged = true;
            break;
        }
        bool accepted = false;
        ObjectiveTerms trial;
        Matrix candidate;
        for (int bt = 0; bt < 60; ++bt) {
            candidate = model.theta - step * g;
            trial = objective(candidate, tau, data, config.lambda, config.mode, &trial_grad);
            if (trial.total / scale <= current.total / scale - 1e-4 * step * g2) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        local.iterations = it + 1;
        if (!accepted) {
            local.converged = true;  // no descent direction left at machine precision
            break;
        }
        const double change = current.total - trial.total;
        model.theta = candidate;
        grad = trial_grad;
        current = trial;
        local.objective.push_back(current.total);
        step = std::min(step * 2.0, 1e6);
        if (change <= config.tolerance * std::max(1.0, std::abs(current.total))) {
            local.converged = true;
            break;
        }
    }
    check_finite(model.theta, "parameters");
    if (log)
        *log = std::move(local);
    return model;
}

ProbLabels infer(const Matrix& theta, const SpecializedSets& tau, const NoisyLabelMatrix& votes)
{
    const int C = static_cast<int>(theta.cols());
    ProbLabels out;
    out.pi.resize(votes.rows(), C);
    out.covered.assign(votes.rows(), false);
    std::vector<int> row(votes.cols());
    for (std::size_t n = 0; n < votes.rows(); ++n) {
        if (!votes.row_covered(n)) {
            out.pi.row(n).setConstant(1.0 / C);
            continue;
        }
        for (std::size_t k = 0; k < votes.cols(); ++k)
            row[k] = votes.votes(n, k);
        out.pi.row(n) = posterior(theta, tau, row).transpose();
        out.covered[n] = true;
    }
    return out;
}

MajorityVote majority_vote(const NoisyLabelMatrix& votes, int num_classes, std::uint64_t seed)
{
    MajorityVote out;
    out.labels.assign(votes.rows(), kAbstain);
    out.covered.assign(votes.rows(), false);
    std::vector<int> counts(num_classes + 1);
    std::vector<int> tied;
    for (std::size_t n = 0; n < votes.rows(); ++n) {
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t k = 0; k < votes.cols(); ++k) {
            const int v = votes.votes(n, k);
            if (v < 0 || v > num_classes)
                throw ValidationError("majority_vote: vote outside 0..C");
            if (v != kAbstain)
                ++counts[v];
        }
        const int best = *std::max_element(counts.begin() + 1, counts.end());
        if (best == 0)
            continue;
        tied.clear();
        for (int c = 1; c <= num_classes; ++c)
            if (counts[c] == best)
                tied.push_back(c);
        out.covered[n] = true;
        if (tied.size() == 1) {
            out.labels[n] = tied.front();
        } else {
            auto rng = make_stream(seed ^ streams::kTieBreak, n);
            std::uniform_int_distribution<std::size_t> pick(0, tied.size() - 1);
            out.labels[n] = tied[pick(rng)];
        }
    }
    return out;
}

}  // namespace dpssl::labelmodel
