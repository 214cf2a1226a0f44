#include "dpssl/mcl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "adam.hpp"
#include "dpssl/random.hpp"

namespace dpssl::mcl {

namespace {

Vector softmax(const Vector& logits)
{
    const Vector e = (logits.array() - logits.maxCoeff()).exp();
    return e / e.sum();
}

// Cached forward pass of the feature transform.
struct Transformed {
    Matrix weights;  // P×K
    Matrix pooled;   // K×D
};

Transformed forward(const Matrix& f, const LfHeads& heads)
{
    const std::size_t K = heads.size();
    const Eigen::Index P = f.rows(), D = f.cols();
    Transformed t;
    t.pooled.resize(K, D);
    if (!heads.feature_transform) {
        const Eigen::RowVectorXd mean = f.colwise().mean();
        for (std::size_t k = 0; k < K; ++k)
            t.pooled.row(k) = mean;
        return t;
    }
    t.weights.resize(P, K);
    for (Eigen::Index j = 0; j < P; ++j) {
        Vector s(K);
        for (std::size_t k = 0; k < K; ++k)
            s(k) = -heads.beta(k) * (f.row(j) - heads.params.centers.row(k)).squaredNorm();
        t.weights.row(j) = softmax(s).transpose();
    }
    t.pooled.setZero();
    for (std::size_t k = 0; k < K; ++k)
        for (Eigen::Index j = 0; j < P; ++j)
            t.pooled.row(k) += t.weights(j, k) * (f.row(j) - heads.params.centers.row(k));
    return t;
}

// Backpropagates G = dL/dpooled (K×D) into centers and log-betas.
void backward(const Matrix& f, const LfHeads& heads, const Transformed& t, const Matrix& G,
              HeadParams& grad)
{
    if (!heads.feature_transform)
        return;
    const std::size_t K = heads.size();
    const Eigen::Index P = f.rows();
    for (Eigen::Index j = 0; j < P; ++j) {
        Vector a(K);
        for (std::size_t k = 0; k < K; ++k)
            a(k) = G.row(k).dot(f.row(j) - heads.params.centers.row(k));
        const double a_bar = t.weights.row(j).dot(a.transpose());
        for (std::size_t k = 0; k < K; ++k) {
            const double w = t.weights(j, k);
            const double ds = w * (a(k) - a_bar);
            const Eigen::RowVectorXd resid = f.row(j) - heads.params.centers.row(k);
            const double beta = heads.beta(k);
            grad.centers.row(k) += -w * G.row(k) + ds * 2.0 * beta * resid;
            grad.log_beta(k) += ds * (-resid.squaredNorm() * beta);
        }
    }
}

// Softmax cross-entropy of a linear head; accumulates weight * gradient.
double head_ce(const Matrix& W, const Vector& b, const Vector& x, int target, Matrix* dW,
               Vector* db, Eigen::Ref<Eigen::RowVectorXd> dx, double weight, bool want_grad)
{
    const Vector logits = W * x + b;
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    const double loss = lse - logits(target);
    if (want_grad) {
        Vector d = (logits.array() - lse).exp();
        d(target) -= 1.0;
        d *= weight;
        *dW += d * x.transpose();
        *db += d;
        dx += (W.transpose() * d).transpose();
    }
    return loss;
}

int restricted_target(const LfHeads& heads, std::size_t k, int y)
{
    const int idx = heads.tau.index_of(k, y);
    return idx < 0 ? 0 : idx + 1;
}

void require_specialized(const LfHeads& heads)
{
    if (heads.tau.size() != heads.size() || heads.params.restricted_w.size() != heads.size())
        throw ValidationError("LF heads have not been specialized yet");
}

}  // namespace

int MclConfig::selected() const
{
    return static_cast<int>(std::floor(rho * num_heads + 1e-9));
}

void MclConfig::validate(int num_classes) const
{
    if (num_heads < 1)
        throw ValidationError("mcl: K must be positive");
    if (!(rho > 0.0 && rho <= 1.0))
        throw ValidationError("mcl: rho must lie in (0, 1]");
    if (selected() < 1)
        throw ValidationError("mcl: floor(rho*K) must be at least 1");
    if (!(epsilon > 1.0 / num_classes && epsilon < 1.0))
        throw ValidationError("mcl: epsilon must lie in (1/C, 1)");
    if (!(gamma > 0.0 && gamma <= 1.0))
        throw ValidationError("mcl: gamma must lie in (0, 1]");
    if (!(learning_rate > 0.0))
        throw ValidationError("mcl: learning_rate must be positive");
    if (warmup_max_epochs < 1 || ssl_epochs < 0)
        throw ValidationError("mcl: epoch counts must be non-negative (warmup >= 1)");
    if (batch_labeled < 1 || batch_unlabeled < 1)
        throw ValidationError("mcl: batch sizes must be positive");
    if (convergence_window < 1)
        throw ValidationError("mcl: convergence_window must be positive");
}

HeadParams HeadParams::zeros_like() const
{
    HeadParams z;
    z.centers = Matrix::Zero(centers.rows(), centers.cols());
    z.log_beta = Vector::Zero(log_beta.size());
    for (const auto& w : full_w)
        z.full_w.push_back(Matrix::Zero(w.rows(), w.cols()));
    for (const auto& b : full_b)
        z.full_b.push_back(Vector::Zero(b.size()));
    for (const auto& w : restricted_w)
        z.restricted_w.push_back(Matrix::Zero(w.rows(), w.cols()));
    for (const auto& b : restricted_b)
        z.restricted_b.push_back(Vector::Zero(b.size()));
    return z;
}

std::size_t HeadParams::parameter_count() const
{
    std::size_t n = centers.size() + log_beta.size();
    for (const auto& w : full_w)
        n += w.size();
    for (const auto& b : full_b)
        n += b.size();
    for (const auto& w : restricted_w)
        n += w.size();
    for (const auto& b : restricted_b)
        n += b.size();
    return n;
}

Vector HeadParams::flatten() const
{
    Vector flat(parameter_count());
    Eigen::Index at = 0;
    auto put = [&](const auto& m) {
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c)
                flat(at++) = m(r, c);
    };
    put(centers);
    put(log_beta);
    for (const auto& w : full_w) put(w);
    for (const auto& b : full_b) put(b);
    for (const auto& w : restricted_w) put(w);
    for (const auto& b : restricted_b) put(b);
    return flat;
}

void HeadParams::assign(const Vector& flat)
{
    if (static_cast<std::size_t>(flat.size()) != parameter_count())
        throw ValidationError("head parameter vector has the wrong length");
    Eigen::Index at = 0;
    auto take = [&](auto& m) {
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c)
                m(r, c) = flat(at++);
    };
    take(centers);
    take(log_beta);
    for (auto& w : full_w) take(w);
    for (auto& b : full_b) take(b);
    for (auto& w : restricted_w) take(w);
    for (auto& b : restricted_b) take(b);
}

void LfHeads::specialize(const SpecializedSets& sets)
{
    if (sets.size() != size())
        throw ValidationError("specialize: need one specialized set per head");
    tau = sets;
    params.restricted_w.clear();
    params.restricted_b.clear();
    for (std::size_t k = 0; k < size(); ++k) {
        const auto& set = sets[k];
        Matrix w = Matrix::Zero(set.size() + 1, dim);
        Vector b = Vector::Zero(set.size() + 1);
        const int outside = num_classes - static_cast<int>(set.size());
        if (outside > 0) {
            for (int c = 1; c <= num_classes; ++c) {
                if (sets.contains(k, c))
                    continue;
                w.row(0) += params.full_w[k].row(c - 1) / outside;
                b(0) += params.full_b[k](c - 1) / outside;
            }
            b(0) += std::log(static_cast<double>(outside));
        }
        for (std::size_t t = 0; t < set.size(); ++t) {
            w.row(t + 1) = params.full_w[k].row(set[t] - 1);
            b(t + 1) = params.full_b[k](set[t] - 1);
        }
        params.restricted_w.push_back(std::move(w));
        params.restricted_b.push_back(std::move(b));
    }
}

FeatureMap feature_map(const Matrix& flat, std::size_t row, int positions, int dim)
{
    return FeatureMap(flat.row(row).data(), positions, dim);
}

Vector feature_transform(const Matrix& f, const LfHeads& heads, std::size_t k)
{
    if (k >= heads.size())
        throw ValidationError("feature_transform: head index out of range");
    return forward(f, heads).pooled.row(k).transpose();
}

Matrix assignment_weights(const Matrix& f, const LfHeads& heads)
{
    LfHeads with_ft = heads;
    with_ft.feature_transform = true;
    return forward(f, with_ft).weights;
}

McSelection mcl_loss(const std::vector<double>& per_head_losses, double rho)
{
    const int K = static_cast<int>(per_head_losses.size());
    const int m = static_cast<int>(std::floor(rho * K + 1e-9));
    if (m < 1)
        throw ValidationError("mcl_loss: floor(rho*K) must be at least 1");
    std::vector<std::size_t> order(K);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return per_head_losses[a] < per_head_losses[b];
    });
    McSelection out;
    out.selected.assign(order.begin(), order.begin() + m);
    double sum = 0.0;
    for (auto k : out.selected)
        sum += per_head_losses[k];
    out.loss = sum / m;
    return out;
}

Vector full_probabilities(const Matrix& f, const LfHeads& heads, std::size_t k)
{
    const Vector x = feature_transform(f, heads, k);
    return softmax(heads.params.full_w[k] * x + heads.params.full_b[k]);
}

Vector restricted_probabilities(const Matrix& f, const LfHeads& heads, std::size_t k)
{
    require_specialized(heads);
    const Vector x = feature_transform(f, heads, k);
    return softmax(heads.params.restricted_w[k] * x + heads.params.restricted_b[k]);
}

McSelection labeled_mcl_loss(const Matrix& f_weak, int y, const LfHeads& heads, double rho,
                             HeadParams* grad, double weight)
{
    const std::size_t K = heads.size();
    const Transformed t = forward(f_weak, heads);
    std::vector<double> losses(K);
    Matrix scratch_w;
    Vector scratch_b;
    Eigen::RowVectorXd scratch_x(heads.dim);
    for (std::size_t k = 0; k < K; ++k)
        losses[k] = head_ce(heads.params.full_w[k], heads.params.full_b[k],
                            t.pooled.row(k).transpose(), y - 1, &scratch_w, &scratch_b,
                            scratch_x, 0.0, false);
    McSelection sel = mcl_loss(losses, rho);
    if (grad) {
        Matrix G = Matrix::Zero(K, heads.dim);
        const double share = weight / static_cast<double>(sel.selected.size());
        for (auto k : sel.selected)
            head_ce(heads.params.full_w[k], heads.params.full_b[k], t.pooled.row(k).transpose(),
                    y - 1, &grad->full_w[k], &grad->full_b[k], G.row(k), share, true);
        backward(f_weak, heads, t, G, *grad);
    }
    return sel;
}

double labeled_abstain_loss(const Matrix& f_weak, int y, const LfHeads& heads, HeadParams* grad,
                            double weight)
{
    require_specialized(heads);
    const std::size_t K = heads.size();
    const Transformed t = forward(f_weak, heads);
    Matrix G = Matrix::Zero(K, heads.dim);
    Matrix scratch_w;
    Vector scratch_b;
    double loss = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        if (!heads.tau.active(k))
            continue;
        const int target = restricted_target(heads, k, y);
        if (grad)
            loss += head_ce(heads.params.restricted_w[k], heads.params.restricted_b[k],
                            t.pooled.row(k).transpose(), target, &grad->restricted_w[k],
                            &grad->restricted_b[k], G.row(k), weight, true);
        else
            loss += head_ce(heads.params.restricted_w[k], heads.params.restricted_b[k],
                            t.pooled.row(k).transpose(), target, &scratch_w, &scratch_b, G.row(k),
                            0.0, false);
    }
    if (grad)
        backward(f_weak, heads, t, G, *grad);
    return loss;
}

double unlabeled_consistency_loss(const Matrix& f_weak, const Matrix& f_strong,
                                  const LfHeads& heads, double epsilon,
                                  bool abstain_on_strong_view, HeadParams* grad, double weight)
{
    require_specialized(heads);
    const std::size_t K = heads.size();
    const Transformed tw = forward(f_weak, heads);
    Transformed ts;
    bool have_strong = false;
    Matrix Gw = Matrix::Zero(K, heads.dim), Gs = Matrix::Zero(K, heads.dim);
    Matrix scratch_w;
    Vector scratch_b;
    double loss = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        if (!heads.tau.active(k))
            continue;
        const Matrix& W = heads.params.restricted_w[k];
        const Vector& b = heads.params.restricted_b[k];
        const Vector p_weak = softmax(W * tw.pooled.row(k).transpose() + b);
        Eigen::Index pseudo = 0;
        const double confidence = p_weak.maxCoeff(&pseudo);
        if (confidence < epsilon)
            continue;
        const bool use_strong = pseudo != 0 || abstain_on_strong_view;
        if (use_strong && !have_strong) {
            ts = forward(f_strong, heads);
            have_strong = true;
        }
        const Transformed& view = use_strong ? ts : tw;
        Matrix& G = use_strong ? Gs : Gw;
        if (grad)
            loss += head_ce(W, b, view.pooled.row(k).transpose(), static_cast<int>(pseudo),
                            &grad->restricted_w[k], &grad->restricted_b[k], G.row(k), weight, true);
        else
            loss += head_ce(W, b, view.pooled.row(k).transpose(), static_cast<int>(pseudo),
                            &scratch_w, &scratch_b, G.row(k), 0.0, false);
    }
    if (grad) {
        backward(f_weak, heads, tw, Gw, *grad);
        if (have_strong)
            backward(f_strong, heads, ts, Gs, *grad);
    }
    return loss;
}

LossTerms combined_loss(const Batch& labeled, const Batch& unlabeled, const LfHeads& heads,
                        const MclConfig& config, Phase phase, HeadParams* grad,
                        Eigen::MatrixXd* selection_counts)
{
    const double mu_mcl = phase == Phase::MclWarmup ? 1.0 : 0.0;
    const double mu_l = phase == Phase::MclWarmup ? 0.0 : 1.0;
    const double mu_u = mu_l;
    LossTerms out;
    const int P = heads.positions, D = heads.dim;

    const std::size_t n_l = labeled.rows.size();
    for (std::size_t i = 0; i < n_l; ++i) {
        const Matrix f = feature_map(*labeled.weak, labeled.rows[i], P, D);
        const int y = labeled.labels[i];
        if (mu_mcl != 0.0) {
            auto sel = labeled_mcl_loss(f, y, heads, config.rho, grad, mu_mcl / n_l);
            out.mcl += sel.loss / n_l;
            if (selection_counts)
                for (auto k : sel.selected)
                    (*selection_counts)(k, y - 1) += 1.0;
        }
        if (mu_l != 0.0)
            out.labeled += labeled_abstain_loss(f, y, heads, grad, mu_l / n_l) / n_l;
    }
    const std::size_t n_u = unlabeled.rows.size();
    if (mu_u != 0.0) {
        for (std::size_t i = 0; i < n_u; ++i) {
            const Matrix fw = feature_map(*unlabeled.weak, unlabeled.rows[i], P, D);
            const Matrix fs = feature_map(*unlabeled.strong, unlabeled.rows[i], P, D);
            out.unlabeled += unlabeled_consistency_loss(fw, fs, heads, config.epsilon,
                                                        config.abstain_on_strong_view, grad,
                                                        mu_u / n_u) /
                             n_u;
        }
    }
    out.total = mu_mcl * out.mcl + mu_l * out.labeled + mu_u * out.unlabeled;
    return out;
}

SpecializedSets extract_specialized_sets(const Eigen::MatrixXd& counts,
                                         const std::vector<double>& class_totals, double gamma)
{
    const Eigen::Index K = counts.rows();
    const int C = static_cast<int>(counts.cols());
    if (class_totals.size() != static_cast<std::size_t>(C))
        throw ValidationError("extract_specialized_sets: class_totals must have C entries");
    std::vector<std::vector<int>> tau(K);
    bool any = false;
    for (Eigen::Index k = 0; k < K; ++k) {
        for (int c = 1; c <= C; ++c) {
            const double total = class_totals[c - 1];
            if (total > 0.0 && counts(k, c - 1) / total >= gamma) {
                tau[k].push_back(c);
                any = true;
            }
        }
    }
    if (!any)
        throw NumericalError("specialization failed: every head has an empty specialized set");
    return SpecializedSets(std::move(tau), LabelSpace(C));
}

LfHeads init_heads(const Matrix& flat_features, const std::vector<std::size_t>& rows,
                   int num_classes, int positions, int dim, const MclConfig& config)
{
    const int K = config.num_heads;
    LfHeads heads;
    heads.num_classes = num_classes;
    heads.dim = dim;
    heads.positions = positions;
    heads.feature_transform = config.feature_transform;
    auto rng = make_stream(config.seed, streams::kHeadsInit);

    // k-means++ draw over every position vector of the given rows.
    std::vector<Eigen::RowVectorXd> points;
    for (auto r : rows) {
        const FeatureMap f = feature_map(flat_features, r, positions, dim);
        for (int j = 0; j < positions; ++j)
            points.emplace_back(f.row(j));
    }
    if (points.empty())
        throw ValidationError("init_heads: no feature rows to seed centers from");
    heads.params.centers.resize(K, dim);
    std::vector<double> nearest(points.size(), std::numeric_limits<double>::infinity());
    std::uniform_int_distribution<std::size_t> first(0, points.size() - 1);
    std::size_t pick = first(rng);
    for (int k = 0; k < K; ++k) {
        heads.params.centers.row(k) = points[pick];
        for (std::size_t p = 0; p < points.size(); ++p)
            nearest[p] = std::min(nearest[p], (points[p] - points[pick]).squaredNorm());
        if (std::accumulate(nearest.begin(), nearest.end(), 0.0) > 0.0) {
            std::discrete_distribution<std::size_t> next(nearest.begin(), nearest.end());
            pick = next(rng);
        } else {
            pick = first(rng);
        }
    }
    heads.params.log_beta = Vector::Zero(K);

    std::normal_distribution<double> small(0.0, 0.01);
    for (int k = 0; k < K; ++k) {
        Matrix w(num_classes, dim);
        for (Eigen::Index i = 0; i < w.size(); ++i)
            w.data()[i] = small(rng);
        heads.params.full_w.push_back(std::move(w));
        heads.params.full_b.push_back(Vector::Zero(num_classes));
    }
    return heads;
}

TrainedLfs train_lfs(const synth::FeatureDataset& data, const MclConfig& config)
{
    const int C = data.num_classes;
    config.validate(C);
    const auto labeled_rows = data.indices(synth::Split::Labeled);
    const auto unlabeled_rows = data.indices(synth::Split::Unlabeled);
    if (labeled_rows.empty())
        throw ValidationError("train_lfs: no labeled samples");
    std::vector<double> class_totals(C, 0.0);
    for (auto r : labeled_rows)
        class_totals[data.truth[r] - 1] += 1.0;
    for (int c = 0; c < C; ++c)
        if (class_totals[c] == 0.0)
            throw ValidationError("train_lfs: labeled subset does not cover class " +
                                  std::to_string(c + 1));

    TrainedLfs out;
    out.heads = init_heads(data.weak, labeled_rows, C, data.positions, data.dim, config);
    LfHeads& heads = out.heads;
    detail::Adam adam(config.learning_rate);
    std::vector<std::size_t> order = labeled_rows;

    auto check = [](double v) {
        if (!std::isfinite(v))
            throw NumericalError("LF training produced a non-finite loss");
    };

    // Warmup: MCL loss over full-C heads on weak views of labeled data.
    std::vector<double> epoch_loss;
    Eigen::MatrixXd counts;
    for (int epoch = 1; epoch <= config.warmup_max_epochs; ++epoch) {
        auto rng = make_stream(config.seed ^ streams::kShuffle, static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), rng);
        counts = Eigen::MatrixXd::Zero(config.num_heads, C);
        LossTerms sum;
        for (std::size_t start = 0; start < order.size(); start += config.batch_labeled) {
            Batch bl{&data.weak, nullptr, {}, {}};
            for (std::size_t i = start; i < std::min(order.size(), start + config.batch_labeled); ++i) {
                bl.rows.push_back(order[i]);
                bl.labels.push_back(data.truth[order[i]]);
            }
            HeadParams grad = heads.params.zeros_like();
            LossTerms terms = combined_loss(bl, Batch{}, heads, config, Phase::MclWarmup, &grad, &counts);
            check(terms.total);
            const double share = double(bl.rows.size()) / double(order.size());
            sum.mcl += terms.mcl * share;
            sum.total += terms.total * share;
            Vector flat = heads.params.flatten();
            adam.step(flat, grad.flatten());
            heads.params.assign(flat);
        }
        out.log.push_back({epoch, Phase::MclWarmup, sum});
        epoch_loss.push_back(sum.total);
        const int w = config.convergence_window;
        if (static_cast<int>(epoch_loss.size()) > w) {
            const double past = epoch_loss[epoch_loss.size() - 1 - w];
            const double now = epoch_loss.back();
            if ((past - now) / std::max(std::abs(past), 1e-12) < config.convergence_tol)
                break;
        }
    }
    out.selection_counts = counts;
    heads.specialize(extract_specialized_sets(counts, class_totals, config.gamma));

    // Abstention + consistency phase with restricted heads.
    adam.reset();
    const std::size_t steps =
        unlabeled_rows.empty()
            ? (labeled_rows.size() + config.batch_labeled - 1) / config.batch_labeled
            : (unlabeled_rows.size() + config.batch_unlabeled - 1) / config.batch_unlabeled;
    std::vector<std::size_t> u_order = unlabeled_rows;
    std::size_t l_cursor = order.size();
    std::uint64_t l_shuffles = 0;
    for (int epoch = 1; epoch <= config.ssl_epochs; ++epoch) {
        auto rng = make_stream(config.seed ^ streams::kShuffle, 1'000'000ULL + epoch);
        std::shuffle(u_order.begin(), u_order.end(), rng);
        LossTerms sum;
        for (std::size_t s = 0; s < steps; ++s) {
            Batch bl{&data.weak, nullptr, {}, {}};
            for (std::size_t i = 0; i < config.batch_labeled; ++i) {
                if (l_cursor >= order.size()) {
                    auto lrng = make_stream(config.seed ^ streams::kShuffle, 2'000'000ULL + l_shuffles++);
                    std::shuffle(order.begin(), order.end(), lrng);
                    l_cursor = 0;
                }
                bl.rows.push_back(order[l_cursor]);
                bl.labels.push_back(data.truth[order[l_cursor]]);
                ++l_cursor;
            }
            Batch bu{&data.weak, &data.strong, {}, {}};
            const std::size_t begin = s * config.batch_unlabeled;
            for (std::size_t i = begin; i < std::min(u_order.size(), begin + config.batch_unlabeled); ++i)
                bu.rows.push_back(u_order[i]);
            HeadParams grad = heads.params.zeros_like();
            LossTerms terms = combined_loss(bl, bu, heads, config, Phase::AbstainSsl, &grad);
            check(terms.total);
            sum.labeled += terms.labeled / steps;
            sum.unlabeled += terms.unlabeled / steps;
            sum.total += terms.total / steps;
            Vector flat = heads.params.flatten();
            adam.step(flat, grad.flatten());
            heads.params.assign(flat);
        }
        out.log.push_back({epoch, Phase::AbstainSsl, sum});
    }
    return out;
}

NoisyLabelMatrix apply_lfs(const Matrix& flat, const LfHeads& heads)
{
    require_specialized(heads);
    const std::size_t N = static_cast<std::size_t>(flat.rows());
    NoisyLabelMatrix out;
    out.votes = VoteMatrix::Zero(N, heads.size());
    for (std::size_t n = 0; n < N; ++n) {
        const Matrix f = feature_map(flat, n, heads.positions, heads.dim);
        const Transformed t = forward(f, heads);
        for (std::size_t k = 0; k < heads.size(); ++k) {
            if (!heads.tau.active(k))
                continue;
            const Vector logits = heads.params.restricted_w[k] * t.pooled.row(k).transpose() +
                                  heads.params.restricted_b[k];
            Eigen::Index best = 0;
            logits.maxCoeff(&best);
            out.votes(n, k) = best == 0 ? kAbstain : heads.tau[k][best - 1];
        }
    }
    return out;
}

}  // namespace dpssl::mcl
