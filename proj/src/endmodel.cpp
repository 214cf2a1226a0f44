#include "dpssl/endmodel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "adam.hpp"
#include "dpssl/random.hpp"

namespace dpssl::endmodel {

namespace {

constexpr double kPredClamp = 1e-12;

Matrix softmax_rows(const Matrix& logits)
{
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index n = 0; n < logits.rows(); ++n) {
        const Eigen::RowVectorXd e = (logits.row(n).array() - logits.row(n).maxCoeff()).exp();
        out.row(n) = e / e.sum();
    }
    return out;
}

struct Activations {
    Matrix hidden;  // N×H, empty without a hidden layer
    Matrix proba;
};

Activations run(const EndModel& model, const Matrix& x)
{
    Activations a;
    if (model.hidden_units > 0) {
        a.hidden = ((x * model.w1.transpose()).rowwise() + model.b1.transpose()).array().tanh();
        a.proba = softmax_rows((a.hidden * model.w2.transpose()).rowwise() + model.b2.transpose());
    } else {
        a.proba = softmax_rows((x * model.w2.transpose()).rowwise() + model.b2.transpose());
    }
    return a;
}

}  // namespace

void EndModelConfig::validate() const
{
    if (hidden_units < 0)
        throw ValidationError("end model: hidden_units must be >= 0");
    if (!(learning_rate > 0.0))
        throw ValidationError("end model: learning_rate must be positive");
    if (epochs < 0 || batch_size < 1)
        throw ValidationError("end model: epochs >= 0 and batch_size >= 1 required");
}

std::size_t EndModel::parameter_count() const
{
    return w1.size() + b1.size() + w2.size() + b2.size();
}

Vector EndModel::flatten() const
{
    Vector flat(parameter_count());
    Eigen::Index at = 0;
    for (const auto* m : {&w1, &w2})
        for (Eigen::Index i = 0; i < m->size(); ++i)
            flat(at++) = m->data()[i];
    for (const auto* v : {&b1, &b2})
        for (Eigen::Index i = 0; i < v->size(); ++i)
            flat(at++) = (*v)(i);
    return flat;
}

void EndModel::assign(const Vector& flat)
{
    if (static_cast<std::size_t>(flat.size()) != parameter_count())
        throw ValidationError("end model parameter vector has the wrong length");
    Eigen::Index at = 0;
    for (auto* m : {&w1, &w2})
        for (Eigen::Index i = 0; i < m->size(); ++i)
            m->data()[i] = flat(at++);
    for (auto* v : {&b1, &b2})
        for (Eigen::Index i = 0; i < v->size(); ++i)
            (*v)(i) = flat(at++);
}

Matrix pool_features(const Matrix& flat, int positions, int dim)
{
    if (flat.cols() != positions * dim)
        throw ValidationError("pool_features: feature width differs from P*D");
    Matrix pooled = Matrix::Zero(flat.rows(), dim);
    for (int j = 0; j < positions; ++j)
        pooled += flat.middleCols(j * dim, dim);
    return pooled / positions;
}

double noise_aware_loss(const Vector& pred, const Vector& pi)
{
    if (pred.size() != pi.size())
        throw ValidationError("noise_aware_loss: size mismatch");
    double loss = 0.0;
    for (Eigen::Index y = 0; y < pi.size(); ++y)
        if (pi(y) != 0.0)
            loss -= pi(y) * std::log(std::max(pred(y), kPredClamp));
    return loss;
}

Matrix predict_proba(const EndModel& model, const Matrix& pooled)
{
    return run(model, pooled).proba;
}

SoftTargets build_targets(const Matrix& x_l, const std::vector<int>& y_l, const Matrix& x_u,
                          const ProbLabels& pi_u, int num_classes, int positions, int dim)
{
    if (static_cast<std::size_t>(x_l.rows()) != y_l.size())
        throw ValidationError("end model: labeled features and labels differ in length");
    if (x_u.rows() != pi_u.pi.rows())
        throw ValidationError("end model: unlabeled features and probabilistic labels differ");
    std::size_t covered = 0;
    for (bool c : pi_u.covered)
        covered += c ? 1 : 0;
    const std::size_t N = y_l.size() + covered;
    SoftTargets out;
    out.inputs.resize(N, dim);
    out.targets = Matrix::Zero(N, num_classes);
    const Matrix pooled_l = pool_features(x_l, positions, dim);
    const Matrix pooled_u = pool_features(x_u, positions, dim);
    std::size_t at = 0;
    for (std::size_t n = 0; n < y_l.size(); ++n, ++at) {
        if (y_l[n] < 1 || y_l[n] > num_classes)
            throw ValidationError("end model: label outside 1..C");
        out.inputs.row(at) = pooled_l.row(n);
        out.targets(at, y_l[n] - 1) = 1.0;
    }
    for (Eigen::Index n = 0; n < x_u.rows(); ++n) {
        if (!pi_u.covered[n])
            continue;
        out.inputs.row(at) = pooled_u.row(n);
        out.targets.row(at) = pi_u.pi.row(n);
        ++at;
    }
    return out;
}

double objective(const EndModel& model, const SoftTargets& data, Vector* grad)
{
    const Activations a = run(model, data.inputs);
    double loss = 0.0;
    for (Eigen::Index n = 0; n < data.inputs.rows(); ++n)
        loss += noise_aware_loss(a.proba.row(n).transpose(), data.targets.row(n).transpose());
    if (!std::isfinite(loss))
        throw NumericalError("end model: non-finite loss");
    if (grad) {
        // d/dlogits of sum_y t_y (-log p_y) is p * sum(t) - t.
        const Vector mass = data.targets.rowwise().sum();
        const Matrix d_logits = a.proba.array().colwise() * mass.array() - data.targets.array();
        EndModel g = model;
        if (model.hidden_units > 0) {
            g.w2 = d_logits.transpose() * a.hidden;
            g.b2 = d_logits.colwise().sum().transpose();
            const Matrix d_hidden = (d_logits * model.w2).array() * (1.0 - a.hidden.array().square());
            g.w1 = d_hidden.transpose() * data.inputs;
            g.b1 = d_hidden.colwise().sum().transpose();
        } else {
            g.w2 = d_logits.transpose() * data.inputs;
            g.b2 = d_logits.colwise().sum().transpose();
        }
        *grad = g.flatten();
    }
    return loss;
}

EndModel init_end_model(int num_classes, int positions, int dim, const EndModelConfig& config)
{
    config.validate();
    EndModel m;
    m.num_classes = num_classes;
    m.positions = positions;
    m.dim = dim;
    m.hidden_units = config.hidden_units;
    auto rng = make_stream(config.seed, streams::kEndModel);
    const int in = config.hidden_units > 0 ? config.hidden_units : dim;
    if (config.hidden_units > 0) {
        std::normal_distribution<double> n1(0.0, 1.0 / std::sqrt(double(dim)));
        m.w1.resize(config.hidden_units, dim);
        for (Eigen::Index i = 0; i < m.w1.size(); ++i)
            m.w1.data()[i] = n1(rng);
        m.b1 = Vector::Zero(config.hidden_units);
    } else {
        m.w1.resize(0, 0);
        m.b1.resize(0);
    }
    std::normal_distribution<double> n2(0.0, 0.01);
    m.w2.resize(num_classes, in);
    for (Eigen::Index i = 0; i < m.w2.size(); ++i)
        m.w2.data()[i] = n2(rng);
    m.b2 = Vector::Zero(num_classes);
    return m;
}

EndModel train_end_model(const Matrix& x_l, const std::vector<int>& y_l, const Matrix& x_u,
                         const ProbLabels& pi_u, int num_classes, int positions, int dim,
                         const EndModelConfig& config)
{
    config.validate();
    const SoftTargets all = build_targets(x_l, y_l, x_u, pi_u, num_classes, positions, dim);
    EndModel model = init_end_model(num_classes, positions, dim, config);
    if (all.inputs.rows() == 0)
        throw ValidationError("end model: no training samples");

    detail::Adam adam(config.learning_rate);
    std::vector<Eigen::Index> order(all.inputs.rows());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        auto rng = make_stream(config.seed ^ streams::kShuffle, 3'000'000ULL + epoch);
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(order.size(), start + config.batch_size);
            SoftTargets batch;
            batch.inputs.resize(stop - start, dim);
            batch.targets.resize(stop - start, num_classes);
            for (std::size_t i = start; i < stop; ++i) {
                batch.inputs.row(i - start) = all.inputs.row(order[i]);
                batch.targets.row(i - start) = all.targets.row(order[i]);
            }
            Vector grad;
            objective(model, batch, &grad);
            Vector flat = model.flatten();
            adam.step(flat, grad / double(stop - start));
            model.assign(flat);
        }
    }
    return model;
}

double evaluate(const EndModel& model, const Matrix& flat, const std::vector<int>& truth)
{
    if (truth.empty() || static_cast<std::size_t>(flat.rows()) != truth.size())
        throw ValidationError("evaluate: empty or mismatched test set");
    const Matrix p = predict_proba(model, pool_features(flat, model.positions, model.dim));
    long wrong = 0;
    for (Eigen::Index n = 0; n < p.rows(); ++n) {
        Eigen::Index best = 0;
        p.row(n).maxCoeff(&best);
        wrong += (best + 1) != truth[n] ? 1 : 0;
    }
    return double(wrong) / double(truth.size());
}

}  // namespace dpssl::endmodel
