#pragma once

#include <cmath>

#include "dpssl/core.hpp"

namespace dpssl::detail {

/// Adam over a flat parameter vector.
class Adam {
public:
    explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps)
    {
    }

    void step(Vector& params, const Vector& grad)
    {
        if (m_.size() != params.size()) {
            m_ = Vector::Zero(params.size());
            v_ = Vector::Zero(params.size());
            t_ = 0;
        }
        ++t_;
        m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
        v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(beta1_, t_);
        const double c2 = 1.0 - std::pow(beta2_, t_);
        params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
    }

    void reset() { m_.resize(0); v_.resize(0); t_ = 0; }

private:
    double lr_, beta1_, beta2_, eps_;
    Vector m_, v_;
    int t_ = 0;
};

}  // namespace dpssl::detail
