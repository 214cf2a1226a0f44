#pragma once

#include <cstdint>
#include <vector>

#include "dpssl/core.hpp"

namespace dpssl::endmodel {

struct EndModelConfig {
    int hidden_units = 0;  ///< 0 = plain softmax regression
    double learning_rate = 0.05;
    int epochs = 30;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Softmax classifier over mean-pooled feature maps with an optional tanh
/// hidden layer.
struct EndModel {
    int num_classes = 0;
    int positions = 0;
    int dim = 0;
    int hidden_units = 0;
    Matrix w1;  ///< H×D (unused when hidden_units == 0)
    Vector b1;
    Matrix w2;  ///< C×H or C×D
    Vector b2;

    std::size_t parameter_count() const;
    Vector flatten() const;
    void assign(const Vector& flat);
};

/// Mean over the P positions of every flat feature map; N×D.
Matrix pool_features(const Matrix& flat, int positions, int dim);

/// sum_y pi_y * -log(pred_y), pred clamped at 1e-12.
double noise_aware_loss(const Vector& pred, const Vector& pi);

/// Class probabilities for pooled inputs (N×D).
Matrix predict_proba(const EndModel& model, const Matrix& pooled);

/// Soft-target training set: pooled inputs and row-stochastic targets.
struct SoftTargets {
    Matrix inputs;
    Matrix targets;
};

/// Labeled rows become one-hot targets; covered unlabeled rows take pi.
SoftTargets build_targets(const Matrix& x_l, const std::vector<int>& y_l, const Matrix& x_u,
                          const ProbLabels& pi_u, int num_classes, int positions, int dim);

/// Summed soft cross-entropy and, optionally, its gradient (flattened).
double objective(const EndModel& model, const SoftTargets& data, Vector* grad = nullptr);

EndModel init_end_model(int num_classes, int positions, int dim, const EndModelConfig& config);

EndModel train_end_model(const Matrix& x_l, const std::vector<int>& y_l, const Matrix& x_u,
                         const ProbLabels& pi_u, int num_classes, int positions, int dim,
                         const EndModelConfig& config);

/// Fraction of argmax mispredictions on flat feature maps.
double evaluate(const EndModel& model, const Matrix& flat, const std::vector<int>& truth);

}  // namespace dpssl::endmodel
