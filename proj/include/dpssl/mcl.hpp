#pragma once

#include <cstdint>
#include <vector>

#include "dpssl/core.hpp"
#include "dpssl/synth.hpp"

namespace dpssl::mcl {

enum class Phase { MclWarmup, AbstainSsl };

struct MclConfig {
    int num_heads = 10;
    double rho = 0.2;
    double epsilon = 0.95;
    double gamma = 0.5;
    bool feature_transform = true;
    /// The abstain branch of the consistency loss uses the weak view by default;
    /// set this to use the strong view instead.
    bool abstain_on_strong_view = false;
    double learning_rate = 0.05;
    int warmup_max_epochs = 200;
    int ssl_epochs = 10;
    std::size_t batch_labeled = 16;
    std::size_t batch_unlabeled = 112;
    double convergence_tol = 1e-3;
    int convergence_window = 5;
    std::uint64_t seed = 0;

    /// floor(rho * K), guarded against representation error in rho * K.
    int selected() const;
    void validate(int num_classes) const;
};

/// Trainable tensors of all K heads. Also used to hold gradients.
struct HeadParams {
    Matrix centers;                  ///< K×D
    Vector log_beta;                 ///< K, beta_k = exp(log_beta_k)
    std::vector<Matrix> full_w;      ///< K × (C×D)
    std::vector<Vector> full_b;      ///< K × C
    std::vector<Matrix> restricted_w;  ///< K × ((|tau_k|+1)×D), row 0 = abstain
    std::vector<Vector> restricted_b;

    HeadParams zeros_like() const;
    std::size_t parameter_count() const;
    Vector flatten() const;
    void assign(const Vector& flat);
};

struct LfHeads {
    int num_classes = 0;
    int dim = 0;
    int positions = 0;
    bool feature_transform = true;
    HeadParams params;
    SpecializedSets tau;  ///< empty until specialization

    std::size_t size() const { return static_cast<std::size_t>(params.centers.rows()); }
    double beta(std::size_t k) const { return std::exp(params.log_beta(k)); }
    /// Allocates restricted heads for `tau`, initialised from the full heads.
    void specialize(const SpecializedSets& sets);
};

/// View of one sample's P×D feature map stored position-major in a row.
using FeatureMap = Eigen::Map<const Matrix>;
FeatureMap feature_map(const Matrix& flat, std::size_t row, int positions, int dim);

/// Soft-assignment residual pooling for head k (mean pooling when the
/// transform is disabled).
Vector feature_transform(const Matrix& f, const LfHeads& heads, std::size_t k);

/// Per-position assignment weights, P×K; rows sum to 1.
Matrix assignment_weights(const Matrix& f, const LfHeads& heads);

struct McSelection {
    double loss = 0.0;
    std::vector<std::size_t> selected;  ///< ascending loss, ties by index
};

/// Mean of the floor(rho·K) smallest per-head losses.
McSelection mcl_loss(const std::vector<double>& per_head_losses, double rho);

/// Full-C class probabilities of head k.
Vector full_probabilities(const Matrix& f, const LfHeads& heads, std::size_t k);
/// Probabilities over {abstain} ∪ tau_k of head k (index 0 = abstain).
Vector restricted_probabilities(const Matrix& f, const LfHeads& heads, std::size_t k);

/// Per-head loss of one labeled sample in the warmup phase plus the
/// selection. Gradient of the selected mean is added to `grad` scaled by
/// `weight`.
McSelection labeled_mcl_loss(const Matrix& f_weak, int y, const LfHeads& heads, double rho,
                             HeadParams* grad = nullptr, double weight = 1.0);

double labeled_abstain_loss(const Matrix& f_weak, int y, const LfHeads& heads,
                            HeadParams* grad = nullptr, double weight = 1.0);

double unlabeled_consistency_loss(const Matrix& f_weak, const Matrix& f_strong,
                                  const LfHeads& heads, double epsilon,
                                  bool abstain_on_strong_view = false, HeadParams* grad = nullptr,
                                  double weight = 1.0);

struct Batch {
    const Matrix* weak = nullptr;    ///< flat feature maps
    const Matrix* strong = nullptr;  ///< only for unlabeled batches
    std::vector<std::size_t> rows;
    std::vector<int> labels;         ///< labeled batches only
};

struct LossTerms {
    double mcl = 0.0;
    double labeled = 0.0;
    double unlabeled = 0.0;
    double total = 0.0;
};

/// Weighted sum of batch-mean losses under the phase's weight vector
/// (1,0,0) for warmup and (0,1,1) afterwards.
LossTerms combined_loss(const Batch& labeled, const Batch& unlabeled, const LfHeads& heads,
                        const MclConfig& config, Phase phase, HeadParams* grad = nullptr,
                        Eigen::MatrixXd* selection_counts = nullptr);

/// c in tau_k iff head k was selected for at least gamma of the class-c
/// labeled samples. counts is K×C, class_totals has C entries.
SpecializedSets extract_specialized_sets(const Eigen::MatrixXd& counts,
                                         const std::vector<double>& class_totals, double gamma);

struct LogRow {
    int epoch = 0;
    Phase phase = Phase::MclWarmup;
    LossTerms loss;
};

struct TrainedLfs {
    LfHeads heads;
    std::vector<LogRow> log;
    Eigen::MatrixXd selection_counts;  ///< last warmup epoch, K×C
};

TrainedLfs train_lfs(const synth::FeatureDataset& data, const MclConfig& config);

/// Random initial heads for a dataset shape (centers seeded k-means++ style
/// from the given feature rows).
LfHeads init_heads(const Matrix& flat_features, const std::vector<std::size_t>& rows,
                   int num_classes, int positions, int dim, const MclConfig& config);

/// Votes of every head on every row of `flat`: argmax over {abstain} ∪ tau_k.
NoisyLabelMatrix apply_lfs(const Matrix& flat, const LfHeads& heads);

}  // namespace dpssl::mcl
