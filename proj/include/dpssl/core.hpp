#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dpssl {

/// Base of every error raised by the library. The CLI maps the concrete
/// subclasses onto distinct exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input: bad shapes, illegal votes, invalid configuration.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Non-finite values, failed training, degenerate estimates.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// A required input file or upstream artifact is absent or mismatched.
class MissingPrerequisite : public Error {
public:
    using Error::Error;
};

/// Class ids are 1..C; 0 is reserved for abstention.
inline constexpr int kAbstain = 0;

class LabelSpace {
public:
    explicit LabelSpace(int num_classes);

    int num_classes() const { return num_classes_; }
    bool is_class(int c) const { return c >= 1 && c <= num_classes_; }

private:
    int num_classes_;
};

/// Per-LF specialized class sets. Each set is stored sorted; an LF whose
/// set is empty is inactive and only ever abstains.
class SpecializedSets {
public:
    SpecializedSets() = default;
    SpecializedSets(std::vector<std::vector<int>> tau, const LabelSpace& space);

    static SpecializedSets full(int num_lfs, const LabelSpace& space);

    std::size_t size() const { return tau_.size(); }
    int num_classes() const { return num_classes_; }
    const std::vector<int>& operator[](std::size_t k) const { return tau_[k]; }
    const std::vector<std::vector<int>>& sets() const { return tau_; }

    bool contains(std::size_t k, int c) const;
    bool active(std::size_t k) const { return !tau_[k].empty(); }
    /// Position of class c inside tau[k], or -1.
    int index_of(std::size_t k, int c) const;
    /// Number of LFs whose set contains class c.
    int specialists(int c) const;

private:
    std::vector<std::vector<int>> tau_;
    int num_classes_ = 0;
};

using VoteMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// N×K vote matrix; row = sample, column = LF.
struct NoisyLabelMatrix {
    VoteMatrix votes;

    std::size_t rows() const { return static_cast<std::size_t>(votes.rows()); }
    std::size_t cols() const { return static_cast<std::size_t>(votes.cols()); }
    bool row_covered(std::size_t n) const;
};

/// Row-stochastic posterior matrix plus a coverage mask.
struct ProbLabels {
    Matrix pi;
    std::vector<bool> covered;

    std::size_t rows() const { return static_cast<std::size_t>(pi.rows()); }
    /// argmax over classes, 1-based.
    std::vector<int> hard_labels() const;
};

struct LabeledSubset {
    std::vector<std::size_t> indices;
    std::vector<int> labels;

    void validate(const LabelSpace& space, std::size_t dataset_size) const;
};

/// Throws ValidationError naming the first offending (row, column, value).
const NoisyLabelMatrix& validate_votes(const NoisyLabelMatrix& votes, const SpecializedSets& tau,
                                       const LabelSpace& space);

struct MacroScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Macro precision/recall/F1 over covered samples. Classes with a zero
/// denominator contribute 0 and are still averaged over all C classes.
MacroScores macro_prf(const std::vector<int>& predicted, const std::vector<bool>& covered,
                      const std::vector<int>& truth, const LabelSpace& space);

double coverage(const std::vector<bool>& mask);

/// Plain accuracy over covered samples.
double covered_accuracy(const std::vector<int>& predicted, const std::vector<bool>& covered,
                        const std::vector<int>& truth);

}  // namespace dpssl
