#include "dpssl/core.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace dpssl {

LabelSpace::LabelSpace(int num_classes) : num_classes_(num_classes)
{
    if (num_classes < 2)
        throw ValidationError("label space needs at least 2 classes, got " +
                              std::to_string(num_classes));
}

SpecializedSets::SpecializedSets(std::vector<std::vector<int>> tau, const LabelSpace& space)
    : tau_(std::move(tau)), num_classes_(space.num_classes())
{
    for (std::size_t k = 0; k < tau_.size(); ++k) {
        auto& set = tau_[k];
        for (int c : set) {
            if (!space.is_class(c))
                throw ValidationError("tau[" + std::to_string(k) + "] contains " +
                                      std::to_string(c) + ", outside 1.." +
                                      std::to_string(num_classes_));
        }
        std::sort(set.begin(), set.end());
        if (std::adjacent_find(set.begin(), set.end()) != set.end())
            throw ValidationError("tau[" + std::to_string(k) + "] has duplicate classes");
    }
}

SpecializedSets SpecializedSets::full(int num_lfs, const LabelSpace& space)
{
    std::vector<int> all(space.num_classes());
    for (int c = 1; c <= space.num_classes(); ++c)
        all[c - 1] = c;
    return SpecializedSets(std::vector<std::vector<int>>(num_lfs, all), space);
}

bool SpecializedSets::contains(std::size_t k, int c) const
{
    return std::binary_search(tau_[k].begin(), tau_[k].end(), c);
}

int SpecializedSets::index_of(std::size_t k, int c) const
{
    auto it = std::lower_bound(tau_[k].begin(), tau_[k].end(), c);
    if (it == tau_[k].end() || *it != c)
        return -1;
    return static_cast<int>(it - tau_[k].begin());
}

int SpecializedSets::specialists(int c) const
{
    int count = 0;
    for (std::size_t k = 0; k < tau_.size(); ++k)
        count += contains(k, c) ? 1 : 0;
    return count;
}

bool NoisyLabelMatrix::row_covered(std::size_t n) const
{
    for (Eigen::Index k = 0; k < votes.cols(); ++k)
        if (votes(n, k) != kAbstain)
            return true;
    return false;
}

std::vector<int> ProbLabels::hard_labels() const
{
    std::vector<int> out(rows());
    for (Eigen::Index n = 0; n < pi.rows(); ++n) {
        Eigen::Index best = 0;
        pi.row(n).maxCoeff(&best);
        out[n] = static_cast<int>(best) + 1;
    }
    return out;
}

void LabeledSubset::validate(const LabelSpace& space, std::size_t dataset_size) const
{
    if (indices.size() != labels.size())
        throw ValidationError("labeled subset: indices and labels differ in length");
    std::set<std::size_t> seen;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= dataset_size)
            throw ValidationError("labeled subset: index out of range");
        if (!seen.insert(indices[i]).second)
            throw ValidationError("labeled subset: duplicate index " + std::to_string(indices[i]));
        if (!space.is_class(labels[i]))
            throw ValidationError("labeled subset: label " + std::to_string(labels[i]) +
                                  " outside 1.." + std::to_string(space.num_classes()));
    }
}

const NoisyLabelMatrix& validate_votes(const NoisyLabelMatrix& votes, const SpecializedSets& tau,
                                       const LabelSpace& space)
{
    if (votes.rows() < 1 || votes.cols() < 1)
        throw ValidationError("vote matrix must have N >= 1 rows and K >= 1 columns");
    if (votes.cols() != tau.size())
        throw ValidationError("vote matrix has " + std::to_string(votes.cols()) +
                              " columns but " + std::to_string(tau.size()) +
                              " specialized sets were given");
    if (tau.num_classes() != space.num_classes())
        throw ValidationError("specialized sets and label space disagree on C");
    for (std::size_t n = 0; n < votes.rows(); ++n) {
        for (std::size_t k = 0; k < votes.cols(); ++k) {
            int v = votes.votes(n, k);
            if (v == kAbstain || tau.contains(k, v))
                continue;
            std::ostringstream msg;
            msg << "illegal vote at (" << n << "," << k << "): " << v
                << " is not abstention or a member of tau[" << k << "]";
            throw ValidationError(msg.str());
        }
    }
    return votes;
}

MacroScores macro_prf(const std::vector<int>& predicted, const std::vector<bool>& covered,
                      const std::vector<int>& truth, const LabelSpace& space)
{
    if (predicted.size() != truth.size() || covered.size() != truth.size())
        throw ValidationError("macro_prf: length mismatch");
    const int C = space.num_classes();
    std::vector<long> tp(C + 1, 0), pred_count(C + 1, 0), true_count(C + 1, 0);
    long scored = 0;
    for (std::size_t n = 0; n < truth.size(); ++n) {
        if (!covered[n])
            continue;
        ++scored;
        ++pred_count[predicted[n]];
        ++true_count[truth[n]];
        if (predicted[n] == truth[n])
            ++tp[truth[n]];
    }
    if (scored == 0)
        throw ValidationError("macro_prf: no covered samples");

    MacroScores out;
    for (int c = 1; c <= C; ++c) {
        double p = pred_count[c] ? double(tp[c]) / double(pred_count[c]) : 0.0;
        double r = true_count[c] ? double(tp[c]) / double(true_count[c]) : 0.0;
        double f = (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
        out.precision += p;
        out.recall += r;
        out.f1 += f;
    }
    out.precision /= C;
    out.recall /= C;
    out.f1 /= C;
    return out;
}

double coverage(const std::vector<bool>& mask)
{
    if (mask.empty())
        throw ValidationError("coverage of an empty mask");
    auto covered = std::count(mask.begin(), mask.end(), true);
    return double(covered) / double(mask.size());
}

double covered_accuracy(const std::vector<int>& predicted, const std::vector<bool>& covered,
                        const std::vector<int>& truth)
{
    long hits = 0, scored = 0;
    for (std::size_t n = 0; n < truth.size(); ++n) {
        if (!covered[n])
            continue;
        ++scored;
        hits += predicted[n] == truth[n] ? 1 : 0;
    }
    if (scored == 0)
        throw ValidationError("accuracy: no covered samples");
    return double(hits) / double(scored);
}

}  // namespace dpssl
