#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpssl/core.hpp"
#include "dpssl/endmodel.hpp"
#include "dpssl/estimate.hpp"
#include "dpssl/labelmodel.hpp"
#include "dpssl/mcl.hpp"
#include "dpssl/synth.hpp"

namespace dpssl::io {

namespace fs = std::filesystem;
using nlohmann::json;

/// Shortest round-trip decimal form.
std::string format_double(double v);

/// 64-bit FNV-1a as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

std::vector<std::vector<std::string>> read_csv(const fs::path& path, std::vector<std::string>* header);
void write_text(const fs::path& path, const std::string& text);
json read_json(const fs::path& path);
void write_json(const fs::path& path, const json& j);

void write_votes_csv(const fs::path& path, const NoisyLabelMatrix& votes);
NoisyLabelMatrix read_votes_csv(const fs::path& path);

json tau_to_json(const SpecializedSets& tau);
SpecializedSets tau_from_json(const json& j);
void write_tau_json(const fs::path& path, const SpecializedSets& tau);
SpecializedSets read_tau_json(const fs::path& path);

void write_prob_labels_csv(const fs::path& path, const ProbLabels& pi);
ProbLabels read_prob_labels_csv(const fs::path& path);

void write_matrix_csv(const fs::path& path, const std::vector<std::string>& header, const Matrix& m);
Matrix read_matrix_csv(const fs::path& path);

void write_int_column(const fs::path& path, const std::string& name, const std::vector<int>& values);
std::vector<int> read_int_column(const fs::path& path);

void write_split_csv(const fs::path& path, const std::vector<synth::Split>& split);
std::vector<synth::Split> read_split_csv(const fs::path& path);

void write_feature_dataset(const fs::path& dir, const synth::FeatureDataset& data);
synth::FeatureDataset read_feature_dataset(const fs::path& dir);

json heads_to_json(const mcl::LfHeads& heads);
mcl::LfHeads heads_from_json(const json& j);

void write_theta(const fs::path& csv_path, const fs::path& json_path, const labelmodel::LabelModel& lm,
                 const json& sidecar_extra);
labelmodel::LabelModel read_theta(const fs::path& csv_path, const fs::path& json_path);

void write_estimates_csv(const fs::path& path, const estimate::AccuracyEstimates& est);
/// Reads the CSV back into regularizer targets (valid rows only).
std::vector<labelmodel::AccuracyTarget> read_estimate_targets(const fs::path& path);

json end_model_to_json(const endmodel::EndModel& m);
endmodel::EndModel end_model_from_json(const json& j);

/// Lineage sidecar next to an artifact: `<artifact>.meta.json`.
fs::path meta_path(const fs::path& artifact);
void write_meta(const fs::path& artifact, const std::string& stage, const std::string& hash);
/// Throws MissingPrerequisite when the artifact or its sidecar is absent
/// or the recorded hash differs from `expected`.
void check_lineage(const fs::path& artifact, const std::string& expected);

}  // namespace dpssl::io
