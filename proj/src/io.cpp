#include "dpssl/io.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace dpssl::io {

namespace {

std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw MissingPrerequisite("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> split_line(const std::string& line)
{
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ','))
        cells.push_back(cell);
    if (!line.empty() && line.back() == ',')
        cells.emplace_back();
    return cells;
}

int parse_int(const std::string& s, const fs::path& where)
{
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw ValidationError(where.string() + ": not an integer: '" + s + "'");
    return v;
}

double parse_double(const std::string& s, const fs::path& where)
{
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw ValidationError(where.string() + ": not a number: '" + s + "'");
    return v;
}

std::string join_header(const std::vector<std::string>& cols)
{
    std::string out;
    for (std::size_t i = 0; i < cols.size(); ++i) {
        if (i)
            out += ',';
        out += cols[i];
    }
    return out + '\n';
}

json matrix_to_json(const Matrix& m)
{
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

Matrix matrix_from_json(const json& j, Eigen::Index cols_if_empty = 0)
{
    const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
    const Eigen::Index cols = rows ? static_cast<Eigen::Index>(j[0].size()) : cols_if_empty;
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        if (static_cast<Eigen::Index>(j[r].size()) != cols)
            throw ValidationError("ragged matrix in JSON");
        for (Eigen::Index c = 0; c < cols; ++c)
            m(r, c) = j[r][c].get<double>();
    }
    return m;
}

json vector_to_json(const Vector& v)
{
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i)
        a.push_back(v(i));
    return a;
}

Vector vector_from_json(const json& j)
{
    Vector v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i)
        v(i) = j[i].get<double>();
    return v;
}

const char* split_name(synth::Split s)
{
    switch (s) {
    case synth::Split::Labeled: return "labeled";
    case synth::Split::Unlabeled: return "unlabeled";
    case synth::Split::Test: return "test";
    }
    return "unlabeled";
}

}  // namespace

std::string format_double(double v)
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc())
        throw NumericalError("cannot format number");
    return std::string(buf, ptr);
}

std::string fnv1a_hex(const std::string& bytes)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream ss;
    ss << std::hex << std::setw(16) << std::setfill('0') << h;
    return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path, std::vector<std::string>* header)
{
    std::istringstream in(read_file(path));
    std::string line;
    std::vector<std::vector<std::string>> rows;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        if (first) {
            first = false;
            if (header)
                *header = split_line(line);
            continue;
        }
        rows.push_back(split_line(line));
    }
    if (first)
        throw ValidationError(path.string() + ": missing header row");
    return rows;
}

void write_text(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error("cannot write " + path.string());
    out << text;
}

json read_json(const fs::path& path)
{
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void write_votes_csv(const fs::path& path, const NoisyLabelMatrix& votes)
{
    std::vector<std::string> header;
    for (std::size_t k = 0; k < votes.cols(); ++k)
        header.push_back("lf_" + std::to_string(k + 1));
    std::string text = join_header(header);
    for (std::size_t n = 0; n < votes.rows(); ++n) {
        for (std::size_t k = 0; k < votes.cols(); ++k) {
            if (k)
                text += ',';
            text += std::to_string(votes.votes(n, k));
        }
        text += '\n';
    }
    write_text(path, text);
}

NoisyLabelMatrix read_votes_csv(const fs::path& path)
{
    std::vector<std::string> header;
    const auto rows = read_csv(path, &header);
    NoisyLabelMatrix out;
    out.votes.resize(rows.size(), header.size());
    for (std::size_t n = 0; n < rows.size(); ++n) {
        if (rows[n].size() != header.size())
            throw ValidationError(path.string() + ": row " + std::to_string(n + 1) +
                                  " has the wrong number of cells");
        for (std::size_t k = 0; k < header.size(); ++k)
            out.votes(n, k) = parse_int(rows[n][k], path);
    }
    return out;
}

json tau_to_json(const SpecializedSets& tau)
{
    return json{{"tau", tau.sets()}, {"num_classes", tau.num_classes()}};
}

SpecializedSets tau_from_json(const json& j)
{
    try {
        return SpecializedSets(j.at("tau").get<std::vector<std::vector<int>>>(),
                               LabelSpace(j.at("num_classes").get<int>()));
    } catch (const json::exception& e) {
        throw ValidationError(std::string("specialized sets JSON: ") + e.what());
    }
}

void write_tau_json(const fs::path& path, const SpecializedSets& tau) { write_json(path, tau_to_json(tau)); }

SpecializedSets read_tau_json(const fs::path& path) { return tau_from_json(read_json(path)); }

void write_prob_labels_csv(const fs::path& path, const ProbLabels& pi)
{
    std::vector<std::string> header{"covered"};
    for (Eigen::Index c = 0; c < pi.pi.cols(); ++c)
        header.push_back("p_" + std::to_string(c + 1));
    std::string text = join_header(header);
    for (std::size_t n = 0; n < pi.rows(); ++n) {
        text += pi.covered[n] ? '1' : '0';
        for (Eigen::Index c = 0; c < pi.pi.cols(); ++c) {
            text += ',';
            text += format_double(pi.pi(n, c));
        }
        text += '\n';
    }
    write_text(path, text);
}

ProbLabels read_prob_labels_csv(const fs::path& path)
{
    std::vector<std::string> header;
    const auto rows = read_csv(path, &header);
    if (header.size() < 3 || header[0] != "covered")
        throw ValidationError(path.string() + ": expected columns covered,p_1..p_C");
    ProbLabels out;
    out.pi.resize(rows.size(), header.size() - 1);
    out.covered.resize(rows.size());
    for (std::size_t n = 0; n < rows.size(); ++n) {
        if (rows[n].size() != header.size())
            throw ValidationError(path.string() + ": ragged row " + std::to_string(n + 1));
        out.covered[n] = parse_int(rows[n][0], path) != 0;
        for (std::size_t c = 1; c < header.size(); ++c)
            out.pi(n, c - 1) = parse_double(rows[n][c], path);
    }
    return out;
}

void write_matrix_csv(const fs::path& path, const std::vector<std::string>& header, const Matrix& m)
{
    std::string text = join_header(header);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            if (c)
                text += ',';
            text += format_double(m(r, c));
        }
        text += '\n';
    }
    write_text(path, text);
}

Matrix read_matrix_csv(const fs::path& path)
{
    std::vector<std::string> header;
    const auto rows = read_csv(path, &header);
    Matrix m(rows.size(), header.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != header.size())
            throw ValidationError(path.string() + ": ragged row " + std::to_string(r + 1));
        for (std::size_t c = 0; c < header.size(); ++c)
            m(r, c) = parse_double(rows[r][c], path);
    }
    return m;
}

void write_int_column(const fs::path& path, const std::string& name, const std::vector<int>& values)
{
    std::string text = name + "\n";
    for (int v : values)
        text += std::to_string(v) + "\n";
    write_text(path, text);
}

std::vector<int> read_int_column(const fs::path& path)
{
    const auto rows = read_csv(path, nullptr);
    std::vector<int> out;
    out.reserve(rows.size());
    for (const auto& r : rows)
        out.push_back(parse_int(r.at(0), path));
    return out;
}

void write_split_csv(const fs::path& path, const std::vector<synth::Split>& split)
{
    std::string text = "split\n";
    for (auto s : split)
        text += std::string(split_name(s)) + "\n";
    write_text(path, text);
}

std::vector<synth::Split> read_split_csv(const fs::path& path)
{
    const auto rows = read_csv(path, nullptr);
    std::vector<synth::Split> out;
    for (const auto& r : rows) {
        const std::string& s = r.at(0);
        if (s == "labeled")
            out.push_back(synth::Split::Labeled);
        else if (s == "unlabeled")
            out.push_back(synth::Split::Unlabeled);
        else if (s == "test")
            out.push_back(synth::Split::Test);
        else
            throw ValidationError(path.string() + ": unknown split '" + s + "'");
    }
    return out;
}

void write_feature_dataset(const fs::path& dir, const synth::FeatureDataset& data)
{
    std::vector<std::string> header;
    for (int j = 0; j < data.positions; ++j)
        for (int d = 0; d < data.dim; ++d)
            header.push_back("p" + std::to_string(j) + "_d" + std::to_string(d));
    write_matrix_csv(dir / "features.csv", header, data.raw);
    write_matrix_csv(dir / "features_weak.csv", header, data.weak);
    write_matrix_csv(dir / "features_strong.csv", header, data.strong);
    write_int_column(dir / "truth.csv", "label", data.truth);
    write_split_csv(dir / "split.csv", data.split);
}

synth::FeatureDataset read_feature_dataset(const fs::path& dir)
{
    const json meta = read_json(dir / "dataset.json");
    synth::FeatureDataset data;
    try {
        data.num_classes = meta.at("num_classes").get<int>();
        data.positions = meta.at("positions").get<int>();
        data.dim = meta.at("dim").get<int>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("dataset.json: ") + e.what());
    }
    data.raw = read_matrix_csv(dir / "features.csv");
    data.weak = read_matrix_csv(dir / "features_weak.csv");
    data.strong = read_matrix_csv(dir / "features_strong.csv");
    data.truth = read_int_column(dir / "truth.csv");
    data.split = read_split_csv(dir / "split.csv");
    const auto N = data.truth.size();
    if (data.raw.rows() != static_cast<Eigen::Index>(N) || data.weak.rows() != data.raw.rows() ||
        data.strong.rows() != data.raw.rows() || data.split.size() != N ||
        data.raw.cols() != data.positions * data.dim)
        throw ValidationError(dir.string() + ": dataset files disagree on shape");
    return data;
}

json heads_to_json(const mcl::LfHeads& heads)
{
    json j;
    j["num_classes"] = heads.num_classes;
    j["dim"] = heads.dim;
    j["positions"] = heads.positions;
    j["feature_transform"] = heads.feature_transform;
    j["centers"] = matrix_to_json(heads.params.centers);
    j["log_beta"] = vector_to_json(heads.params.log_beta);
    json full = json::array(), restricted = json::array();
    for (std::size_t k = 0; k < heads.size(); ++k) {
        full.push_back({{"w", matrix_to_json(heads.params.full_w[k])},
                        {"b", vector_to_json(heads.params.full_b[k])}});
        if (k < heads.params.restricted_w.size())
            restricted.push_back({{"w", matrix_to_json(heads.params.restricted_w[k])},
                                  {"b", vector_to_json(heads.params.restricted_b[k])}});
    }
    j["full_heads"] = full;
    j["restricted_heads"] = restricted;
    if (heads.tau.size() == heads.size())
        j["tau"] = tau_to_json(heads.tau);
    return j;
}

mcl::LfHeads heads_from_json(const json& j)
{
    try {
        mcl::LfHeads h;
        h.num_classes = j.at("num_classes").get<int>();
        h.dim = j.at("dim").get<int>();
        h.positions = j.at("positions").get<int>();
        h.feature_transform = j.at("feature_transform").get<bool>();
        h.params.centers = matrix_from_json(j.at("centers"), h.dim);
        h.params.log_beta = vector_from_json(j.at("log_beta"));
        for (const auto& f : j.at("full_heads")) {
            h.params.full_w.push_back(matrix_from_json(f.at("w"), h.dim));
            h.params.full_b.push_back(vector_from_json(f.at("b")));
        }
        for (const auto& r : j.at("restricted_heads")) {
            h.params.restricted_w.push_back(matrix_from_json(r.at("w"), h.dim));
            h.params.restricted_b.push_back(vector_from_json(r.at("b")));
        }
        if (j.contains("tau"))
            h.tau = tau_from_json(j.at("tau"));
        if (h.params.full_w.size() != h.size())
            throw ValidationError("heads checkpoint: head count mismatch");
        return h;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("heads checkpoint: ") + e.what());
    }
}

void write_theta(const fs::path& csv_path, const fs::path& json_path, const labelmodel::LabelModel& lm,
                 const json& sidecar_extra)
{
    std::vector<std::string> header;
    for (int c = 0; c < lm.num_classes(); ++c)
        header.push_back("class_" + std::to_string(c + 1));
    write_matrix_csv(csv_path, header, lm.theta);
    json side = sidecar_extra;
    side["tau"] = lm.tau.sets();
    side["num_classes"] = lm.num_classes();
    side["num_lfs"] = lm.num_lfs();
    write_json(json_path, side);
}

labelmodel::LabelModel read_theta(const fs::path& csv_path, const fs::path& json_path)
{
    const json side = read_json(json_path);
    labelmodel::LabelModel lm{tau_from_json(side), read_matrix_csv(csv_path)};
    if (static_cast<std::size_t>(lm.theta.rows()) != lm.tau.size() ||
        lm.theta.cols() != lm.tau.num_classes())
        throw ValidationError("theta checkpoint: shape disagrees with its sidecar");
    return lm;
}

void write_estimates_csv(const fs::path& path, const estimate::AccuracyEstimates& est)
{
    std::string text = "class,lf,magnitude,sign,abstain_rate,accuracy,valid\n";
    for (const auto& e : est.entries) {
        text += std::to_string(e.cls) + "," + std::to_string(e.lf + 1) + "," +
                format_double(e.magnitude) + "," + std::to_string(e.sign) + "," +
                format_double(e.abstain_rate) + "," + format_double(e.accuracy) + "," +
                (e.valid ? "1" : "0") + "\n";
    }
    write_text(path, text);
}

std::vector<labelmodel::AccuracyTarget> read_estimate_targets(const fs::path& path)
{
    std::vector<std::string> header;
    const auto rows = read_csv(path, &header);
    if (header.size() != 7 || header[0] != "class")
        throw ValidationError(path.string() + ": unexpected estimates header");
    std::vector<labelmodel::AccuracyTarget> out;
    for (const auto& r : rows) {
        if (r.size() != 7)
            throw ValidationError(path.string() + ": ragged estimates row");
        if (parse_int(r[6], path) == 0)
            continue;
        const int lf = parse_int(r[1], path);
        if (lf < 1)
            throw ValidationError(path.string() + ": LF index must be 1-based");
        out.push_back({parse_int(r[0], path), static_cast<std::size_t>(lf - 1),
                       parse_double(r[5], path)});
    }
    return out;
}

json end_model_to_json(const endmodel::EndModel& m)
{
    return json{{"num_classes", m.num_classes},
                {"positions", m.positions},
                {"dim", m.dim},
                {"hidden_units", m.hidden_units},
                {"w1", matrix_to_json(m.w1)},
                {"b1", vector_to_json(m.b1)},
                {"w2", matrix_to_json(m.w2)},
                {"b2", vector_to_json(m.b2)}};
}

endmodel::EndModel end_model_from_json(const json& j)
{
    try {
        endmodel::EndModel m;
        m.num_classes = j.at("num_classes").get<int>();
        m.positions = j.at("positions").get<int>();
        m.dim = j.at("dim").get<int>();
        m.hidden_units = j.at("hidden_units").get<int>();
        m.w1 = matrix_from_json(j.at("w1"));
        m.b1 = vector_from_json(j.at("b1"));
        m.w2 = matrix_from_json(j.at("w2"));
        m.b2 = vector_from_json(j.at("b2"));
        const Eigen::Index in = m.hidden_units > 0 ? m.hidden_units : m.dim;
        if (m.w2.rows() != m.num_classes || m.w2.cols() != in)
            throw ValidationError("end model checkpoint: output layer has the wrong shape");
        return m;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("end model checkpoint: ") + e.what());
    }
}

fs::path meta_path(const fs::path& artifact)
{
    fs::path p = artifact;
    p += ".meta.json";
    return p;
}

void write_meta(const fs::path& artifact, const std::string& stage, const std::string& hash)
{
    write_json(meta_path(artifact), json{{"artifact", artifact.filename().string()},
                                         {"stage", stage},
                                         {"config_hash", hash}});
}

void check_lineage(const fs::path& artifact, const std::string& expected)
{
    if (!fs::exists(artifact))
        throw MissingPrerequisite("missing prerequisite " + artifact.string());
    const fs::path meta = meta_path(artifact);
    if (!fs::exists(meta))
        throw MissingPrerequisite("no lineage metadata for " + artifact.string());
    const std::string recorded = read_json(meta).value("config_hash", "");
    if (recorded != expected)
        throw MissingPrerequisite(artifact.string() + " was produced under config hash " +
                                  recorded + ", current lineage expects " + expected);
}

}  // namespace dpssl::io
