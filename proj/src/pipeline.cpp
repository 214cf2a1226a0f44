#include "dpssl/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <map>
#include <thread>

#include "dpssl/estimate.hpp"
#include "dpssl/io.hpp"
#include "dpssl/random.hpp"

namespace dpssl::pipeline {

namespace {

using io::format_double;

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where)
{
    if (!j.is_object())
        throw ValidationError("config: '" + where + "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* a : allowed)
            known = known || it.key() == a;
        if (!known)
            throw ValidationError("config: unknown key '" + it.key() + "' in '" + where + "'");
    }
}

template <class T>
void read(const json& j, const char* key, T& out)
{
    if (j.contains(key))
        out = j.at(key).get<T>();
}

synth::LfBehavior behavior_from_json(const json& j, synth::LfBehavior b)
{
    check_keys(j, {"tau", "abstain_rate_in", "abstain_rate_out", "accuracy_in", "confusion_out"},
               "synth.votes.lfs");
    read(j, "abstain_rate_in", b.abstain_rate_in);
    read(j, "abstain_rate_out", b.abstain_rate_out);
    read(j, "accuracy_in", b.accuracy_in);
    read(j, "confusion_out", b.confusion_out);
    return b;
}

void parse_features(const json& j, synth::ToyFeatureSpec& s)
{
    check_keys(j,
               {"num_classes", "dim", "positions", "means", "mean_separation", "spread",
                "informative_positions", "num_background", "background_scale", "sigma_weak",
                "sigma_strong", "n_labeled", "n_unlabeled", "n_test"},
               "synth.features");
    read(j, "num_classes", s.num_classes);
    read(j, "dim", s.dim);
    read(j, "positions", s.positions);
    read(j, "means", s.means);
    read(j, "mean_separation", s.mean_separation);
    read(j, "spread", s.spread);
    if (j.contains("informative_positions"))
        s.informative_positions = j.at("informative_positions").get<int>();
    read(j, "num_background", s.num_background);
    read(j, "background_scale", s.background_scale);
    read(j, "sigma_weak", s.sigma_weak);
    read(j, "sigma_strong", s.sigma_strong);
    read(j, "n_labeled", s.n_labeled);
    read(j, "n_unlabeled", s.n_unlabeled);
    read(j, "n_test", s.n_test);
}

void parse_votes(const json& j, SynthConfig& c)
{
    check_keys(j, {"num_classes", "tau", "class_prior", "lfs", "lf_defaults", "n_samples", "n_labeled"},
               "synth.votes");
    auto& s = c.votes;
    read(j, "num_classes", s.num_classes);
    read(j, "tau", s.tau);
    read(j, "class_prior", s.class_prior);
    read(j, "n_samples", s.n_samples);
    read(j, "n_labeled", c.votes_labeled);
    synth::LfBehavior defaults;
    if (j.contains("lf_defaults"))
        defaults = behavior_from_json(j.at("lf_defaults"), defaults);
    s.lfs.assign(s.tau.size(), defaults);
    if (j.contains("lfs")) {
        const json& lfs = j.at("lfs");
        if (!lfs.is_array() || lfs.size() != s.tau.size())
            throw ValidationError("config: synth.votes.lfs needs one entry per tau set");
        for (std::size_t k = 0; k < lfs.size(); ++k)
            s.lfs[k] = behavior_from_json(lfs[k], defaults);
    }
}

void parse_mcl(const json& j, mcl::MclConfig& c)
{
    check_keys(j,
               {"num_heads", "rho", "epsilon", "gamma", "feature_transform", "abstain_on_strong_view",
                "learning_rate", "warmup_max_epochs", "ssl_epochs", "batch_labeled",
                "batch_unlabeled", "convergence_tol", "convergence_window"},
               "mcl");
    read(j, "num_heads", c.num_heads);
    read(j, "rho", c.rho);
    read(j, "epsilon", c.epsilon);
    read(j, "gamma", c.gamma);
    read(j, "feature_transform", c.feature_transform);
    read(j, "abstain_on_strong_view", c.abstain_on_strong_view);
    read(j, "learning_rate", c.learning_rate);
    read(j, "warmup_max_epochs", c.warmup_max_epochs);
    read(j, "ssl_epochs", c.ssl_epochs);
    read(j, "batch_labeled", c.batch_labeled);
    read(j, "batch_unlabeled", c.batch_unlabeled);
    read(j, "convergence_tol", c.convergence_tol);
    read(j, "convergence_window", c.convergence_window);
}

void parse_lm(const json& j, labelmodel::LmTrainConfig& c)
{
    check_keys(j, {"learning_rate", "max_iterations", "tolerance", "lambda", "mode", "init_scale",
                   "init_offset"},
               "label_model");
    read(j, "learning_rate", c.learning_rate);
    read(j, "max_iterations", c.max_iterations);
    read(j, "tolerance", c.tolerance);
    read(j, "lambda", c.lambda);
    if (j.contains("mode"))
        c.mode = labelmodel::parse_mode(j.at("mode").get<std::string>());
    read(j, "init_scale", c.init_scale);
    read(j, "init_offset", c.init_offset);
}

void parse_end(const json& j, endmodel::EndModelConfig& c)
{
    check_keys(j, {"hidden_units", "learning_rate", "epochs", "batch_size"}, "end_model");
    read(j, "hidden_units", c.hidden_units);
    read(j, "learning_rate", c.learning_rate);
    read(j, "epochs", c.epochs);
    read(j, "batch_size", c.batch_size);
}

void parse_paths(const json& j, Paths& p)
{
    check_keys(j, {"out", "heads", "lf_log", "tau", "votes", "estimates", "theta", "theta_sidecar", "pi",
                   "model", "report", "sweep", "sweep_matrix"},
               "paths");
    if (j.contains("out"))
        p.out = j.at("out").get<std::string>();
    read(j, "heads", p.heads);
    read(j, "lf_log", p.lf_log);
    read(j, "tau", p.tau);
    read(j, "votes", p.votes);
    read(j, "estimates", p.estimates);
    read(j, "theta", p.theta);
    read(j, "theta_sidecar", p.theta_sidecar);
    read(j, "pi", p.pi);
    read(j, "model", p.model);
    read(j, "report", p.report);
    read(j, "sweep", p.sweep);
    read(j, "sweep_matrix", p.sweep_matrix);
}

std::vector<std::size_t> split_rows(const std::vector<synth::Split>& split, synth::Split which)
{
    std::vector<std::size_t> rows;
    for (std::size_t n = 0; n < split.size(); ++n)
        if (split[n] == which)
            rows.push_back(n);
    return rows;
}

NoisyLabelMatrix take_votes(const NoisyLabelMatrix& votes, const std::vector<std::size_t>& rows)
{
    NoisyLabelMatrix out;
    out.votes.resize(rows.size(), votes.votes.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        out.votes.row(i) = votes.votes.row(rows[i]);
    return out;
}

Matrix take_rows(const Matrix& m, const std::vector<std::size_t>& rows)
{
    Matrix out(rows.size(), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        out.row(i) = m.row(rows[i]);
    return out;
}

std::vector<int> take(const std::vector<int>& v, const std::vector<std::size_t>& rows)
{
    std::vector<int> out;
    out.reserve(rows.size());
    for (auto r : rows)
        out.push_back(v.at(r));
    return out;
}

struct Annotation {
    double accuracy = 0.0;
    MacroScores scores;
    double coverage = 0.0;
};

Annotation score_labels(const std::vector<int>& predicted, const std::vector<bool>& covered,
                        const std::vector<int>& truth, int num_classes)
{
    Annotation a;
    a.coverage = coverage(covered);
    if (std::find(covered.begin(), covered.end(), true) == covered.end())
        return a;
    a.accuracy = covered_accuracy(predicted, covered, truth);
    a.scores = macro_prf(predicted, covered, truth, LabelSpace(num_classes));
    return a;
}

struct VoteSplit {
    NoisyLabelMatrix votes_l, votes_u;
    std::vector<int> y_l, truth_u;
};

VoteSplit split_votes(const NoisyLabelMatrix& votes, const std::vector<int>& truth,
                      const std::vector<synth::Split>& split)
{
    if (truth.size() != votes.rows() || split.size() != votes.rows())
        throw ValidationError("votes, truth and split files disagree on the number of rows");
    const auto lrows = split_rows(split, synth::Split::Labeled);
    const auto urows = split_rows(split, synth::Split::Unlabeled);
    if (urows.empty())
        throw ValidationError("no unlabeled rows to annotate");
    return {take_votes(votes, lrows), take_votes(votes, urows), take(truth, lrows), take(truth, urows)};
}

labelmodel::LmData lm_data(const VoteSplit& s, const SpecializedSets& tau,
                           const labelmodel::LmTrainConfig& config,
                           const std::vector<labelmodel::AccuracyTarget>& estimated)
{
    labelmodel::LmData data{s.votes_l, s.y_l, s.votes_u, {}};
    if (config.mode == labelmodel::RegularizerMode::Estimated)
        data.targets = estimated;
    else if (config.mode == labelmodel::RegularizerMode::Oracle)
        data.targets = oracle_targets(s.votes_u, s.truth_u, tau);
    return data;
}

void require_estimable(const SpecializedSets& tau)
{
    if (tau.size() < 3)
        throw ValidationError("regularizer mode 'estimated' needs at least 3 LFs");
}

std::string hash_of(const std::string& s) { return io::fnv1a_hex(s); }

fs::path dataset_meta(const PipelineConfig& c) { return c.paths("dataset.json"); }

void write_all_meta(const std::vector<fs::path>& files, const std::string& stage, const std::string& hash)
{
    for (const auto& f : files)
        io::write_meta(f, stage, hash);
}

struct VoteFiles {
    NoisyLabelMatrix votes;
    SpecializedSets tau;
    std::vector<int> truth;
    std::vector<synth::Split> split;
};

VoteFiles load_vote_files(const PipelineConfig& c, const Lineage& lin)
{
    io::check_lineage(c.paths(c.paths.votes), lin.votes);
    io::check_lineage(c.paths(c.paths.tau), lin.votes);
    io::check_lineage(c.paths("truth.csv"), lin.synth);
    io::check_lineage(c.paths("split.csv"), lin.synth);
    VoteFiles f;
    f.votes = io::read_votes_csv(c.paths(c.paths.votes));
    f.tau = io::read_tau_json(c.paths(c.paths.tau));
    if (f.tau.num_classes() != c.num_classes())
        throw ValidationError("specialized sets file disagrees with the configured class count");
    if (f.votes.cols() != f.tau.size())
        throw ValidationError("votes file and specialized sets disagree on K");
    validate_votes(f.votes, f.tau, LabelSpace(c.num_classes()));
    f.truth = io::read_int_column(c.paths("truth.csv"));
    f.split = io::read_split_csv(c.paths("split.csv"));
    return f;
}

synth::FeatureDataset load_dataset(const PipelineConfig& c, const Lineage& lin)
{
    io::check_lineage(dataset_meta(c), lin.synth);
    return io::read_feature_dataset(c.paths.out);
}

void require_features(const PipelineConfig& c, const char* command)
{
    if (c.synth.mode != SynthMode::Features)
        throw ValidationError(std::string(command) + " needs synth.mode = \"features\"");
}

std::vector<std::string> report_header()
{
    return {"seed", "n_labeled", "error_rate", "macro_precision", "macro_recall",
            "macro_f1", "coverage", "annotation_accuracy"};
}

std::string report_row(const std::string& seed, std::size_t n_labeled, std::optional<double> err,
                       const MacroScores& s, double cov, double acc)
{
    return seed + "," + std::to_string(n_labeled) + "," + (err ? format_double(*err) : std::string()) +
           "," + format_double(s.precision) + "," + format_double(s.recall) + "," +
           format_double(s.f1) + "," + format_double(cov) + "," + format_double(acc) + "\n";
}

std::string join(const std::vector<std::string>& cols)
{
    std::string out;
    for (std::size_t i = 0; i < cols.size(); ++i)
        out += (i ? "," : "") + cols[i];
    return out + "\n";
}

double mean_of(const std::vector<double>& v)
{
    double s = 0.0;
    for (double x : v)
        s += x;
    return v.empty() ? 0.0 : s / double(v.size());
}

double std_of(const std::vector<double>& v)
{
    if (v.size() < 2)
        return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v)
        s += (x - m) * (x - m);
    return std::sqrt(s / double(v.size() - 1));
}

}  // namespace

// ---------------------------------------------------------------------------
// configuration

PipelineConfig PipelineConfig::from_json(const json& j)
{
    PipelineConfig c;
    try {
        check_keys(j, {"seed", "paths", "synth", "mcl", "estimate", "label_model", "end_model", "eval",
                       "sweep"},
                   "<root>");
        read(j, "seed", c.seed);
        if (j.contains("paths"))
            parse_paths(j.at("paths"), c.paths);
        if (j.contains("synth")) {
            const json& s = j.at("synth");
            check_keys(s, {"mode", "features", "votes"}, "synth");
            const std::string mode = s.value("mode", std::string("features"));
            if (mode == "features")
                c.synth.mode = SynthMode::Features;
            else if (mode == "votes")
                c.synth.mode = SynthMode::Votes;
            else
                throw ValidationError("config: synth.mode must be 'features' or 'votes'");
            if (s.contains("features"))
                parse_features(s.at("features"), c.synth.features);
            if (s.contains("votes"))
                parse_votes(s.at("votes"), c.synth);
        }
        if (j.contains("mcl"))
            parse_mcl(j.at("mcl"), c.mcl);
        if (j.contains("estimate")) {
            check_keys(j.at("estimate"), {"delta"}, "estimate");
            read(j.at("estimate"), "delta", c.delta);
        }
        if (j.contains("label_model"))
            parse_lm(j.at("label_model"), c.label_model);
        if (j.contains("end_model"))
            parse_end(j.at("end_model"), c.end_model);
        if (j.contains("eval")) {
            const json& e = j.at("eval");
            check_keys(e, {"seeds", "end_model", "supervised_baseline"}, "eval");
            read(e, "seeds", c.eval.seeds);
            read(e, "end_model", c.eval.end_model);
            read(e, "supervised_baseline", c.eval.supervised_baseline);
        }
        if (j.contains("sweep")) {
            const json& s = j.at("sweep");
            check_keys(s, {"K", "rho", "gamma", "lambda", "seeds", "max_runs"}, "sweep");
            read(s, "K", c.sweep.num_heads);
            read(s, "rho", c.sweep.rho);
            read(s, "gamma", c.sweep.gamma);
            read(s, "lambda", c.sweep.lambda);
            read(s, "seeds", c.sweep.seeds);
            read(s, "max_runs", c.sweep.max_runs);
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path)
{
    if (!fs::exists(path))
        throw MissingPrerequisite("config file not found: " + path.string());
    return from_json(io::read_json(path));
}

int PipelineConfig::num_classes() const
{
    return synth.mode == SynthMode::Features ? synth.features.num_classes : synth.votes.num_classes;
}

void PipelineConfig::validate() const
{
    if (synth.mode == SynthMode::Features) {
        synth.features.validate();
        if (synth.features.n_unlabeled == 0)
            throw ValidationError("toy features: n_unlabeled must be positive");
        mcl.validate(synth.features.num_classes);
    } else {
        synth.votes.validate();
        if (synth.votes_labeled >= synth.votes.n_samples)
            throw ValidationError("vote scenario: n_labeled must leave unlabeled rows");
    }
    if (!(delta > 0.0))
        throw ValidationError("estimate: delta must be positive");
    label_model.validate();
    end_model.validate();

    const std::vector<int> ks = sweep.num_heads.empty() ? std::vector<int>{mcl.num_heads} : sweep.num_heads;
    const std::vector<double> rhos = sweep.rho.empty() ? std::vector<double>{mcl.rho} : sweep.rho;
    for (int k : ks)
        for (double r : rhos) {
            mcl::MclConfig probe = mcl;
            probe.num_heads = k;
            probe.rho = r;
            if (k < 1 || probe.selected() < 1)
                throw ValidationError("sweep: grid point K=" + std::to_string(k) + ", rho=" +
                                      format_double(r) + " selects no head (floor(rho*K) < 1)");
        }
    for (double g : sweep.gamma)
        if (!(g > 0.0 && g <= 1.0))
            throw ValidationError("sweep: gamma must lie in (0,1]");
    for (double l : sweep.lambda)
        if (!(l >= 0.0))
            throw ValidationError("sweep: lambda must be non-negative");
}

json to_json(const synth::ToyFeatureSpec& s)
{
    json j{{"num_classes", s.num_classes},         {"dim", s.dim},
           {"positions", s.positions},             {"means", s.means},
           {"mean_separation", s.mean_separation}, {"spread", s.spread},
           {"num_background", s.num_background},   {"background_scale", s.background_scale},
           {"sigma_weak", s.sigma_weak},           {"sigma_strong", s.sigma_strong},
           {"n_labeled", s.n_labeled},             {"n_unlabeled", s.n_unlabeled},
           {"n_test", s.n_test}};
    if (s.informative_positions)
        j["informative_positions"] = *s.informative_positions;
    return j;
}

json to_json(const synth::VoteScenarioSpec& s)
{
    json lfs = json::array();
    for (const auto& b : s.lfs)
        lfs.push_back({{"abstain_rate_in", b.abstain_rate_in},
                       {"abstain_rate_out", b.abstain_rate_out},
                       {"accuracy_in", b.accuracy_in},
                       {"confusion_out", b.confusion_out}});
    return json{{"num_classes", s.num_classes}, {"tau", s.tau}, {"class_prior", s.class_prior},
                {"lfs", lfs}, {"n_samples", s.n_samples}};
}

json to_json(const mcl::MclConfig& c)
{
    return json{{"num_heads", c.num_heads},
                {"rho", c.rho},
                {"epsilon", c.epsilon},
                {"gamma", c.gamma},
                {"feature_transform", c.feature_transform},
                {"abstain_on_strong_view", c.abstain_on_strong_view},
                {"learning_rate", c.learning_rate},
                {"warmup_max_epochs", c.warmup_max_epochs},
                {"ssl_epochs", c.ssl_epochs},
                {"batch_labeled", c.batch_labeled},
                {"batch_unlabeled", c.batch_unlabeled},
                {"convergence_tol", c.convergence_tol},
                {"convergence_window", c.convergence_window}};
}

json to_json(const labelmodel::LmTrainConfig& c)
{
    return json{{"learning_rate", c.learning_rate}, {"max_iterations", c.max_iterations},
                {"tolerance", c.tolerance},         {"lambda", c.lambda},
                {"mode", labelmodel::to_string(c.mode)}, {"init_scale", c.init_scale},
                {"init_offset", c.init_offset}};
}

json to_json(const endmodel::EndModelConfig& c)
{
    return json{{"hidden_units", c.hidden_units}, {"learning_rate", c.learning_rate},
                {"epochs", c.epochs}, {"batch_size", c.batch_size}};
}

json to_json(const PipelineConfig& c)
{
    json synth_j{{"mode", c.synth.mode == SynthMode::Features ? "features" : "votes"}};
    if (c.synth.mode == SynthMode::Features) {
        synth_j["features"] = to_json(c.synth.features);
    } else {
        synth_j["votes"] = to_json(c.synth.votes);
        synth_j["votes"]["n_labeled"] = c.synth.votes_labeled;
    }
    return json{{"seed", c.seed},
                {"synth", synth_j},
                {"mcl", to_json(c.mcl)},
                {"estimate", {{"delta", c.delta}}},
                {"label_model", to_json(c.label_model)},
                {"end_model", to_json(c.end_model)}};
}

std::uint64_t synth_seed(std::uint64_t seed) { return mix64(seed ^ 0x73796e7468ULL); }
std::uint64_t mcl_seed(std::uint64_t seed) { return mix64(seed ^ 0x6d636cULL); }
std::uint64_t lm_seed(std::uint64_t seed) { return mix64(seed ^ 0x6c6dULL); }
std::uint64_t end_seed(std::uint64_t seed) { return mix64(seed ^ 0x656e64ULL); }
std::uint64_t tie_seed(std::uint64_t seed) { return mix64(seed ^ 0x746965ULL); }

Lineage lineage(const PipelineConfig& c)
{
    const json full = to_json(c);
    Lineage l;
    l.synth = hash_of("synth|" + std::to_string(c.seed) + "|" + full["synth"].dump());
    l.lf = hash_of(l.synth + "|lf|" + full["mcl"].dump());
    l.votes = c.synth.mode == SynthMode::Features ? hash_of(l.lf + "|apply") : hash_of(l.synth + "|votes");
    l.estimate = hash_of(l.votes + "|estimate|" + format_double(c.delta));
    std::string lm = l.votes + "|lm|" + full["label_model"].dump();
    if (c.label_model.mode == labelmodel::RegularizerMode::Estimated)
        lm += "|" + l.estimate;
    l.lm = hash_of(lm);
    l.infer = hash_of(l.lm + "|infer");
    l.end = hash_of(l.infer + "|end|" + full["end_model"].dump());
    return l;
}

unsigned thread_cap()
{
    const char* env = std::getenv("DPSSL_THREADS");
    if (env && *env) {
        unsigned v = 0;
        const std::string s(env);
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || ptr != s.data() + s.size() || v == 0)
            throw ValidationError("DPSSL_THREADS must be a positive integer");
        return v;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<labelmodel::AccuracyTarget> oracle_targets(const NoisyLabelMatrix& votes,
                                                       const std::vector<int>& truth,
                                                       const SpecializedSets& tau)
{
    const synth::AccuracyTable table = synth::empirical_accuracy(votes, truth, tau);
    std::vector<labelmodel::AccuracyTarget> out;
    for (int i = 1; i <= tau.num_classes(); ++i)
        for (std::size_t k = 0; k < tau.size(); ++k)
            if (tau.contains(k, i) && table.accuracy_defined(i - 1, k))
                out.push_back({i, k, table.accuracy(i - 1, k)});
    return out;
}

// ---------------------------------------------------------------------------
// in-memory run

RunMetrics run_pipeline(const PipelineConfig& config, std::uint64_t seed)
{
    config.validate();
    const int C = config.num_classes();
    RunMetrics m;
    m.seed = seed;

    NoisyLabelMatrix votes;
    SpecializedSets tau;
    std::vector<int> truth;
    std::vector<synth::Split> split;
    std::optional<synth::FeatureDataset> data;

    if (config.synth.mode == SynthMode::Features) {
        synth::ToyFeatureSpec spec = config.synth.features;
        spec.seed = synth_seed(seed);
        data = synth::gen_toy_features(spec);
        mcl::MclConfig mc = config.mcl;
        mc.seed = mcl_seed(seed);
        const mcl::TrainedLfs lfs = mcl::train_lfs(*data, mc);
        votes = mcl::apply_lfs(data->raw, lfs.heads);
        tau = lfs.heads.tau;
        truth = data->truth;
        split = data->split;
    } else {
        synth::VoteScenarioSpec spec = config.synth.votes;
        spec.seed = synth_seed(seed);
        const synth::VotePopulation pop = synth::gen_votes(spec);
        votes = pop.votes;
        tau = SpecializedSets(spec.tau, LabelSpace(C));
        truth = pop.truth;
        split.assign(truth.size(), synth::Split::Unlabeled);
        std::fill_n(split.begin(), config.synth.votes_labeled, synth::Split::Labeled);
    }
    m.tau = tau.sets();

    const VoteSplit vs = split_votes(votes, truth, split);
    m.n_labeled = vs.y_l.size();
    std::vector<labelmodel::AccuracyTarget> estimated;
    if (config.label_model.mode == labelmodel::RegularizerMode::Estimated) {
        require_estimable(tau);
        estimated = estimate::estimate_accuracies(vs.votes_u, tau, LabelSpace(C), config.delta).targets();
    }
    labelmodel::LmTrainConfig lc = config.label_model;
    lc.seed = lm_seed(seed);
    labelmodel::LmTrainLog log;
    const labelmodel::LabelModel lm = labelmodel::train_label_model(lm_data(vs, tau, lc, estimated), tau, lc, &log);
    m.lm_iterations = log.iterations;
    const ProbLabels pi = labelmodel::infer(lm.theta, tau, vs.votes_u);

    const Annotation a = score_labels(pi.hard_labels(), pi.covered, vs.truth_u, C);
    m.annotation_accuracy = a.accuracy;
    m.annotation = a.scores;
    m.coverage = a.coverage;
    const labelmodel::MajorityVote mv = labelmodel::majority_vote(vs.votes_u, C, tie_seed(seed));
    const Annotation b = score_labels(mv.labels, mv.covered, vs.truth_u, C);
    m.mv_accuracy = b.accuracy;
    m.mv = b.scores;
    m.mv_coverage = b.coverage;

    if (data && (config.eval.end_model || config.eval.supervised_baseline)) {
        const auto lrows = data->indices(synth::Split::Labeled);
        const auto urows = data->indices(synth::Split::Unlabeled);
        const auto trows = data->indices(synth::Split::Test);
        if (trows.empty())
            throw ValidationError("end model evaluation needs n_test > 0");
        const Matrix x_l = take_rows(data->raw, lrows);
        const Matrix x_u = take_rows(data->raw, urows);
        const Matrix x_t = take_rows(data->raw, trows);
        const std::vector<int> y_t = take(data->truth, trows);
        endmodel::EndModelConfig ec = config.end_model;
        ec.seed = end_seed(seed);
        if (config.eval.end_model) {
            const auto model = endmodel::train_end_model(x_l, vs.y_l, x_u, pi, C, data->positions,
                                                         data->dim, ec);
            m.error_rate = endmodel::evaluate(model, x_t, y_t);
        }
        if (config.eval.supervised_baseline) {
            ProbLabels onehot;
            onehot.pi = Matrix::Zero(urows.size(), C);
            onehot.covered.assign(urows.size(), true);
            for (std::size_t n = 0; n < urows.size(); ++n)
                onehot.pi(n, vs.truth_u[n] - 1) = 1.0;
            const auto model = endmodel::train_end_model(x_l, vs.y_l, x_u, onehot, C, data->positions,
                                                         data->dim, ec);
            m.supervised_error_rate = endmodel::evaluate(model, x_t, y_t);
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// commands

void cmd_synth(const PipelineConfig& c)
{
    c.validate();
    const Lineage lin = lineage(c);
    const auto& p = c.paths;
    if (c.synth.mode == SynthMode::Features) {
        synth::ToyFeatureSpec spec = c.synth.features;
        spec.seed = synth_seed(c.seed);
        const synth::FeatureDataset data = synth::gen_toy_features(spec);
        io::write_feature_dataset(p.out, data);
        io::write_json(dataset_meta(c), json{{"num_classes", data.num_classes},
                                              {"positions", data.positions},
                                              {"dim", data.dim},
                                              {"n_labeled", spec.n_labeled},
                                              {"n_unlabeled", spec.n_unlabeled},
                                              {"n_test", spec.n_test},
                                              {"spec", to_json(c.synth.features)},
                                              {"seed", c.seed}});
        write_all_meta({p("features.csv"), p("features_weak.csv"), p("features_strong.csv"),
                        p("truth.csv"), p("split.csv"), dataset_meta(c)},
                       "synth", lin.synth);
        return;
    }
    synth::VoteScenarioSpec spec = c.synth.votes;
    spec.seed = synth_seed(c.seed);
    const synth::VotePopulation pop = synth::gen_votes(spec);
    const SpecializedSets tau(spec.tau, LabelSpace(spec.num_classes));
    validate_votes(pop.votes, tau, LabelSpace(spec.num_classes));
    std::vector<synth::Split> split(pop.truth.size(), synth::Split::Unlabeled);
    std::fill_n(split.begin(), c.synth.votes_labeled, synth::Split::Labeled);
    io::write_int_column(p("truth.csv"), "label", pop.truth);
    io::write_split_csv(p("split.csv"), split);
    io::write_votes_csv(p(p.votes), pop.votes);
    io::write_tau_json(p(p.tau), tau);
    write_all_meta({p("truth.csv"), p("split.csv")}, "synth", lin.synth);
    write_all_meta({p(p.votes), p(p.tau)}, "votes", lin.votes);
}

void cmd_lf_train(const PipelineConfig& c)
{
    c.validate();
    require_features(c, "lf-train");
    const Lineage lin = lineage(c);
    const synth::FeatureDataset data = load_dataset(c, lin);
    mcl::MclConfig mc = c.mcl;
    mc.seed = mcl_seed(c.seed);
    const mcl::TrainedLfs trained = mcl::train_lfs(data, mc);

    json ckpt = io::heads_to_json(trained.heads);
    ckpt["config"] = to_json(c.mcl);
    ckpt["seed"] = c.seed;
    io::write_json(c.paths(c.paths.heads), ckpt);
    std::string log = "epoch,phase,mcl,labeled,unlabeled,total\n";
    for (const auto& r : trained.log)
        log += std::to_string(r.epoch) + "," +
               (r.phase == mcl::Phase::MclWarmup ? "warmup" : "abstain_ssl") + "," +
               format_double(r.loss.mcl) + "," + format_double(r.loss.labeled) + "," +
               format_double(r.loss.unlabeled) + "," + format_double(r.loss.total) + "\n";
    io::write_text(c.paths(c.paths.lf_log), log);
    write_all_meta({c.paths(c.paths.heads), c.paths(c.paths.lf_log)}, "lf-train", lin.lf);
}

void cmd_lf_apply(const PipelineConfig& c)
{
    c.validate();
    require_features(c, "lf-apply");
    const Lineage lin = lineage(c);
    io::check_lineage(c.paths(c.paths.heads), lin.lf);
    const synth::FeatureDataset data = load_dataset(c, lin);
    const mcl::LfHeads heads = io::heads_from_json(io::read_json(c.paths(c.paths.heads)));
    if (heads.tau.size() != heads.size())
        throw ValidationError("heads checkpoint has no specialized sets");
    bool any = false;
    for (std::size_t k = 0; k < heads.size(); ++k)
        any = any || heads.tau.active(k);
    if (!any)
        throw ValidationError("every specialized set in the heads checkpoint is empty");
    if (heads.positions != data.positions || heads.dim != data.dim || heads.num_classes != data.num_classes)
        throw ValidationError("heads checkpoint does not match the dataset shape");
    const NoisyLabelMatrix votes = mcl::apply_lfs(data.raw, heads);
    validate_votes(votes, heads.tau, LabelSpace(heads.num_classes));
    io::write_votes_csv(c.paths(c.paths.votes), votes);
    io::write_tau_json(c.paths(c.paths.tau), heads.tau);
    write_all_meta({c.paths(c.paths.votes), c.paths(c.paths.tau)}, "lf-apply", lin.votes);
}

void cmd_estimate(const PipelineConfig& c)
{
    c.validate();
    const Lineage lin = lineage(c);
    const VoteFiles f = load_vote_files(c, lin);
    const VoteSplit vs = split_votes(f.votes, f.truth, f.split);
    const auto est = estimate::estimate_accuracies(vs.votes_u, f.tau, LabelSpace(c.num_classes()), c.delta);
    io::write_estimates_csv(c.paths(c.paths.estimates), est);
    io::write_meta(c.paths(c.paths.estimates), "estimate", lin.estimate);
}

void cmd_lm_train(const PipelineConfig& c)
{
    c.validate();
    const Lineage lin = lineage(c);
    const VoteFiles f = load_vote_files(c, lin);
    const VoteSplit vs = split_votes(f.votes, f.truth, f.split);
    std::vector<labelmodel::AccuracyTarget> estimated;
    if (c.label_model.mode == labelmodel::RegularizerMode::Estimated) {
        require_estimable(f.tau);
        io::check_lineage(c.paths(c.paths.estimates), lin.estimate);
        estimated = io::read_estimate_targets(c.paths(c.paths.estimates));
    }
    labelmodel::LmTrainConfig lc = c.label_model;
    lc.seed = lm_seed(c.seed);
    labelmodel::LmTrainLog log;
    const auto lm = labelmodel::train_label_model(lm_data(vs, f.tau, lc, estimated), f.tau, lc, &log);
    json extra{{"config", to_json(c.label_model)},
               {"config_hash", lin.lm},
               {"iterations", log.iterations},
               {"converged", log.converged},
               {"objective", log.objective.empty() ? 0.0 : log.objective.back()}};
    io::write_theta(c.paths(c.paths.theta), c.paths(c.paths.theta_sidecar), lm, extra);
    write_all_meta({c.paths(c.paths.theta), c.paths(c.paths.theta_sidecar)}, "lm-train", lin.lm);
}

void cmd_lm_infer(const PipelineConfig& c)
{
    c.validate();
    const Lineage lin = lineage(c);
    const VoteFiles f = load_vote_files(c, lin);
    io::check_lineage(c.paths(c.paths.theta), lin.lm);
    const auto lm = io::read_theta(c.paths(c.paths.theta), c.paths(c.paths.theta_sidecar));
    if (lm.tau.sets() != f.tau.sets())
        throw ValidationError("theta checkpoint and votes disagree on the specialized sets");
    const VoteSplit vs = split_votes(f.votes, f.truth, f.split);
    const ProbLabels pi = labelmodel::infer(lm.theta, lm.tau, vs.votes_u);
    io::write_prob_labels_csv(c.paths(c.paths.pi), pi);
    io::write_meta(c.paths(c.paths.pi), "lm-infer", lin.infer);
}

void cmd_end_train(const PipelineConfig& c)
{
    c.validate();
    require_features(c, "end-train");
    const Lineage lin = lineage(c);
    const synth::FeatureDataset data = load_dataset(c, lin);
    io::check_lineage(c.paths(c.paths.pi), lin.infer);
    const ProbLabels pi = io::read_prob_labels_csv(c.paths(c.paths.pi));
    const auto lrows = data.indices(synth::Split::Labeled);
    const auto urows = data.indices(synth::Split::Unlabeled);
    if (pi.rows() != urows.size() || pi.pi.cols() != data.num_classes)
        throw ValidationError("probabilistic labels do not match the unlabeled split");
    endmodel::EndModelConfig ec = c.end_model;
    ec.seed = end_seed(c.seed);
    const auto model = endmodel::train_end_model(take_rows(data.raw, lrows), take(data.truth, lrows),
                                                 take_rows(data.raw, urows), pi, data.num_classes,
                                                 data.positions, data.dim, ec);
    json j = io::end_model_to_json(model);
    j["config"] = to_json(c.end_model);
    j["seed"] = c.seed;
    io::write_json(c.paths(c.paths.model), j);
    io::write_meta(c.paths(c.paths.model), "end-train", lin.end);
}

void cmd_eval(const PipelineConfig& c)
{
    c.validate();
    std::string text = join(report_header());
    if (!c.eval.seeds.empty()) {
        std::vector<double> err, prec, rec, f1, cov, acc;
        bool have_err = true;
        std::size_t n_labeled = 0;
        for (auto s : c.eval.seeds) {
            const RunMetrics m = run_pipeline(c, s);
            n_labeled = m.n_labeled;
            text += report_row(std::to_string(s), m.n_labeled, m.error_rate, m.annotation, m.coverage,
                               m.annotation_accuracy);
            have_err = have_err && m.error_rate.has_value();
            err.push_back(m.error_rate.value_or(0.0));
            prec.push_back(m.annotation.precision);
            rec.push_back(m.annotation.recall);
            f1.push_back(m.annotation.f1);
            cov.push_back(m.coverage);
            acc.push_back(m.annotation_accuracy);
        }
        auto summary = [&](const char* name, double (*fn)(const std::vector<double>&)) {
            text += report_row(name, n_labeled, have_err ? std::optional<double>(fn(err)) : std::nullopt,
                               {fn(prec), fn(rec), fn(f1)}, fn(cov), fn(acc));
        };
        summary("mean", mean_of);
        summary("std", std_of);
        io::write_text(c.paths(c.paths.report), text);
        return;
    }

    const Lineage lin = lineage(c);
    io::check_lineage(c.paths(c.paths.pi), lin.infer);
    io::check_lineage(c.paths("truth.csv"), lin.synth);
    io::check_lineage(c.paths("split.csv"), lin.synth);
    const ProbLabels pi = io::read_prob_labels_csv(c.paths(c.paths.pi));
    const std::vector<int> truth = io::read_int_column(c.paths("truth.csv"));
    const auto split = io::read_split_csv(c.paths("split.csv"));
    const auto urows = split_rows(split, synth::Split::Unlabeled);
    if (pi.rows() != urows.size())
        throw ValidationError("probabilistic labels do not match the unlabeled split");
    const Annotation a = score_labels(pi.hard_labels(), pi.covered, take(truth, urows), c.num_classes());

    std::optional<double> err;
    if (c.synth.mode == SynthMode::Features && c.eval.end_model) {
        io::check_lineage(c.paths(c.paths.model), lin.end);
        const synth::FeatureDataset data = load_dataset(c, lin);
        const auto model = io::end_model_from_json(io::read_json(c.paths(c.paths.model)));
        const auto trows = data.indices(synth::Split::Test);
        err = endmodel::evaluate(model, take_rows(data.raw, trows), take(data.truth, trows));
    }
    text += report_row(std::to_string(c.seed), split_rows(split, synth::Split::Labeled).size(), err,
                       a.scores, a.coverage, a.accuracy);
    io::write_text(c.paths(c.paths.report), text);
}

void cmd_sweep(const PipelineConfig& c)
{
    c.validate();
    require_features(c, "sweep");
    struct Point {
        int k;
        double rho, gamma, lambda;
    };
    const auto ks = c.sweep.num_heads.empty() ? std::vector<int>{c.mcl.num_heads} : c.sweep.num_heads;
    const auto rhos = c.sweep.rho.empty() ? std::vector<double>{c.mcl.rho} : c.sweep.rho;
    const auto gammas = c.sweep.gamma.empty() ? std::vector<double>{c.mcl.gamma} : c.sweep.gamma;
    const auto lambdas = c.sweep.lambda.empty() ? std::vector<double>{c.label_model.lambda} : c.sweep.lambda;
    const auto seeds = c.sweep.seeds.empty() ? std::vector<std::uint64_t>{c.seed} : c.sweep.seeds;
    std::vector<Point> points;
    for (int k : ks)
        for (double g : gammas)
            for (double l : lambdas)
                for (double r : rhos)
                    points.push_back({k, r, g, l});
    const std::size_t runs = points.size() * seeds.size();
    if (runs > c.sweep.max_runs)
        throw ValidationError("sweep: " + std::to_string(runs) + " runs exceed the budget of " +
                              std::to_string(c.sweep.max_runs));

    std::vector<RunMetrics> results(runs);
    std::vector<std::exception_ptr> errors(runs);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < runs; i = next++) {
            const Point& pt = points[i / seeds.size()];
            PipelineConfig pc = c;
            pc.mcl.num_heads = pt.k;
            pc.mcl.rho = pt.rho;
            pc.mcl.gamma = pt.gamma;
            pc.label_model.lambda = pt.lambda;
            pc.eval.end_model = false;
            pc.eval.supervised_baseline = false;
            try {
                results[i] = run_pipeline(pc, seeds[i % seeds.size()]);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const unsigned threads = std::min<std::size_t>(thread_cap(), runs);
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < threads; ++t)
        pool.emplace_back(worker);
    worker();
    for (auto& t : pool)
        t.join();
    for (const auto& e : errors)
        if (e)
            std::rethrow_exception(e);

    std::string rows = "K,rho,gamma,lambda,seed,annotation_accuracy,macro_f1,coverage,mv_accuracy\n";
    std::map<std::tuple<int, double, double>, std::map<double, std::vector<double>>> matrix;
    for (std::size_t i = 0; i < runs; ++i) {
        const Point& pt = points[i / seeds.size()];
        const RunMetrics& m = results[i];
        rows += std::to_string(pt.k) + "," + format_double(pt.rho) + "," + format_double(pt.gamma) + "," +
                format_double(pt.lambda) + "," + std::to_string(m.seed) + "," +
                format_double(m.annotation_accuracy) + "," + format_double(m.annotation.f1) + "," +
                format_double(m.coverage) + "," + format_double(m.mv_accuracy) + "\n";
        matrix[{pt.k, pt.gamma, pt.lambda}][pt.rho].push_back(m.annotation_accuracy);
    }
    io::write_text(c.paths(c.paths.sweep), rows);

    std::vector<double> sorted_rhos = rhos;
    std::sort(sorted_rhos.begin(), sorted_rhos.end());
    sorted_rhos.erase(std::unique(sorted_rhos.begin(), sorted_rhos.end()), sorted_rhos.end());
    std::string mat = "K,gamma,lambda";
    for (double r : sorted_rhos)
        mat += ",rho_" + format_double(r);
    mat += "\n";
    for (const auto& [key, by_rho] : matrix) {
        mat += std::to_string(std::get<0>(key)) + "," + format_double(std::get<1>(key)) + "," +
               format_double(std::get<2>(key));
        for (double r : sorted_rhos)
            mat += "," + format_double(mean_of(by_rho.at(r)));
        mat += "\n";
    }
    io::write_text(c.paths(c.paths.sweep_matrix), mat);
}

}  // namespace dpssl::pipeline
