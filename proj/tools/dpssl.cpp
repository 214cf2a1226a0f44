// dpssl: command-line front end for the label-aggregation pipeline.

#include <cstdint>
#include <functional>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "dpssl/pipeline.hpp"

namespace {

enum ExitCode { kOk = 0, kValidation = 2, kNumerical = 3, kMissing = 4 };

}  // namespace

int main(int argc, char** argv)
{
    using namespace dpssl;
    using Command = std::function<void(const pipeline::PipelineConfig&)>;
    const std::map<std::string, Command> commands{
        {"synth", pipeline::cmd_synth},         {"lf-train", pipeline::cmd_lf_train},
        {"lf-apply", pipeline::cmd_lf_apply},   {"estimate", pipeline::cmd_estimate},
        {"lm-train", pipeline::cmd_lm_train},   {"lm-infer", pipeline::cmd_lm_infer},
        {"end-train", pipeline::cmd_end_train}, {"eval", pipeline::cmd_eval},
        {"sweep", pipeline::cmd_sweep},
    };

    CLI::App app{"Weak-supervision pipeline: LF learning, label model, end model"};
    app.require_subcommand(1, 1);
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    for (const auto& [name, fn] : commands) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "JSON config file")->required();
        sub->add_option("--seed", seed, "global seed (overrides the config)");
        sub->add_option("--out", out, "artifact directory (overrides paths.out)");
    }
    CLI11_PARSE(app, argc, argv);
    const std::string name = app.get_subcommands().front()->get_name();

    try {
        auto config = pipeline::PipelineConfig::load(config_path);
        if (seed)
            config.seed = *seed;
        if (!out.empty())
            config.paths.out = out;
        commands.at(name)(config);
    } catch (const ValidationError& e) {
        std::cerr << "dpssl " << name << ": invalid input: " << e.what() << "\n";
        return kValidation;
    } catch (const NumericalError& e) {
        std::cerr << "dpssl " << name << ": numerical failure: " << e.what() << "\n";
        return kNumerical;
    } catch (const MissingPrerequisite& e) {
        std::cerr << "dpssl " << name << ": missing prerequisite: " << e.what() << "\n";
        return kMissing;
    } catch (const std::exception& e) {
        std::cerr << "dpssl " << name << ": " << e.what() << "\n";
        return 1;
    }
    return kOk;
}
