#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "tutoreval/pipeline.hpp"

namespace pipeline = tutoreval::pipeline;

int main(int argc, char** argv) {
    CLI::App app{"rubric-based tutor feedback evaluation pipeline"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string out_dir;
    std::string backend_kind;
    std::uint64_t seed = 0;
    std::size_t parallelism = 1;

    app.add_option("--config", config_path, "run configuration file (JSON)")->required();
    CLI::Option* out_opt =
        app.add_option("--out-dir", out_dir, "output directory (overrides the config)");
    CLI::Option* backend_opt =
        app.add_option("--backend", backend_kind, "judge backend (overrides the config)")
            ->check(CLI::IsMember({"remote", "fixture"}));
    CLI::Option* seed_opt =
        app.add_option("--seed", seed, "generator seed (overrides the config)");
    CLI::Option* parallelism_opt =
        app.add_option("--parallelism", parallelism, "annotation worker bound")
            ->check(CLI::PositiveNumber);

    CLI::App* validate_cmd = app.add_subcommand("validate", "parse and validate the corpus");
    CLI::App* annotate_cmd = app.add_subcommand("annotate", "run the judge over the corpus");
    std::string which = "both";
    annotate_cmd->add_option("--which", which, "pedagogy | engagement | both")
        ->check(CLI::IsMember({"pedagogy", "engagement", "both"}));
    CLI::App* evaluate_cmd =
        app.add_subcommand("evaluate", "compute metrics, statistics and the report");
    CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus");
    CLI::App* agreement_cmd =
        app.add_subcommand("agreement", "inter-annotator agreement between two annotation files");
    std::string file_a;
    std::string file_b;
    agreement_cmd->add_option("file_a", file_a, "first annotation file")->required();
    agreement_cmd->add_option("file_b", file_b, "second annotation file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& help) {
        return app.exit(help);
    } catch (const CLI::ParseError& error) {
        app.exit(error);
        return 2;
    }

    return pipeline::run_command(
        [&]() -> int {
            pipeline::RunConfig config = pipeline::load_config(config_path);
            if (out_opt->count() > 0) config.out_dir = out_dir;
            if (backend_opt->count() > 0) config.backend.kind = backend_kind;
            if (seed_opt->count() > 0) config.seed = seed;
            if (parallelism_opt->count() > 0) config.parallelism = parallelism;

            if (validate_cmd->parsed()) return pipeline::cmd_validate(config, std::cout);
            if (annotate_cmd->parsed()) {
                return pipeline::cmd_annotate(config, pipeline::parse_annotate_target(which),
                                              std::cout);
            }
            if (evaluate_cmd->parsed()) return pipeline::cmd_evaluate(config, std::cout);
            if (synth_cmd->parsed()) return pipeline::cmd_synth(config, std::cout);
            if (agreement_cmd->parsed()) {
                return pipeline::cmd_agreement(config, file_a, file_b, std::cout);
            }
            return 2; // unreachable: require_subcommand(1)
        },
        std::cerr);
}
