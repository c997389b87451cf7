// clintraj command-line front end.
//
//   clintraj <subcommand> --config path [--seed n] [--out dir]
//
// Exit status: 0 success, 1 user error (bad config, data or missing upstream
// artifact), 2 internal error.

#include "clintraj/error.hpp"
#include "clintraj/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Clinical trajectories from mixed-type tabular data"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;

    std::vector<std::string> names;
    for (auto stage : clintraj::all_stages()) names.push_back(clintraj::to_string(stage));
    names.push_back("all");
    for (const auto& name : names) {
        auto* sub = app.add_subcommand(name, name == "all" ? "run every stage in order" : "run the " + name + " stage");
        sub->add_option("--config", config_path, "pipeline config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "random seed (overrides the config)");
        sub->add_option("--out", out_dir, "output directory (overrides CLINTRAJ_OUT and the config)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        auto config = clintraj::load_config(config_path);
        if (!out_dir.empty()) {
            config.output_dir = out_dir;
        } else if (const char* env = std::getenv("CLINTRAJ_OUT"); env && *env) {
            config.output_dir = env;
        }
        if (seed) config.seed = *seed;

        const auto* chosen = app.get_subcommands().front();
        if (chosen->get_name() == "all") {
            clintraj::run_all(config);
        } else {
            clintraj::run_stage(clintraj::parse_stage(chosen->get_name()), config);
        }
    } catch (const clintraj::UserError& e) {
        std::cerr << "clintraj: error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "clintraj: internal error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
