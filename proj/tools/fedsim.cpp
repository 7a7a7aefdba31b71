#include <cstdint>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fedsim/config.hpp"
#include "fedsim/runner.hpp"

namespace {

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        seeds.push_back(std::stoull(item));
    }
    if (seeds.empty()) throw fedsim::ConfigError("--seeds: empty seed list");
    return seeds;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fedsim: seedable federated-learning simulator"};
    app.require_subcommand(1);

    std::string config_path;
    std::string seeds_csv;
    std::string out_dir;
    std::string strategy_override;
    bool plot = false;

    CLI::App* run_cmd = app.add_subcommand("run", "run the experiments described by a config");
    run_cmd->add_option("config", config_path, "path to the experiment config (JSON)")
        ->required();
    run_cmd->add_option("--seeds", seeds_csv, "comma-separated seed list override");
    run_cmd->add_option("--out", out_dir, "output directory override");
    run_cmd->add_option("--strategy", strategy_override, "run only this strategy");
    run_cmd->add_flag("--plot", plot, "emit SVG plots");

    CLI11_PARSE(app, argc, argv);

    try {
        fedsim::ExperimentConfig cfg = fedsim::parse_config(config_path);
        if (!seeds_csv.empty()) cfg.seeds = parse_seed_list(seeds_csv);
        if (!out_dir.empty()) cfg.output_dir = out_dir;
        if (!strategy_override.empty())
            cfg.strategies = {fedsim::strategy_from_string(strategy_override)};
        if (plot) cfg.plot = true;

        const fedsim::RunnerResult result = fedsim::run(cfg);
        std::size_t failures = 0;
        for (const auto& job : result.jobs) {
            if (!job.error.empty()) {
                ++failures;
                std::cerr << "seed " << job.seed << " (" << to_string(job.strategy)
                          << ") aborted: " << job.error << "\n";
            }
        }
        std::cout << "wrote " << result.summary_path << " (" << result.jobs.size() - failures
                  << "/" << result.jobs.size() << " runs completed)\n";
        return failures == result.jobs.size() && !result.jobs.empty() ? 1 : 0;
    } catch (const fedsim::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const fedsim::ContractError& e) {
        std::cerr << "contract error: " << e.what() << "\n";
        return 3;
    } catch (const fedsim::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << " [" << e.payload << "]\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
