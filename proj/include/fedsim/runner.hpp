#pragma once

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "fedsim/config.hpp"
#include "fedsim/diagnostics.hpp"
#include "fedsim/federation.hpp"
#include "fedsim/population_io.hpp"
#include "fedsim/svg.hpp"

namespace fedsim {

struct JobResult {
    Strategy strategy = Strategy::fedavg_random;
    std::uint64_t seed = 0;
    std::optional<ExperimentRun> run;  // empty when the seed aborted
    std::string error;
    std::string trace_file;
};

struct RunnerResult {
    Population population;
    std::vector<JobResult> jobs;
    json summary;
    std::string summary_path;
};

// Per-client selection counts accumulated over a set of traces.
inline std::vector<std::size_t> selection_counts(const std::vector<const ExperimentRun*>& runs,
                                                 std::size_t n_clients,
                                                 std::size_t from_round = 1) {
    std::vector<std::size_t> counts(n_clients, 0);
    for (const ExperimentRun* run : runs)
        for (const RoundTrace& t : run->traces) {
            if (t.round < from_round) continue;
            for (std::size_t id : t.selected) ++counts[id];
        }
    return counts;
}

namespace detail {

inline std::size_t worker_count(std::size_t jobs) {
    if (const char* env = std::getenv("FEDSIM_WORKERS")) {
        const long v = std::atol(env);
        if (v >= 1) return std::min<std::size_t>(static_cast<std::size_t>(v), jobs);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return std::min<std::size_t>(hw > 0 ? hw : 1, jobs);
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << content;
}

inline json stat_block(std::vector<double> values) {
    if (values.empty()) return nullptr;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());  // population std; 0 for one seed
    return json{{"mean", mean}, {"std", std::sqrt(var)}};
}

inline std::string trace_file_name(Strategy s, std::uint64_t seed) {
    return std::string("trace_") + to_string(s) + "_seed" + std::to_string(seed) + ".csv";
}

inline std::string trace_csv(const ExperimentRun& run) {
    std::string out = round_trace_csv_header() + "\n";
    for (const auto& t : run.traces) out += round_trace_csv_row(t) + "\n";
    return out;
}

}  // namespace detail

// Write the per-client selection histogram (counts + noise-kind annotation)
// for one strategy; returns the counts.
inline std::vector<std::size_t> emit_selection_histogram(
    const std::vector<const ExperimentRun*>& runs, const Population& pop,
    const std::filesystem::path& csv_path, bool plot, const std::string& title) {
    const auto counts = selection_counts(runs, pop.clients.size());
    std::string csv = "client_id,noise_kind,selection_count\n";
    for (std::size_t k = 0; k < counts.size(); ++k) {
        csv += std::to_string(k);
        csv += ',';
        csv += to_string(pop.clients[k].provenance);
        csv += ',';
        csv += std::to_string(counts[k]);
        csv += '\n';
    }
    detail::write_file(csv_path, csv);
    if (plot) {
        std::vector<SvgBar> bars;
        for (std::size_t k = 0; k < counts.size(); ++k)
            bars.push_back({static_cast<double>(counts[k]), to_string(pop.clients[k].provenance)});
        std::filesystem::path svg_path = csv_path;
        svg_path.replace_extension(".svg");
        detail::write_file(svg_path,
                           bar_chart_svg(bars, title, "client id", "times selected"));
    }
    return counts;
}

// Emit the normality and convergence-rate diagnostics next to the experiment
// artifacts: normality rejection rates on the initial model over the
// validation set, plus a quadratic-world convergence fit.
inline json diagnostics_report(const ExperimentConfig& cfg, const Population& pop) {
    json report;
    const Model initial = init_model(cfg.fed.model, mix_seed(cfg.population.seed, 0xd1a6ULL));
    json normality;
    try {
        for (CaptureStage stage : {CaptureStage::pre_activation, CaptureStage::post_activation}) {
            CaptureSelector sel = cfg.fed.capture;
            sel.stage = stage;
            const auto rep = normality_rejection_rate(initial, pop.validation.data, sel, 0.05);
            json block;
            block["rejection_rate"] = rep.rejection_rate;
            block["tested_units"] = rep.tested;
            block["excluded_units"] = rep.excluded.size();
            normality[stage == CaptureStage::pre_activation ? "pre_activation"
                                                            : "post_activation"] = block;
        }
        normality["alpha"] = 0.05;
    } catch (const Error& e) {
        normality = json{{"skipped", e.what()}};
    }
    report["normality"] = std::move(normality);

    // Fixed desk-scale quadratic world seeded from the population.
    Rng wrng(mix_seed(cfg.population.seed, 0x9aadULL));
    QuadraticWorld w;
    double rho_sum = 0.0;
    for (int i = 0; i < 10; ++i) {
        w.a.push_back(wrng.uniform(1.0, 2.0));
        std::vector<double> c(4);
        for (double& v : c) v = wrng.uniform(-1.0, 1.0);
        w.c.push_back(std::move(c));
        const double r = wrng.uniform(0.5, 1.5);
        w.rho.push_back(r);
        rho_sum += r;
    }
    for (double& r : w.rho) r /= rho_sum;
    std::vector<double> mean_err;
    std::vector<std::size_t> steps;
    json convergence;
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto run = run_quadratic_convergence(w, 5, 3, 10000, 500 + s);
        convergence["gamma"] = run.gamma;
        convergence["noise_bound"] = run.noise_bound;
        if (mean_err.empty()) {
            mean_err.assign(run.errors.size(), 0.0);
            steps = run.steps;
        }
        for (std::size_t i = 0; i < run.errors.size(); ++i) mean_err[i] += run.errors[i] / 5.0;
    }
    std::vector<std::size_t> xs;
    std::vector<double> ys;
    for (std::size_t i = 0; i < steps.size(); ++i)
        if (steps[i] >= 100) {
            xs.push_back(steps[i]);
            ys.push_back(mean_err[i]);
        }
    convergence["decay_exponent"] = log_log_decay_exponent(xs, ys);
    convergence["final_mean_error"] = mean_err.back();
    report["convergence"] = std::move(convergence);
    return report;
}

// Run every (strategy x seed) job, write trace CSVs, the aggregate summary
// JSON, selection histograms, and optional SVG plots.
inline RunnerResult run(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);

    RunnerResult result;
    if (!cfg.population_load_dir.empty()) {
        result.population = load_population(cfg.population_load_dir);
        cfg.fed.validate(result.population.clients.size());
    } else {
        result.population = make_population(cfg.population, cfg.noise);
    }
    const auto devices = sample_devices(result.population.clients.size(), cfg.devices,
                                        mix_seed(cfg.population.seed, 0xdecULL));

    for (Strategy s : cfg.strategies)
        for (std::uint64_t seed : cfg.seeds) {
            JobResult jr;
            jr.strategy = s;
            jr.seed = seed;
            jr.trace_file = detail::trace_file_name(s, seed);
            result.jobs.push_back(std::move(jr));
        }

    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= result.jobs.size()) return;
            JobResult& jr = result.jobs[i];
            try {
                FederationConfig fed = cfg.fed;
                fed.policy.strategy = jr.strategy;
                ExperimentRun run =
                    run_experiment(result.population, devices, fed, jr.seed);
                detail::write_file(fs::path(cfg.output_dir) / jr.trace_file,
                                   detail::trace_csv(run));
                jr.run = std::move(run);
            } catch (const std::exception& e) {
                jr.error = e.what();
            }
        }
    };
    {
        const std::size_t n_workers = detail::worker_count(result.jobs.size());
        std::vector<std::thread> pool;
        for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
        worker();
        for (auto& t : pool) t.join();
    }

    // Aggregate summary, strategy by strategy, in configured order.
    json strategies = json::object();
    for (Strategy s : cfg.strategies) {
        json per_seed = json::array();
        std::vector<double> best, rounds, times, energies;
        std::vector<const ExperimentRun*> runs;
        for (const JobResult& jr : result.jobs) {
            if (jr.strategy != s) continue;
            json row;
            row["seed"] = jr.seed;
            if (jr.run) {
                const ExperimentRun& run = *jr.run;
                runs.push_back(&run);
                row["best_accuracy"] = run.best_accuracy;
                row["rounds_to_target"] =
                    run.rounds_to_target ? json(*run.rounds_to_target) : json(nullptr);
                row["time_to_target_s"] =
                    run.time_to_target_s ? json(*run.time_to_target_s) : json(nullptr);
                row["energy_to_target_wh"] =
                    run.energy_to_target_wh ? json(*run.energy_to_target_wh) : json(nullptr);
                row["total_time_s"] = run.total_time_s;
                row["total_energy_wh"] = run.total_energy_wh;
                row["trace"] = jr.trace_file;
                if (!run.warnings.empty()) row["warnings"] = run.warnings;
                best.push_back(run.best_accuracy);
                if (run.rounds_to_target) {
                    rounds.push_back(static_cast<double>(*run.rounds_to_target));
                    times.push_back(*run.time_to_target_s);
                    energies.push_back(*run.energy_to_target_wh);
                }
            } else {
                row["error"] = jr.error;
            }
            per_seed.push_back(std::move(row));
        }
        json block;
        block["best_accuracy"] = detail::stat_block(best);
        block["rounds_to_target"] = detail::stat_block(rounds);
        block["time_to_target_s"] = detail::stat_block(times);
        block["energy_to_target_wh"] = detail::stat_block(energies);
        block["n_reached_target"] = rounds.size();
        block["per_seed"] = std::move(per_seed);
        strategies[to_string(s)] = std::move(block);

        if (!runs.empty()) {
            emit_selection_histogram(
                runs, result.population,
                fs::path(cfg.output_dir) /
                    (std::string("selection_counts_") + to_string(s) + ".csv"),
                cfg.plot, std::string("selection counts: ") + to_string(s));
        }
    }

    if (cfg.plot) {
        std::vector<SvgSeries> series;
        for (Strategy s : cfg.strategies) {
            SvgSeries sv;
            sv.label = to_string(s);
            std::size_t max_rounds = 0;
            std::vector<const ExperimentRun*> runs;
            for (const JobResult& jr : result.jobs)
                if (jr.strategy == s && jr.run) {
                    runs.push_back(&*jr.run);
                    max_rounds = std::max(max_rounds, jr.run->traces.size());
                }
            for (std::size_t r = 0; r < max_rounds; ++r) {
                double acc = 0.0;
                std::size_t n = 0;
                for (const ExperimentRun* run : runs)
                    if (r < run->traces.size()) {
                        acc += run->traces[r].accuracy;
                        ++n;
                    }
                if (n) sv.y.push_back(acc / static_cast<double>(n));
            }
            series.push_back(std::move(sv));
        }
        detail::write_file(fs::path(cfg.output_dir) / "accuracy.svg",
                           line_chart_svg(series, "validation accuracy per round", "round",
                                          "accuracy"));
    }

    if (cfg.diagnostics) {
        detail::write_file(fs::path(cfg.output_dir) / "diagnostics.json",
                           diagnostics_report(cfg, result.population).dump(2) + "\n");
    }

    json summary;
    summary["target_accuracy"] = cfg.fed.target_accuracy;
    summary["seeds"] = cfg.seeds;
    summary["strategies"] = std::move(strategies);
    result.summary = std::move(summary);
    result.summary_path = (fs::path(cfg.output_dir) / "summary.json").string();
    detail::write_file(result.summary_path, result.summary.dump(2) + "\n");
    return result;
}

}  // namespace fedsim
