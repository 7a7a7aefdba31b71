#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedsim/common.hpp"
#include "fedsim/cost.hpp"
#include "fedsim/data.hpp"
#include "fedsim/nn.hpp"
#include "fedsim/profile.hpp"
#include "fedsim/selection.hpp"
#include "fedsim/strings.hpp"

namespace fedsim {

enum class AggregationMode { full, partial, partial_momentum };

inline const char* to_string(AggregationMode m) {
    switch (m) {
        case AggregationMode::full: return "full";
        case AggregationMode::partial: return "partial";
        case AggregationMode::partial_momentum: return "partial_momentum";
    }
    return "?";
}

inline AggregationMode aggregation_from_string(const std::string& s) {
    if (s == "full") return AggregationMode::full;
    if (s == "partial") return AggregationMode::partial;
    if (s == "partial_momentum") return AggregationMode::partial_momentum;
    throw ConfigError("unknown aggregation mode: " + s);
}

// Default aggregation per strategy (the full/partial grouping of the roster).
inline AggregationMode default_aggregation(Strategy s) {
    switch (s) {
        case Strategy::fedavg_random:
        case Strategy::cfcfm_order: return AggregationMode::full;
        case Strategy::fedavgrp_random:
        case Strategy::fedprox_dataratio:
        case Strategy::fedprof_score: return AggregationMode::partial;
        case Strategy::fedadam_random:
        case Strategy::afl_loss: return AggregationMode::partial_momentum;
    }
    return AggregationMode::partial;
}

struct FederationConfig {
    ModelSpec model;
    StrategyPolicy policy;
    std::optional<AggregationMode> aggregation;  // empty -> default_aggregation
    double client_fraction = 0.2;                // C
    std::size_t max_rounds = 100;                // T_max
    std::size_t epochs = 2;                      // E
    std::size_t batch_size = 32;
    double lr = 5e-3;
    double lr_decay = 0.99;
    double alpha = 10.0;         // uniform penalty factor
    bool alpha_optimal = false;  // derive per-client alpha from the target probabilities
    KlVariant kl_variant = KlVariant::canonical;
    CaptureSelector capture;
    double target_accuracy = 0.8;
    bool stop_at_target = false;
    PowerModel power;
    // Regression tasks report "accuracy" as the fraction of validation samples
    // whose squared prediction error is below this threshold.
    double regression_tolerance = 0.25;

    AggregationMode aggregation_mode() const {
        return aggregation ? *aggregation : default_aggregation(policy.strategy);
    }

    std::size_t k_of(std::size_t n_clients) const {
        return static_cast<std::size_t>(
            std::ceil(client_fraction * static_cast<double>(n_clients)));
    }

    void validate(std::size_t n_clients) const {
        model.validate();
        if (client_fraction <= 0.0 || k_of(n_clients) < 1)
            throw ConfigError("client_fraction: C must yield K >= 1");
        if (k_of(n_clients) > n_clients)
            throw ConfigError("client_fraction: C must yield K <= N");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (max_rounds < 1) throw ConfigError("max_rounds must be >= 1");
        if (lr < 0.0) throw ConfigError("lr must be >= 0");
        if (alpha < 0.0) throw ConfigError("alpha must be >= 0");
        capture.validate(model);
    }
};

// Per-round record of what happened and what it cost.
struct RoundTrace {
    std::size_t round = 0;
    std::vector<std::size_t> selected;  // client ids, ascending
    std::vector<std::size_t> failed;    // selected clients excluded this round
    double accuracy = 0.0;
    double round_time_s = 0.0;
    double energy_wh_total = 0.0;
    std::vector<std::pair<std::size_t, double>> client_energy_wh;  // per selected client
    std::vector<double> scores;  // lambda snapshot for every client
};

inline std::string round_trace_csv_header() {
    return "round,time_s,energy_wh_total,accuracy,selected_ids,score_json";
}

inline std::string round_trace_csv_row(const RoundTrace& t) {
    std::string sel;
    for (std::size_t i = 0; i < t.selected.size(); ++i) {
        if (i) sel += ';';
        sel += std::to_string(t.selected[i]);
    }
    std::string scores = "{";
    for (std::size_t i = 0; i < t.scores.size(); ++i) {
        if (i) scores += ',';
        scores += "\"" + std::to_string(i) + "\":" + format_double(t.scores[i]);
    }
    scores += "}";
    std::string row;
    row += std::to_string(t.round);
    row += ',';
    row += format_double(t.round_time_s);
    row += ',';
    row += format_double(t.energy_wh_total);
    row += ',';
    row += format_double(t.accuracy);
    row += ',';
    row += csv_escape(sel);
    row += ',';
    row += csv_escape(scores);
    return row;
}

struct ClientState {
    LocalDataset dataset;
    DeviceSpec device;
    RepresentationProfile profile;  // cached local profile (versioned)
    ClientScore score;
    Model cached_model;  // latest local model; used by full aggregation
    double last_loss = 0.0;
};

// --- Aggregation rules -------------------------------------------------------

// Unweighted mean over the selected set. Computed as the anchored sum
// m0 + mean(m_k - m0), so aggregating identical models reproduces them
// bit-exactly.
inline Model aggregate_partial(const std::vector<Model>& models) {
    if (models.empty()) throw ContractError("aggregate_partial: empty model set");
    Model diff = models[0];
    diff.for_each_param([](double& v) { v = 0.0; });
    for (std::size_t i = 1; i < models.size(); ++i) {
        Model delta = models[i];
        zip_params(delta, models[0], [](double& a, double b) { a -= b; });
        zip_params(diff, delta, [](double& a, double b) { a += b; });
    }
    const double inv = 1.0 / static_cast<double>(models.size());
    Model out = models[0];
    zip_params(out, diff, [&](double& a, double d) { a += d * inv; });
    return out;
}

// rho-weighted mean over every client's cached latest model; anchored the
// same way as aggregate_partial.
inline Model aggregate_full(const std::vector<Model>& cached_models,
                            const std::vector<double>& rho) {
    if (cached_models.empty()) throw ContractError("aggregate_full: empty model set");
    if (rho.size() != cached_models.size())
        throw ConfigError("aggregate_full: rho length does not match model count");
    double sum = 0.0;
    for (double r : rho) {
        if (r < 0.0) throw ConfigError("aggregate_full: rho must be >= 0");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("aggregate_full: rho must sum to 1");
    Model out = cached_models[0];
    for (std::size_t i = 1; i < cached_models.size(); ++i) {
        Model delta = cached_models[i];
        zip_params(delta, cached_models[0], [](double& a, double b) { a -= b; });
        zip_params(out, delta, [&](double& a, double d) { a += rho[i] * d; });
    }
    return out;
}

// Server-side adaptive step on the pseudo-gradient delta = aggregate - theta.
struct AdamState {
    Model m;
    Model u;
    bool initialized = false;
};

inline Model fedadam_update(const Model& theta_prev, const Model& aggregate, AdamState& state,
                            double beta1, double beta2, double server_lr, double eps) {
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
        throw ConfigError("fedadam_update: betas must lie in [0, 1)");
    if (eps <= 0.0) throw ConfigError("fedadam_update: eps must be > 0");
    if (!state.initialized) {
        state.m = theta_prev;
        state.m.for_each_param([](double& v) { v = 0.0; });
        state.u = state.m;
        state.initialized = true;
    }
    Model delta = aggregate;
    zip_params(delta, theta_prev, [](double& a, double b) { a -= b; });
    zip_params(state.m, delta, [&](double& m, double d) { m = beta1 * m + (1.0 - beta1) * d; });
    zip_params(state.u, delta,
               [&](double& u, double d) { u = beta2 * u + (1.0 - beta2) * d * d; });
    Model step = state.m;
    zip_params(step, state.u, [&](double& m, double u) { m /= std::sqrt(u) + eps; });
    Model next = theta_prev;
    zip_params(next, step, [&](double& t, double a) { t += server_lr * a; });
    return next;
}

// --- Local training ----------------------------------------------------------

struct LocalTrainResult {
    Model model;
    double mean_loss = 0.0;
    bool failed = false;
    std::string diagnostic;
};

// E epochs of seeded mini-batch SGD from theta. A numeric blow-up marks the
// client failed for the round instead of aborting the experiment.
inline LocalTrainResult local_training(const LocalDataset& client, const Model& theta,
                                       std::size_t epochs, std::size_t batch_size, double lr,
                                       const std::optional<ProxTerm>& prox, Rng& rng) {
    if (epochs < 1) throw ContractError("local_training: epochs must be >= 1");
    if (batch_size < 1) throw ContractError("local_training: batch_size must be >= 1");
    const std::size_t n = client.size();
    if (n == 0) throw ContractError("local_training: empty dataset");

    LocalTrainResult res;
    res.model = theta;
    double loss_sum = 0.0;
    std::size_t steps = 0;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t d = client.data.features.cols();
    const bool cls = client.data.is_classification();
    const std::size_t tcols = cls ? 0 : client.data.targets.cols();
    try {
        for (std::size_t e = 0; e < epochs; ++e) {
            rng.shuffle(order);
            for (std::size_t start = 0; start < n; start += batch_size) {
                const std::size_t len = std::min(batch_size, n - start);
                Batch b;
                b.features = Matrix(len, d);
                if (cls)
                    b.labels.resize(len);
                else
                    b.targets = Matrix(len, tcols);
                for (std::size_t i = 0; i < len; ++i) {
                    const std::size_t src = order[start + i];
                    std::copy_n(&client.data.features.data()[src * d], d,
                                &b.features.data()[i * d]);
                    if (cls)
                        b.labels[i] = client.data.labels[src];
                    else
                        std::copy_n(&client.data.targets.data()[src * tcols], tcols,
                                    &b.targets.data()[i * tcols]);
                }
                auto [next, loss] = train_step(res.model, b, lr, prox);
                res.model = std::move(next);
                loss_sum += loss;
                ++steps;
            }
        }
        res.mean_loss = loss_sum / static_cast<double>(steps);
        if (!res.model.all_finite())
            throw NumericError("local_training: non-finite parameters",
                               "client=" + std::to_string(client.client_id));
    } catch (const NumericError& e) {
        res.failed = true;
        res.diagnostic = std::string(e.what()) + " [" + e.payload + "]";
        res.model = theta;
    }
    return res;
}

// --- Server state and the round loop -----------------------------------------

struct ServerState {
    Model global;
    std::uint32_t version = 0;  // v: version of the latest aggregated model
    std::size_t round = 0;      // T
    std::vector<ClientState> clients;
    std::map<std::uint32_t, RepresentationProfile> baselines;  // RP^B by version
    AdamState adam;
    std::vector<double> rho;  // aggregation weights, sum 1
    std::vector<std::string> warnings;
    LocalDataset validation;
    FederationConfig cfg;
    std::uint64_t run_seed = 0;
    Rng select_rng{0};
    CostLedger ledger;

    bool uses_profiles() const { return cfg.policy.strategy == Strategy::fedprof_score; }
};

namespace detail {

inline double validation_accuracy(const Model& m, const LocalDataset& validation,
                                  double regression_tolerance) {
    if (validation.data.is_classification())
        return evaluate(m, validation.data, Metric::accuracy);
    Matrix out = forward(m, validation.data.features);
    const std::size_t n = validation.size();
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double err = 0.0;
        for (std::size_t j = 0; j < out.cols(); ++j) {
            const double dd = out(i, j) - validation.data.targets(i, j);
            err += dd * dd;
        }
        if (err <= regression_tolerance) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

// Recompute div for every client against the baseline of
// the client's own profile version, then refresh lambda.
inline void refresh_scores(ServerState& s) {
    for (std::size_t k = 0; k < s.clients.size(); ++k) {
        ClientState& c = s.clients[k];
        const auto it = s.baselines.find(c.profile.version);
        if (it == s.baselines.end())
            throw StalenessError("run_round: no baseline for profile version " +
                                 std::to_string(c.profile.version));
        c.score.div = profile_divergence(c.profile, it->second, s.cfg.kl_variant);
        double alpha = s.cfg.alpha;
        if (s.cfg.alpha_optimal) {
            if (c.score.div > 0.0) {
                alpha = optimal_alpha(s.rho[k], c.score.div, 1.0);
            } else {
                s.warnings.push_back("client " + std::to_string(k) +
                                     ": div=0, optimal alpha undefined; using uniform alpha");
            }
        }
        c.score.alpha = alpha;
        c.score.lambda = score_client(c.score.div, alpha);
        c.score.last_update_round = static_cast<std::int64_t>(s.round);
    }
}

inline void prune_baselines(ServerState& s) {
    std::map<std::uint32_t, RepresentationProfile> kept;
    for (const auto& c : s.clients) {
        auto it = s.baselines.find(c.profile.version);
        if (it != s.baselines.end()) kept.emplace(it->first, it->second);
    }
    auto cur = s.baselines.find(s.version);
    if (cur != s.baselines.end()) kept.emplace(cur->first, cur->second);
    s.baselines = std::move(kept);
}

inline std::vector<double> predicted_times(const ServerState& s) {
    const double msize = model_size_mbit(s.global.parameter_count());
    std::vector<double> out(s.clients.size());
    for (std::size_t k = 0; k < s.clients.size(); ++k) {
        const ClientState& c = s.clients[k];
        ClientRoundTimes t;
        t.comm_s = comm_time(msize, c.device);
        t.train_s = train_time(s.cfg.epochs, c.dataset.size(), c.device);
        if (s.uses_profiles()) {
            t.rp_gen_s = rp_gen_time(t.train_s, s.cfg.epochs);
            t.rp_upload_s = rp_upload_time(
                rp_size_mbit(s.cfg.capture.captured_width(s.global.spec)), c.device);
        }
        out[k] = t.total_s();
    }
    return out;
}

}  // namespace detail

// Initialize the server: seed the global model, prime client caches, and (for
// the profile-based strategy) collect every client's initial profile plus the
// initial baseline profile on the validation set.
inline ServerState init_server(const Population& pop, const std::vector<DeviceSpec>& devices,
                               const FederationConfig& cfg, std::uint64_t seed) {
    if (pop.clients.empty()) throw ContractError("init_server: no clients");
    if (devices.size() != pop.clients.size())
        throw ConfigError("init_server: device count does not match client count");
    cfg.validate(pop.clients.size());

    ServerState s;
    s.cfg = cfg;
    s.validation = pop.validation;
    s.run_seed = seed;
    s.select_rng = Rng(mix_seed(seed, 0x5e1ec7ULL));
    s.global = init_model(cfg.model, mix_seed(seed, 0x0de1ULL));
    s.version = 0;
    s.round = 0;

    double total_size = 0.0;
    for (const auto& c : pop.clients) total_size += static_cast<double>(c.size());
    s.rho.resize(pop.clients.size());
    for (std::size_t k = 0; k < pop.clients.size(); ++k)
        s.rho[k] = static_cast<double>(pop.clients[k].size()) / total_size;

    s.clients.reserve(pop.clients.size());
    for (std::size_t k = 0; k < pop.clients.size(); ++k) {
        ClientState c;
        c.dataset = pop.clients[k];
        c.device = devices[k];
        c.cached_model = s.global;
        if (cfg.policy.strategy == Strategy::fedprof_score)
            c.profile = generate_profile(s.global, c.dataset, cfg.capture, 0);
        s.clients.push_back(std::move(c));
    }
    if (cfg.policy.strategy == Strategy::fedprof_score)
        s.baselines[0] = generate_profile(s.global, pop.validation, cfg.capture, 0);
    return s;
}

// One full round: score, select, distribute, refresh profiles, train locally,
// aggregate, bump the version, evaluate, regenerate the baseline, and account
// for time and energy.
inline RoundTrace run_round(ServerState& s) {
    const std::size_t n = s.clients.size();
    const std::size_t k = s.cfg.k_of(n);
    const std::uint32_t v = s.version;
    s.round += 1;

    if (s.uses_profiles()) detail::refresh_scores(s);

    RoundContext ctx;
    ctx.n_clients = n;
    ctx.k = k;
    {
        std::vector<double> scores(n), sizes(n), losses(n);
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = s.clients[i].score.lambda;
            sizes[i] = static_cast<double>(s.clients[i].dataset.size());
            losses[i] = s.clients[i].last_loss;
        }
        ctx.scores = std::move(scores);
        ctx.data_sizes = std::move(sizes);
        ctx.last_losses = std::move(losses);
        ctx.predicted_times = detail::predicted_times(s);
    }
    std::vector<std::size_t> selected = next_selection(s.cfg.policy, ctx, s.select_rng);
    std::sort(selected.begin(), selected.end());

    const double lr_t =
        s.cfg.lr * std::pow(s.cfg.lr_decay, static_cast<double>(s.round - 1));
    std::optional<ProxTerm> prox;
    if (s.cfg.policy.strategy == Strategy::fedprox_dataratio && s.cfg.policy.fedprox_mu > 0.0)
        prox = ProxTerm{s.cfg.policy.fedprox_mu, &s.global};

    RoundTrace trace;
    trace.round = s.round;
    trace.selected = selected;

    std::vector<Model> collected;
    for (std::size_t id : selected) {
        ClientState& c = s.clients[id];
        if (s.uses_profiles()) {
            c.profile = generate_profile(s.global, c.dataset, s.cfg.capture, v);
        }
        Rng train_rng(mix_seed(s.run_seed, s.round, id));
        LocalTrainResult res = local_training(c.dataset, s.global, s.cfg.epochs,
                                              s.cfg.batch_size, lr_t, prox, train_rng);
        if (res.failed) {
            trace.failed.push_back(id);
            s.warnings.push_back("round " + std::to_string(s.round) + ": client " +
                                 std::to_string(id) + " failed: " + res.diagnostic);
            continue;
        }
        c.last_loss = res.mean_loss;
        c.cached_model = res.model;
        collected.push_back(std::move(res.model));
    }

    if (!collected.empty()) {
        switch (s.cfg.aggregation_mode()) {
            case AggregationMode::partial:
                s.global = aggregate_partial(collected);
                break;
            case AggregationMode::full: {
                std::vector<Model> caches;
                caches.reserve(n);
                for (const auto& c : s.clients) caches.push_back(c.cached_model);
                s.global = aggregate_full(caches, s.rho);
                break;
            }
            case AggregationMode::partial_momentum: {
                const Model agg = aggregate_partial(collected);
                s.global = fedadam_update(s.global, agg, s.adam, s.cfg.policy.fedadam_beta1,
                                          s.cfg.policy.fedadam_beta2,
                                          s.cfg.policy.fedadam_server_lr,
                                          s.cfg.policy.fedadam_eps);
                break;
            }
        }
    } else {
        s.warnings.push_back("round " + std::to_string(s.round) +
                             ": every selected client failed; global model unchanged");
    }

    s.version = static_cast<std::uint32_t>(s.round);
    trace.accuracy =
        detail::validation_accuracy(s.global, s.validation, s.cfg.regression_tolerance);
    if (s.uses_profiles()) {
        s.baselines[s.version] =
            generate_profile(s.global, s.validation, s.cfg.capture, s.version);
        detail::prune_baselines(s);
    }

    // Cost accounting (failed clients still spent the round's time and energy).
    const double msize = model_size_mbit(s.global.parameter_count());
    RoundCost rc;
    rc.round = s.round;
    std::vector<ClientRoundTimes> times;
    for (std::size_t id : selected) {
        const ClientState& c = s.clients[id];
        ClientRoundTimes t;
        t.comm_s = comm_time(msize, c.device);
        t.train_s = train_time(s.cfg.epochs, c.dataset.size(), c.device);
        if (s.uses_profiles()) {
            t.rp_gen_s = rp_gen_time(t.train_s, s.cfg.epochs);
            t.rp_upload_s = rp_upload_time(
                rp_size_mbit(s.cfg.capture.captured_width(s.global.spec)), c.device);
        }
        const double wh = client_energy_wh(t, c.device, s.cfg.power, s.uses_profiles());
        rc.clients.push_back({id, t, wh});
        trace.client_energy_wh.emplace_back(id, wh);
        trace.energy_wh_total += wh;
        times.push_back(t);
    }
    rc.round_time_s = round_time(times);
    trace.round_time_s = rc.round_time_s;
    s.ledger.add(rc);

    trace.scores.resize(n);
    for (std::size_t i = 0; i < n; ++i) trace.scores[i] = s.clients[i].score.lambda;
    return trace;
}

struct ExperimentRun {
    std::vector<RoundTrace> traces;
    CostLedger ledger;
    double best_accuracy = 0.0;
    std::optional<std::size_t> rounds_to_target;
    std::optional<double> time_to_target_s;
    std::optional<double> energy_to_target_wh;
    double total_time_s = 0.0;
    double total_energy_wh = 0.0;
    std::vector<std::string> warnings;
};

// Run max_rounds rounds (or stop early at the target when configured) and
// summarize: best accuracy plus rounds/time/energy until the target accuracy
// was first reached.
inline ExperimentRun run_experiment(const Population& pop,
                                    const std::vector<DeviceSpec>& devices,
                                    const FederationConfig& cfg, std::uint64_t seed) {
    ServerState s = init_server(pop, devices, cfg, seed);
    ExperimentRun run;
    double time_acc = 0.0, energy_acc = 0.0;
    for (std::size_t t = 0; t < cfg.max_rounds; ++t) {
        RoundTrace trace = run_round(s);
        time_acc += trace.round_time_s;
        energy_acc += trace.energy_wh_total;
        run.best_accuracy = std::max(run.best_accuracy, trace.accuracy);
        if (!run.rounds_to_target && trace.accuracy >= cfg.target_accuracy) {
            run.rounds_to_target = trace.round;
            run.time_to_target_s = time_acc;
            run.energy_to_target_wh = energy_acc;
        }
        run.traces.push_back(std::move(trace));
        if (cfg.stop_at_target && run.rounds_to_target) break;
    }
    run.total_time_s = time_acc;
    run.total_energy_wh = energy_acc;
    run.ledger = s.ledger;
    run.warnings = s.warnings;
    return run;
}

}  // namespace fedsim
