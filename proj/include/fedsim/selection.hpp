#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "fedsim/common.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

// One client's selection score. lambda = exp(-alpha * div).
struct ClientScore {
    double lambda = 1.0;
    double alpha = 0.0;
    double div = 0.0;
    std::int64_t last_update_round = -1;
};

enum class Strategy {
    fedavg_random,
    cfcfm_order,
    fedavgrp_random,
    fedprox_dataratio,
    fedadam_random,
    afl_loss,
    fedprof_score,
};

inline const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::fedavg_random: return "fedavg_random";
        case Strategy::cfcfm_order: return "cfcfm_order";
        case Strategy::fedavgrp_random: return "fedavgrp_random";
        case Strategy::fedprox_dataratio: return "fedprox_dataratio";
        case Strategy::fedadam_random: return "fedadam_random";
        case Strategy::afl_loss: return "afl_loss";
        case Strategy::fedprof_score: return "fedprof_score";
    }
    return "?";
}

inline Strategy strategy_from_string(const std::string& s) {
    if (s == "fedavg_random") return Strategy::fedavg_random;
    if (s == "cfcfm_order") return Strategy::cfcfm_order;
    if (s == "fedavgrp_random") return Strategy::fedavgrp_random;
    if (s == "fedprox_dataratio") return Strategy::fedprox_dataratio;
    if (s == "fedadam_random") return Strategy::fedadam_random;
    if (s == "afl_loss") return Strategy::afl_loss;
    if (s == "fedprof_score") return Strategy::fedprof_score;
    throw ConfigError("unknown strategy: " + s);
}

struct StrategyPolicy {
    Strategy strategy = Strategy::fedavg_random;
    double afl_temperature = 1.0;
    double fedprox_mu = 0.01;
    double fedadam_beta1 = 0.9;
    double fedadam_beta2 = 0.99;
    double fedadam_server_lr = 0.1;
    double fedadam_eps = 1e-8;
};

// lambda = exp(-alpha * div). alpha = 0 reduces to random selection.
inline double score_client(double div, double alpha) {
    if (!std::isfinite(div)) throw ContractError("score_client: div must be finite");
    if (alpha < 0.0) throw ContractError("score_client: alpha must be >= 0");
    return std::exp(-alpha * div);
}

// Penalty factor that aligns the normalized score with the target selection
// probability rho (in the Lambda_norm gauge): exp(-alpha*div) = Lambda_norm*rho.
inline double optimal_alpha(double rho, double div, double lambda_norm = 1.0) {
    if (!(rho > 0.0 && rho <= 1.0)) throw DomainError("optimal_alpha: rho must lie in (0, 1]");
    if (!(div > 0.0))
        throw DegenerateError("optimal_alpha: div = 0 forces the score to 1 regardless of alpha");
    const double target = lambda_norm * rho;
    if (!(target > 0.0 && target <= 1.0))
        throw DomainError("optimal_alpha: Lambda_norm * rho must lie in (0, 1]");
    return -std::log(target) / div;
}

// Sequential weighted sampling without replacement: draw proportionally to
// the remaining weights, remove, repeat. Returns indices in draw order.
inline std::vector<std::size_t> sample_clients(const std::vector<double>& weights, std::size_t k,
                                               Rng& rng) {
    if (k > weights.size()) throw ContractError("sample_clients: K exceeds population");
    std::size_t positive = 0;
    double total = 0.0;
    for (double w : weights) {
        if (w < 0.0 || !std::isfinite(w))
            throw ContractError("sample_clients: weights must be finite and >= 0");
        if (w > 0.0) ++positive;
        total += w;
    }
    if (total <= 0.0) throw SamplingError("sample_clients: all weights are zero");
    if (k > positive)
        throw ContractError("sample_clients: K exceeds the number of positive weights");

    std::vector<double> w = weights;
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t draw = 0; draw < k; ++draw) {
        const double u = rng.uniform() * total;
        double cum = 0.0;
        std::size_t pick = std::size_t(-1);
        for (std::size_t i = 0; i < w.size(); ++i) {
            if (w[i] <= 0.0) continue;
            cum += w[i];
            if (u < cum) {
                pick = i;
                break;
            }
        }
        if (pick == std::size_t(-1)) {  // u landed on the upper boundary
            for (std::size_t i = w.size(); i-- > 0;)
                if (w[i] > 0.0) {
                    pick = i;
                    break;
                }
        }
        out.push_back(pick);
        total -= w[pick];
        w[pick] = 0.0;
    }
    return out;
}

// K independent draws proportional to the weights (a multiset). This is the
// sampling model behind the partial-aggregation convergence analysis.
inline std::vector<std::size_t> sample_clients_with_replacement(const std::vector<double>& weights,
                                                                std::size_t k, Rng& rng) {
    double total = 0.0;
    for (double w : weights) {
        if (w < 0.0 || !std::isfinite(w))
            throw ContractError("sample_clients_with_replacement: bad weight");
        total += w;
    }
    if (total <= 0.0) throw SamplingError("sample_clients_with_replacement: all weights zero");
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t draw = 0; draw < k; ++draw) {
        const double u = rng.uniform() * total;
        double cum = 0.0;
        std::size_t pick = weights.size() - 1;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            cum += weights[i];
            if (u < cum) {
                pick = i;
                break;
            }
        }
        out.push_back(pick);
    }
    return out;
}

// Everything a policy may need to pick the next round's participants.
struct RoundContext {
    std::size_t n_clients = 0;
    std::size_t k = 0;
    std::optional<std::vector<double>> scores;           // fedprof lambda_k
    std::optional<std::vector<double>> data_sizes;       // |D_k|
    std::optional<std::vector<double>> last_losses;      // most recent reported local loss
    std::optional<std::vector<double>> predicted_times;  // per-client completion time (s)
};

namespace detail {

inline const std::vector<double>& require(const std::optional<std::vector<double>>& field,
                                          const char* name, std::size_t n) {
    if (!field) throw ConfigError(std::string("next_selection: missing context field ") + name);
    if (field->size() != n)
        throw ConfigError(std::string("next_selection: context field ") + name +
                          " has the wrong length");
    return *field;
}

}  // namespace detail

inline std::vector<std::size_t> next_selection(const StrategyPolicy& policy,
                                               const RoundContext& ctx, Rng& rng) {
    if (ctx.k == 0 || ctx.k > ctx.n_clients)
        throw ContractError("next_selection: K must lie in [1, N]");
    switch (policy.strategy) {
        case Strategy::fedavg_random:
        case Strategy::fedavgrp_random:
        case Strategy::fedadam_random: {
            std::vector<double> w(ctx.n_clients, 1.0);
            return sample_clients(w, ctx.k, rng);
        }
        case Strategy::fedprox_dataratio:
            return sample_clients(detail::require(ctx.data_sizes, "data_sizes", ctx.n_clients),
                                  ctx.k, rng);
        case Strategy::afl_loss: {
            const auto& losses = detail::require(ctx.last_losses, "last_losses", ctx.n_clients);
            const double t = policy.afl_temperature;
            if (!(t > 0.0)) throw ConfigError("next_selection: afl_temperature must be > 0");
            const double mx = *std::max_element(losses.begin(), losses.end());
            std::vector<double> w(ctx.n_clients);
            for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp((losses[i] - mx) / t);
            return sample_clients(w, ctx.k, rng);
        }
        case Strategy::cfcfm_order: {
            const auto& times =
                detail::require(ctx.predicted_times, "predicted_times", ctx.n_clients);
            std::vector<std::size_t> order(ctx.n_clients);
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
            order.resize(ctx.k);
            return order;
        }
        case Strategy::fedprof_score:
            return sample_clients(detail::require(ctx.scores, "scores", ctx.n_clients), ctx.k,
                                  rng);
    }
    throw ConfigError("next_selection: unknown strategy");
}

}  // namespace fedsim
