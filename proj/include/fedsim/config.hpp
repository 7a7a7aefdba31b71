#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedsim/common.hpp"
#include "fedsim/cost.hpp"
#include "fedsim/data.hpp"
#include "fedsim/federation.hpp"

namespace fedsim {

using nlohmann::json;

struct ExperimentConfig {
    PopulationConfig population;
    std::string population_load_dir;  // when set, load the population instead
    std::vector<NoiseSpec> noise;
    FederationConfig fed;  // model, capture, policy parameters, schedule
    std::vector<Strategy> strategies;
    DeviceLaw devices;
    std::vector<std::uint64_t> seeds{1};
    std::string output_dir = "out";
    bool plot = false;
    bool diagnostics = false;  // emit normality/convergence report JSON
};

namespace detail {

inline void check_keys(const json& j, const std::string& path,
                       const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError("config: expected an object at " + path);
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.count(key))
            throw ConfigError("config: unknown key \"" + key + "\" at " +
                              (path.empty() ? "top level" : path));
    }
}

template <typename T>
T get_or(const json& j, const std::string& path, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: bad type for " + path + "." + key);
    }
}

template <typename T>
T get_required(const json& j, const std::string& path, const char* key) {
    if (!j.contains(key))
        throw ConfigError("config: missing required key " + path + "." + key);
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: bad type for " + path + "." + key);
    }
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "sigmoid") return Activation::sigmoid;
    if (s == "tanh") return Activation::tanh;
    if (s == "identity") return Activation::identity;
    throw ConfigError("config: unknown activation: " + s);
}

inline Head head_from_string(const std::string& s) {
    if (s == "softmax_nll") return Head::softmax_nll;
    if (s == "linear_mse") return Head::linear_mse;
    throw ConfigError("config: unknown head: " + s);
}

inline PopulationConfig parse_population(const json& j) {
    check_keys(j, "population",
               {"n_clients", "n_classes", "feature_dim", "size_law", "fixed_pool_total",
                "dominant_class_fraction", "validation_size", "seed", "load_dir"});
    PopulationConfig p;
    p.n_clients = get_required<std::size_t>(j, "population", "n_clients");
    p.n_classes = get_or<std::size_t>(j, "population", "n_classes", 2);
    p.feature_dim = get_required<std::size_t>(j, "population", "feature_dim");
    if (j.contains("size_law")) {
        const json& s = j.at("size_law");
        check_keys(s, "population.size_law", {"mean", "std", "min"});
        p.size_law.mean = get_or<double>(s, "population.size_law", "mean", p.size_law.mean);
        p.size_law.stddev = get_or<double>(s, "population.size_law", "std", p.size_law.stddev);
        p.size_law.min = get_or<std::size_t>(s, "population.size_law", "min", p.size_law.min);
    }
    if (j.contains("fixed_pool_total"))
        p.fixed_pool_total = get_required<std::size_t>(j, "population", "fixed_pool_total");
    p.dominant_class_fraction = get_or<double>(j, "population", "dominant_class_fraction", 0.0);
    p.validation_size = get_or<std::size_t>(j, "population", "validation_size", 1000);
    p.seed = get_or<std::uint64_t>(j, "population", "seed", 0);
    return p;
}

inline std::vector<NoiseSpec> parse_noise(const json& j) {
    if (!j.is_array()) throw ConfigError("config: noise must be an array");
    std::vector<NoiseSpec> out;
    std::size_t i = 0;
    for (const auto& item : j) {
        const std::string path = "noise[" + std::to_string(i++) + "]";
        check_keys(item, path,
                   {"kind", "fraction", "density", "sigma", "pollute_fraction", "sentinel"});
        NoiseSpec ns;
        ns.kind = noise_kind_from_string(get_required<std::string>(item, path, "kind"));
        ns.fraction = get_required<double>(item, path, "fraction");
        ns.params.density = get_or<double>(item, path, "density", ns.params.density);
        ns.params.sigma = get_or<double>(item, path, "sigma", ns.params.sigma);
        ns.params.pollute_fraction =
            get_or<double>(item, path, "pollute_fraction", ns.params.pollute_fraction);
        ns.params.sentinel = get_or<double>(item, path, "sentinel", ns.params.sentinel);
        out.push_back(ns);
    }
    return out;
}

inline void parse_model(const json& j, const PopulationConfig& pop, FederationConfig& fed) {
    check_keys(j, "model", {"layers", "activation", "head", "capture"});
    std::vector<std::size_t> layers =
        get_or<std::vector<std::size_t>>(j, "model", "layers", {});
    if (layers.empty())
        layers = {pop.feature_dim, 32, pop.n_classes == 0 ? 1 : pop.n_classes};
    const Activation act =
        activation_from_string(get_or<std::string>(j, "model", "activation", "relu"));
    Head head = pop.n_classes == 0 ? Head::linear_mse : Head::softmax_nll;
    if (j.contains("head")) head = head_from_string(get_required<std::string>(j, "model", "head"));
    fed.model = ModelSpec(layers, act, head);

    // Default capture point: last hidden layer, pre-activation.
    fed.capture.layer = fed.model.n_weight_layers() >= 2 ? fed.model.n_weight_layers() - 2 : 0;
    fed.capture.stage = CaptureStage::pre_activation;
    fed.capture.fusion = Fusion::none;
    if (j.contains("capture")) {
        const json& c = j.at("capture");
        check_keys(c, "model.capture", {"layer", "stage", "fusion"});
        fed.capture.layer = get_or<std::size_t>(c, "model.capture", "layer", fed.capture.layer);
        const std::string stage = get_or<std::string>(c, "model.capture", "stage", "pre_activation");
        if (stage == "pre_activation")
            fed.capture.stage = CaptureStage::pre_activation;
        else if (stage == "post_activation")
            fed.capture.stage = CaptureStage::post_activation;
        else
            throw ConfigError("config: unknown capture stage: " + stage);
        const std::string fusion = get_or<std::string>(c, "model.capture", "fusion", "none");
        if (fusion == "none")
            fed.capture.fusion = Fusion::none;
        else if (fusion == "sum_all")
            fed.capture.fusion = Fusion::sum_all;
        else
            throw ConfigError("config: unknown capture fusion: " + fusion);
    }
}

inline void parse_federation(const json& j, FederationConfig& fed) {
    check_keys(j, "federation",
               {"client_fraction", "rounds", "epochs", "batch_size", "lr", "lr_decay", "alpha",
                "target_accuracy", "stop_at_target", "kl_variant", "regression_tolerance"});
    fed.client_fraction = get_or<double>(j, "federation", "client_fraction", fed.client_fraction);
    fed.max_rounds = get_or<std::size_t>(j, "federation", "rounds", fed.max_rounds);
    fed.epochs = get_or<std::size_t>(j, "federation", "epochs", fed.epochs);
    fed.batch_size = get_or<std::size_t>(j, "federation", "batch_size", fed.batch_size);
    fed.lr = get_or<double>(j, "federation", "lr", fed.lr);
    fed.lr_decay = get_or<double>(j, "federation", "lr_decay", fed.lr_decay);
    if (j.contains("alpha")) {
        const json& a = j.at("alpha");
        if (a.is_string()) {
            if (a.get<std::string>() != "optimal")
                throw ConfigError("config: federation.alpha must be a number or \"optimal\"");
            fed.alpha_optimal = true;
        } else if (a.is_number()) {
            fed.alpha = a.get<double>();
        } else {
            throw ConfigError("config: bad type for federation.alpha");
        }
    }
    fed.target_accuracy = get_or<double>(j, "federation", "target_accuracy", fed.target_accuracy);
    fed.stop_at_target = get_or<bool>(j, "federation", "stop_at_target", fed.stop_at_target);
    const std::string variant = get_or<std::string>(j, "federation", "kl_variant", "canonical");
    if (variant == "canonical")
        fed.kl_variant = KlVariant::canonical;
    else if (variant == "simplified")
        fed.kl_variant = KlVariant::simplified;
    else
        throw ConfigError("config: unknown kl_variant: " + variant);
    fed.regression_tolerance =
        get_or<double>(j, "federation", "regression_tolerance", fed.regression_tolerance);
}

inline void parse_strategy_params(const json& j, StrategyPolicy& p) {
    check_keys(j, "strategy_params",
               {"afl_temperature", "fedprox_mu", "fedadam_beta1", "fedadam_beta2",
                "fedadam_server_lr", "fedadam_eps"});
    p.afl_temperature = get_or<double>(j, "strategy_params", "afl_temperature", p.afl_temperature);
    p.fedprox_mu = get_or<double>(j, "strategy_params", "fedprox_mu", p.fedprox_mu);
    p.fedadam_beta1 = get_or<double>(j, "strategy_params", "fedadam_beta1", p.fedadam_beta1);
    p.fedadam_beta2 = get_or<double>(j, "strategy_params", "fedadam_beta2", p.fedadam_beta2);
    p.fedadam_server_lr =
        get_or<double>(j, "strategy_params", "fedadam_server_lr", p.fedadam_server_lr);
    p.fedadam_eps = get_or<double>(j, "strategy_params", "fedadam_eps", p.fedadam_eps);
}

inline void parse_cost(const json& j, DeviceLaw& law, PowerModel& power) {
    check_keys(j, "cost",
               {"compute_ghz", "bandwidth_mhz", "snr_db", "bits_per_sample", "cycles_per_bit",
                "p_trans_w", "p_f_w"});
    auto parse_law = [&](const char* key, double& mean, double& std) {
        if (!j.contains(key)) return;
        const json& g = j.at(key);
        check_keys(g, std::string("cost.") + key, {"mean", "std"});
        mean = get_or<double>(g, std::string("cost.") + key, "mean", mean);
        std = get_or<double>(g, std::string("cost.") + key, "std", std);
    };
    parse_law("compute_ghz", law.compute_ghz_mean, law.compute_ghz_std);
    parse_law("bandwidth_mhz", law.bandwidth_mhz_mean, law.bandwidth_mhz_std);
    law.snr_db = get_or<double>(j, "cost", "snr_db", law.snr_db);
    law.bits_per_sample = get_or<double>(j, "cost", "bits_per_sample", law.bits_per_sample);
    law.cycles_per_bit = get_or<double>(j, "cost", "cycles_per_bit", law.cycles_per_bit);
    power.p_trans_w = get_or<double>(j, "cost", "p_trans_w", power.p_trans_w);
    power.p_f_w = get_or<double>(j, "cost", "p_f_w", power.p_f_w);
}

}  // namespace detail

// Strict parse: unknown keys are rejected with their path; missing required
// keys name the key; defaults follow the experiment-setup table.
inline ExperimentConfig parse_config_json(const json& j) {
    detail::check_keys(j, "",
                       {"population", "noise", "model", "strategy", "strategies",
                        "strategy_params", "aggregation", "federation", "cost", "seeds",
                        "output_dir", "plot", "diagnostics"});
    ExperimentConfig cfg;
    if (!j.contains("population"))
        throw ConfigError("config: missing required key population");
    const json& pj = j.at("population");
    const bool loads_population = pj.is_object() && pj.contains("load_dir");
    if (loads_population) {
        detail::check_keys(pj, "population", {"load_dir", "seed"});
        cfg.population_load_dir = detail::get_required<std::string>(pj, "population", "load_dir");
        cfg.population.seed = detail::get_or<std::uint64_t>(pj, "population", "seed", 0);
        if (!j.contains("model") || !j.at("model").contains("layers"))
            throw ConfigError("config: model.layers is required with population.load_dir");
    } else {
        cfg.population = detail::parse_population(pj);
    }

    if (j.contains("noise")) {
        if (loads_population)
            throw ConfigError("config: noise cannot be combined with population.load_dir");
        cfg.noise = detail::parse_noise(j.at("noise"));
    }

    detail::parse_model(j.contains("model") ? j.at("model") : json::object(), cfg.population,
                        cfg.fed);

    if (j.contains("strategy") && j.contains("strategies"))
        throw ConfigError("config: give either strategy or strategies, not both");
    if (j.contains("strategy")) {
        cfg.strategies = {strategy_from_string(detail::get_required<std::string>(j, "", "strategy"))};
    } else if (j.contains("strategies")) {
        for (const auto& s : detail::get_required<std::vector<std::string>>(j, "", "strategies"))
            cfg.strategies.push_back(strategy_from_string(s));
        if (cfg.strategies.empty()) throw ConfigError("config: strategies must not be empty");
    } else {
        throw ConfigError("config: missing required key strategy");
    }

    if (j.contains("strategy_params"))
        detail::parse_strategy_params(j.at("strategy_params"), cfg.fed.policy);
    if (j.contains("aggregation"))
        cfg.fed.aggregation =
            aggregation_from_string(detail::get_required<std::string>(j, "", "aggregation"));
    if (j.contains("federation")) detail::parse_federation(j.at("federation"), cfg.fed);
    if (j.contains("cost")) detail::parse_cost(j.at("cost"), cfg.devices, cfg.fed.power);
    if (j.contains("seeds")) {
        cfg.seeds = detail::get_required<std::vector<std::uint64_t>>(j, "", "seeds");
        if (cfg.seeds.empty()) throw ConfigError("config: seeds must not be empty");
    }
    cfg.output_dir = detail::get_or<std::string>(j, "", "output_dir", cfg.output_dir);
    cfg.plot = detail::get_or<bool>(j, "", "plot", cfg.plot);
    cfg.diagnostics = detail::get_or<bool>(j, "", "diagnostics", cfg.diagnostics);

    // Cross-field checks (client count is known only after loading when a
    // population directory is given; the runner re-validates then).
    if (!loads_population) {
        cfg.population.validate();
        cfg.fed.validate(cfg.population.n_clients);
        if (!cfg.population.fixed_pool_total && cfg.fed.batch_size > cfg.population.size_law.min)
            throw ConfigError("config: batch_size exceeds the minimum client dataset size");
    }
    return cfg;
}

inline ExperimentConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config: invalid JSON in " + path + ": " + e.what());
    }
    return parse_config_json(j);
}

}  // namespace fedsim
