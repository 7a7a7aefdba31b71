#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>

#include "fedsim/federation.hpp"
#include "fedsim/runner.hpp"

using namespace fedsim;

namespace {

Population small_population(std::size_t n_clients, std::uint64_t seed,
                            std::vector<NoiseSpec> noise = {}) {
    PopulationConfig cfg;
    cfg.n_clients = n_clients;
    cfg.n_classes = 3;
    cfg.feature_dim = 6;
    cfg.size_law = {80.0, 10.0, 64};
    cfg.validation_size = 150;
    cfg.seed = seed;
    return make_population(cfg, noise);
}

FederationConfig small_config(Strategy s) {
    FederationConfig cfg;
    cfg.model = ModelSpec({6, 8, 3}, Activation::relu, Head::softmax_nll);
    cfg.policy.strategy = s;
    cfg.client_fraction = 0.5;
    cfg.max_rounds = 5;
    cfg.epochs = 1;
    cfg.batch_size = 32;
    cfg.lr = 0.05;
    cfg.capture = {0, CaptureStage::pre_activation, Fusion::none};
    cfg.target_accuracy = 2.0;  // unreachable; run all rounds
    return cfg;
}

Model scalar_model(double v) {
    Model m;
    m.spec = ModelSpec({1, 1}, Activation::identity, Head::linear_mse);
    m.weights.emplace_back(1, 1);
    m.weights[0](0, 0) = v;
    m.biases.emplace_back(1, 0.0);
    return m;
}

}  // namespace

TEST_CASE("local_training: zero lr, determinism, quadratic convergence") {
    const Population pop = small_population(2, 1);
    const Model theta = init_model(ModelSpec({6, 8, 3}, Activation::relu, Head::softmax_nll), 4);

    Rng r1(9), r2(9);
    const auto frozen = local_training(pop.clients[0], theta, 1, 1000, 0.0, std::nullopt, r1);
    CHECK_FALSE(frozen.failed);
    CHECK(frozen.model == theta);

    Rng r3(9);
    const auto again = local_training(pop.clients[0], theta, 1, 1000, 0.0, std::nullopt, r3);
    CHECK(frozen.model == again.model);
    CHECK(frozen.mean_loss == again.mean_loss);

    // Strongly convex local objective with a unique minimizer (w, b) = (0.7, 0):
    // features +-1 make both parameters identifiable.
    LocalDataset quad;
    quad.data.features = Matrix(2, 1);
    quad.data.features(0, 0) = 1.0;
    quad.data.features(1, 0) = -1.0;
    quad.data.targets = Matrix(2, 1);
    quad.data.targets(0, 0) = 0.7;
    quad.data.targets(1, 0) = -0.7;
    Rng r4(2);
    const auto fit = local_training(quad, scalar_model(0.0), 500, 2, 0.1, std::nullopt, r4);
    CHECK(std::abs(fit.model.weights[0](0, 0) - 0.7) < 1e-3);
    CHECK(std::abs(fit.model.biases[0][0]) < 1e-3);

    CHECK_THROWS_AS(local_training(quad, scalar_model(0.0), 0, 1, 0.1, std::nullopt, r4),
                    ContractError);
}

TEST_CASE("aggregate_partial: unweighted mean over the selected set") {
    const Model a = scalar_model(0.0);
    const Model b = scalar_model(2.0);
    CHECK(aggregate_partial({b, b, b}) == b);
    CHECK(aggregate_partial({a, b}).weights[0](0, 0) == 1.0);
    CHECK_THROWS_AS(aggregate_partial({}), ContractError);

    Rng rng(7);
    std::vector<Model> models;
    const ModelSpec spec({3, 4, 2}, Activation::tanh, Head::softmax_nll);
    for (int i = 0; i < 5; ++i) models.push_back(init_model(spec, 100 + i));
    const Model mean = aggregate_partial(models);
    // Brute-force elementwise recomputation.
    for (std::size_t l = 0; l < mean.weights.size(); ++l)
        for (std::size_t i = 0; i < mean.weights[l].size(); ++i) {
            double s = 0.0;
            for (const auto& m : models) s += m.weights[l].data()[i];
            CHECK(mean.weights[l].data()[i] == doctest::Approx(s / 5.0).epsilon(1e-15));
        }
}

TEST_CASE("aggregate_full: rho-weighted mean over cached models") {
    const Model theta = scalar_model(3.25);
    CHECK(aggregate_full({theta, theta, theta}, {0.2, 0.3, 0.5}) == theta);
    CHECK(aggregate_full({scalar_model(0.0), scalar_model(2.0)}, {0.5, 0.5}).weights[0](0, 0) ==
          1.0);
    CHECK_THROWS_AS(aggregate_full({theta, theta}, {0.5, 0.6}), ConfigError);
    CHECK_THROWS_AS(aggregate_full({theta, theta}, {1.0}), ConfigError);

    Rng rng(8);
    std::vector<Model> models;
    const ModelSpec spec({2, 3, 2}, Activation::sigmoid, Head::softmax_nll);
    std::vector<double> rho{0.1, 0.25, 0.65};
    for (int i = 0; i < 3; ++i) models.push_back(init_model(spec, 200 + i));
    const Model w = aggregate_full(models, rho);
    for (std::size_t l = 0; l < w.weights.size(); ++l)
        for (std::size_t i = 0; i < w.weights[l].size(); ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < 3; ++k) s += rho[k] * models[k].weights[l].data()[i];
            CHECK(w.weights[l].data()[i] == doctest::Approx(s).epsilon(1e-15));
        }
}

TEST_CASE("fedadam_update: pseudo-gradient adaptive step") {
    const Model theta = scalar_model(1.0);
    AdamState st;
    const Model same = fedadam_update(theta, theta, st, 0.9, 0.99, 0.1, 1e-8);
    CHECK(same == theta);  // delta = 0

    AdamState st2;
    const Model stepped = fedadam_update(scalar_model(0.0), scalar_model(1.0), st2, 0.0, 0.0,
                                         1.0, 1e-8);
    CHECK(stepped.weights[0](0, 0) == doctest::Approx(1.0).epsilon(1e-7));

    // Momentum accumulation: a repeated identical delta grows the step.
    AdamState st3;
    const Model t0 = scalar_model(0.0);
    const Model m1 = fedadam_update(t0, scalar_model(1.0), st3, 0.9, 0.99, 0.1, 1e-8);
    const double step1 = m1.weights[0](0, 0);
    const Model m2 = fedadam_update(m1, scalar_model(m1.weights[0](0, 0) + 1.0), st3, 0.9, 0.99,
                                    0.1, 1e-8);
    const double step2 = m2.weights[0](0, 0) - m1.weights[0](0, 0);
    CHECK(step2 >= step1);

    CHECK_THROWS_AS(fedadam_update(t0, t0, st3, 1.0, 0.5, 0.1, 1e-8), ConfigError);
    CHECK_THROWS_AS(fedadam_update(t0, t0, st3, 0.5, 0.5, 0.1, 0.0), ConfigError);
}

TEST_CASE("run_round: frozen run keeps the model and accuracy constant") {
    const Population pop = small_population(4, 3);
    const auto devices = sample_devices(4, DeviceLaw{}, 1);
    FederationConfig cfg = small_config(Strategy::fedavg_random);
    cfg.client_fraction = 1.0;
    cfg.lr = 0.0;
    ServerState s = init_server(pop, devices, cfg, 11);
    const Model before = s.global;
    const RoundTrace t1 = run_round(s);
    const RoundTrace t2 = run_round(s);
    CHECK(s.global == before);
    CHECK(t1.accuracy == t2.accuracy);
    CHECK(t1.selected == std::vector<std::size_t>{0, 1, 2, 3});
}

TEST_CASE("run_round with a single client: round time is its own cost") {
    const Population pop = small_population(1, 5);
    const auto devices = sample_devices(1, DeviceLaw{}, 2);
    FederationConfig cfg = small_config(Strategy::fedprof_score);
    cfg.client_fraction = 1.0;
    ServerState s = init_server(pop, devices, cfg, 13);
    const RoundTrace t = run_round(s);
    REQUIRE(t.selected == std::vector<std::size_t>{0});

    const double msize = model_size_mbit(s.global.parameter_count());
    const double tt = train_time(cfg.epochs, pop.clients[0].size(), devices[0]);
    const double expected = comm_time(msize, devices[0]) + tt +
                            rp_time(tt, cfg.epochs, rp_size_mbit(8), devices[0]);
    CHECK(t.round_time_s == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("seeded reruns produce bit-identical traces") {
    const Population pop = small_population(6, 7, {{NoiseKind::salt_pepper, 0.3, {}}});
    const auto devices = sample_devices(6, DeviceLaw{}, 3);
    for (Strategy strat : {Strategy::fedprof_score, Strategy::fedavg_random, Strategy::afl_loss}) {
        FederationConfig cfg = small_config(strat);
        cfg.max_rounds = 10;
        const ExperimentRun a = run_experiment(pop, devices, cfg, 17);
        const ExperimentRun b = run_experiment(pop, devices, cfg, 17);
        REQUIRE(a.traces.size() == b.traces.size());
        for (std::size_t i = 0; i < a.traces.size(); ++i)
            CHECK(round_trace_csv_row(a.traces[i]) == round_trace_csv_row(b.traces[i]));
    }
}

TEST_CASE("run_experiment summary fields") {
    const Population pop = small_population(4, 9);
    const auto devices = sample_devices(4, DeviceLaw{}, 4);

    FederationConfig cfg = small_config(Strategy::fedavgrp_random);
    cfg.target_accuracy = 0.0;  // hit immediately
    const ExperimentRun run = run_experiment(pop, devices, cfg, 19);
    REQUIRE(run.rounds_to_target.has_value());
    CHECK(*run.rounds_to_target == 1);
    CHECK(*run.time_to_target_s == run.traces[0].round_time_s);

    FederationConfig frozen = small_config(Strategy::fedavg_random);
    frozen.lr = 0.0;
    const ExperimentRun fr = run_experiment(pop, devices, frozen, 19);
    CHECK(fr.best_accuracy == fr.traces[0].accuracy);

    FederationConfig unreachable = small_config(Strategy::fedavg_random);
    unreachable.target_accuracy = 1.1;
    const ExperimentRun ur = run_experiment(pop, devices, unreachable, 19);
    CHECK_FALSE(ur.rounds_to_target.has_value());
}

TEST_CASE("ledger totals equal trace sums exactly") {
    const Population pop = small_population(5, 21);
    const auto devices = sample_devices(5, DeviceLaw{}, 5);
    FederationConfig cfg = small_config(Strategy::fedprof_score);
    cfg.max_rounds = 8;
    const ExperimentRun run = run_experiment(pop, devices, cfg, 23);

    double time_sum = 0.0, energy_sum = 0.0;
    for (const auto& t : run.traces) {
        time_sum += t.round_time_s;
        energy_sum += t.energy_wh_total;
    }
    const CostTotals totals = run.ledger.totals();
    CHECK(totals.time_s == time_sum);
    CHECK(totals.energy_wh == energy_sum);
    CHECK(run.total_time_s == time_sum);
    CHECK(run.total_energy_wh == energy_sum);
}

TEST_CASE("numeric blow-up excludes the client for the round") {
    Population pop = small_population(3, 25);
    // Poison client 1 with astronomically large features: training overflows.
    for (double& v : pop.clients[1].data.features.data()) v = 1e200;
    const auto devices = sample_devices(3, DeviceLaw{}, 6);
    FederationConfig cfg = small_config(Strategy::fedavg_random);
    cfg.client_fraction = 1.0;
    cfg.lr = 0.5;
    ServerState s = init_server(pop, devices, cfg, 29);
    const RoundTrace t = run_round(s);
    CHECK(t.failed == std::vector<std::size_t>{1});
    CHECK(s.global.all_finite());
    CHECK_FALSE(s.warnings.empty());
}

TEST_CASE("profile versioning: divs only pair with same-version baselines") {
    const Population pop = small_population(3, 31);
    const auto devices = sample_devices(3, DeviceLaw{}, 7);
    FederationConfig cfg = small_config(Strategy::fedprof_score);
    ServerState s = init_server(pop, devices, cfg, 37);
    (void)run_round(s);
    (void)run_round(s);
    // Client profiles always find their matching baseline inside the loop.
    for (const auto& c : s.clients) CHECK(s.baselines.count(c.profile.version) == 1);
    // A profile stamped with a version the server never issued is stale.
    s.clients[0].profile.version = 999;
    CHECK_THROWS_AS(run_round(s), StalenessError);
}

TEST_CASE("unbiased aggregation under importance-matched sampling") {
    Rng rng(41);
    const std::size_t n = 10, k = 3;
    std::vector<double> rho(n), v(n);
    double rho_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        rho[i] = rng.uniform(0.5, 2.0);
        rho_sum += rho[i];
        v[i] = rng.uniform(-5.0, 5.0);
    }
    for (double& r : rho) r /= rho_sum;
    double target = 0.0;
    for (std::size_t i = 0; i < n; ++i) target += rho[i] * v[i];

    const int resamples = 10000;
    double mean = 0.0, m2 = 0.0;
    for (int it = 0; it < resamples; ++it) {
        const auto sel = sample_clients_with_replacement(rho, k, rng);
        double agg = 0.0;
        for (std::size_t id : sel) agg += v[id];
        agg /= static_cast<double>(k);
        const double delta = agg - mean;
        mean += delta / (it + 1);
        m2 += delta * (agg - mean);
    }
    const double se = std::sqrt(m2 / resamples / resamples);
    CHECK(std::abs(mean - target) <= 3.0 * se);
}

TEST_CASE("aggregate variance scales as 1/K") {
    Rng rng(43);
    const std::size_t n = 10;
    std::vector<double> rho(n, 0.1), v(n);
    for (auto& x : v) x = rng.uniform(-5.0, 5.0);

    std::vector<std::size_t> ks{1, 2, 5, 10};
    std::vector<std::size_t> xs;
    std::vector<double> vars;
    for (std::size_t k : ks) {
        double mean = 0.0, m2 = 0.0;
        const int resamples = 60000;
        for (int it = 0; it < resamples; ++it) {
            const auto sel = sample_clients_with_replacement(rho, k, rng);
            double agg = 0.0;
            for (std::size_t id : sel) agg += v[id];
            agg /= static_cast<double>(k);
            const double delta = agg - mean;
            mean += delta / (it + 1);
            m2 += delta * (agg - mean);
        }
        xs.push_back(k);
        vars.push_back(m2 / resamples);
    }
    // log-log slope of Var against K should be -1 +- 0.15.
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < ks.size(); ++i) {
        const double lx = std::log(static_cast<double>(xs[i]));
        const double ly = std::log(vars[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const double m = static_cast<double>(ks.size());
    const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    CHECK(slope == doctest::Approx(-1.0).epsilon(0.15));
}

TEST_CASE("per-client energies in the trace sum to the round total") {
    const Population pop = small_population(5, 33);
    const auto devices = sample_devices(5, DeviceLaw{}, 10);
    FederationConfig cfg = small_config(Strategy::fedprof_score);
    ServerState s = init_server(pop, devices, cfg, 41);
    const RoundTrace t = run_round(s);
    REQUIRE(t.client_energy_wh.size() == t.selected.size());
    double sum = 0.0;
    for (const auto& [id, wh] : t.client_energy_wh) sum += wh;
    CHECK(sum == t.energy_wh_total);
}

TEST_CASE("every strategy runs end to end with its default aggregation") {
    const Population pop = small_population(6, 51, {{NoiseKind::gaussian, 0.3, {}}});
    const auto devices = sample_devices(6, DeviceLaw{}, 12);
    for (Strategy strat :
         {Strategy::fedavg_random, Strategy::cfcfm_order, Strategy::fedavgrp_random,
          Strategy::fedprox_dataratio, Strategy::fedadam_random, Strategy::afl_loss,
          Strategy::fedprof_score}) {
        FederationConfig cfg = small_config(strat);
        cfg.max_rounds = 4;
        const ExperimentRun run = run_experiment(pop, devices, cfg, 61);
        CHECK(run.traces.size() == 4);
        for (const auto& t : run.traces) {
            CHECK(t.selected.size() == 3);  // ceil(6 * 0.5)
            CHECK(t.accuracy >= 0.0);
            CHECK(t.accuracy <= 1.0);
            CHECK(t.round_time_s > 0.0);
        }
        // Profile costs are charged only by the profile-based strategy.
        const double rp = run.ledger.totals().rp_s;
        if (strat == Strategy::fedprof_score)
            CHECK(rp > 0.0);
        else
            CHECK(rp == 0.0);
    }
}
