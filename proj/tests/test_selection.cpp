#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "fedsim/rng.hpp"
#include "fedsim/selection.hpp"

using namespace fedsim;

TEST_CASE("score_client: worked values") {
    CHECK(score_client(3.7, 0.0) == 1.0);   // alpha = 0 -> random selection
    CHECK(score_client(0.0, 42.0) == 1.0);  // div = 0
    CHECK(score_client(0.1, 10.0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
    CHECK_THROWS_AS(score_client(std::nan(""), 1.0), ContractError);
}

TEST_CASE("optimal_alpha inverts the score formula") {
    const double a1 = optimal_alpha(0.5, 1.0, 1.0);
    CHECK(a1 == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(score_client(1.0, a1) == doctest::Approx(0.5).epsilon(1e-12));

    CHECK(optimal_alpha(1.0, 0.7, 1.0) == 0.0);  // single client
    CHECK(optimal_alpha(0.25, 0.5, 1.0) == doctest::Approx(2.0 * std::log(4.0)).epsilon(1e-12));

    CHECK_THROWS_AS(optimal_alpha(0.5, 0.0, 1.0), DegenerateError);
    CHECK_THROWS_AS(optimal_alpha(0.9, 1.0, 2.0), DomainError);  // Lambda*rho > 1
    CHECK_THROWS_AS(optimal_alpha(0.0, 1.0, 1.0), DomainError);
}

TEST_CASE("sample_clients: exactness and edge cases") {
    Rng rng(1);
    std::vector<double> uniform(6, 1.0);
    auto full = sample_clients(uniform, 6, rng);
    std::sort(full.begin(), full.end());
    CHECK(full == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});

    std::vector<double> one_hot{1.0, 0.0, 0.0};
    for (int i = 0; i < 50; ++i) CHECK(sample_clients(one_hot, 1, rng)[0] == 0);

    CHECK_THROWS_AS(sample_clients(one_hot, 2, rng), ContractError);   // K > positive weights
    CHECK_THROWS_AS(sample_clients(uniform, 7, rng), ContractError);   // K > N
    std::vector<double> zeros(4, 0.0);
    CHECK_THROWS_AS(sample_clients(zeros, 1, rng), SamplingError);
    std::vector<double> negative{1.0, -0.5};
    CHECK_THROWS_AS(sample_clients(negative, 1, rng), ContractError);
}

TEST_CASE("sample_clients frequencies match the weights") {
    Rng rng(77);
    std::vector<double> w{2.0, 1.0, 1.0};
    int count0 = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i)
        if (sample_clients(w, 1, rng)[0] == 0) ++count0;
    CHECK(std::abs(count0 / static_cast<double>(n) - 0.5) < 0.005);
}

TEST_CASE("selection distribution is invariant under weight rescaling") {
    // Power-of-two rescaling leaves the draw sequence bit-identical.
    std::vector<double> w{0.3, 1.7, 0.9, 2.1, 0.5};
    std::vector<double> w4;
    for (double v : w) w4.push_back(4.0 * v);
    Rng r1(5), r2(5);
    for (int i = 0; i < 2000; ++i)
        CHECK(sample_clients(w, 2, r1) == sample_clients(w4, 2, r2));

    // Arbitrary positive rescaling preserves frequencies.
    std::vector<double> w37;
    for (double v : w) w37.push_back(3.7 * v);
    const int n = 40000;
    std::vector<int> c1(w.size(), 0), c2(w.size(), 0);
    Rng r3(6), r4(7);
    for (int i = 0; i < n; ++i) {
        c1[sample_clients(w, 1, r3)[0]]++;
        c2[sample_clients(w37, 1, r4)[0]]++;
    }
    const double total = 0.3 + 1.7 + 0.9 + 2.1 + 0.5;
    for (std::size_t k = 0; k < w.size(); ++k) {
        const double p = w[k] / total;
        const double band = 4.0 * std::sqrt(p * (1.0 - p) / n);
        CHECK(std::abs(c1[k] / static_cast<double>(n) - p) < band);
        CHECK(std::abs(c2[k] / static_cast<double>(n) - p) < band);
    }
}

TEST_CASE("scores lie in (0,1] and decrease in div") {
    Rng rng(3);
    for (int i = 0; i < 500; ++i) {
        const double alpha = rng.uniform(0.1, 20.0);
        const double d1 = rng.uniform(0.0, 3.0);
        const double d2 = d1 + rng.uniform(0.01, 2.0);
        const double s1 = score_client(d1, alpha);
        const double s2 = score_client(d2, alpha);
        CHECK(s1 > 0.0);
        CHECK(s1 <= 1.0);
        CHECK(s2 < s1);
    }
}

TEST_CASE("next_selection: policy-specific behavior") {
    Rng rng(11);
    RoundContext ctx;
    ctx.n_clients = 5;
    ctx.k = 2;
    ctx.scores = std::vector<double>{1.0, 1.0, 1.0, 1.0, 1.0};
    ctx.data_sizes = std::vector<double>{10.0, 20.0, 30.0, 40.0, 50.0};
    ctx.last_losses = std::vector<double>{0.0, 0.0, 0.0, 0.0, 0.0};
    ctx.predicted_times = std::vector<double>{5.0, 1.0, 2.0, 3.0, 4.0};

    StrategyPolicy cfcfm;
    cfcfm.strategy = Strategy::cfcfm_order;
    auto first = next_selection(cfcfm, ctx, rng);
    std::sort(first.begin(), first.end());
    CHECK(first == std::vector<std::size_t>{1, 2});  // the two fastest

    // A 10x slower client is never picked when K = N - 1.
    ctx.k = 4;
    ctx.predicted_times = std::vector<double>{1.0, 1.1, 0.9, 10.0, 1.2};
    for (int i = 0; i < 20; ++i) {
        auto sel = next_selection(cfcfm, ctx, rng);
        CHECK(std::find(sel.begin(), sel.end(), 3u) == sel.end());
    }

    StrategyPolicy missing;
    missing.strategy = Strategy::afl_loss;
    RoundContext bare;
    bare.n_clients = 5;
    bare.k = 2;
    CHECK_THROWS_AS(next_selection(missing, bare, rng), ConfigError);
}

TEST_CASE("fedprof with equal scores behaves like uniform random selection") {
    StrategyPolicy fedprof;
    fedprof.strategy = Strategy::fedprof_score;
    StrategyPolicy fedavg;
    fedavg.strategy = Strategy::fedavg_random;
    RoundContext ctx;
    ctx.n_clients = 6;
    ctx.k = 3;
    ctx.scores = std::vector<double>(6, 0.421);

    const int rounds = 20000;
    std::vector<int> cp(6, 0), cu(6, 0);
    Rng r1(21), r2(22);
    for (int i = 0; i < rounds; ++i) {
        for (std::size_t id : next_selection(fedprof, ctx, r1)) cp[id]++;
        for (std::size_t id : next_selection(fedavg, ctx, r2)) cu[id]++;
    }
    const double expect = 0.5;  // inclusion probability K/N
    const double band = 4.0 * std::sqrt(expect * (1.0 - expect) / rounds);
    for (std::size_t k = 0; k < 6; ++k) {
        CHECK(std::abs(cp[k] / static_cast<double>(rounds) - expect) < band);
        CHECK(std::abs(cu[k] / static_cast<double>(rounds) - expect) < band);
    }
}

TEST_CASE("afl weights follow the softmax of losses") {
    StrategyPolicy afl;
    afl.strategy = Strategy::afl_loss;
    afl.afl_temperature = 1.0;
    RoundContext ctx;
    ctx.n_clients = 2;
    ctx.k = 1;
    ctx.last_losses = std::vector<double>{1.0, 0.0};
    Rng rng(31);
    int count0 = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i)
        if (next_selection(afl, ctx, rng)[0] == 0) ++count0;
    const double expect = std::exp(1.0) / (std::exp(1.0) + 1.0);  // ~0.731
    CHECK(std::abs(count0 / static_cast<double>(n) - expect) < 0.005);
}

TEST_CASE("optimal-alpha gauge realizes the target selection probabilities") {
    // Single-draw frequency should reproduce rho_k under the optimal-alpha gauge.
    Rng rng(41);
    const std::vector<double> rho{0.05, 0.1, 0.15, 0.2, 0.5};
    std::vector<double> divs{0.4, 1.3, 0.7, 2.2, 0.9};
    std::vector<double> lambda(rho.size());
    for (std::size_t k = 0; k < rho.size(); ++k)
        lambda[k] = score_client(divs[k], optimal_alpha(rho[k], divs[k], 1.0));
    const int n = 100000;
    std::vector<int> counts(rho.size(), 0);
    for (int i = 0; i < n; ++i) counts[sample_clients(lambda, 1, rng)[0]]++;
    for (std::size_t k = 0; k < rho.size(); ++k) {
        const double band = 3.0 * std::sqrt(rho[k] * (1.0 - rho[k]) / n);
        CHECK(std::abs(counts[k] / static_cast<double>(n) - rho[k]) <= band);
    }
}
