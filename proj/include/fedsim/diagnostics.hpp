#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "fedsim/common.hpp"
#include "fedsim/nn.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/selection.hpp"

namespace fedsim {

// --- Normality test ----------------------------------------------------------

struct JarqueBeraResult {
    double stat = 0.0;
    double skewness = 0.0;
    double kurtosis_excess = 0.0;
    std::size_t n = 0;

    // chi^2(2) quantile at 1 - alpha is -2 ln(alpha).
    bool reject_at(double alpha) const { return stat > -2.0 * std::log(alpha); }
};

inline JarqueBeraResult jarque_bera(const std::vector<double>& samples) {
    const std::size_t n = samples.size();
    if (n < 20) throw ContractError("jarque_bera: need at least 20 samples");
    double mean = 0.0;
    for (double v : samples) mean += v;
    mean /= static_cast<double>(n);
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (double v : samples) {
        const double d = v - mean;
        const double d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= static_cast<double>(n);
    m3 /= static_cast<double>(n);
    m4 /= static_cast<double>(n);
    // Constant samples leave only accumulation roundoff (~mean^2 * 1e-32) in m2.
    if (m2 <= 1e-18 * (1.0 + mean * mean))
        throw DegenerateError("jarque_bera: zero sample variance");
    JarqueBeraResult r;
    r.n = n;
    r.skewness = m3 / std::pow(m2, 1.5);
    r.kurtosis_excess = m4 / (m2 * m2) - 3.0;
    r.stat = static_cast<double>(n) / 6.0 *
             (r.skewness * r.skewness + r.kurtosis_excess * r.kurtosis_excess / 4.0);
    return r;
}

struct NormalityReport {
    std::vector<double> stats;          // per tested unit
    std::vector<std::size_t> excluded;  // degenerate (zero-variance) units
    std::size_t tested = 0;
    std::size_t rejected = 0;
    double rejection_rate = 0.0;
    double alpha = 0.05;
};

// Jarque-Bera per captured unit; the report carries the fraction of units on
// which normality is rejected at the given significance level.
inline NormalityReport normality_rejection_rate(const Model& model, const Batch& dataset,
                                                const CaptureSelector& sel, double alpha) {
    if (dataset.size() < 200)
        throw ContractError("normality_rejection_rate: need at least 200 samples");
    if (sel.captured_width(model.spec) < 20 && sel.fusion == Fusion::none)
        throw ContractError("normality_rejection_rate: layer width must be >= 20");
    const Matrix captured = forward_capture(model, dataset, sel).captured;
    NormalityReport report;
    report.alpha = alpha;
    std::vector<double> column(captured.rows());
    for (std::size_t j = 0; j < captured.cols(); ++j) {
        for (std::size_t i = 0; i < captured.rows(); ++i) column[i] = captured(i, j);
        try {
            const JarqueBeraResult r = jarque_bera(column);
            report.stats.push_back(r.stat);
            ++report.tested;
            if (r.reject_at(alpha)) ++report.rejected;
        } catch (const DegenerateError&) {
            report.excluded.push_back(j);
        }
    }
    if (report.tested > 0)
        report.rejection_rate =
            static_cast<double>(report.rejected) / static_cast<double>(report.tested);
    return report;
}

// --- Convergence-rate harness -------------------------------------------------

// Federated world of quadratic objectives F_k(theta) = (a_k/2)||theta - c_k||^2
// with aggregation weights rho_k. Strong convexity mu = min a_k, smoothness
// L = max a_k, and the optimum is available in closed form.
struct QuadraticWorld {
    std::vector<double> a;                // curvatures, all > 0
    std::vector<std::vector<double>> c;   // per-client minimizers
    std::vector<double> rho;              // sum 1
    double grad_noise = 0.0;              // bounded additive gradient noise radius

    std::size_t n_clients() const { return a.size(); }
    std::size_t dim() const { return c.empty() ? 0 : c[0].size(); }
    double mu() const { return *std::min_element(a.begin(), a.end()); }
    double smoothness() const { return *std::max_element(a.begin(), a.end()); }

    void validate() const {
        if (a.empty() || a.size() != c.size() || a.size() != rho.size())
            throw ContractError("QuadraticWorld: inconsistent sizes");
        for (double ak : a)
            if (!(ak > 0.0))
                throw ContractError("QuadraticWorld: non-convex local objective (a <= 0)");
        double s = 0.0;
        for (double r : rho) s += r;
        if (std::abs(s - 1.0) > 1e-9) throw ContractError("QuadraticWorld: rho must sum to 1");
        for (const auto& ck : c)
            if (ck.size() != dim()) throw ContractError("QuadraticWorld: ragged c");
    }

    std::vector<double> theta_star() const {
        std::vector<double> num(dim(), 0.0);
        double den = 0.0;
        for (std::size_t k = 0; k < a.size(); ++k) {
            den += rho[k] * a[k];
            for (std::size_t j = 0; j < dim(); ++j) num[j] += rho[k] * a[k] * c[k][j];
        }
        for (double& v : num) v /= den;
        return num;
    }

    double objective(const std::vector<double>& theta) const {
        double f = 0.0;
        for (std::size_t k = 0; k < a.size(); ++k) {
            double d2 = 0.0;
            for (std::size_t j = 0; j < dim(); ++j) {
                const double d = theta[j] - c[k][j];
                d2 += d * d;
            }
            f += rho[k] * 0.5 * a[k] * d2;
        }
        return f;
    }

    double objective_star() const { return objective(theta_star()); }
};

struct ConvergenceRun {
    std::vector<std::size_t> steps;  // aggregation steps tau, 2tau, ...
    std::vector<double> errors;      // F(theta(t)) - F*
    double gamma = 0.0;
    double noise_bound = 0.0;    // the gradient-noise radius the run was built with
    double max_grad_norm = 0.0;  // realized G over the whole run
    // Within-round divergence records: (max_k ||theta_k - mean||^2, eta_t).
    std::vector<std::pair<double, double>> divergence_records;

    // Largest ratio of measured divergence to the 4 eta^2 (tau-1)^2 G^2 bound,
    // evaluated with the realized G.
    double max_divergence_ratio(std::size_t tau) const {
        if (tau < 2 || max_grad_norm <= 0.0) return 0.0;
        const double g2 = max_grad_norm * max_grad_norm;
        const double t2 = static_cast<double>((tau - 1) * (tau - 1));
        double worst = 0.0;
        for (const auto& [div2, eta] : divergence_records)
            worst = std::max(worst, div2 / (4.0 * eta * eta * t2 * g2));
        return worst;
    }
};

// Simulate partial aggregation with q_k = rho_k client sampling (K independent
// draws, the sampling model behind the convergence analysis) and the step
// schedule eta_t = 2 / (mu (t + gamma)), gamma = max(8L/mu, tau) - 1.
// Returns F(theta(t)) - F* at every aggregation step up to t_max.
inline ConvergenceRun run_quadratic_convergence(const QuadraticWorld& world, std::size_t tau,
                                                std::size_t k, std::size_t t_max,
                                                std::uint64_t seed) {
    world.validate();
    if (tau < 1) throw ContractError("run_quadratic_convergence: tau must be >= 1");
    if (k < 1) throw ContractError("run_quadratic_convergence: K must be >= 1");
    const std::size_t dim = world.dim();
    const double mu = world.mu();
    const double big_l = world.smoothness();
    const double gamma = std::max(8.0 * big_l / mu, static_cast<double>(tau)) - 1.0;
    const double f_star = world.objective_star();

    Rng rng(mix_seed(0x9aadULL, seed));
    ConvergenceRun out;
    out.gamma = gamma;
    out.noise_bound = world.grad_noise;

    std::vector<double> theta(dim, 0.0);
    std::vector<std::vector<double>> local;
    std::vector<double> grad(dim);
    const std::size_t n_rounds = t_max / tau;
    for (std::size_t r = 0; r < n_rounds; ++r) {
        const auto selected = sample_clients_with_replacement(world.rho, k, rng);
        local.assign(k, theta);
        for (std::size_t j = 1; j <= tau; ++j) {
            const std::size_t t = r * tau + j;
            const double eta = 2.0 / (mu * (static_cast<double>(t) + gamma));
            for (std::size_t s = 0; s < k; ++s) {
                const std::size_t ck = selected[s];
                double norm2 = 0.0;
                for (std::size_t d = 0; d < dim; ++d) {
                    grad[d] = world.a[ck] * (local[s][d] - world.c[ck][d]);
                    if (world.grad_noise > 0.0)
                        grad[d] += rng.uniform(-1.0, 1.0) * world.grad_noise /
                                   std::sqrt(static_cast<double>(dim));
                    norm2 += grad[d] * grad[d];
                }
                out.max_grad_norm = std::max(out.max_grad_norm, std::sqrt(norm2));
                for (std::size_t d = 0; d < dim; ++d) local[s][d] -= eta * grad[d];
            }
            if (j < tau && k > 1) {
                // Within-round divergence vs the running mean of the selected set.
                std::vector<double> mean(dim, 0.0);
                for (std::size_t s = 0; s < k; ++s)
                    for (std::size_t d = 0; d < dim; ++d) mean[d] += local[s][d];
                for (double& v : mean) v /= static_cast<double>(k);
                double worst = 0.0;
                for (std::size_t s = 0; s < k; ++s) {
                    double d2 = 0.0;
                    for (std::size_t d = 0; d < dim; ++d) {
                        const double dd = local[s][d] - mean[d];
                        d2 += dd * dd;
                    }
                    worst = std::max(worst, d2);
                }
                out.divergence_records.emplace_back(worst, eta);
            }
        }
        for (std::size_t d = 0; d < dim; ++d) {
            double m = 0.0;
            for (std::size_t s = 0; s < k; ++s) m += local[s][d];
            theta[d] = m / static_cast<double>(k);
        }
        out.steps.push_back((r + 1) * tau);
        out.errors.push_back(world.objective(theta) - f_star);
    }
    return out;
}

// Least-squares slope of log(y) against log(x); used to fit the observed
// convergence rate t^-p (returns p >= 0 for decaying sequences).
inline double log_log_decay_exponent(const std::vector<std::size_t>& x,
                                     const std::vector<double>& y) {
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (y[i] <= 0.0) continue;
        const double lx = std::log(static_cast<double>(x[i]));
        const double ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        ++n;
    }
    if (n < 2) throw DegenerateError("log_log_decay_exponent: not enough positive points");
    const double nn = static_cast<double>(n);
    const double slope = (nn * sxy - sx * sy) / (nn * sxx - sx * sx);
    return -slope;
}

}  // namespace fedsim
