#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fedsim/common.hpp"
#include "fedsim/matrix.hpp"
#include "fedsim/nn.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

enum class NoiseKind { clean, irrelevant, blur, salt_pepper, polluted, gaussian };

inline const char* to_string(NoiseKind k) {
    switch (k) {
        case NoiseKind::clean: return "clean";
        case NoiseKind::irrelevant: return "irrelevant";
        case NoiseKind::blur: return "blur";
        case NoiseKind::salt_pepper: return "salt_pepper";
        case NoiseKind::polluted: return "polluted";
        case NoiseKind::gaussian: return "gaussian";
    }
    return "?";
}

inline NoiseKind noise_kind_from_string(const std::string& s) {
    if (s == "clean") return NoiseKind::clean;
    if (s == "irrelevant") return NoiseKind::irrelevant;
    if (s == "blur") return NoiseKind::blur;
    if (s == "salt_pepper") return NoiseKind::salt_pepper;
    if (s == "polluted") return NoiseKind::polluted;
    if (s == "gaussian") return NoiseKind::gaussian;
    throw ConfigError("unknown noise kind: " + s);
}

struct NoiseParams {
    double density = 0.3;           // salt_pepper: probability an entry is replaced
    double sigma = 1.0;             // blur kernel width / gaussian noise stddev
    double pollute_fraction = 0.2;  // polluted: fraction of feature columns hit
    double sentinel = 1e3;          // polluted: value written into broken columns
};

struct NoiseSpec {
    NoiseKind kind = NoiseKind::clean;
    double fraction = 0.0;
    NoiseParams params;
};

// Per-client dataset size law: N(mean, std^2) clipped below at min so every
// client can form at least one batch.
struct SizeLaw {
    double mean = 514.0;
    double stddev = 101.0;
    std::size_t min = 64;
};

struct PopulationConfig {
    std::size_t n_clients = 0;
    std::size_t n_classes = 2;  // 0 selects the regression task
    std::size_t feature_dim = 0;
    SizeLaw size_law;
    // When set, a pool of exactly this many samples is generated once and
    // partitioned across validation + clients (multiset-preserving).
    std::optional<std::size_t> fixed_pool_total;
    double dominant_class_fraction = 0.0;  // 0 = no class imbalance
    std::size_t validation_size = 0;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_clients == 0) throw ConfigError("population.n_clients must be >= 1");
        if (n_classes == 1) throw ConfigError("population.n_classes must be 0 or >= 2");
        if (feature_dim == 0) throw ConfigError("population.feature_dim must be >= 1");
        if (validation_size == 0) throw ConfigError("population.validation_size must be >= 1");
        if (size_law.min == 0) throw ConfigError("population.size_law.min must be >= 1");
        if (dominant_class_fraction != 0.0) {
            if (n_classes < 2)
                throw ConfigError("dominant_class_fraction needs a classification task");
            const double floor = 1.0 / static_cast<double>(n_classes);
            if (dominant_class_fraction <= floor || dominant_class_fraction > 1.0)
                throw ConfigError("dominant_class_fraction must lie in (1/n_classes, 1]");
        }
    }
};

struct LocalDataset {
    std::size_t client_id = 0;
    NoiseKind provenance = NoiseKind::clean;
    Batch data;

    std::size_t size() const { return data.size(); }
};

// Gaussian-blob class mixture: class c is N(mean_c, I) with ||mean_c|| = 3.
// Desk-scale stand-in for a real classification dataset.
class ClassMixtureSource {
public:
    ClassMixtureSource(std::size_t n_classes, std::size_t feature_dim, std::uint64_t seed)
        : feature_dim_(feature_dim) {
        if (n_classes < 2) throw ConfigError("class mixture needs n_classes >= 2");
        Rng rng(mix_seed(0xb10b5ULL, seed));
        means_.resize(n_classes);
        for (auto& mean : means_) {
            mean.resize(feature_dim);
            double norm2 = 0.0;
            for (double& v : mean) {
                v = rng.normal();
                norm2 += v * v;
            }
            const double scale = 3.0 / std::sqrt(std::max(norm2, 1e-30));
            for (double& v : mean) v *= scale;
        }
    }

    explicit ClassMixtureSource(std::vector<std::vector<double>> means)
        : feature_dim_(means.empty() ? 0 : means[0].size()), means_(std::move(means)) {
        if (means_.size() < 2) throw ConfigError("class mixture needs n_classes >= 2");
    }

    std::size_t n_classes() const { return means_.size(); }
    std::size_t feature_dim() const { return feature_dim_; }
    const std::vector<std::vector<double>>& means() const { return means_; }

    void sample_class(int c, Rng& rng, double* out) const {
        const auto& mean = means_[static_cast<std::size_t>(c)];
        for (std::size_t j = 0; j < feature_dim_; ++j) out[j] = mean[j] + rng.normal();
    }

    std::pair<std::vector<double>, int> sample(Rng& rng) const {
        const int c = static_cast<int>(rng.uniform_index(means_.size()));
        std::vector<double> x(feature_dim_);
        sample_class(c, rng, x.data());
        return {std::move(x), c};
    }

private:
    std::size_t feature_dim_;
    std::vector<std::vector<double>> means_;
};

// Linear regression task: y = <w, x> with x ~ N(0, I) and a fixed seeded unit
// coefficient vector. Stand-in for the sensor-style regression dataset.
class RegressionSource {
public:
    RegressionSource(std::size_t feature_dim, std::uint64_t seed) : feature_dim_(feature_dim) {
        Rng rng(mix_seed(0x4e95ULL, seed));
        coef_.resize(feature_dim);
        double norm2 = 0.0;
        for (double& v : coef_) {
            v = rng.normal();
            norm2 += v * v;
        }
        const double scale = 1.0 / std::sqrt(std::max(norm2, 1e-30));
        for (double& v : coef_) v *= scale;
    }

    std::size_t feature_dim() const { return feature_dim_; }
    const std::vector<double>& coefficients() const { return coef_; }

    std::pair<std::vector<double>, double> sample(Rng& rng) const {
        std::vector<double> x(feature_dim_);
        double y = 0.0;
        for (std::size_t j = 0; j < feature_dim_; ++j) {
            x[j] = rng.normal();
            y += coef_[j] * x[j];
        }
        return {std::move(x), y};
    }

private:
    std::size_t feature_dim_;
    std::vector<double> coef_;
};

namespace detail {

inline void blur_features(Matrix& f, double sigma, Rng&) {
    if (sigma <= 0.0) return;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    for (int i = -radius; i <= radius; ++i)
        kernel[static_cast<std::size_t>(i + radius)] =
            std::exp(-0.5 * (i * i) / (sigma * sigma));
    const int d = static_cast<int>(f.cols());
    std::vector<double> row(static_cast<std::size_t>(d));
    for (std::size_t r = 0; r < f.rows(); ++r) {
        for (int j = 0; j < d; ++j) row[static_cast<std::size_t>(j)] = f(r, static_cast<std::size_t>(j));
        for (int j = 0; j < d; ++j) {
            double acc = 0.0, wsum = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const int jj = j + i;
                if (jj < 0 || jj >= d) continue;  // truncate at edges, renormalize
                const double w = kernel[static_cast<std::size_t>(i + radius)];
                acc += w * row[static_cast<std::size_t>(jj)];
                wsum += w;
            }
            f(r, static_cast<std::size_t>(j)) = acc / wsum;
        }
    }
}

}  // namespace detail

// Corrupt a dataset in place-by-value according to the noise kind. Labels are
// only touched by the `irrelevant` kind; the other kinds corrupt features.
inline LocalDataset apply_noise(const LocalDataset& ds, NoiseKind kind, const NoiseParams& params,
                                std::uint64_t seed) {
    LocalDataset out = ds;
    out.provenance = kind;
    Rng rng(mix_seed(0x4015eULL, seed));
    Matrix& f = out.data.features;
    switch (kind) {
        case NoiseKind::clean:
            out.provenance = NoiseKind::clean;
            break;
        case NoiseKind::irrelevant: {
            for (double& v : f.data()) v = rng.normal();
            if (out.data.is_classification()) {
                int n_classes = 0;
                for (int y : ds.data.labels) n_classes = std::max(n_classes, y + 1);
                for (int& y : out.data.labels)
                    y = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(n_classes)));
            } else if (!out.data.targets.empty()) {
                double lo = ds.data.targets.data()[0], hi = lo;
                for (double v : ds.data.targets.data()) {
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
                for (double& v : out.data.targets.data()) v = rng.uniform(lo, hi);
            }
            break;
        }
        case NoiseKind::blur:
            detail::blur_features(f, params.sigma, rng);
            break;
        case NoiseKind::salt_pepper: {
            if (params.density < 0.0 || params.density > 1.0)
                throw ConfigError("salt_pepper density must lie in [0, 1]");
            if (params.density == 0.0 || f.empty()) break;
            double lo = f.data()[0], hi = f.data()[0];
            for (double v : f.data()) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            for (double& v : f.data()) {
                if (rng.uniform() < params.density) v = rng.uniform() < 0.5 ? lo : hi;
            }
            break;
        }
        case NoiseKind::polluted: {
            // Broken sensor channels: whole feature columns stuck at the sentinel.
            const std::size_t d = f.cols();
            std::size_t n_cols = static_cast<std::size_t>(
                std::ceil(params.pollute_fraction * static_cast<double>(d)));
            n_cols = std::min(n_cols, d);
            std::vector<std::size_t> cols(d);
            std::iota(cols.begin(), cols.end(), std::size_t{0});
            rng.shuffle(cols);
            for (std::size_t i = 0; i < n_cols; ++i)
                for (std::size_t r = 0; r < f.rows(); ++r) f(r, cols[i]) = params.sentinel;
            break;
        }
        case NoiseKind::gaussian:
            for (double& v : f.data()) v += rng.normal(0.0, params.sigma);
            break;
    }
    return out;
}

struct Population {
    std::vector<LocalDataset> clients;
    LocalDataset validation;
};

namespace detail {

inline std::vector<std::size_t> client_sizes(const PopulationConfig& cfg, Rng& rng) {
    std::vector<std::size_t> sizes(cfg.n_clients);
    for (auto& s : sizes) {
        const double draw = rng.normal(cfg.size_law.mean, cfg.size_law.stddev);
        const long long r = std::llround(draw);
        s = static_cast<std::size_t>(std::max<long long>(r, static_cast<long long>(cfg.size_law.min)));
    }
    return sizes;
}

// Labels for one client: round(dc*n) samples of the dominant class, the rest
// uniform over the remaining classes.
inline std::vector<int> imbalanced_labels(std::size_t n, std::size_t n_classes, double dc,
                                          int dominant, Rng& rng) {
    std::vector<int> labels(n);
    if (dc == 0.0) {
        for (auto& y : labels) y = static_cast<int>(rng.uniform_index(n_classes));
        return labels;
    }
    const std::size_t n_dom =
        std::min(n, static_cast<std::size_t>(std::llround(dc * static_cast<double>(n))));
    for (std::size_t i = 0; i < n; ++i) {
        if (i < n_dom) {
            labels[i] = dominant;
        } else {
            int y = static_cast<int>(rng.uniform_index(n_classes - 1));
            if (y >= dominant) ++y;
            labels[i] = y;
        }
    }
    rng.shuffle(labels);
    return labels;
}

inline LocalDataset materialize_classification(std::size_t id, const std::vector<int>& labels,
                                               const ClassMixtureSource& src, Rng& rng) {
    LocalDataset ds;
    ds.client_id = id;
    ds.data.features = Matrix(labels.size(), src.feature_dim());
    ds.data.labels = labels;
    for (std::size_t i = 0; i < labels.size(); ++i)
        src.sample_class(labels[i], rng, &ds.data.features.data()[i * src.feature_dim()]);
    return ds;
}

inline LocalDataset materialize_regression(std::size_t id, std::size_t n,
                                           const RegressionSource& src, Rng& rng) {
    LocalDataset ds;
    ds.client_id = id;
    ds.data.features = Matrix(n, src.feature_dim());
    ds.data.targets = Matrix(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        auto [x, y] = src.sample(rng);
        std::copy(x.begin(), x.end(), &ds.data.features.data()[i * src.feature_dim()]);
        ds.data.targets(i, 0) = y;
    }
    return ds;
}

// Noise kinds are assigned to contiguous client-id blocks in the order the
// specs are listed; the remainder stays clean.
inline std::vector<NoiseSpec> assign_noise(std::size_t n_clients,
                                           const std::vector<NoiseSpec>& noise) {
    double total = 0.0;
    for (const auto& ns : noise) {
        if (ns.fraction < 0.0) throw ConfigError("noise fraction must be >= 0");
        total += ns.fraction;
    }
    if (total > 1.0 + 1e-12) throw ConfigError("noise fractions must sum to <= 1");
    std::vector<NoiseSpec> per_client(n_clients);
    std::size_t next = 0;
    for (const auto& ns : noise) {
        const std::size_t count = static_cast<std::size_t>(
            std::llround(ns.fraction * static_cast<double>(n_clients)));
        for (std::size_t i = 0; i < count && next < n_clients; ++i, ++next)
            per_client[next] = ns;
    }
    for (; next < n_clients; ++next) per_client[next] = NoiseSpec{};  // clean
    return per_client;
}

inline Population make_population_pool(const PopulationConfig& cfg,
                                       const std::vector<NoiseSpec>& per_client,
                                       const ClassMixtureSource& src, Rng& rng) {
    const std::size_t total = *cfg.fixed_pool_total;
    if (total < cfg.validation_size + cfg.n_clients)
        throw ConfigError("fixed_pool_total too small for validation + clients");

    Matrix pool_x(total, cfg.feature_dim);
    std::vector<int> pool_y(total);
    for (std::size_t i = 0; i < total; ++i) {
        pool_y[i] = static_cast<int>(rng.uniform_index(cfg.n_classes));
        src.sample_class(pool_y[i], rng, &pool_x.data()[i * cfg.feature_dim]);
    }

    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);

    Population pop;
    auto take = [&](const std::vector<std::size_t>& idx, std::size_t id) {
        LocalDataset ds;
        ds.client_id = id;
        ds.data.features = Matrix(idx.size(), cfg.feature_dim);
        ds.data.labels.resize(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            ds.data.labels[i] = pool_y[idx[i]];
            std::copy_n(&pool_x.data()[idx[i] * cfg.feature_dim], cfg.feature_dim,
                        &ds.data.features.data()[i * cfg.feature_dim]);
        }
        return ds;
    };

    // Validation first, then per-class pools for the dominant draws.
    std::vector<std::size_t> val_idx(order.begin(),
                                     order.begin() + static_cast<std::ptrdiff_t>(cfg.validation_size));
    pop.validation = take(val_idx, static_cast<std::size_t>(-1));
    pop.validation.provenance = NoiseKind::clean;

    std::vector<std::vector<std::size_t>> by_class(cfg.n_classes);
    for (auto it = order.begin() + static_cast<std::ptrdiff_t>(cfg.validation_size);
         it != order.end(); ++it)
        by_class[static_cast<std::size_t>(pool_y[*it])].push_back(*it);

    const std::size_t remaining = total - cfg.validation_size;
    std::vector<std::size_t> sizes(cfg.n_clients, remaining / cfg.n_clients);
    for (std::size_t k = 0; k < remaining % cfg.n_clients; ++k) ++sizes[k];

    std::vector<std::vector<std::size_t>> chosen(cfg.n_clients);
    const double dc = cfg.dominant_class_fraction;
    for (std::size_t k = 0; k < cfg.n_clients; ++k) {
        if (dc == 0.0) continue;
        auto& pool = by_class[k % cfg.n_classes];
        std::size_t want = static_cast<std::size_t>(std::llround(dc * static_cast<double>(sizes[k])));
        want = std::min(want, sizes[k]);
        if (pool.size() < want)
            throw ConfigError("dominant_class_fraction infeasible for the fixed pool");
        for (std::size_t i = 0; i < want; ++i) {
            chosen[k].push_back(pool.back());
            pool.pop_back();
        }
    }
    std::vector<std::size_t> rest;
    for (auto& pool : by_class) rest.insert(rest.end(), pool.begin(), pool.end());
    rng.shuffle(rest);
    std::size_t cursor = 0;
    for (std::size_t k = 0; k < cfg.n_clients; ++k) {
        while (chosen[k].size() < sizes[k]) {
            if (cursor >= rest.size())
                throw ConfigError("fixed pool exhausted while partitioning");
            chosen[k].push_back(rest[cursor++]);
        }
    }
    // Deal any remainder to the last client so the multiset is preserved.
    while (cursor < rest.size()) chosen.back().push_back(rest[cursor++]);

    for (std::size_t k = 0; k < cfg.n_clients; ++k) {
        LocalDataset ds = take(chosen[k], k);
        Rng noise_rng = rng.child(mix_seed(0x7015eULL, k));
        pop.clients.push_back(per_client[k].kind == NoiseKind::clean
                                  ? ds
                                  : apply_noise(ds, per_client[k].kind, per_client[k].params,
                                                noise_rng.seed()));
    }
    return pop;
}

}  // namespace detail

// Build the synthetic population: heterogeneous client datasets plus a clean,
// held-out validation set. Deterministic under cfg.seed.
inline Population make_population(const PopulationConfig& cfg,
                                  const std::vector<NoiseSpec>& noise = {}) {
    cfg.validate();
    const auto per_client = detail::assign_noise(cfg.n_clients, noise);
    Rng root(mix_seed(0x9095ULL, cfg.seed));

    if (cfg.n_classes == 0) {
        RegressionSource src(cfg.feature_dim, cfg.seed);
        Rng size_rng = root.child(1);
        const auto sizes = detail::client_sizes(cfg, size_rng);
        Population pop;
        for (std::size_t k = 0; k < cfg.n_clients; ++k) {
            Rng crng = root.child(mix_seed(2, k));
            LocalDataset ds = detail::materialize_regression(k, sizes[k], src, crng);
            pop.clients.push_back(
                per_client[k].kind == NoiseKind::clean
                    ? ds
                    : apply_noise(ds, per_client[k].kind, per_client[k].params,
                                  root.child(mix_seed(3, k)).seed()));
        }
        Rng vrng = root.child(4);
        pop.validation = detail::materialize_regression(static_cast<std::size_t>(-1),
                                                        cfg.validation_size, src, vrng);
        pop.validation.provenance = NoiseKind::clean;
        return pop;
    }

    ClassMixtureSource src(cfg.n_classes, cfg.feature_dim, cfg.seed);
    Rng pool_rng = root.child(0);
    if (cfg.fixed_pool_total)
        return detail::make_population_pool(cfg, per_client, src, pool_rng);

    Rng size_rng = root.child(1);
    const auto sizes = detail::client_sizes(cfg, size_rng);
    Population pop;
    for (std::size_t k = 0; k < cfg.n_clients; ++k) {
        Rng crng = root.child(mix_seed(2, k));
        const auto labels =
            detail::imbalanced_labels(sizes[k], cfg.n_classes, cfg.dominant_class_fraction,
                                      static_cast<int>(k % cfg.n_classes), crng);
        LocalDataset ds = detail::materialize_classification(k, labels, src, crng);
        pop.clients.push_back(per_client[k].kind == NoiseKind::clean
                                  ? ds
                                  : apply_noise(ds, per_client[k].kind, per_client[k].params,
                                                root.child(mix_seed(3, k)).seed()));
    }
    Rng vrng = root.child(4);
    std::vector<int> val_labels(cfg.validation_size);
    for (auto& y : val_labels) y = static_cast<int>(vrng.uniform_index(cfg.n_classes));
    pop.validation = detail::materialize_classification(static_cast<std::size_t>(-1),
                                                        val_labels, src, vrng);
    pop.validation.provenance = NoiseKind::clean;
    return pop;
}

// --- CSV ingestion (header row, numeric columns, last column = target) ------

inline LocalDataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open csv file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("csv: missing header row");
    std::vector<std::vector<double>> rows;
    std::size_t width = 0;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t pos = 0;
                const double v = std::stod(cell, &pos);
                if (pos != cell.size() && cell.find_first_not_of(" \t\r", pos) != std::string::npos)
                    throw std::invalid_argument(cell);
                row.push_back(v);
            } catch (const std::exception&) {
                throw FormatError("csv: non-numeric cell '" + cell + "' at line " +
                                  std::to_string(lineno));
            }
        }
        if (row.size() < 2) throw FormatError("csv: need at least one feature and a target");
        if (width == 0) width = row.size();
        if (row.size() != width)
            throw FormatError("csv: ragged row at line " + std::to_string(lineno));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw FormatError("csv: no data rows");

    LocalDataset ds;
    const std::size_t d = width - 1;
    ds.data.features = Matrix(rows.size(), d);
    bool integral = true;
    for (const auto& r : rows)
        if (r.back() != std::floor(r.back()) || r.back() < 0.0) integral = false;
    if (integral) {
        ds.data.labels.resize(rows.size());
    } else {
        ds.data.targets = Matrix(rows.size(), 1);
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) ds.data.features(i, j) = rows[i][j];
        if (integral)
            ds.data.labels[i] = static_cast<int>(rows[i].back());
        else
            ds.data.targets(i, 0) = rows[i].back();
    }
    return ds;
}

}  // namespace fedsim
