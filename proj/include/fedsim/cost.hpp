#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "fedsim/common.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

// Per-client device capabilities.
struct DeviceSpec {
    double compute_ghz = 0.5;
    double bandwidth_mhz = 0.7;
    double snr_db = 7.0;
    double bits_per_sample = 352.0;  // 11 * 8 * 4
    double cycles_per_bit = 300.0;
};

struct PowerModel {
    double p_trans_w = 0.75;  // transmitter power
    double p_f_w = 0.7;       // baseline processor power at 1 GHz
};

inline double snr_linear(double snr_db) { return std::pow(10.0, snr_db / 10.0); }

// Downlink throughput in Mbit/s: bw (MHz) * log2(1 + SNR).
inline double downlink_mbit_s(const DeviceSpec& dev) {
    return dev.bandwidth_mhz * std::log2(1.0 + snr_linear(dev.snr_db));
}

// Download + upload time for one model exchange; the uplink runs at half the
// downlink bandwidth, so upload costs twice the download.
inline double comm_time(double msize_mbit, const DeviceSpec& dev) {
    return 3.0 * msize_mbit / downlink_mbit_s(dev);
}

// E epochs of local training over n samples.
inline double train_time(std::size_t epochs, std::size_t n_samples, const DeviceSpec& dev) {
    if (epochs < 1) throw ContractError("train_time: epochs must be >= 1");
    if (n_samples < 1) throw ContractError("train_time: n_samples must be >= 1");
    return static_cast<double>(epochs) * static_cast<double>(n_samples) * dev.bits_per_sample *
           dev.cycles_per_bit / (dev.compute_ghz * 1e9);
}

// Profile payload in Mbit: 8 bytes per element.
inline double rp_size_mbit(std::size_t q) {
    return 8.0 * static_cast<double>(q) * 8.0 / 1e6;
}

// Model payload in Mbit: float32 parameters.
inline double model_size_mbit(std::size_t parameter_count) {
    return static_cast<double>(parameter_count) * 4.0 * 8.0 / 1e6;
}

// Profile generation is charged as one training epoch; the upload runs on the
// uplink (half the downlink bandwidth).
inline double rp_gen_time(double train_time_value, std::size_t epochs) {
    if (epochs < 1) throw ContractError("rp_gen_time: epochs must be >= 1");
    return train_time_value / static_cast<double>(epochs);
}

inline double rp_upload_time(double rp_mbit, const DeviceSpec& dev) {
    return rp_mbit / (0.5 * downlink_mbit_s(dev));
}

inline double rp_time(double train_time_value, std::size_t epochs, double rp_mbit,
                      const DeviceSpec& dev) {
    return rp_gen_time(train_time_value, epochs) + rp_upload_time(rp_mbit, dev);
}

// One client's time components for a round, in seconds. rp components stay
// zero for strategies that do not exchange profiles.
struct ClientRoundTimes {
    double comm_s = 0.0;
    double train_s = 0.0;
    double rp_gen_s = 0.0;
    double rp_upload_s = 0.0;

    double rp_s() const { return rp_gen_s + rp_upload_s; }
    double total_s() const { return comm_s + train_s + rp_s(); }
};

// Round length: the slowest selected client gates the round.
inline double round_time(const std::vector<ClientRoundTimes>& selected) {
    if (selected.empty()) throw ContractError("round_time: empty selected set");
    double mx = 0.0;
    for (const auto& t : selected) mx = std::max(mx, t.total_s());
    return mx;
}

// Device-side energy for one round, in Wh. Compute power scales with the cube
// of the clock relative to the 1 GHz baseline.
inline double client_energy_wh(const ClientRoundTimes& times, const DeviceSpec& dev,
                               const PowerModel& power, bool strategy_uses_rp) {
    const double s3 = dev.compute_ghz * dev.compute_ghz * dev.compute_ghz;
    double joules = power.p_trans_w * times.comm_s + power.p_f_w * s3 * times.train_s;
    if (strategy_uses_rp)
        joules += power.p_trans_w * times.rp_upload_s + power.p_f_w * s3 * times.rp_gen_s;
    return joules / 3600.0;
}

// --- Cost ledger -------------------------------------------------------------

struct ClientCost {
    std::size_t client_id = 0;
    ClientRoundTimes times;
    double energy_wh = 0.0;
};

struct RoundCost {
    std::size_t round = 0;
    double round_time_s = 0.0;
    std::vector<ClientCost> clients;  // selected clients, in client-id order
};

struct CostTotals {
    double time_s = 0.0;
    double energy_wh = 0.0;
    double comm_s = 0.0;
    double train_s = 0.0;
    double rp_s = 0.0;
};

// Accumulates per-round cost records. Totals are recomputed from the records
// in round order on every call, so they do not depend on how rounds were
// batched into the ledger.
class CostLedger {
public:
    void add(RoundCost rc) { rounds_[rc.round] = std::move(rc); }

    void merge(const CostLedger& other) {
        for (const auto& [r, rc] : other.rounds_) rounds_[r] = rc;
    }

    std::size_t n_rounds() const { return rounds_.size(); }

    const std::map<std::size_t, RoundCost>& rounds() const { return rounds_; }

    // Totals accumulate per-round subtotals in round order, matching how the
    // trace rows are produced, so they agree with trace sums bit-exactly.
    CostTotals totals() const {
        CostTotals t;
        for (const auto& [r, rc] : rounds_) {
            t.time_s += rc.round_time_s;
            double energy = 0.0, comm = 0.0, train = 0.0, rp = 0.0;
            for (const auto& c : rc.clients) {
                energy += c.energy_wh;
                comm += c.times.comm_s;
                train += c.times.train_s;
                rp += c.times.rp_s();
            }
            t.energy_wh += energy;
            t.comm_s += comm;
            t.train_s += train;
            t.rp_s += rp;
        }
        return t;
    }

private:
    std::map<std::size_t, RoundCost> rounds_;
};

// Gaussian device-population laws; draws are clamped to a small positive
// floor so a tail sample cannot produce a non-physical device.
struct DeviceLaw {
    double compute_ghz_mean = 0.5;
    double compute_ghz_std = 0.1;
    double bandwidth_mhz_mean = 0.7;
    double bandwidth_mhz_std = 0.1;
    double snr_db = 7.0;
    double bits_per_sample = 352.0;
    double cycles_per_bit = 300.0;
};

inline std::vector<DeviceSpec> sample_devices(std::size_t n, const DeviceLaw& law,
                                              std::uint64_t seed) {
    Rng rng(mix_seed(0xdecULL, seed));
    std::vector<DeviceSpec> devs(n);
    auto clamped = [&](double mean, double std) {
        return std::max(rng.normal(mean, std), std::max(0.05 * mean, 1e-3));
    };
    for (auto& d : devs) {
        d.compute_ghz = clamped(law.compute_ghz_mean, law.compute_ghz_std);
        d.bandwidth_mhz = clamped(law.bandwidth_mhz_mean, law.bandwidth_mhz_std);
        d.snr_db = law.snr_db;
        d.bits_per_sample = law.bits_per_sample;
        d.cycles_per_bit = law.cycles_per_bit;
    }
    return devs;
}

}  // namespace fedsim
