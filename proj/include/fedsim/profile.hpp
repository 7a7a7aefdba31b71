#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fedsim/common.hpp"
#include "fedsim/data.hpp"
#include "fedsim/nn.hpp"

namespace fedsim {

struct GaussianParam {
    double mu = 0.0;
    double var = 0.0;

    bool operator==(const GaussianParam&) const = default;
};

// Distributional summary of one layer's representations on one dataset:
// an ordered list of per-element (mean, variance) pairs.
struct RepresentationProfile {
    std::vector<GaussianParam> elements;
    std::uint32_t version = 0;
    std::int64_t owner = -1;

    std::size_t length() const { return elements.size(); }
};

enum class KlVariant {
    canonical,  // includes the -1/2 term; a true KL divergence
    simplified,  // drops the -1/2; offset by exactly +0.5 from canonical
};

// Mean and population variance (denominator n) per captured element.
inline RepresentationProfile generate_profile(const Model& model, const LocalDataset& ds,
                                              const CaptureSelector& sel, std::uint32_t version) {
    if (ds.size() == 0) throw ContractError("generate_profile: empty dataset");
    const Matrix captured = forward_capture(model, ds.data, sel).captured;
    const std::size_t n = captured.rows();
    const std::size_t q = captured.cols();
    RepresentationProfile rp;
    rp.version = version;
    rp.owner = static_cast<std::int64_t>(ds.client_id);
    rp.elements.resize(q);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j < q; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += captured(i, j);
        mean *= inv_n;
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = captured(i, j) - mean;
            var += d * d;
        }
        var *= inv_n;
        rp.elements[j] = {mean, var};
    }
    return rp;
}

namespace detail {

// Constant representations produce variance 0; clamp only inside the KL so
// the stored profile keeps the true value.
constexpr double kKlVarFloor = 1e-8;

inline double checked_var(const GaussianParam& g, const char* side) {
    if (!std::isfinite(g.var) || !std::isfinite(g.mu) || g.var < 0.0)
        throw DomainError(std::string("gaussian_kl: invalid variance on ") + side +
                          " element (var=" + std::to_string(g.var) + ")");
    return std::max(g.var, kKlVarFloor);
}

inline double kl_shared_term(const GaussianParam& p, const GaussianParam& q) {
    const double vp = checked_var(p, "lhs");
    const double vq = checked_var(q, "rhs");
    return 0.5 * std::log(vq / vp) + (vp + (p.mu - q.mu) * (p.mu - q.mu)) / (2.0 * vq);
}

}  // namespace detail

// KL(N(p) || N(q)) for scalar Gaussians. The simplified variant equals
// canonical + 0.5 identically.
inline double gaussian_kl(const GaussianParam& p, const GaussianParam& q, KlVariant variant) {
    const double s = detail::kl_shared_term(p, q);
    return variant == KlVariant::canonical ? s - 0.5 : s;
}

// Mean per-element KL between two equal-length, equal-version profiles.
inline double profile_divergence(const RepresentationProfile& rp_k,
                                 const RepresentationProfile& rp_b, KlVariant variant) {
    if (rp_k.length() != rp_b.length())
        throw ContractError("profile_divergence: profile lengths disagree (" +
                            std::to_string(rp_k.length()) + " vs " +
                            std::to_string(rp_b.length()) + ")");
    if (rp_k.length() == 0) throw ContractError("profile_divergence: empty profiles");
    if (rp_k.version != rp_b.version)
        throw StalenessError("profile_divergence: version mismatch (" +
                             std::to_string(rp_k.version) + " vs " +
                             std::to_string(rp_b.version) + ")");
    double sum = 0.0;
    for (std::size_t i = 0; i < rp_k.length(); ++i)
        sum += gaussian_kl(rp_k.elements[i], rp_b.elements[i], variant);
    return sum / static_cast<double>(rp_k.length());
}

// --- Wire format -------------------------------------------------------------
// 8-byte header: magic "FPRP", u16 version, u16 q; then q little-endian
// (float32 mu, float32 var) pairs -> 8 + 8q bytes total.

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
}

inline std::uint16_t get_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline float get_f32(const std::uint8_t* p) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return std::bit_cast<float>(bits);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_profile(const RepresentationProfile& rp) {
    if (rp.length() == 0 || rp.length() > 0xffff)
        throw FormatError("encode_profile: q must lie in [1, 65535]");
    if (rp.version > 0xffff)
        throw FormatError("encode_profile: version does not fit the u16 wire field");
    for (const auto& e : rp.elements)
        if (!std::isfinite(e.mu) || !std::isfinite(e.var))
            throw FormatError("encode_profile: non-finite element");
    std::vector<std::uint8_t> out;
    out.reserve(8 + 8 * rp.length());
    out.push_back('F');
    out.push_back('P');
    out.push_back('R');
    out.push_back('P');
    detail::put_u16(out, static_cast<std::uint16_t>(rp.version));
    detail::put_u16(out, static_cast<std::uint16_t>(rp.length()));
    for (const auto& e : rp.elements) {
        detail::put_f32(out, static_cast<float>(e.mu));
        detail::put_f32(out, static_cast<float>(e.var));
    }
    return out;
}

inline RepresentationProfile decode_profile(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8) throw FormatError("decode_profile: truncated header");
    if (bytes[0] != 'F' || bytes[1] != 'P' || bytes[2] != 'R' || bytes[3] != 'P')
        throw FormatError("decode_profile: bad magic");
    RepresentationProfile rp;
    rp.version = detail::get_u16(&bytes[4]);
    const std::size_t q = detail::get_u16(&bytes[6]);
    if (q == 0) throw FormatError("decode_profile: zero-length profile");
    if (bytes.size() != 8 + 8 * q)
        throw FormatError("decode_profile: payload size mismatch (expected " +
                          std::to_string(8 + 8 * q) + " bytes, got " +
                          std::to_string(bytes.size()) + ")");
    rp.elements.resize(q);
    for (std::size_t i = 0; i < q; ++i) {
        rp.elements[i].mu = detail::get_f32(&bytes[8 + 8 * i]);
        rp.elements[i].var = detail::get_f32(&bytes[8 + 8 * i + 4]);
    }
    return rp;
}

}  // namespace fedsim
