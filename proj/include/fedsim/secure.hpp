#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fedsim/common.hpp"
#include "fedsim/profile.hpp"

namespace fedsim {

enum class HeOp { encrypt, decrypt, add, sub, mul, scale, cipher_log };

inline const char* to_string(HeOp op) {
    switch (op) {
        case HeOp::encrypt: return "encrypt";
        case HeOp::decrypt: return "decrypt";
        case HeOp::add: return "add";
        case HeOp::sub: return "sub";
        case HeOp::mul: return "mul";
        case HeOp::scale: return "scale";
        case HeOp::cipher_log: return "cipher_log";
    }
    return "?";
}

// Opaque ciphertext handle.
struct Cipher {
    double value = 0.0;  // transparent reference backend: plaintext carried along
};

// Reference homomorphic backend: arithmetic is exact (it operates on the
// wrapped plaintext), and every operation is recorded so the computation
// structure can be audited. A real additive/multiplicative HE scheme can be
// swapped in behind the same surface.
class TransparentBackend {
public:
    Cipher encrypt(double x) {
        trace_.push_back(HeOp::encrypt);
        return {x};
    }

    double decrypt(const Cipher& c) {
        trace_.push_back(HeOp::decrypt);
        return c.value;
    }

    Cipher add(const Cipher& a, const Cipher& b) {
        trace_.push_back(HeOp::add);
        return {a.value + b.value};
    }

    Cipher sub(const Cipher& a, const Cipher& b) {
        trace_.push_back(HeOp::sub);
        return {a.value - b.value};
    }

    Cipher mul(const Cipher& a, const Cipher& b) {
        trace_.push_back(HeOp::mul);
        return {a.value * b.value};
    }

    Cipher scale(double plain, const Cipher& c) {
        trace_.push_back(HeOp::scale);
        return {plain * c.value};
    }

    // Most arithmetic HE schemes cannot take logarithms of ciphertext; neither
    // does the reference backend.
    bool supports_cipher_log() const { return false; }

    const std::vector<HeOp>& trace() const { return trace_; }
    void clear_trace() { trace_.clear(); }

private:
    std::vector<HeOp> trace_;
};

enum class HeMode { restricted, full };

// Encrypted profile. Restricted mode keeps the variances in plaintext so the
// divergence needs only additive/multiplicative ciphertext operations.
struct EncryptedProfile {
    HeMode mode = HeMode::restricted;
    std::vector<Cipher> mu;
    std::vector<double> var_plain;  // restricted mode only
    std::uint32_t version = 0;
};

inline EncryptedProfile encrypt_profile(const RepresentationProfile& rp,
                                        TransparentBackend& backend, HeMode mode) {
    if (rp.length() == 0) throw ContractError("encrypt_profile: empty profile");
    if (mode == HeMode::full && !backend.supports_cipher_log())
        throw CapabilityError(
            "encrypt_profile: full mode needs ciphertext logarithms, which this backend "
            "does not provide");
    EncryptedProfile ep;
    ep.mode = mode;
    ep.version = rp.version;
    ep.mu.reserve(rp.length());
    ep.var_plain.reserve(rp.length());
    for (const auto& e : rp.elements) {
        ep.mu.push_back(backend.encrypt(e.mu));
        ep.var_plain.push_back(e.var);
    }
    return ep;
}

// Mean per-element KL divergence computed under encryption. Per element the
// variance-only part is computed in plaintext and encrypted; the squared mean
// difference is built from the mu ciphertexts with sub/mul/scale. Decrypting
// the result reproduces the plaintext canonical profile divergence.
inline Cipher encrypted_divergence(const EncryptedProfile& ep_k, const EncryptedProfile& ep_b,
                                   TransparentBackend& backend) {
    if (ep_k.mode != HeMode::restricted || ep_b.mode != HeMode::restricted)
        throw ContractError("encrypted_divergence: both profiles must use restricted mode");
    if (ep_k.mu.size() != ep_b.mu.size())
        throw ContractError("encrypted_divergence: profile lengths disagree");
    const std::size_t q = ep_k.mu.size();
    if (q == 0) throw ContractError("encrypted_divergence: empty profiles");

    Cipher sum{};
    bool first = true;
    for (std::size_t i = 0; i < q; ++i) {
        const double vk = detail::checked_var({0.0, ep_k.var_plain[i]}, "client");
        const double vb = detail::checked_var({0.0, ep_b.var_plain[i]}, "baseline");
        const double plain_term = 0.5 * std::log(vb / vk) + 0.5 * (vk / vb) - 0.5;
        const Cipher enc_term = backend.encrypt(plain_term);
        const Cipher diff = backend.sub(ep_k.mu[i], ep_b.mu[i]);
        const Cipher sq = backend.mul(diff, diff);
        const Cipher scaled = backend.scale(1.0 / (2.0 * vb), sq);
        const Cipher elem = backend.add(enc_term, scaled);
        sum = first ? elem : backend.add(sum, elem);
        first = false;
    }
    return backend.scale(1.0 / static_cast<double>(q), sum);
}

// The trace of a compliant divergence computation contains only arithmetic
// ciphertext operations: no decryption mid-computation, no ciphertext logs.
inline bool audit_trace(const std::vector<HeOp>& trace) {
    for (HeOp op : trace) {
        switch (op) {
            case HeOp::encrypt:
            case HeOp::add:
            case HeOp::sub:
            case HeOp::mul:
            case HeOp::scale: continue;
            case HeOp::decrypt:
            case HeOp::cipher_log: return false;
        }
    }
    return true;
}

}  // namespace fedsim
