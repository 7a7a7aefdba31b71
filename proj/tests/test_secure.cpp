#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <map>

#include "fedsim/profile.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/secure.hpp"

using namespace fedsim;

namespace {

RepresentationProfile random_profile(std::size_t q, Rng& rng) {
    RepresentationProfile rp;
    for (std::size_t i = 0; i < q; ++i)
        rp.elements.push_back({rng.uniform(-3.0, 3.0), rng.uniform(0.2, 5.0)});
    return rp;
}

}  // namespace

TEST_CASE("encrypt_profile: restricted mode layout, full mode capability") {
    TransparentBackend backend;
    RepresentationProfile rp;
    rp.elements = {{1.0, 2.0}, {-0.5, 0.75}};
    const EncryptedProfile ep = encrypt_profile(rp, backend, HeMode::restricted);
    CHECK(ep.mu.size() == 2);
    CHECK(ep.var_plain.size() == 2);
    CHECK(ep.var_plain[0] == 2.0);  // variances stay plaintext
    CHECK(backend.decrypt(ep.mu[0]) == 1.0);
    CHECK(backend.decrypt(ep.mu[1]) == -0.5);

    CHECK_THROWS_AS(encrypt_profile(rp, backend, HeMode::full), CapabilityError);
}

TEST_CASE("encrypted divergence equals the plaintext canonical divergence") {
    Rng rng(3);
    TransparentBackend backend;

    RepresentationProfile a, b;
    a.elements = {{1.0, 1.0}};
    b.elements = {{0.0, 1.0}};
    auto ea = encrypt_profile(a, backend, HeMode::restricted);
    auto eb = encrypt_profile(b, backend, HeMode::restricted);
    CHECK(std::abs(backend.decrypt(encrypted_divergence(ea, eb, backend)) - 0.5) < 1e-9);

    const auto same = encrypt_profile(a, backend, HeMode::restricted);
    CHECK(std::abs(backend.decrypt(encrypted_divergence(ea, same, backend)) - 0.0) < 1e-9);

    for (int trial = 0; trial < 50; ++trial) {
        const RepresentationProfile pk = random_profile(32, rng);
        const RepresentationProfile pb = random_profile(32, rng);
        TransparentBackend be;
        const auto ek = encrypt_profile(pk, be, HeMode::restricted);
        const auto ebb = encrypt_profile(pb, be, HeMode::restricted);
        const double enc = be.decrypt(encrypted_divergence(ek, ebb, be));
        const double plain = profile_divergence(pk, pb, KlVariant::canonical);
        CHECK(std::abs(enc - plain) < 1e-9);
    }
}

TEST_CASE("audit passes compliant traces and rejects forbidden operations") {
    Rng rng(9);
    TransparentBackend backend;
    const auto pk = random_profile(8, rng);
    const auto pb = random_profile(8, rng);
    const auto ek = encrypt_profile(pk, backend, HeMode::restricted);
    const auto eb = encrypt_profile(pb, backend, HeMode::restricted);
    backend.clear_trace();
    const Cipher result = encrypted_divergence(ek, eb, backend);
    CHECK(audit_trace(backend.trace()));

    // A decrypt mid-computation fails the audit.
    auto with_decrypt = backend.trace();
    with_decrypt.insert(with_decrypt.begin() + 3, HeOp::decrypt);
    CHECK_FALSE(audit_trace(with_decrypt));

    // So does a ciphertext logarithm.
    auto with_log = backend.trace();
    with_log.push_back(HeOp::cipher_log);
    CHECK_FALSE(audit_trace(with_log));

    (void)result;
}

TEST_CASE("ciphertext operation count is O(q) with a fixed per-element multiset") {
    Rng rng(13);
    for (std::size_t q : {5u, 32u}) {
        TransparentBackend backend;
        const auto ek = encrypt_profile(random_profile(q, rng), backend, HeMode::restricted);
        const auto eb = encrypt_profile(random_profile(q, rng), backend, HeMode::restricted);
        backend.clear_trace();
        (void)encrypted_divergence(ek, eb, backend);
        std::map<HeOp, std::size_t> counts;
        for (HeOp op : backend.trace()) counts[op]++;
        CHECK(counts[HeOp::encrypt] == q);    // one per plaintext variance term
        CHECK(counts[HeOp::sub] == q);        // mu_k - mu_b
        CHECK(counts[HeOp::mul] == q);        // squared difference
        CHECK(counts[HeOp::scale] == q + 1);  // per-element 1/(2 sigma^2) plus final 1/q
        CHECK(counts[HeOp::add] == 2 * q - 1);
        CHECK(counts[HeOp::decrypt] == 0);
    }
}

TEST_CASE("encrypted divergence contract errors") {
    Rng rng(17);
    TransparentBackend backend;
    const auto e8 = encrypt_profile(random_profile(8, rng), backend, HeMode::restricted);
    const auto e9 = encrypt_profile(random_profile(9, rng), backend, HeMode::restricted);
    CHECK_THROWS_AS(encrypted_divergence(e8, e9, backend), ContractError);

    RepresentationProfile bad;
    bad.elements = {{0.0, -1.0}};
    const auto ebad = encrypt_profile(bad, backend, HeMode::restricted);
    CHECK_THROWS_AS(encrypted_divergence(ebad, ebad, backend), DomainError);
}
