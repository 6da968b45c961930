#include "initfeat/sae.hpp"

#include "oracles/oracles.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace initfeat;

namespace {

SaeParams hand_sae(float theta) {
    SaeParams p;
    p.d_model = 2;
    p.d_sae = 3;
    p.w_enc = {1, 0, 1, 0, 1, 1};  // rows are input dims
    p.b_enc = {0, 0, -0.5f};
    p.theta = {theta, theta, theta};
    p.w_dec = {1, 0, 0, 1, 1, 1};
    p.b_dec = {0.25f, -0.5f};
    return p;
}

double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num = std::max(num, std::abs(a[i] - b[i]));
        den = std::max(den, std::abs(b[i]));
    }
    return num / std::max(den, 1e-300);
}

}  // namespace

TEST_CASE("hand-computed encode") {
    const std::vector<float> h{1, 2};
    CHECK(encode(hand_sae(0.0f), h) == std::vector<double>{1, 2, 2.5});
    CHECK(encode(hand_sae(1.5f), h) == std::vector<double>{0, 2, 2.5});
    CHECK(pre_activations(hand_sae(1.5f), h) == std::vector<double>{1, 2, 2.5});
}

TEST_CASE("zero input below positive thresholds gives zero activations") {
    SaeParams p = hand_sae(0.1f);
    p.b_enc = {0, 0, 0};
    const std::vector<float> h{0, 0};
    CHECK(encode(p, h) == std::vector<double>{0, 0, 0});
}

TEST_CASE("gate is strict: ties map to zero") {
    SaeParams p = hand_sae(2.0f);  // z = [1, 2, 2.5]
    const auto a = encode(p, std::vector<float>{1, 2});
    CHECK(a[1] == 0.0);
    CHECK(a[2] == 2.5);
}

TEST_CASE("JumpReLU gate over 10,000 random (z, theta) pairs") {
    Rng rng(11);
    SaeParams p;
    p.d_model = 4;
    p.d_sae = 10000;
    p.w_enc.assign(p.d_model * p.d_sae, 0.0f);
    p.w_dec.assign(p.d_sae * p.d_model, 0.0f);
    p.b_dec.assign(p.d_model, 0.0f);
    for (std::size_t j = 0; j < p.d_sae; ++j) {
        const float z = static_cast<float>(rng.uniform(-1.0, 2.0));
        p.b_enc.push_back(z);
        p.theta.push_back(j % 10 == 0 ? std::max(z, 0.0f) : static_cast<float>(rng.uniform(0.0, 1.0)));
    }
    const auto a = encode(p, std::vector<float>(4, 0.0f));
    for (std::size_t j = 0; j < p.d_sae; ++j) {
        const double z = p.b_enc[j];
        if (z <= p.theta[j])
            CHECK(a[j] == 0.0);
        else
            CHECK(a[j] == z);
    }
}

TEST_CASE("encode and decode match dense oracles") {
    const SaeParams p = testsupport::random_sae(5, 16, 48);
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const auto h = testsupport::random_vec(rng, 16);
        const auto a = encode(p, h);
        const auto a_ref = oracle::encode(p.w_enc, p.b_enc, p.theta, 16, 48, h.data());
        for (std::size_t j = 0; j < a.size(); ++j) {
            CHECK(a[j] == doctest::Approx(a_ref[j]).epsilon(1e-12));
            CHECK((a[j] > 0.0) == (a_ref[j] > 0.0));
        }
        CHECK(rel_err(decode(p, std::span<const double>(a)), oracle::decode(p.w_dec, p.b_dec, 16, a)) < 1e-12);
    }
}

TEST_CASE("decode basics and linearity") {
    const SaeParams p = testsupport::random_sae(8, 8, 24);
    std::vector<double> zero(24, 0.0);
    const auto base = decode(p, std::span<const double>(zero));
    for (std::size_t i = 0; i < 8; ++i) CHECK(base[i] == static_cast<double>(p.b_dec[i]));

    std::vector<double> one = zero;
    one[5] = 1.0;
    const auto row = decode(p, std::span<const double>(one));
    for (std::size_t i = 0; i < 8; ++i)
        CHECK(row[i] == doctest::Approx(static_cast<double>(p.dec_row(5)[i]) + p.b_dec[i]));

    Rng rng(9);
    std::vector<double> a1(24), a2(24), s(24);
    for (std::size_t j = 0; j < 24; ++j) {
        a1[j] = rng.uniform() < 0.3 ? rng.uniform(0.1, 3.0) : 0.0;
        a2[j] = rng.uniform() < 0.3 ? rng.uniform(0.1, 3.0) : 0.0;
        s[j] = a1[j] + a2[j];
    }
    const auto d1 = decode(p, std::span<const double>(a1));
    const auto d2 = decode(p, std::span<const double>(a2));
    const auto ds = decode(p, std::span<const double>(s));
    std::vector<double> lhs(8), rhs(8);
    for (std::size_t i = 0; i < 8; ++i) {
        lhs[i] = ds[i] - p.b_dec[i];
        rhs[i] = (d1[i] - p.b_dec[i]) + (d2[i] - p.b_dec[i]);
    }
    CHECK(rel_err(lhs, rhs) < 1e-6);
}

TEST_CASE("sparse and dense views agree") {
    const SaeParams p = testsupport::random_sae(12, 16, 64);
    Rng rng(13);
    for (int trial = 0; trial < 10; ++trial) {
        const auto a = encode(p, testsupport::random_vec(rng, 16));
        const auto sp = to_sparse(a);
        for (std::size_t k = 0; k < sp.index.size(); ++k) {
            CHECK(sp.value[k] > 0.0);
            if (k) CHECK(sp.index[k] > sp.index[k - 1]);
        }
        CHECK(to_dense(sp) == a);
        CHECK(decode(p, sp) == decode(p, std::span<const double>(a)));
    }
    SparseActivations bad{64, {3, 3}, {1.0, 1.0}};
    CHECK_THROWS_AS(decode(p, bad), DataError);
}

TEST_CASE("exact autoencoder on a two-dimensional subspace") {
    Rng rng(21);
    const std::size_t d = 8;
    // Orthonormal e1, e2.
    std::vector<double> e1(d), e2(d);
    for (auto& x : e1) x = rng.normal();
    for (auto& x : e2) x = rng.normal();
    auto normalize = [](std::vector<double>& v) {
        double n = 0;
        for (double x : v) n += x * x;
        for (double& x : v) x /= std::sqrt(n);
    };
    normalize(e1);
    double c = 0;
    for (std::size_t i = 0; i < d; ++i) c += e1[i] * e2[i];
    for (std::size_t i = 0; i < d; ++i) e2[i] -= c * e1[i];
    normalize(e2);

    SaeParams p;
    p.d_model = d;
    p.d_sae = d;
    p.w_enc.assign(d * d, 0.0f);
    p.w_dec.assign(d * d, 0.0f);
    p.b_enc.assign(d, 0.0f);
    p.theta.assign(d, 0.0f);
    p.b_dec.assign(d, 0.0f);
    const std::vector<std::pair<const std::vector<double>*, float>> feats{{&e1, 1}, {&e1, -1}, {&e2, 1}, {&e2, -1}};
    for (std::size_t j = 0; j < feats.size(); ++j)
        for (std::size_t i = 0; i < d; ++i) {
            const float v = feats[j].second * static_cast<float>((*feats[j].first)[i]);
            p.w_enc[i * d + j] = v;
            p.w_dec[j * d + i] = v;
        }
    for (int trial = 0; trial < 50; ++trial) {
        const double x = rng.normal(), y = rng.normal();
        std::vector<float> h(d);
        for (std::size_t i = 0; i < d; ++i) h[i] = static_cast<float>(x * e1[i] + y * e2[i]);
        CHECK(reconstruct(p, h).error <= 1e-5);
    }
}

TEST_CASE("square identity SAE reconstructs positive inputs exactly") {
    SaeParams p;
    p.d_model = p.d_sae = 4;
    p.w_enc.assign(16, 0.0f);
    p.w_dec.assign(16, 0.0f);
    for (std::size_t i = 0; i < 4; ++i) p.w_enc[i * 4 + i] = p.w_dec[i * 4 + i] = 1.0f;
    p.b_enc.assign(4, 0.0f);
    p.theta.assign(4, 0.0f);
    p.b_dec = {0.5f, -1.0f, 0.0f, 2.0f};
    const std::vector<double> h{0.5, 1.0, 3.0, 0.25};
    const auto r = reconstruct(p, std::span<const double>(h));
    for (std::size_t i = 0; i < 4; ++i) CHECK(r.h_hat[i] == h[i] + p.b_dec[i]);
}

TEST_CASE("reconstruction is deterministic") {
    const SaeParams p = testsupport::random_sae(30, 16, 32);
    Rng rng(31);
    const auto h = testsupport::random_vec(rng, 16);
    const auto r1 = reconstruct(p, h), r2 = reconstruct(p, h);
    CHECK(std::isfinite(r1.error));
    CHECK(r1.error == r2.error);
    CHECK(r1.h_hat == r2.h_hat);
}

TEST_CASE("dimension mismatch and invalid parameters are rejected") {
    const SaeParams p = testsupport::random_sae(1, 8, 16);
    CHECK_THROWS_AS(encode(p, std::vector<float>(7)), DataError);
    CHECK_THROWS_AS(decode(p, std::span<const double>(std::vector<double>(15))), DataError);
    SaeParams q = p;
    q.theta[0] = -1.0f;
    CHECK_THROWS_AS(q.validate(), DataError);
    q = p;
    q.d_sae = 4;
    CHECK_THROWS_AS(q.validate(), DataError);
}

TEST_CASE("subset encoder matches the full encode bitwise") {
    const SaeParams p = testsupport::random_sae(40, 16, 64);
    const std::vector<std::uint32_t> feats{0, 7, 33, 63};
    const SubsetEncoder se(p, feats);
    Rng rng(41);
    for (int trial = 0; trial < 20; ++trial) {
        const auto h = testsupport::random_vec(rng, 16);
        const auto full = encode(p, h);
        const auto sub = se.encode(h);
        for (std::size_t k = 0; k < feats.size(); ++k) CHECK(sub[k] == full[feats[k]]);
    }
}

TEST_CASE("weights file round trip and missing theta") {
    testsupport::TempDir dir("sae_io");
    const SaeParams p = testsupport::random_sae(2, 8, 16, 12);
    save_sae(p, sae_file(dir.path(), 12));
    const SaeParams q = load_sae(sae_file(dir.path(), 12), 12);
    CHECK(q.w_enc == p.w_enc);
    CHECK(q.theta == p.theta);
    CHECK(q.w_dec == p.w_dec);
    CHECK(q.b_dec == p.b_dec);

    write_container({{"w_enc", Tensor({8, 16}, p.w_enc)},
                     {"b_enc", Tensor({16}, p.b_enc)},
                     {"w_dec", Tensor({16, 8}, p.w_dec)},
                     {"b_dec", Tensor({8}, p.b_dec)}},
                    {}, dir.path() / "nothreshold.bin");
    const SaeParams r = load_sae(dir.path() / "nothreshold.bin", 0);
    CHECK(r.theta == std::vector<float>(16, 0.0f));
}
