#include <cmath>
#include <vector>

#include "doctest.h"
#include "mbsl/errors.hpp"
#include "mbsl/mstransform.hpp"
#include "mbsl/rng.hpp"
#include "mbsl/tensor.hpp"

using namespace mbsl;

TEST_CASE("mask ratio zero is the identity") {
    Tape tape(false);
    Tensor x = Tensor::from_data({1, 4}, {1, 2, 3, 4});
    Tensor y = mask(tape, x, 0.0, 123);
    CHECK(y.id() == x.id());
}

TEST_CASE("masked fraction concentrates around the ratio") {
    const int len = 100000;
    for (double ratio : {0.05, 0.10, 0.15}) {
        auto m = mask_vector(len, ratio, 2024);
        double zeros = 0;
        for (double v : m) zeros += (v == 0.0) ? 1 : 0;
        CHECK(std::fabs(zeros / len - ratio) <= 0.01);
    }
}

TEST_CASE("same seed gives the same mask, masks are channel-shared") {
    Tape tape(false);
    Rng rng(5);
    Tensor x = Tensor::zeros({3, 64});
    for (double& v : x.data()) v = rng.uniform(0.5, 1.5);
    Tensor a = mask(tape, x, 0.3, 99);
    Tensor b = mask(tape, x, 0.3, 99);
    CHECK(a.data() == b.data());
    // channel-shared: a timestamp is zeroed in all channels or none
    for (int t = 0; t < 64; ++t) {
        const bool z0 = a.data()[t] == 0.0;
        CHECK((a.data()[64 + t] == 0.0) == z0);
        CHECK((a.data()[128 + t] == 0.0) == z0);
    }
    CHECK_THROWS_AS(mask(tape, x, 1.0, 0), ParameterError);
    CHECK_THROWS_AS(mask(tape, x, -0.1, 0), ParameterError);
}

TEST_CASE("patch token counts follow floor(L/P)") {
    Tape tape(false);
    // fs = 125, L = 1000: paper patch lengths 5/10/20 give 200/100/50 tokens
    Tensor x = Tensor::zeros({1, 1000});
    CHECK(patch(tape, x, 5).num_tokens() == 200);
    CHECK(patch(tape, x, 10).num_tokens() == 100);
    CHECK(patch(tape, x, 20).num_tokens() == 50);

    Tensor small = Tensor::from_data({1, 6}, {1, 2, 3, 4, 5, 6});
    TokenSequence whole = patch(tape, small, 6);
    CHECK(whole.num_tokens() == 1);
    CHECK(whole.tokens.data() == small.data());

    CHECK_THROWS_AS(patch(tape, small, 7), ParameterError);
}

TEST_CASE("concatenating tokens reproduces the first T*P samples") {
    Tape tape(false);
    Rng rng(31);
    Tensor x = Tensor::zeros({2, 11});
    for (double& v : x.data()) v = rng.uniform(-1, 1);
    TokenSequence ts = patch(tape, x, 3);  // T = 3, drops 2 samples
    REQUIRE(ts.num_tokens() == 3);
    for (int c = 0; c < 2; ++c) {
        for (int i = 0; i < 9; ++i) {
            CHECK(ts.tokens.data()[static_cast<std::size_t>(c) * 9 + i] ==
                  x.data()[static_cast<std::size_t>(c) * 11 + i]);
        }
    }
}

TEST_CASE("default scales follow the published pairing") {
    auto scales = default_scales(125.0);
    REQUIRE(scales.size() == 3);
    CHECK(scales[0].patch_len == 5);
    CHECK(scales[1].patch_len == 10);
    CHECK(scales[2].patch_len == 20);
    CHECK(scales[0].mask_ratio == 0.05);
    CHECK(scales[1].mask_ratio == 0.10);
    CHECK(scales[2].mask_ratio == 0.15);
}

TEST_CASE("transform_multiscale token counts and eval determinism") {
    Tape tape(false);
    Rng rng(7);
    Tensor x = Tensor::zeros({1, 1000});
    for (double& v : x.data()) v = rng.uniform(-1, 1);
    auto scales = default_scales(125.0);

    auto out = transform_multiscale(tape, x, scales, 42, true);
    REQUIRE(out.size() == 3);
    CHECK(out[0].num_tokens() == 200);
    CHECK(out[1].num_tokens() == 100);
    CHECK(out[2].num_tokens() == 50);

    // evaluation mode is seed-independent and mask-free
    auto eval1 = transform_multiscale(tape, x, scales, 1, false);
    auto eval2 = transform_multiscale(tape, x, scales, 2, false);
    for (std::size_t s = 0; s < 3; ++s) {
        CHECK(eval1[s].tokens.data() == eval2[s].tokens.data());
    }

    CHECK_THROWS_AS(transform_multiscale(tape, x, {}, 0, true), ParameterError);
}

TEST_CASE("masking commutes with patching") {
    Tape tape(false);
    Rng rng(17);
    const int channels = 2, len = 103, patch_len = 4;
    const double ratio = 0.25;
    const std::uint64_t seed = 777;

    Tensor x = Tensor::zeros({channels, len});
    for (double& v : x.data()) v = rng.uniform(-2, 2);

    // patch(mask(x)) == patch(x) * patch(m), bit-exact
    Tensor masked = mask(tape, x, ratio, seed);
    TokenSequence left = patch(tape, masked, patch_len);

    auto mvec = mask_vector(len, ratio, seed);
    Tensor m = Tensor::zeros({channels, len});
    for (int c = 0; c < channels; ++c) {
        for (int t = 0; t < len; ++t) {
            m.data()[static_cast<std::size_t>(c) * len + t] = mvec[static_cast<std::size_t>(t)];
        }
    }
    TokenSequence xp = patch(tape, x, patch_len);
    TokenSequence mp = patch(tape, m, patch_len);
    Tensor right = mul(tape, xp.tokens, mp.tokens);

    REQUIRE(left.tokens.size() == right.size());
    CHECK(left.tokens.data() == right.data());
}

TEST_CASE("fraction of fully unmasked tokens matches (1-MR)^P") {
    const int len = 120000, patch_len = 4;
    const double ratio = 0.1;
    auto m = mask_vector(len, ratio, 4242);
    const int tokens = len / patch_len;
    int clean = 0;
    for (int t = 0; t < tokens; ++t) {
        bool all = true;
        for (int p = 0; p < patch_len; ++p) all = all && m[static_cast<std::size_t>(t) * patch_len + p] == 1.0;
        clean += all ? 1 : 0;
    }
    const double expected = std::pow(1.0 - ratio, patch_len);
    const double sigma = std::sqrt(expected * (1.0 - expected) / tokens);
    CHECK(std::fabs(static_cast<double>(clean) / tokens - expected) <= 3.0 * sigma);
}
