#pragma once

#include <cstdint>
#include <vector>

#include "mbsl/tensor.hpp"

namespace mbsl {

// One masking/patching scale: patch_len samples per token, mask_ratio the
// Bernoulli probability of zeroing a timestamp during training.
struct ScaleSpec {
    int patch_len = 1;
    double mask_ratio = 0.0;
};

void validate(const ScaleSpec& s);

// Paper defaults: patch lengths 0.04/0.08/0.16 * fs paired with mask ratios
// 0.05/0.10/0.15, small patch with small ratio.
std::vector<ScaleSpec> default_scales(double fs);

struct TokenSequence {
    Tensor tokens;  // [C x T x patch_len], T = floor(L / patch_len)
    ScaleSpec scale;

    int num_tokens() const { return tokens.dim(1); }
};

// Bernoulli keep/drop vector over L timestamps: 0 with probability mask_ratio.
std::vector<double> mask_vector(int len, double mask_ratio, std::uint64_t seed);

// Zeroes masked timestamps of x [C x L]; one mask shared by all channels.
// mask_ratio 0 returns x untouched.
Tensor mask(Tape& tape, const Tensor& x, double mask_ratio, std::uint64_t seed);

// Splits x [C x L] into non-overlapping tokens; remainder shorter than
// patch_len is dropped.
TokenSequence patch(Tape& tape, const Tensor& x, int patch_len);

// Per scale: mask (training only) then patch, each scale with its own
// sub-seed. Evaluation mode ignores the seed entirely.
std::vector<TokenSequence> transform_multiscale(Tape& tape, const Tensor& x,
                                                const std::vector<ScaleSpec>& scales,
                                                std::uint64_t seed, bool training);

}  // namespace mbsl
