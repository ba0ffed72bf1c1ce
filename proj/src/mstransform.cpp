#include "mbsl/mstransform.hpp"

#include <cmath>
#include <string>

#include "mbsl/errors.hpp"
#include "mbsl/rng.hpp"

namespace mbsl {

void validate(const ScaleSpec& s) {
    if (s.patch_len < 1) throw ParameterError("scale: patch_len must be >= 1");
    if (s.mask_ratio < 0.0 || s.mask_ratio >= 1.0) {
        throw ParameterError("scale: mask_ratio must lie in [0, 1)");
    }
}

std::vector<ScaleSpec> default_scales(double fs) {
    if (fs <= 0.0) throw ParameterError("default_scales: fs must be positive");
    auto patch = [fs](double factor) {
        int p = static_cast<int>(std::llround(factor * fs));
        return p < 1 ? 1 : p;
    };
    return {{patch(0.04), 0.05}, {patch(0.08), 0.10}, {patch(0.16), 0.15}};
}

std::vector<double> mask_vector(int len, double mask_ratio, std::uint64_t seed) {
    if (mask_ratio < 0.0 || mask_ratio >= 1.0) {
        throw ParameterError("mask: mask_ratio must lie in [0, 1)");
    }
    Rng rng(seed);
    std::vector<double> m(static_cast<std::size_t>(len), 1.0);
    for (double& v : m) {
        if (rng.uniform() < mask_ratio) v = 0.0;
    }
    return m;
}

Tensor mask(Tape& tape, const Tensor& x, double mask_ratio, std::uint64_t seed) {
    if (x.ndim() != 2) throw DimensionError("mask: input must be [C x L]");
    if (mask_ratio < 0.0 || mask_ratio >= 1.0) {
        throw ParameterError("mask: mask_ratio must lie in [0, 1)");
    }
    if (mask_ratio == 0.0) return x;

    const int channels = x.dim(0);
    const int len = x.dim(1);
    const std::vector<double> m = mask_vector(len, mask_ratio, seed);
    Tensor mask_tensor = Tensor::zeros({channels, len});
    auto& mv = mask_tensor.data();
    for (int c = 0; c < channels; ++c) {
        for (int t = 0; t < len; ++t) mv[static_cast<std::size_t>(c) * len + t] = m[static_cast<std::size_t>(t)];
    }
    return mul(tape, x, mask_tensor);
}

TokenSequence patch(Tape& tape, const Tensor& x, int patch_len) {
    if (x.ndim() != 2) throw DimensionError("patch: input must be [C x L]");
    if (patch_len < 1) throw ParameterError("patch: patch_len must be >= 1");
    if (x.dim(1) < patch_len) {
        throw ParameterError("patch: window length " + std::to_string(x.dim(1)) +
                             " shorter than patch_len " + std::to_string(patch_len));
    }
    TokenSequence ts;
    ts.tokens = as_tokens(tape, x, patch_len);
    ts.scale = ScaleSpec{patch_len, 0.0};
    return ts;
}

std::vector<TokenSequence> transform_multiscale(Tape& tape, const Tensor& x,
                                                const std::vector<ScaleSpec>& scales,
                                                std::uint64_t seed, bool training) {
    if (scales.empty()) throw ParameterError("transform_multiscale: no scales given");
    std::vector<TokenSequence> out;
    out.reserve(scales.size());
    for (std::size_t s = 0; s < scales.size(); ++s) {
        validate(scales[s]);
        Tensor input = x;
        if (training && scales[s].mask_ratio > 0.0) {
            input = mask(tape, x, scales[s].mask_ratio, mix64(seed, s));
        }
        TokenSequence ts = patch(tape, input, scales[s].patch_len);
        ts.scale = scales[s];
        out.push_back(std::move(ts));
    }
    return out;
}

}  // namespace mbsl
