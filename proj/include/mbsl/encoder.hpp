#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mbsl/datagen.hpp"
#include "mbsl/mstransform.hpp"
#include "mbsl/tensor.hpp"

namespace mbsl {

struct BranchSpec {
    int kernel_size = 3;
    int n_layers = 2;
};

// receptive field of a dilated stack with dilations 1,2,4,...: 1 + (k-1)*(2^n - 1)
int receptive_field(const BranchSpec& branch);

// Per-group encoder description: one TCN branch per scale, channel adapters
// into input_width, hidden/output widths per the published defaults.
struct MTDEEncoderSpec {
    std::vector<ScaleSpec> scales;
    std::vector<BranchSpec> branches;  // parallel to scales
    int input_width = 8;
    int hidden_width = 32;
    int output_dim = 64;
};

// Default: three scales from fs, kernel 3, depths 4/3/2 (small patch deeper).
MTDEEncoderSpec default_encoder_spec(double fs);

enum class EncoderVariant { mtde, plain_tcn, no_patch, no_mask, moderate_mask, moderate_patch };
EncoderVariant encoder_variant_from_string(const std::string& s);
std::string to_string(EncoderVariant v);

MTDEEncoderSpec apply_variant(const MTDEEncoderSpec& base, EncoderVariant variant);

// Shrinks branch depths until every receptive field fits its token count for
// the given window length; rejects windows shorter than a patch.
void clamp_depths(MTDEEncoderSpec& spec, int window_len);

struct BranchParams {
    int kernel_size = 3;
    Tensor embed_w;  // [hidden x input_width*patch_len]
    Tensor embed_b;  // [hidden]
    std::vector<Tensor> conv_w;  // per layer [hidden x hidden x kernel]
    std::vector<Tensor> conv_b;  // per layer [hidden]
};

// Token embedding, then dilated causal residual blocks (dilation 2^layer);
// the last layer is a plain conv. Length stays at T.
Tensor encode_branch(Tape& tape, const TokenSequence& tokens, const BranchParams& params);

// One parameter set per modality group. Modalities inside a group share every
// branch; each modality only owns its 1x1 channel adapter.
class GroupEncoderBank {
public:
    GroupEncoderBank(MTDEEncoderSpec spec, std::vector<std::vector<int>> groups,
                     std::vector<int> modality_channels, std::uint64_t init_seed);

    const MTDEEncoderSpec& spec() const { return spec_; }
    const std::vector<std::vector<int>>& groups() const { return groups_; }
    const std::vector<int>& modality_channels() const { return modality_channels_; }
    int num_groups() const { return static_cast<int>(groups_.size()); }
    int group_of(int modality) const;

    std::vector<std::pair<std::string, Tensor>>& parameters() { return named_params_; }
    const std::vector<std::pair<std::string, Tensor>>& parameters() const { return named_params_; }
    std::int64_t parameter_count() const;
    void zero_grads();

    // h_i^k for one sample: group_inputs pairs (modality index, [C x L] tensor)
    // covering exactly the group's modalities.
    Tensor encode(Tape& tape, const std::vector<std::pair<int, Tensor>>& group_inputs,
                  int group_id, std::uint64_t seed, bool training) const;

    // Convenience: pull the group's modalities out of a dataset window.
    Tensor encode_sample(Tape& tape, const MultiModalDataset& dataset, int window_index,
                         int group_id, std::uint64_t seed, bool training) const;

private:
    struct GroupParams {
        std::vector<Tensor> adapter_w;  // per modality, [input_width x C_m x 1]
        std::vector<BranchParams> branches;
        Tensor proj_w;  // [output_dim x hidden*n_branches]
        Tensor proj_b;  // [output_dim]
    };

    MTDEEncoderSpec spec_;
    std::vector<std::vector<int>> groups_;
    std::vector<int> modality_channels_;
    std::vector<int> group_of_;
    std::vector<GroupParams> group_params_;
    std::vector<std::pair<std::string, Tensor>> named_params_;
};

// Checkpoint directory: manifest.json + one raw f64 file per named parameter.
void save_checkpoint(const GroupEncoderBank& bank, const std::filesystem::path& dir);
GroupEncoderBank load_checkpoint(const std::filesystem::path& dir);

}  // namespace mbsl
