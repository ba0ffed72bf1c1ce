#include "mbsl/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "mbsl/errors.hpp"
#include "mbsl/rng.hpp"

namespace mbsl {

namespace {

Tensor init_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.data()) v = rng.uniform(-a, a);
    return t;
}

void write_f64(const std::filesystem::path& path, const std::vector<double>& v) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!out) throw IoError("short write: " + path.string());
}

// Per-window channel standardization. Modalities carry wildly different
// amplitude ranges; without this the group embeddings share one dominant
// direction and the cosine objective flatlines. Constant channels pass
// through mean-subtracted (i.e. zero).
Tensor standardize_window(const Tensor& x) {
    const int channels = x.dim(0);
    const int len = x.dim(1);
    Tensor out = Tensor::zeros({channels, len});
    for (int c = 0; c < channels; ++c) {
        const double* src = x.data().data() + static_cast<std::size_t>(c) * len;
        double* dst = out.data().data() + static_cast<std::size_t>(c) * len;
        double mean = 0.0;
        for (int t = 0; t < len; ++t) mean += src[t];
        mean /= len;
        double var = 0.0;
        for (int t = 0; t < len; ++t) var += (src[t] - mean) * (src[t] - mean);
        double sd = std::sqrt(var / len);
        if (sd < 1e-12) sd = 1.0;
        for (int t = 0; t < len; ++t) dst[t] = (src[t] - mean) / sd;
    }
    return out;
}

std::vector<double> read_f64(const std::filesystem::path& path, std::size_t expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("checkpoint parameter file missing: " + path.string());
    in.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes != expected * sizeof(double)) {
        throw FormatError("checkpoint parameter size mismatch: " + path.string());
    }
    in.seekg(0, std::ios::beg);
    std::vector<double> v(expected);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw FormatError("short read: " + path.string());
    return v;
}

}  // namespace

int receptive_field(const BranchSpec& branch) {
    return 1 + (branch.kernel_size - 1) * ((1 << branch.n_layers) - 1);
}

MTDEEncoderSpec default_encoder_spec(double fs) {
    MTDEEncoderSpec spec;
    spec.scales = default_scales(fs);
    spec.branches = {{3, 4}, {3, 3}, {3, 2}};
    return spec;
}

EncoderVariant encoder_variant_from_string(const std::string& s) {
    if (s == "mtde") return EncoderVariant::mtde;
    if (s == "plain_tcn") return EncoderVariant::plain_tcn;
    if (s == "no_patch") return EncoderVariant::no_patch;
    if (s == "no_mask") return EncoderVariant::no_mask;
    if (s == "moderate_mask") return EncoderVariant::moderate_mask;
    if (s == "moderate_patch") return EncoderVariant::moderate_patch;
    throw ParameterError("encoder variant: unknown value '" + s + "'");
}

std::string to_string(EncoderVariant v) {
    switch (v) {
        case EncoderVariant::mtde: return "mtde";
        case EncoderVariant::plain_tcn: return "plain_tcn";
        case EncoderVariant::no_patch: return "no_patch";
        case EncoderVariant::no_mask: return "no_mask";
        case EncoderVariant::moderate_mask: return "moderate_mask";
        case EncoderVariant::moderate_patch: return "moderate_patch";
    }
    throw ParameterError("unknown encoder variant");
}

MTDEEncoderSpec apply_variant(const MTDEEncoderSpec& base, EncoderVariant variant) {
    if (base.scales.empty() || base.scales.size() != base.branches.size()) {
        throw ParameterError("encoder spec: scales and branches must be non-empty and parallel");
    }
    MTDEEncoderSpec spec = base;
    const std::size_t mid = base.scales.size() / 2;
    switch (variant) {
        case EncoderVariant::mtde:
            break;
        case EncoderVariant::plain_tcn: {
            int deepest = 1;
            for (const auto& b : base.branches) deepest = std::max(deepest, b.n_layers);
            spec.scales = {{1, 0.0}};
            spec.branches = {{base.branches.front().kernel_size, deepest}};
            break;
        }
        case EncoderVariant::no_patch:
            for (auto& s : spec.scales) s.patch_len = 1;
            break;
        case EncoderVariant::no_mask:
            for (auto& s : spec.scales) s.mask_ratio = 0.0;
            break;
        case EncoderVariant::moderate_mask:
            for (auto& s : spec.scales) s.mask_ratio = base.scales[mid].mask_ratio;
            break;
        case EncoderVariant::moderate_patch:
            for (auto& s : spec.scales) s.patch_len = base.scales[mid].patch_len;
            break;
    }
    return spec;
}

void clamp_depths(MTDEEncoderSpec& spec, int window_len) {
    for (std::size_t b = 0; b < spec.branches.size(); ++b) {
        const int tokens = window_len / spec.scales[b].patch_len;
        if (tokens < 1) {
            throw ParameterError("encoder: window of " + std::to_string(window_len) +
                                 " samples is shorter than patch_len " +
                                 std::to_string(spec.scales[b].patch_len));
        }
        auto& branch = spec.branches[b];
        while (branch.n_layers > 1 && receptive_field(branch) > tokens) branch.n_layers -= 1;
    }
}

Tensor encode_branch(Tape& tape, const TokenSequence& tokens, const BranchParams& params) {
    Tensor flat = flatten_tokens(tape, tokens.tokens);          // [T x C*P]
    Tensor embedded = linear(tape, flat, params.embed_w, params.embed_b);
    Tensor y = transpose2d(tape, embedded);                     // [hidden x T]
    const int n_layers = static_cast<int>(params.conv_w.size());
    for (int l = 0; l < n_layers; ++l) {
        const int dilation = 1 << l;
        Tensor c = conv1d_causal(tape, y, params.conv_w[static_cast<std::size_t>(l)],
                                 params.conv_b[static_cast<std::size_t>(l)], dilation);
        if (l + 1 < n_layers) {
            y = add(tape, y, relu(tape, c));
        } else {
            y = c;  // linear head layer
        }
    }
    return y;
}

GroupEncoderBank::GroupEncoderBank(MTDEEncoderSpec spec, std::vector<std::vector<int>> groups,
                                   std::vector<int> modality_channels, std::uint64_t init_seed)
    : spec_(std::move(spec)), groups_(std::move(groups)),
      modality_channels_(std::move(modality_channels)) {
    if (spec_.scales.empty() || spec_.scales.size() != spec_.branches.size()) {
        throw ParameterError("encoder spec: scales and branches must be non-empty and parallel");
    }
    if (spec_.input_width < 1 || spec_.hidden_width < 1 || spec_.output_dim < 1) {
        throw ParameterError("encoder spec: widths must be positive");
    }
    for (const ScaleSpec& s : spec_.scales) validate(s);

    const int m_count = static_cast<int>(modality_channels_.size());
    group_of_.assign(static_cast<std::size_t>(m_count), -1);
    for (std::size_t g = 0; g < groups_.size(); ++g) {
        for (int m : groups_[g]) {
            if (m < 0 || m >= m_count) throw ContractError("bank: modality index out of range");
            if (group_of_[static_cast<std::size_t>(m)] != -1) {
                throw ContractError("bank: modality " + std::to_string(m) + " in two groups");
            }
            group_of_[static_cast<std::size_t>(m)] = static_cast<int>(g);
        }
    }
    for (int m = 0; m < m_count; ++m) {
        if (group_of_[static_cast<std::size_t>(m)] == -1) {
            throw ContractError("bank: modality " + std::to_string(m) + " not assigned to a group");
        }
    }

    Rng rng = Rng(init_seed).fork(0x1417);
    const int hidden = spec_.hidden_width;
    const int n_branches = static_cast<int>(spec_.branches.size());
    for (std::size_t g = 0; g < groups_.size(); ++g) {
        GroupParams gp;
        const std::string prefix = "g" + std::to_string(g);
        for (int m : groups_[g]) {
            const int channels = modality_channels_[static_cast<std::size_t>(m)];
            Tensor w = init_uniform({spec_.input_width, channels, 1}, channels, rng);
            named_params_.emplace_back(prefix + ".adapter.m" + std::to_string(m) + ".w", w);
            gp.adapter_w.push_back(w);
        }
        for (int b = 0; b < n_branches; ++b) {
            const auto& bs = spec_.branches[static_cast<std::size_t>(b)];
            const int patch_len = spec_.scales[static_cast<std::size_t>(b)].patch_len;
            BranchParams bp;
            bp.kernel_size = bs.kernel_size;
            const int embed_in = spec_.input_width * patch_len;
            bp.embed_w = init_uniform({hidden, embed_in}, embed_in, rng);
            bp.embed_b = Tensor::zeros({hidden}, true);
            const std::string bpfx = prefix + ".branch" + std::to_string(b);
            named_params_.emplace_back(bpfx + ".embed.w", bp.embed_w);
            named_params_.emplace_back(bpfx + ".embed.b", bp.embed_b);
            for (int l = 0; l < bs.n_layers; ++l) {
                Tensor cw = init_uniform({hidden, hidden, bs.kernel_size},
                                         hidden * bs.kernel_size, rng);
                Tensor cb = Tensor::zeros({hidden}, true);
                named_params_.emplace_back(bpfx + ".conv" + std::to_string(l) + ".w", cw);
                named_params_.emplace_back(bpfx + ".conv" + std::to_string(l) + ".b", cb);
                bp.conv_w.push_back(cw);
                bp.conv_b.push_back(cb);
            }
            gp.branches.push_back(std::move(bp));
        }
        const int concat_width = hidden * n_branches;
        gp.proj_w = init_uniform({spec_.output_dim, concat_width}, concat_width, rng);
        gp.proj_b = Tensor::zeros({spec_.output_dim}, true);
        named_params_.emplace_back(prefix + ".proj.w", gp.proj_w);
        named_params_.emplace_back(prefix + ".proj.b", gp.proj_b);
        group_params_.push_back(std::move(gp));
    }
}

int GroupEncoderBank::group_of(int modality) const {
    if (modality < 0 || modality >= static_cast<int>(group_of_.size())) {
        throw ContractError("bank: modality index out of range");
    }
    return group_of_[static_cast<std::size_t>(modality)];
}

std::int64_t GroupEncoderBank::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : named_params_) n += t.size();
    return n;
}

void GroupEncoderBank::zero_grads() {
    for (auto& [name, t] : named_params_) t.zero_grad();
}

Tensor GroupEncoderBank::encode(Tape& tape, const std::vector<std::pair<int, Tensor>>& group_inputs,
                                int group_id, std::uint64_t seed, bool training) const {
    if (group_id < 0 || group_id >= num_groups()) {
        throw ContractError("encode: group id " + std::to_string(group_id) + " out of range");
    }
    const auto& members = groups_[static_cast<std::size_t>(group_id)];
    if (group_inputs.size() != members.size()) {
        throw ContractError("encode: expected " + std::to_string(members.size()) +
                            " modalities for group " + std::to_string(group_id));
    }
    const GroupParams& gp = group_params_[static_cast<std::size_t>(group_id)];

    // channel adapters, summed over the group's modalities
    Tensor u;
    for (std::size_t slot = 0; slot < members.size(); ++slot) {
        const auto& [modality, x] = group_inputs[slot];
        if (modality != members[slot]) {
            throw ContractError("encode: modality " + std::to_string(modality) +
                                " does not belong to group " + std::to_string(group_id) +
                                " at slot " + std::to_string(slot));
        }
        if (x.ndim() != 2 || x.dim(0) != modality_channels_[static_cast<std::size_t>(modality)]) {
            throw DimensionError("encode: modality " + std::to_string(modality) +
                                 " has unexpected channel count");
        }
        Tensor zero_b = Tensor::zeros({spec_.input_width});
        Tensor adapted = conv1d_causal(tape, standardize_window(x), gp.adapter_w[slot], zero_b, 1);
        u = u.defined() ? add(tape, u, adapted) : adapted;
    }

    auto token_seqs = transform_multiscale(tape, u, spec_.scales, seed, training);

    int t_min = token_seqs[0].num_tokens();
    for (const auto& ts : token_seqs) t_min = std::min(t_min, ts.num_tokens());

    std::vector<Tensor> pooled;
    pooled.reserve(token_seqs.size());
    for (std::size_t b = 0; b < token_seqs.size(); ++b) {
        Tensor y = encode_branch(tape, token_seqs[b], gp.branches[b]);
        pooled.push_back(mean_pool_to(tape, y, t_min));
    }
    Tensor cat = concat(tape, pooled, 0);                    // [hidden*B x T_min]
    Tensor over_time = mean_pool(tape, cat, t_min);          // [hidden*B x 1]
    Tensor flat = reshape(tape, over_time, {cat.dim(0)});
    return linear(tape, flat, gp.proj_w, gp.proj_b);         // [output_dim]
}

Tensor GroupEncoderBank::encode_sample(Tape& tape, const MultiModalDataset& dataset,
                                       int window_index, int group_id, std::uint64_t seed,
                                       bool training) const {
    if (group_id < 0 || group_id >= num_groups()) {
        throw ContractError("encode_sample: group id out of range");
    }
    std::vector<std::pair<int, Tensor>> inputs;
    for (int m : groups_[static_cast<std::size_t>(group_id)]) {
        inputs.emplace_back(m, dataset.window(m, window_index));
    }
    return encode(tape, inputs, group_id, seed, training);
}

void save_checkpoint(const GroupEncoderBank& bank, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir / "params", ec);
    if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

    nlohmann::json manifest;
    manifest["format"] = "mbsl-checkpoint";
    nlohmann::json jspec;
    jspec["input_width"] = bank.spec().input_width;
    jspec["hidden_width"] = bank.spec().hidden_width;
    jspec["output_dim"] = bank.spec().output_dim;
    jspec["scales"] = nlohmann::json::array();
    for (const auto& s : bank.spec().scales) {
        jspec["scales"].push_back({{"patch_len", s.patch_len}, {"mask_ratio", s.mask_ratio}});
    }
    jspec["branches"] = nlohmann::json::array();
    for (const auto& b : bank.spec().branches) {
        jspec["branches"].push_back({{"kernel_size", b.kernel_size}, {"n_layers", b.n_layers}});
    }
    manifest["spec"] = jspec;
    manifest["groups"] = bank.groups();
    manifest["modality_channels"] = bank.modality_channels();
    manifest["params"] = nlohmann::json::array();
    for (const auto& [name, t] : bank.parameters()) {
        manifest["params"].push_back({{"name", name}, {"shape", t.shape()}});
        write_f64(dir / "params" / (name + ".bin"), t.data());
    }
    std::ofstream mf(dir / "manifest.json", std::ios::trunc);
    if (!mf) throw IoError("cannot write checkpoint manifest in " + dir.string());
    mf << manifest.dump(2) << "\n";
}

GroupEncoderBank load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw IoError("checkpoint manifest missing: " + (dir / "manifest.json").string());
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint manifest: " + std::string(e.what()));
    }
    try {
        if (manifest.at("format").get<std::string>() != "mbsl-checkpoint") {
            throw FormatError("checkpoint manifest: unexpected format tag");
        }
        MTDEEncoderSpec spec;
        const auto& jspec = manifest.at("spec");
        spec.input_width = jspec.at("input_width").get<int>();
        spec.hidden_width = jspec.at("hidden_width").get<int>();
        spec.output_dim = jspec.at("output_dim").get<int>();
        for (const auto& js : jspec.at("scales")) {
            spec.scales.push_back({js.at("patch_len").get<int>(), js.at("mask_ratio").get<double>()});
        }
        for (const auto& jb : jspec.at("branches")) {
            spec.branches.push_back({jb.at("kernel_size").get<int>(), jb.at("n_layers").get<int>()});
        }
        auto groups = manifest.at("groups").get<std::vector<std::vector<int>>>();
        auto channels = manifest.at("modality_channels").get<std::vector<int>>();

        GroupEncoderBank bank(std::move(spec), std::move(groups), std::move(channels), 0);
        auto& params = bank.parameters();
        const auto& jparams = manifest.at("params");
        if (jparams.size() != params.size()) {
            throw FormatError("checkpoint manifest: parameter count mismatch");
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto name = jparams[i].at("name").get<std::string>();
            const auto shape = jparams[i].at("shape").get<std::vector<int>>();
            if (name != params[i].first || shape != params[i].second.shape()) {
                throw FormatError("checkpoint manifest: parameter '" + name +
                                  "' does not match the reconstructed bank");
            }
            params[i].second.data() =
                read_f64(dir / "params" / (name + ".bin"),
                         static_cast<std::size_t>(params[i].second.size()));
        }
        return bank;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint manifest: " + std::string(e.what()));
    }
}

}  // namespace mbsl
