#include "mbsl/datagen.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "mbsl/errors.hpp"
#include "mbsl/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "dataset files are little-endian; big-endian hosts are unsupported");

namespace mbsl {

namespace {

constexpr double kPi = 3.14159265358979323846;

void validate_spec(const ModalitySpec& spec) {
    if (spec.name.empty()) throw ParameterError("modality: name must be non-empty");
    if (spec.channels < 1) {
        throw ParameterError("modality '" + spec.name + "': channels must be >= 1");
    }
    if (!(spec.amplitude_low < spec.amplitude_high)) {
        throw ParameterError("modality '" + spec.name + "': amplitude_low must be < amplitude_high");
    }
    if (spec.noise_std < 0.0) {
        throw ParameterError("modality '" + spec.name + "': noise_std must be >= 0");
    }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Naive magnitude spectrum of `signal`, linearly resampled to `signal.size()`
// points and min-max scaled into [lo, hi]. Supports the derived
// frequency-channel option.
std::vector<double> spectrum_channel(const std::vector<double>& signal, double lo, double hi) {
    const int len = static_cast<int>(signal.size());
    const int bins = len / 2;
    std::vector<double> mag(static_cast<std::size_t>(bins), 0.0);
    for (int k = 0; k < bins; ++k) {
        double re = 0.0, im = 0.0;
        for (int t = 0; t < len; ++t) {
            const double angle = -2.0 * kPi * k * t / len;
            re += signal[static_cast<std::size_t>(t)] * std::cos(angle);
            im += signal[static_cast<std::size_t>(t)] * std::sin(angle);
        }
        mag[static_cast<std::size_t>(k)] = std::sqrt(re * re + im * im);
    }
    double mx = mag[0], mn = mag[0];
    for (double v : mag) {
        mx = std::max(mx, v);
        mn = std::min(mn, v);
    }
    const double span = mx - mn;
    std::vector<double> out(static_cast<std::size_t>(len), lo);
    for (int t = 0; t < len; ++t) {
        const double pos = static_cast<double>(t) * (bins - 1) / (len - 1);
        const int k0 = static_cast<int>(pos);
        const int k1 = std::min(bins - 1, k0 + 1);
        const double frac = pos - k0;
        const double v = (1.0 - frac) * mag[static_cast<std::size_t>(k0)] +
                         frac * mag[static_cast<std::size_t>(k1)];
        out[static_cast<std::size_t>(t)] = span > 0.0 ? lo + (hi - lo) * (v - mn) / span : lo;
    }
    return out;
}

void write_f32(const std::filesystem::path& path, const std::vector<float>& v) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(float)));
    if (!out) throw IoError("short write: " + path.string());
}

std::vector<float> read_f32(const std::filesystem::path& path, std::size_t expected,
                            const std::string& field) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("missing file for " + field + ": " + path.string());
    in.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes != expected * sizeof(float)) {
        throw FormatError(field + ": file size " + std::to_string(bytes) + " bytes, expected " +
                          std::to_string(expected * sizeof(float)) + " (" + path.string() + ")");
    }
    in.seekg(0, std::ios::beg);
    std::vector<float> v(expected);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw FormatError(field + ": short read from " + path.string());
    for (float x : v) {
        if (!std::isfinite(x)) throw FormatError(field + ": non-finite value in " + path.string());
    }
    return v;
}

}  // namespace

std::string to_string(ModalityKind kind) {
    switch (kind) {
        case ModalityKind::quasi_periodic: return "quasi_periodic";
        case ModalityKind::trend: return "trend";
        case ModalityKind::burst: return "burst";
    }
    throw ParameterError("unknown modality kind");
}

ModalityKind modality_kind_from_string(const std::string& s) {
    if (s == "quasi_periodic") return ModalityKind::quasi_periodic;
    if (s == "trend") return ModalityKind::trend;
    if (s == "burst") return ModalityKind::burst;
    throw FormatError("modalities.kind: unknown value '" + s + "'");
}

std::string to_string(LabelKind kind) {
    switch (kind) {
        case LabelKind::none: return "none";
        case LabelKind::regression: return "regression";
        case LabelKind::classification: return "classification";
    }
    throw ParameterError("unknown label kind");
}

LabelKind label_kind_from_string(const std::string& s) {
    if (s == "none") return LabelKind::none;
    if (s == "regression") return LabelKind::regression;
    if (s == "classification") return LabelKind::classification;
    throw FormatError("label_kind: unknown value '" + s + "'");
}

Tensor MultiModalDataset::window(int modality, int index) const {
    if (modality < 0 || modality >= n_modalities()) throw ParameterError("window: bad modality index");
    if (index < 0 || index >= n_windows) throw ParameterError("window: bad window index");
    const int channels = modalities[static_cast<std::size_t>(modality)].channels;
    const std::size_t stride = static_cast<std::size_t>(channels) * window_len;
    const auto& src = windows[static_cast<std::size_t>(modality)];
    std::vector<double> data(stride);
    const std::size_t base = static_cast<std::size_t>(index) * stride;
    for (std::size_t i = 0; i < stride; ++i) data[i] = static_cast<double>(src[base + i]);
    return Tensor::from_data({channels, window_len}, std::move(data));
}

std::vector<Tensor> MultiModalDataset::sample(int index) const {
    std::vector<Tensor> out;
    out.reserve(static_cast<std::size_t>(n_modalities()));
    for (int m = 0; m < n_modalities(); ++m) out.push_back(window(m, index));
    return out;
}

bool MultiModalDataset::operator==(const MultiModalDataset& other) const {
    if (fs != other.fs || window_len != other.window_len || n_windows != other.n_windows ||
        label_kind != other.label_kind || n_modalities() != other.n_modalities()) {
        return false;
    }
    for (int m = 0; m < n_modalities(); ++m) {
        const auto& a = modalities[static_cast<std::size_t>(m)];
        const auto& b = other.modalities[static_cast<std::size_t>(m)];
        if (a.name != b.name || a.channels != b.channels || a.kind != b.kind) return false;
    }
    return windows == other.windows && labels == other.labels && latent == other.latent;
}

std::vector<ModalitySpec> default_specs() {
    ModalitySpec ppg{"ppg", 1, ModalityKind::quasi_periodic, -1.0, 1.0, 0.05, false};
    ModalitySpec ppg_ir{"ppg_ir", 2, ModalityKind::quasi_periodic, 0.0, 100.0, 0.05, false};
    ModalitySpec spo2{"spo2", 1, ModalityKind::trend, 70.0, 100.0, 0.05, false};
    return {ppg, ppg_ir, spo2};
}

MultiModalDataset generate(const GenerateConfig& config) {
    if (config.specs.empty()) throw ParameterError("generate: specs must be non-empty");
    if (config.n_windows < 1) throw ParameterError("generate: n_windows must be >= 1");
    if (config.window_len < 32) throw ParameterError("generate: window_len must be >= 32");
    if (config.fs <= 0.0) throw ParameterError("generate: fs must be positive");
    if (!(config.latent_low < config.latent_high)) {
        throw ParameterError("generate: latent band must have low < high");
    }
    if (config.task == LabelKind::classification && config.n_classes < 2) {
        throw ParameterError("generate: n_classes must be >= 2");
    }
    for (const ModalitySpec& spec : config.specs) validate_spec(spec);

    const int n = config.n_windows;
    const int len = config.window_len;
    const double duration = len / config.fs;

    MultiModalDataset ds;
    ds.fs = config.fs;
    ds.window_len = len;
    ds.n_windows = n;
    ds.label_kind = config.task;

    // Shared latent per window: z is the fundamental frequency (the label);
    // z2 is a secondary factor every modality also renders, so windows are
    // identifiable across modalities by more than one coordinate.
    Rng latent_rng = Rng(config.seed).fork(0x1a7e);
    std::vector<double> z(static_cast<std::size_t>(n)), z2(static_cast<std::size_t>(n));
    for (int w = 0; w < n; ++w) {
        z[static_cast<std::size_t>(w)] = latent_rng.uniform(config.latent_low, config.latent_high);
        z2[static_cast<std::size_t>(w)] = latent_rng.uniform();
    }

    ds.latent.resize(static_cast<std::size_t>(n));
    for (int w = 0; w < n; ++w) ds.latent[static_cast<std::size_t>(w)] = static_cast<float>(z[static_cast<std::size_t>(w)]);

    for (std::size_t m = 0; m < config.specs.size(); ++m) {
        const ModalitySpec& spec = config.specs[m];
        const int stored_channels = spec.channels + (spec.fourier_channel ? 1 : 0);
        ds.modalities.push_back({spec.name, stored_channels, spec.kind});

        const double lo = spec.amplitude_low, hi = spec.amplitude_high;
        const double mid = 0.5 * (lo + hi);
        const double half = 0.5 * (hi - lo);

        std::vector<float> data(static_cast<std::size_t>(n) * stored_channels * len, 0.0f);
        for (int w = 0; w < n; ++w) {
            Rng rng = Rng(config.seed).fork(mix64(0xda7a + m, static_cast<std::uint64_t>(w)));
            const double zw = z[static_cast<std::size_t>(w)];
            const double z2w = z2[static_cast<std::size_t>(w)];
            std::vector<double> chan(static_cast<std::size_t>(len));
            for (int c = 0; c < spec.channels; ++c) {
                switch (spec.kind) {
                    case ModalityKind::quasi_periodic: {
                        // harmonic stack on the fundamental; the second
                        // harmonic's strength renders the secondary factor
                        const double w1 = 1.0, w2 = 0.2 + 0.6 * z2w, w3 = 0.25;
                        const double norm = w1 + w2 + w3;
                        const double p1 = rng.uniform(0, 2 * kPi);
                        const double p2 = rng.uniform(0, 2 * kPi);
                        const double p3 = rng.uniform(0, 2 * kPi);
                        for (int t = 0; t < len; ++t) {
                            const double tau = t / config.fs;
                            const double raw = w1 * std::sin(2 * kPi * zw * tau + p1) +
                                               w2 * std::sin(2 * kPi * 2 * zw * tau + p2) +
                                               w3 * std::sin(2 * kPi * 3 * zw * tau + p3);
                            chan[static_cast<std::size_t>(t)] =
                                mid + half * raw / norm + spec.noise_std * half * rng.normal();
                        }
                        break;
                    }
                    case ModalityKind::trend: {
                        // sigmoid ramp: steepness tracks the fundamental,
                        // transition position tracks the secondary factor
                        const double unit = (zw - config.latent_low) /
                                            (config.latent_high - config.latent_low);
                        const double slope = 2.0 + 6.0 * unit;
                        const double center = 0.4 + 0.2 * z2w;
                        for (int t = 0; t < len; ++t) {
                            const double pos = static_cast<double>(t) / (len - 1);
                            double v = lo + (hi - lo) * sigmoid(slope * 2.0 * (pos - center));
                            v += spec.noise_std * half * rng.normal();
                            chan[static_cast<std::size_t>(t)] = std::clamp(v, lo, hi);
                        }
                        break;
                    }
                    case ModalityKind::burst: {
                        // noise bursts at a latent-dependent rate
                        const int bursts = std::max(1, static_cast<int>(std::llround(zw * duration)));
                        std::vector<double> envelope(static_cast<std::size_t>(len), 0.0);
                        for (int bidx = 0; bidx < bursts; ++bidx) {
                            const double center = rng.uniform(0, len);
                            const double width = 0.02 * len * (1.0 + z2w + 0.2 * rng.uniform());
                            for (int t = 0; t < len; ++t) {
                                const double d = (t - center) / width;
                                envelope[static_cast<std::size_t>(t)] += std::exp(-0.5 * d * d);
                            }
                        }
                        for (int t = 0; t < len; ++t) {
                            const double v = mid +
                                             0.6 * half * envelope[static_cast<std::size_t>(t)] * rng.normal() +
                                             spec.noise_std * half * rng.normal();
                            chan[static_cast<std::size_t>(t)] = v;
                        }
                        break;
                    }
                }
                float* dst = data.data() +
                             (static_cast<std::size_t>(w) * stored_channels + c) * len;
                for (int t = 0; t < len; ++t) dst[t] = static_cast<float>(chan[static_cast<std::size_t>(t)]);
                if (spec.fourier_channel && c == 0) {
                    const auto spec_chan = spectrum_channel(chan, lo, hi);
                    float* fdst = data.data() +
                                  (static_cast<std::size_t>(w) * stored_channels + spec.channels) * len;
                    for (int t = 0; t < len; ++t) fdst[t] = static_cast<float>(spec_chan[static_cast<std::size_t>(t)]);
                }
            }
        }
        ds.windows.push_back(std::move(data));
    }

    if (config.task == LabelKind::regression) {
        ds.labels.resize(static_cast<std::size_t>(n));
        for (int w = 0; w < n; ++w) ds.labels[static_cast<std::size_t>(w)] = static_cast<float>(z[static_cast<std::size_t>(w)]);
    } else if (config.task == LabelKind::classification) {
        // quantile-bucket the latent factor into balanced classes
        std::vector<int> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&z](int a, int b) {
            return z[static_cast<std::size_t>(a)] < z[static_cast<std::size_t>(b)];
        });
        ds.labels.resize(static_cast<std::size_t>(n));
        for (int rank = 0; rank < n; ++rank) {
            const int cls = std::min(config.n_classes - 1,
                                     rank * config.n_classes / n);
            ds.labels[static_cast<std::size_t>(order[static_cast<std::size_t>(rank)])] =
                static_cast<float>(cls);
        }
    }
    return ds;
}

void save(const MultiModalDataset& dataset, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());

    nlohmann::json manifest;
    manifest["fs"] = dataset.fs;
    manifest["window_len"] = dataset.window_len;
    manifest["n_windows"] = dataset.n_windows;
    manifest["label_kind"] = to_string(dataset.label_kind);
    manifest["modalities"] = nlohmann::json::array();
    for (const ModalityMeta& meta : dataset.modalities) {
        manifest["modalities"].push_back(
            {{"name", meta.name}, {"channels", meta.channels}, {"kind", to_string(meta.kind)}});
    }
    std::ofstream mf(dir / "manifest.json", std::ios::trunc);
    if (!mf) throw IoError("cannot write manifest in " + dir.string());
    mf << manifest.dump(2) << "\n";

    for (int m = 0; m < dataset.n_modalities(); ++m) {
        write_f32(dir / (dataset.modalities[static_cast<std::size_t>(m)].name + ".bin"),
                  dataset.windows[static_cast<std::size_t>(m)]);
    }
    if (dataset.label_kind != LabelKind::none) write_f32(dir / "labels.bin", dataset.labels);
    if (!dataset.latent.empty()) write_f32(dir / "latent.bin", dataset.latent);
}

MultiModalDataset load(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw IoError("dataset directory not found: " + dir.string());
    }
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw FormatError("manifest.json missing in " + dir.string());
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest.json: " + std::string(e.what()));
    }

    static const std::vector<std::string> known = {"fs", "window_len", "n_windows", "modalities",
                                                   "label_kind"};
    for (auto it = manifest.begin(); it != manifest.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
            throw FormatError("manifest.json: unknown field '" + it.key() + "'");
        }
    }
    for (const std::string& key : known) {
        if (!manifest.contains(key)) throw FormatError("manifest.json: missing field '" + key + "'");
    }

    MultiModalDataset ds;
    try {
        ds.fs = manifest["fs"].get<double>();
        ds.window_len = manifest["window_len"].get<int>();
        ds.n_windows = manifest["n_windows"].get<int>();
        ds.label_kind = label_kind_from_string(manifest["label_kind"].get<std::string>());
        for (const auto& jm : manifest["modalities"]) {
            ModalityMeta meta;
            meta.name = jm.at("name").get<std::string>();
            meta.channels = jm.at("channels").get<int>();
            meta.kind = modality_kind_from_string(jm.at("kind").get<std::string>());
            if (meta.channels < 1) throw FormatError("modalities.channels: must be >= 1");
            ds.modalities.push_back(std::move(meta));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest.json: " + std::string(e.what()));
    }
    if (ds.fs <= 0.0) throw FormatError("fs: must be positive");
    if (ds.window_len < 1) throw FormatError("window_len: must be >= 1");
    if (ds.n_windows < 1) throw FormatError("n_windows: must be >= 1");
    if (ds.modalities.empty()) throw FormatError("modalities: must be non-empty");

    for (const ModalityMeta& meta : ds.modalities) {
        const std::size_t expected = static_cast<std::size_t>(ds.n_windows) * meta.channels *
                                     ds.window_len;
        ds.windows.push_back(read_f32(dir / (meta.name + ".bin"), expected,
                                      "modality '" + meta.name + "'"));
    }
    if (ds.label_kind != LabelKind::none) {
        ds.labels = read_f32(dir / "labels.bin", static_cast<std::size_t>(ds.n_windows), "labels");
    }
    if (std::filesystem::exists(dir / "latent.bin")) {
        ds.latent = read_f32(dir / "latent.bin", static_cast<std::size_t>(ds.n_windows), "latent");
    }
    return ds;
}

MultiModalDataset subset(const MultiModalDataset& dataset, const std::vector<int>& indices) {
    MultiModalDataset out;
    out.fs = dataset.fs;
    out.window_len = dataset.window_len;
    out.n_windows = static_cast<int>(indices.size());
    out.modalities = dataset.modalities;
    out.label_kind = dataset.label_kind;
    for (int m = 0; m < dataset.n_modalities(); ++m) {
        const std::size_t stride =
            static_cast<std::size_t>(dataset.modalities[static_cast<std::size_t>(m)].channels) *
            dataset.window_len;
        std::vector<float> data(indices.size() * stride);
        for (std::size_t i = 0; i < indices.size(); ++i) {
            const int w = indices[i];
            if (w < 0 || w >= dataset.n_windows) throw ParameterError("subset: index out of range");
            std::copy_n(dataset.windows[static_cast<std::size_t>(m)].begin() +
                            static_cast<std::ptrdiff_t>(w * stride),
                        stride, data.begin() + static_cast<std::ptrdiff_t>(i * stride));
        }
        out.windows.push_back(std::move(data));
    }
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::size_t w = static_cast<std::size_t>(indices[i]);
        if (!dataset.labels.empty()) out.labels.push_back(dataset.labels[w]);
        if (!dataset.latent.empty()) out.latent.push_back(dataset.latent[w]);
    }
    return out;
}

SplitResult split(const MultiModalDataset& dataset, double train_fraction, double val_fraction,
                  double test_fraction, std::uint64_t seed) {
    if (train_fraction <= 0.0 || val_fraction <= 0.0 || test_fraction <= 0.0) {
        throw ParameterError("split: fractions must be positive");
    }
    if (std::fabs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9) {
        throw ParameterError("split: fractions must sum to 1");
    }
    const int n = dataset.n_windows;
    const int n_train = static_cast<int>(std::floor(train_fraction * n));
    const int n_val = static_cast<int>(std::floor(val_fraction * n));
    const int n_test = n - n_train - n_val;
    if (n_train < 1 || n_val < 1 || n_test < 1) {
        throw ParameterError("split: a fraction yields zero windows for N=" + std::to_string(n));
    }

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix64(seed, 0x5917));
    rng.shuffle(order);

    SplitResult out;
    out.train_indices.assign(order.begin(), order.begin() + n_train);
    out.val_indices.assign(order.begin() + n_train, order.begin() + n_train + n_val);
    out.test_indices.assign(order.begin() + n_train + n_val, order.end());
    std::sort(out.train_indices.begin(), out.train_indices.end());
    std::sort(out.val_indices.begin(), out.val_indices.end());
    std::sort(out.test_indices.begin(), out.test_indices.end());
    out.train = subset(dataset, out.train_indices);
    out.val = subset(dataset, out.val_indices);
    out.test = subset(dataset, out.test_indices);
    return out;
}

}  // namespace mbsl
