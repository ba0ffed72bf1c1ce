#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mbsl/tensor.hpp"

namespace mbsl {

enum class ModalityKind { quasi_periodic, trend, burst };
enum class LabelKind { none, regression, classification };

std::string to_string(ModalityKind kind);
ModalityKind modality_kind_from_string(const std::string& s);
std::string to_string(LabelKind kind);
LabelKind label_kind_from_string(const std::string& s);

// Generator description of one modality. Amplitude ranges differ wildly
// across real sensors, so noise_std is relative to half the range.
struct ModalitySpec {
    std::string name;
    int channels = 1;
    ModalityKind kind = ModalityKind::quasi_periodic;
    double amplitude_low = -1.0;
    double amplitude_high = 1.0;
    double noise_std = 0.05;
    bool fourier_channel = false;  // append a derived magnitude-spectrum channel
};

// What a stored dataset knows about one modality (the manifest schema).
struct ModalityMeta {
    std::string name;
    int channels = 1;
    ModalityKind kind = ModalityKind::quasi_periodic;
};

// Synchronized windows of all modalities. Window data is stored as f32 so the
// on-disk format round-trips bit-exactly; tensors are widened to f64 on access.
struct MultiModalDataset {
    double fs = 0.0;
    int window_len = 0;
    int n_windows = 0;
    std::vector<ModalityMeta> modalities;
    std::vector<std::vector<float>> windows;  // per modality: [N * C * L], row-major
    LabelKind label_kind = LabelKind::none;
    std::vector<float> labels;  // length N when labeled
    std::vector<float> latent;  // hidden per-window factor, kept for oracles

    int n_modalities() const { return static_cast<int>(modalities.size()); }
    // Window `index` of one modality as a [C x L] tensor.
    Tensor window(int modality, int index) const;
    // All modalities of window `index`.
    std::vector<Tensor> sample(int index) const;

    bool operator==(const MultiModalDataset& other) const;
};

struct GenerateConfig {
    std::uint64_t seed = 1;
    int n_windows = 512;
    double fs = 50.0;
    int window_len = 400;
    std::vector<ModalitySpec> specs;
    LabelKind task = LabelKind::regression;
    int n_classes = 4;      // classification only: quantile buckets of the latent
    double latent_low = 0.5;   // latent fundamental frequency band, Hz
    double latent_high = 2.0;
};

// Three-modality default: two quasi-periodic sensors with very different
// amplitude ranges plus one trend sensor; the planted grouping is
// {quasi-periodic pair}, {trend}.
std::vector<ModalitySpec> default_specs();

MultiModalDataset generate(const GenerateConfig& config);

// Directory format: manifest.json + one raw little-endian f32 file per
// modality ([N x C x L] row-major) + labels.bin / latent.bin.
void save(const MultiModalDataset& dataset, const std::filesystem::path& dir);
MultiModalDataset load(const std::filesystem::path& dir);

MultiModalDataset subset(const MultiModalDataset& dataset, const std::vector<int>& indices);

struct SplitResult {
    MultiModalDataset train, val, test;
    std::vector<int> train_indices, val_indices, test_indices;
};

// Disjoint, exhaustive window split; train/val take floor(fraction * N) and
// the remainder goes to test.
SplitResult split(const MultiModalDataset& dataset, double train_fraction, double val_fraction,
                  double test_fraction, std::uint64_t seed);

}  // namespace mbsl
