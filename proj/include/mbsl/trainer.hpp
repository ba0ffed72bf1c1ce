#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mbsl/datagen.hpp"
#include "mbsl/encoder.hpp"
#include "mbsl/grouping.hpp"
#include "mbsl/objective.hpp"
#include "mbsl/tensor.hpp"

namespace mbsl {

enum class LossVariant { cross_modal, instance };
LossVariant loss_variant_from_string(const std::string& s);
std::string to_string(LossVariant v);

struct ProbeConfig {
    double lr = 0.01;
    int max_epochs = 2000;
    int patience = 5;      // evaluations without improvement before stopping
    int val_interval = 10; // epochs between validation evaluations
    std::uint64_t seed = 7;
};

struct TrainConfig {
    std::uint64_t seed = 42;
    int epochs = 13;
    int batch_size = 32;  // paper-scale preset is 480
    double lr = 0.002;
    double tau = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long max_steps = -1;  // negative: no cap; 0 is a valid no-op run
    LossVariant loss = LossVariant::cross_modal;
    EncoderVariant encoder = EncoderVariant::mtde;
    NegativeMode negatives = NegativeMode::cross_view;
    MTDEEncoderSpec model;  // empty scales: use default_encoder_spec(fs)
    double split_train = 0.7;
    double split_val = 0.15;
    double split_test = 0.15;
    std::uint64_t split_seed = 1;
    ProbeConfig probe;
};

void validate(const TrainConfig& config);

struct RunReport {
    std::string tag;
    long steps = 0;
    std::vector<double> loss_curve;  // per-step contrastive (or task) loss
    bool has_probe = false;
    MetricReport probe_train, probe_val, probe_test;
    double wall_clock_sec = 0.0;
    std::int64_t param_count = 0;
    std::string config_echo;  // serialized config
};

std::string run_report_json(const RunReport& report);
std::string loss_curve_csv(const RunReport& report);
std::string config_json(const TrainConfig& config);

// Spec resolution: fill missing scales/branches from the sample-rate defaults,
// apply the encoder variant, clamp depths to the window length.
MTDEEncoderSpec resolve_model_spec(const TrainConfig& config, double fs, int window_len);

struct PretrainResult {
    GroupEncoderBank bank;
    RunReport report;
};

// Contrastive pretraining on (typically) the train split. Deterministic given
// config.seed; emits the per-step loss curve.
PretrainResult pretrain(const MultiModalDataset& train_set, const GroupingResult& grouping,
                        const TrainConfig& config);

// Frozen-encoder features: per sample, group embeddings (evaluation-mode
// transforms) concatenated to [K * output_dim].
std::vector<std::vector<double>> extract_features(const GroupEncoderBank& bank,
                                                  const MultiModalDataset& dataset);

struct ProbeOutcome {
    MetricReport train, val, test;
};

// Linear head on frozen embeddings, Adam full-batch, early stopping on the
// validation metric with the configured patience; reports on all splits.
ProbeOutcome linear_probe(const GroupEncoderBank& bank, const SplitResult& splits, TaskKind task,
                          const TrainConfig& config);

std::vector<std::string> all_ablation_variants();

// Runs the requested variants end-to-end (same split and embedding evidence
// for all) and returns one report per variant.
std::vector<RunReport> ablate(const MultiModalDataset& dataset, const TrainConfig& config,
                              const GroupingOptions& grouping_options,
                              const std::vector<std::string>& variants);

std::string ablation_table_json(const std::vector<RunReport>& reports);

}  // namespace mbsl
