#include "mbsl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>

#include "json.hpp"
#include "mbsl/errors.hpp"
#include "mbsl/rng.hpp"

namespace mbsl {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

// ---- linear heads ------------------------------------------------------------

struct HeadParams {
    Tensor w;  // [out x D]
    Tensor b;  // [out]
};

HeadParams init_head(int out, int dims, std::uint64_t seed) {
    Rng rng = Rng(seed).fork(0x6ead);
    HeadParams head;
    head.w = Tensor::zeros({out, dims}, true);
    const double a = 1.0 / std::sqrt(static_cast<double>(dims));
    for (double& v : head.w.data()) v = rng.uniform(-a, a);
    head.b = Tensor::zeros({out}, true);
    return head;
}

std::vector<Tensor> head_param_list(HeadParams& head) { return {head.w, head.b}; }

Tensor rows_tensor(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw ParameterError("empty feature matrix");
    const int n = static_cast<int>(rows.size());
    const int d = static_cast<int>(rows[0].size());
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(n) * d);
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    return Tensor::from_data({n, d}, std::move(flat));
}

struct Standardizer {
    std::vector<double> mean, sd;

    void fit(const std::vector<std::vector<double>>& rows) {
        const std::size_t d = rows[0].size();
        mean.assign(d, 0.0);
        sd.assign(d, 0.0);
        for (const auto& r : rows) {
            for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
        }
        for (double& v : mean) v /= static_cast<double>(rows.size());
        for (const auto& r : rows) {
            for (std::size_t j = 0; j < d; ++j) {
                sd[j] += (r[j] - mean[j]) * (r[j] - mean[j]);
            }
        }
        for (double& v : sd) {
            v = std::sqrt(v / static_cast<double>(rows.size()));
            if (v < 1e-12) v = 1.0;
        }
    }

    Tensor apply(const std::vector<std::vector<double>>& rows) const {
        Tensor t = rows_tensor(rows);
        const int d = t.dim(1);
        for (int i = 0; i < t.dim(0); ++i) {
            for (int j = 0; j < d; ++j) {
                auto& v = t.data()[static_cast<std::size_t>(i) * d + j];
                v = (v - mean[static_cast<std::size_t>(j)]) / sd[static_cast<std::size_t>(j)];
            }
        }
        return t;
    }
};

Tensor regression_loss(Tape& tape, const Tensor& x, HeadParams& head, const Tensor& targets) {
    Tensor pred = linear(tape, x, head.w, head.b);  // [N x 1]
    Tensor err = sub(tape, pred, targets);
    return mean_all(tape, mul(tape, err, err));
}

Tensor classification_loss(Tape& tape, const Tensor& x, HeadParams& head, const Tensor& onehot) {
    Tensor logits = linear(tape, x, head.w, head.b);  // [N x C]
    Tensor lse = mean_all(tape, row_logsumexp(tape, logits));
    Tensor correct = scale(tape, sum_all(tape, mul(tape, logits, onehot)),
                           1.0 / static_cast<double>(x.dim(0)));
    return sub(tape, lse, correct);
}

std::vector<double> predict_regression(const HeadParams& head, const Tensor& x, double y_mean,
                                       double y_sd) {
    Tape tape(false);
    Tensor pred = linear(tape, x, head.w, head.b);
    std::vector<double> out(static_cast<std::size_t>(pred.dim(0)));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pred.data()[i] * y_sd + y_mean;
    return out;
}

std::vector<std::vector<double>> predict_scores(const HeadParams& head, const Tensor& x) {
    Tape tape(false);
    Tensor logits = linear(tape, x, head.w, head.b);
    const int n = logits.dim(0), c = logits.dim(1);
    std::vector<std::vector<double>> scores(static_cast<std::size_t>(n),
                                            std::vector<double>(static_cast<std::size_t>(c)));
    for (int i = 0; i < n; ++i) {
        const double* row = logits.data().data() + static_cast<std::size_t>(i) * c;
        double mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
        for (int j = 0; j < c; ++j) scores[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
            std::exp(row[j] - mx) / sum;
    }
    return scores;
}

Tensor onehot_tensor(const std::vector<int>& labels, int n_classes) {
    Tensor t = Tensor::zeros({static_cast<int>(labels.size()), n_classes});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        t.data()[i * static_cast<std::size_t>(n_classes) + static_cast<std::size_t>(labels[i])] = 1.0;
    }
    return t;
}

std::vector<int> int_labels(const MultiModalDataset& ds) {
    std::vector<int> out;
    out.reserve(ds.labels.size());
    for (float v : ds.labels) out.push_back(static_cast<int>(std::lround(v)));
    return out;
}

std::vector<double> double_labels(const MultiModalDataset& ds) {
    return std::vector<double>(ds.labels.begin(), ds.labels.end());
}

void check_task(const MultiModalDataset& ds, TaskKind task) {
    const bool regression = ds.label_kind == LabelKind::regression;
    const bool classification = ds.label_kind == LabelKind::classification;
    if (task == TaskKind::regression && !regression) {
        throw ContractError("probe: regression task requested but dataset labels are " +
                            to_string(ds.label_kind));
    }
    if (task == TaskKind::classification && !classification) {
        throw ContractError("probe: classification task requested but dataset labels are " +
                            to_string(ds.label_kind));
    }
}

void assert_no_leakage(const SplitResult& splits) {
    std::set<int> seen;
    auto check = [&seen](const std::vector<int>& idx) {
        for (int i : idx) {
            if (!seen.insert(i).second) {
                throw ContractError("split leakage: window index " + std::to_string(i) +
                                    " appears in two splits");
            }
        }
    };
    check(splits.train_indices);
    check(splits.val_indices);
    check(splits.test_indices);
}

struct VariantPlan {
    GroupingVariant grouping = GroupingVariant::img;
    EncoderVariant encoder = EncoderVariant::mtde;
    LossVariant loss = LossVariant::cross_modal;
    bool supervised = false;
};

VariantPlan plan_for(const std::string& name) {
    if (name == "full") return {};
    if (name == "wo_img") return {GroupingVariant::none, EncoderVariant::mtde, LossVariant::instance, false};
    if (name == "random_grouping") return {GroupingVariant::random, EncoderVariant::mtde, LossVariant::cross_modal, false};
    if (name == "full_grouping") return {GroupingVariant::full, EncoderVariant::mtde, LossVariant::cross_modal, false};
    if (name == "wo_mask") return {GroupingVariant::img, EncoderVariant::no_mask, LossVariant::cross_modal, false};
    if (name == "moderate_mask") return {GroupingVariant::img, EncoderVariant::moderate_mask, LossVariant::cross_modal, false};
    if (name == "wo_patch") return {GroupingVariant::img, EncoderVariant::no_patch, LossVariant::cross_modal, false};
    if (name == "moderate_patch") return {GroupingVariant::img, EncoderVariant::moderate_patch, LossVariant::cross_modal, false};
    if (name == "plain_tcn") return {GroupingVariant::img, EncoderVariant::plain_tcn, LossVariant::cross_modal, false};
    if (name == "supervised") return {GroupingVariant::img, EncoderVariant::mtde, LossVariant::cross_modal, true};
    if (name == "instance_contrastive") return {GroupingVariant::img, EncoderVariant::mtde, LossVariant::instance, false};
    throw ParameterError("ablate: unknown variant '" + name + "'");
}

}  // namespace

// ---- config -------------------------------------------------------------------

LossVariant loss_variant_from_string(const std::string& s) {
    if (s == "cross_modal") return LossVariant::cross_modal;
    if (s == "instance") return LossVariant::instance;
    throw ParameterError("loss variant: unknown value '" + s + "'");
}

std::string to_string(LossVariant v) {
    return v == LossVariant::cross_modal ? "cross_modal" : "instance";
}

void validate(const TrainConfig& config) {
    if (config.batch_size < 2) throw ParameterError("training: batch_size must be >= 2");
    if (config.epochs < 1) throw ParameterError("training: epochs must be >= 1");
    if (config.lr <= 0.0) throw ParameterError("training: lr must be positive");
    if (config.tau <= 0.0) throw ParameterError("training: tau must be positive");
    if (config.probe.lr <= 0.0 || config.probe.max_epochs < 1 || config.probe.patience < 1 ||
        config.probe.val_interval < 1) {
        throw ParameterError("probe: lr, max_epochs, patience and val_interval must be positive");
    }
}

std::string config_json(const TrainConfig& config) {
    nlohmann::json j;
    j["seed"] = config.seed;
    j["epochs"] = config.epochs;
    j["batch_size"] = config.batch_size;
    j["lr"] = config.lr;
    j["tau"] = config.tau;
    j["beta1"] = config.beta1;
    j["beta2"] = config.beta2;
    j["eps"] = config.eps;
    j["max_steps"] = config.max_steps;
    j["loss"] = to_string(config.loss);
    j["encoder"] = to_string(config.encoder);
    j["negatives"] = to_string(config.negatives);
    j["split"] = {config.split_train, config.split_val, config.split_test};
    j["split_seed"] = config.split_seed;
    j["probe"] = {{"lr", config.probe.lr},
                  {"max_epochs", config.probe.max_epochs},
                  {"patience", config.probe.patience},
                  {"val_interval", config.probe.val_interval},
                  {"seed", config.probe.seed}};
    nlohmann::json jm;
    jm["input_width"] = config.model.input_width;
    jm["hidden_width"] = config.model.hidden_width;
    jm["output_dim"] = config.model.output_dim;
    jm["scales"] = nlohmann::json::array();
    for (const auto& s : config.model.scales) {
        jm["scales"].push_back({{"patch_len", s.patch_len}, {"mask_ratio", s.mask_ratio}});
    }
    jm["branches"] = nlohmann::json::array();
    for (const auto& b : config.model.branches) {
        jm["branches"].push_back({{"kernel_size", b.kernel_size}, {"n_layers", b.n_layers}});
    }
    j["model"] = jm;
    return j.dump();
}

MTDEEncoderSpec resolve_model_spec(const TrainConfig& config, double fs, int window_len) {
    MTDEEncoderSpec spec = config.model;
    if (spec.scales.empty()) {
        MTDEEncoderSpec defaults = default_encoder_spec(fs);
        spec.scales = defaults.scales;
        if (spec.branches.empty()) spec.branches = defaults.branches;
    }
    if (spec.branches.empty()) {
        // deeper branches for finer scales
        const int n = static_cast<int>(spec.scales.size());
        for (int b = 0; b < n; ++b) spec.branches.push_back({3, std::max(1, 4 - b)});
    }
    if (spec.branches.size() != spec.scales.size()) {
        throw ParameterError("model: scales and branches must have equal length");
    }
    spec = apply_variant(spec, config.encoder);
    clamp_depths(spec, window_len);
    return spec;
}

std::string run_report_json(const RunReport& report) {
    nlohmann::json j;
    j["tag"] = report.tag;
    j["steps"] = report.steps;
    j["param_count"] = report.param_count;
    j["wall_clock_sec"] = report.wall_clock_sec;
    j["loss_curve"] = report.loss_curve;
    j["config"] = nlohmann::json::parse(report.config_echo);
    if (report.has_probe) {
        j["probe"] = {{"train", nlohmann::json::parse(report.probe_train.to_json())},
                      {"val", nlohmann::json::parse(report.probe_val.to_json())},
                      {"test", nlohmann::json::parse(report.probe_test.to_json())}};
    }
    return j.dump(2);
}

std::string loss_curve_csv(const RunReport& report) {
    std::string out = "step,loss\n";
    char buf[64];
    for (std::size_t i = 0; i < report.loss_curve.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i, report.loss_curve[i]);
        out += buf;
    }
    return out;
}

// ---- pretraining ----------------------------------------------------------------

PretrainResult pretrain(const MultiModalDataset& train_set, const GroupingResult& grouping,
                        const TrainConfig& config) {
    validate(config);
    if (train_set.n_windows < config.batch_size) {
        throw ParameterError("pretrain: dataset smaller than one batch");
    }
    const int k = grouping.num_groups();
    if (config.loss == LossVariant::cross_modal && k < 2) {
        throw ContractError(
            "pretrain: cross-modal loss needs K >= 2 groups; "
            "use the instance loss for single-group runs");
    }

    const auto start = Clock::now();
    MTDEEncoderSpec spec = resolve_model_spec(config, train_set.fs, train_set.window_len);
    std::vector<int> channels;
    for (const auto& m : train_set.modalities) channels.push_back(m.channels);
    GroupEncoderBank bank(spec, grouping.groups, channels, mix64(config.seed, 0xba9c));

    AdamConfig adam{config.lr, config.beta1, config.beta2, config.eps};
    std::vector<AdamState> states(bank.parameters().size());

    RunReport report;
    report.tag = "pretrain";
    report.config_echo = config_json(config);
    report.param_count = bank.parameter_count();

    long step = 0;
    bool done = config.max_steps == 0;
    for (int epoch = 0; epoch < config.epochs && !done; ++epoch) {
        std::vector<int> order(static_cast<std::size_t>(train_set.n_windows));
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng = Rng(config.seed).fork(0xe90c + static_cast<std::uint64_t>(epoch));
        shuffle_rng.shuffle(order);

        for (std::size_t pos = 0; pos < order.size() && !done; pos += config.batch_size) {
            const std::size_t stop = std::min(order.size(), pos + config.batch_size);
            if (stop - pos < 2) break;  // contrastive batches need >= 2 samples

            const std::uint64_t step_seed = mix64(config.seed, 0x57e9 + static_cast<std::uint64_t>(step));
            Tape tape;
            bank.zero_grads();

            // Stacked embeddings are batch-centered before the loss: the raw
            // group embeddings share one dominant direction, which drives all
            // cosines to 1 and flattens the objective.
            Tensor loss;
            if (config.loss == LossVariant::cross_modal) {
                std::vector<Tensor> group_embeddings;
                for (int g = 0; g < k; ++g) {
                    std::vector<Tensor> rows;
                    for (std::size_t i = pos; i < stop; ++i) {
                        const int w = order[i];
                        const std::uint64_t seed =
                            mix64(mix64(step_seed, static_cast<std::uint64_t>(w)),
                                  static_cast<std::uint64_t>(g));
                        rows.push_back(bank.encode_sample(tape, train_set, w, g, seed, true));
                    }
                    group_embeddings.push_back(center_columns(tape, stack_rows(tape, rows)));
                }
                loss = cross_modal_loss(tape, group_embeddings, config.tau, config.negatives);
            } else {
                // instance objective: clean view vs masked view, summed over groups
                for (int g = 0; g < k; ++g) {
                    std::vector<Tensor> clean, masked;
                    for (std::size_t i = pos; i < stop; ++i) {
                        const int w = order[i];
                        const std::uint64_t seed =
                            mix64(mix64(step_seed, static_cast<std::uint64_t>(w)),
                                  static_cast<std::uint64_t>(g));
                        clean.push_back(bank.encode_sample(tape, train_set, w, g, 0, false));
                        masked.push_back(bank.encode_sample(tape, train_set, w, g, seed, true));
                    }
                    Tensor term = instance_contrastive_loss(
                        tape, center_columns(tape, stack_rows(tape, clean)),
                        center_columns(tape, stack_rows(tape, masked)), config.tau,
                        config.negatives);
                    loss = loss.defined() ? add(tape, loss, term) : term;
                }
            }

            const double loss_value = loss.item();
            if (!std::isfinite(loss_value)) {
                throw TrainingError("pretrain: loss diverged", step);
            }
            tape.backward(loss);
            auto& params = bank.parameters();
            for (std::size_t p = 0; p < params.size(); ++p) {
                adam_step(params[p].second, states[p], adam);
            }
            report.loss_curve.push_back(loss_value);
            step += 1;
            if (config.max_steps >= 0 && step >= config.max_steps) done = true;
        }
    }

    report.steps = step;
    report.wall_clock_sec = seconds_since(start);
    return {std::move(bank), std::move(report)};
}

std::vector<std::vector<double>> extract_features(const GroupEncoderBank& bank,
                                                  const MultiModalDataset& dataset) {
    std::vector<std::vector<double>> features;
    features.reserve(static_cast<std::size_t>(dataset.n_windows));
    Tape tape(false);
    for (int w = 0; w < dataset.n_windows; ++w) {
        std::vector<double> row;
        for (int g = 0; g < bank.num_groups(); ++g) {
            Tensor h = bank.encode_sample(tape, dataset, w, g, 0, false);
            row.insert(row.end(), h.data().begin(), h.data().end());
        }
        features.push_back(std::move(row));
    }
    return features;
}

// ---- linear probe ----------------------------------------------------------------

ProbeOutcome linear_probe(const GroupEncoderBank& bank, const SplitResult& splits, TaskKind task,
                          const TrainConfig& config) {
    check_task(splits.train, task);
    assert_no_leakage(splits);

    const auto f_train = extract_features(bank, splits.train);
    const auto f_val = extract_features(bank, splits.val);
    const auto f_test = extract_features(bank, splits.test);

    Standardizer standardizer;
    standardizer.fit(f_train);
    Tensor x_train = standardizer.apply(f_train);
    Tensor x_val = standardizer.apply(f_val);
    Tensor x_test = standardizer.apply(f_test);

    const int dims = x_train.dim(1);
    AdamConfig adam{config.probe.lr, config.beta1, config.beta2, config.eps};

    if (task == TaskKind::regression) {
        const auto y_train = double_labels(splits.train);
        double y_mean = std::accumulate(y_train.begin(), y_train.end(), 0.0) /
                        static_cast<double>(y_train.size());
        double y_var = 0.0;
        for (double y : y_train) y_var += (y - y_mean) * (y - y_mean);
        double y_sd = std::sqrt(y_var / static_cast<double>(y_train.size()));
        if (y_sd < 1e-12) y_sd = 1.0;

        Tensor targets = Tensor::zeros({x_train.dim(0), 1});
        for (std::size_t i = 0; i < y_train.size(); ++i) {
            targets.data()[i] = (y_train[i] - y_mean) / y_sd;
        }

        HeadParams head = init_head(1, dims, config.probe.seed);
        std::vector<AdamState> states(2);
        HeadParams best{Tensor::from_data(head.w.shape(), head.w.data()),
                        Tensor::from_data(head.b.shape(), head.b.data())};
        double best_val = std::numeric_limits<double>::infinity();
        int stale = 0;
        for (int epoch = 0; epoch < config.probe.max_epochs; ++epoch) {
            Tape tape;
            head.w.zero_grad();
            head.b.zero_grad();
            Tensor loss = regression_loss(tape, x_train, head, targets);
            tape.backward(loss);
            auto params = head_param_list(head);
            for (std::size_t p = 0; p < params.size(); ++p) adam_step(params[p], states[p], adam);

            const bool evaluate = (epoch + 1) % config.probe.val_interval == 0 ||
                                  epoch + 1 == config.probe.max_epochs;
            if (!evaluate) continue;
            const auto val_pred = predict_regression(head, x_val, y_mean, y_sd);
            const double val_mae = metrics(val_pred, double_labels(splits.val)).mae;
            if (val_mae < best_val) {
                best_val = val_mae;
                best.w.data() = head.w.data();
                best.b.data() = head.b.data();
                stale = 0;
            } else if (++stale >= config.probe.patience) {
                break;
            }
        }

        ProbeOutcome out;
        out.train = metrics(predict_regression(best, x_train, y_mean, y_sd), double_labels(splits.train));
        out.val = metrics(predict_regression(best, x_val, y_mean, y_sd), double_labels(splits.val));
        out.test = metrics(predict_regression(best, x_test, y_mean, y_sd), double_labels(splits.test));
        return out;
    }

    // classification
    const auto l_train = int_labels(splits.train);
    const auto l_val = int_labels(splits.val);
    const auto l_test = int_labels(splits.test);
    int n_classes = 0;
    for (const auto* labels : {&l_train, &l_val, &l_test}) {
        for (int l : *labels) n_classes = std::max(n_classes, l + 1);
    }
    if (n_classes < 2) throw ContractError("probe: need at least 2 classes");

    Tensor onehot = onehot_tensor(l_train, n_classes);
    HeadParams head = init_head(n_classes, dims, config.probe.seed);
    std::vector<AdamState> states(2);
    HeadParams best{Tensor::from_data(head.w.shape(), head.w.data()),
                    Tensor::from_data(head.b.shape(), head.b.data())};
    double best_val = -1.0;
    int stale = 0;
    for (int epoch = 0; epoch < config.probe.max_epochs; ++epoch) {
        Tape tape;
        head.w.zero_grad();
        head.b.zero_grad();
        Tensor loss = classification_loss(tape, x_train, head, onehot);
        tape.backward(loss);
        auto params = head_param_list(head);
        for (std::size_t p = 0; p < params.size(); ++p) adam_step(params[p], states[p], adam);

        const bool evaluate = (epoch + 1) % config.probe.val_interval == 0 ||
                              epoch + 1 == config.probe.max_epochs;
        if (!evaluate) continue;
        const double val_acc = metrics(predict_scores(head, x_val), l_val).acc;
        if (val_acc > best_val) {
            best_val = val_acc;
            best.w.data() = head.w.data();
            best.b.data() = head.b.data();
            stale = 0;
        } else if (++stale >= config.probe.patience) {
            break;
        }
    }

    ProbeOutcome out;
    out.train = metrics(predict_scores(best, x_train), l_train);
    out.val = metrics(predict_scores(best, x_val), l_val);
    out.test = metrics(predict_scores(best, x_test), l_test);
    return out;
}

// ---- supervised baseline -----------------------------------------------------------

namespace {

RunReport supervised_run(const SplitResult& splits, const GroupingResult& grouping,
                         const TrainConfig& config, TaskKind task) {
    validate(config);
    check_task(splits.train, task);
    const auto start = Clock::now();

    const MultiModalDataset& train_set = splits.train;
    MTDEEncoderSpec spec = resolve_model_spec(config, train_set.fs, train_set.window_len);
    std::vector<int> channels;
    for (const auto& m : train_set.modalities) channels.push_back(m.channels);
    GroupEncoderBank bank(spec, grouping.groups, channels, mix64(config.seed, 0xba9c));

    const int feature_dim = bank.num_groups() * spec.output_dim;

    double y_mean = 0.0, y_sd = 1.0;
    int n_classes = 0;
    std::vector<int> l_train, l_val;
    if (task == TaskKind::regression) {
        const auto y = double_labels(train_set);
        y_mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
        double var = 0.0;
        for (double v : y) var += (v - y_mean) * (v - y_mean);
        y_sd = std::sqrt(var / static_cast<double>(y.size()));
        if (y_sd < 1e-12) y_sd = 1.0;
    } else {
        l_train = int_labels(train_set);
        l_val = int_labels(splits.val);
        for (const auto* labels : {&l_train, &l_val}) {
            for (int l : *labels) n_classes = std::max(n_classes, l + 1);
        }
        for (int l : int_labels(splits.test)) n_classes = std::max(n_classes, l + 1);
        if (n_classes < 2) throw ContractError("supervised: need at least 2 classes");
    }

    HeadParams head = init_head(task == TaskKind::regression ? 1 : n_classes, feature_dim,
                                mix64(config.seed, 0x6ead5));

    AdamConfig adam{config.lr, config.beta1, config.beta2, config.eps};
    std::vector<AdamState> states(bank.parameters().size() + 2);

    RunReport report;
    report.tag = "supervised";
    report.config_echo = config_json(config);
    report.param_count = bank.parameter_count() + head.w.size() + head.b.size();

    auto snapshot = [&]() {
        std::vector<std::vector<double>> snap;
        for (auto& [name, t] : bank.parameters()) snap.push_back(t.data());
        snap.push_back(head.w.data());
        snap.push_back(head.b.data());
        return snap;
    };
    auto restore = [&](const std::vector<std::vector<double>>& snap) {
        std::size_t i = 0;
        for (auto& [name, t] : bank.parameters()) t.data() = snap[i++];
        head.w.data() = snap[i++];
        head.b.data() = snap[i++];
    };

    auto eval_split = [&](const MultiModalDataset& ds, const std::vector<int>& labels_int) {
        const auto features = extract_features(bank, ds);
        Tensor x = rows_tensor(features);
        if (task == TaskKind::regression) {
            return metrics(predict_regression(head, x, y_mean, y_sd), double_labels(ds));
        }
        return metrics(predict_scores(head, x), labels_int);
    };

    std::vector<std::vector<double>> best_snap = snapshot();
    double best_val = task == TaskKind::regression ? std::numeric_limits<double>::infinity() : -1.0;
    int stale = 0;
    long step = 0;
    bool done = config.max_steps == 0;
    for (int epoch = 0; epoch < config.epochs && !done; ++epoch) {
        std::vector<int> order(static_cast<std::size_t>(train_set.n_windows));
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng = Rng(config.seed).fork(0xe90c + static_cast<std::uint64_t>(epoch));
        shuffle_rng.shuffle(order);

        for (std::size_t pos = 0; pos < order.size() && !done; pos += config.batch_size) {
            const std::size_t stop = std::min(order.size(), pos + config.batch_size);
            if (stop == pos) break;
            const std::uint64_t step_seed = mix64(config.seed, 0x57e9 + static_cast<std::uint64_t>(step));

            Tape tape;
            bank.zero_grads();
            head.w.zero_grad();
            head.b.zero_grad();

            std::vector<Tensor> feature_rows;
            for (std::size_t i = pos; i < stop; ++i) {
                const int w = order[i];
                std::vector<Tensor> parts;
                for (int g = 0; g < bank.num_groups(); ++g) {
                    const std::uint64_t seed = mix64(mix64(step_seed, static_cast<std::uint64_t>(w)),
                                                     static_cast<std::uint64_t>(g));
                    parts.push_back(bank.encode_sample(tape, train_set, w, g, seed, true));
                }
                feature_rows.push_back(parts.size() == 1 ? parts[0] : concat(tape, parts, 0));
            }
            Tensor x = stack_rows(tape, feature_rows);

            Tensor loss;
            if (task == TaskKind::regression) {
                Tensor targets = Tensor::zeros({x.dim(0), 1});
                for (std::size_t i = pos; i < stop; ++i) {
                    targets.data()[i - pos] =
                        (static_cast<double>(train_set.labels[static_cast<std::size_t>(order[i])]) -
                         y_mean) / y_sd;
                }
                loss = regression_loss(tape, x, head, targets);
            } else {
                std::vector<int> batch_labels;
                for (std::size_t i = pos; i < stop; ++i) {
                    batch_labels.push_back(l_train[static_cast<std::size_t>(order[i])]);
                }
                loss = classification_loss(tape, x, head, onehot_tensor(batch_labels, n_classes));
            }

            const double loss_value = loss.item();
            if (!std::isfinite(loss_value)) throw TrainingError("supervised: loss diverged", step);
            tape.backward(loss);
            auto& params = bank.parameters();
            for (std::size_t p = 0; p < params.size(); ++p) adam_step(params[p].second, states[p], adam);
            adam_step(head.w, states[params.size()], adam);
            adam_step(head.b, states[params.size() + 1], adam);
            report.loss_curve.push_back(loss_value);
            step += 1;
            if (config.max_steps >= 0 && step >= config.max_steps) done = true;
        }

        const MetricReport val_report = eval_split(splits.val, l_val);
        const double val_metric = task == TaskKind::regression ? val_report.mae : val_report.acc;
        const bool improved = task == TaskKind::regression ? val_metric < best_val
                                                           : val_metric > best_val;
        if (improved) {
            best_val = val_metric;
            best_snap = snapshot();
            stale = 0;
        } else if (++stale >= config.probe.patience) {
            break;
        }
    }

    restore(best_snap);
    report.has_probe = true;
    report.probe_train = eval_split(splits.train, l_train);
    report.probe_val = eval_split(splits.val, l_val);
    report.probe_test = eval_split(splits.test, int_labels(splits.test));
    report.steps = step;
    report.wall_clock_sec = seconds_since(start);
    return report;
}

}  // namespace

// ---- ablation harness -----------------------------------------------------------------

std::vector<std::string> all_ablation_variants() {
    return {"full",         "wo_img",       "random_grouping", "full_grouping",
            "wo_mask",      "moderate_mask", "wo_patch",        "moderate_patch",
            "plain_tcn",    "supervised",    "instance_contrastive"};
}

std::vector<RunReport> ablate(const MultiModalDataset& dataset, const TrainConfig& config,
                              const GroupingOptions& grouping_options,
                              const std::vector<std::string>& variants) {
    validate(config);
    if (variants.empty()) throw ParameterError("ablate: empty variant list");
    for (const auto& v : variants) plan_for(v);  // reject unknown names up front

    const TaskKind task = dataset.label_kind == LabelKind::classification
                              ? TaskKind::classification
                              : TaskKind::regression;
    if (dataset.label_kind == LabelKind::none) {
        throw ContractError("ablate: dataset has no labels to probe against");
    }

    SplitResult splits = split(dataset, config.split_train, config.split_val, config.split_test,
                               config.split_seed);
    assert_no_leakage(splits);

    // one embedding pass feeds every variant's partition
    auto embedding = embed_modalities(splits.train, grouping_options.method, grouping_options.seed,
                                      grouping_options.sample_cap);
    auto distances = inter_modal_distances(embedding);

    std::vector<RunReport> reports;
    for (const std::string& name : variants) {
        const VariantPlan plan = plan_for(name);
        const auto start = Clock::now();
        GroupingResult partition =
            grouping_variant_from(distances, embedding, plan.grouping, grouping_options);

        TrainConfig cfg = config;
        cfg.encoder = plan.encoder;
        cfg.loss = plan.loss;
        if (cfg.loss == LossVariant::cross_modal && partition.num_groups() < 2) {
            cfg.loss = LossVariant::instance;  // single group: no cross-modal pairs
        }

        RunReport report;
        if (plan.supervised) {
            report = supervised_run(splits, partition, cfg, task);
        } else {
            PretrainResult result = pretrain(splits.train, partition, cfg);
            report = std::move(result.report);
            ProbeOutcome probe = linear_probe(result.bank, splits, task, cfg);
            report.has_probe = true;
            report.probe_train = probe.train;
            report.probe_val = probe.val;
            report.probe_test = probe.test;
        }
        report.tag = name;
        report.wall_clock_sec = seconds_since(start);
        reports.push_back(std::move(report));
    }
    return reports;
}

std::string ablation_table_json(const std::vector<RunReport>& reports) {
    if (reports.empty()) throw ParameterError("ablation_table_json: no reports");
    nlohmann::json table;
    const TaskKind task = reports[0].probe_test.task;
    table["task"] = to_string(task);
    table["rows"] = nlohmann::json::array();
    for (const RunReport& r : reports) {
        nlohmann::json row;
        row["variant"] = r.tag;
        if (task == TaskKind::regression) {
            row["RMSE"] = r.probe_test.rmse;
            row["MAE"] = r.probe_test.mae;
        } else {
            row["Acc"] = r.probe_test.acc;
            row["F1"] = r.probe_test.f1;
            row["Recall"] = r.probe_test.recall;
            row["AUPRC"] = r.probe_test.auprc;
        }
        table["rows"].push_back(row);
    }
    return table.dump(2);
}

}  // namespace mbsl
