#include "mbsl/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "mbsl/errors.hpp"

namespace mbsl {

namespace {

// logsumexp over [S | V] rows where V is the same-view similarity matrix with
// the anchor's own column masked out.
Tensor lse_both_views(Tape& tape, const Tensor& cross, const Tensor& same) {
    const int n = cross.dim(0);
    Tensor joint = concat(tape, {cross, same}, 1);  // [N x 2N]
    Tensor mask = Tensor::full({n, 2 * n}, 1.0);
    for (int i = 0; i < n; ++i) {
        mask.data()[static_cast<std::size_t>(i) * 2 * n + n + i] = 0.0;
    }
    return row_logsumexp_masked(tape, joint, mask);
}

Tensor direction_loss(Tape& tape, const Tensor& anchors_norm, const Tensor& others_norm,
                      double tau, NegativeMode negatives) {
    Tensor sims = scale(tape, matmul_nt(tape, anchors_norm, others_norm), 1.0 / tau);
    Tensor positives = diag(tape, sims);
    Tensor lse;
    if (negatives == NegativeMode::cross_view) {
        lse = row_logsumexp(tape, sims);
    } else {
        Tensor same = scale(tape, matmul_nt(tape, anchors_norm, anchors_norm), 1.0 / tau);
        lse = lse_both_views(tape, sims, same);
    }
    return mean_all(tape, sub(tape, lse, positives));
}

int argmax_row(const std::vector<double>& row) {
    int best = 0;
    for (std::size_t c = 1; c < row.size(); ++c) {
        if (row[c] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
    }
    return best;
}

// Area under the precision-recall curve by trapezoidal integration over the
// distinct-score thresholds, starting from the (recall 0, precision 1) point.
double auprc_binary(const std::vector<double>& scores, const std::vector<bool>& positive) {
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&scores](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::size_t total_pos = 0;
    for (bool p : positive) total_pos += p ? 1 : 0;
    if (total_pos == 0) return 0.0;

    double area = 0.0;
    double prev_recall = 0.0, prev_precision = 1.0;
    std::size_t tp = 0, predicted = 0;
    std::size_t i = 0;
    while (i < n) {
        // advance over ties so each distinct score is one threshold
        const double threshold = scores[order[i]];
        while (i < n && scores[order[i]] == threshold) {
            tp += positive[order[i]] ? 1 : 0;
            predicted += 1;
            ++i;
        }
        const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(predicted);
        area += (recall - prev_recall) * 0.5 * (precision + prev_precision);
        prev_recall = recall;
        prev_precision = precision;
    }
    return area;
}

}  // namespace

NegativeMode negative_mode_from_string(const std::string& s) {
    if (s == "cross_view") return NegativeMode::cross_view;
    if (s == "both_views") return NegativeMode::both_views;
    throw ParameterError("negatives: unknown value '" + s + "'");
}

std::string to_string(NegativeMode m) {
    return m == NegativeMode::cross_view ? "cross_view" : "both_views";
}

TaskKind task_kind_from_string(const std::string& s) {
    if (s == "regression") return TaskKind::regression;
    if (s == "classification") return TaskKind::classification;
    throw ParameterError("task: unknown value '" + s + "'");
}

std::string to_string(TaskKind t) {
    return t == TaskKind::regression ? "regression" : "classification";
}

Tensor pairwise_nt_xent(Tape& tape, const Tensor& view1, const Tensor& view2, double tau,
                        NegativeMode negatives) {
    if (view1.ndim() != 2 || view2.ndim() != 2 || view1.shape() != view2.shape()) {
        throw DimensionError("nt_xent: views must share shape [N x D]");
    }
    if (view1.dim(0) < 2) throw ContractError("nt_xent: batch must contain at least 2 samples");
    if (tau <= 0.0) throw ParameterError("nt_xent: tau must be positive");

    Tensor n1 = l2_normalize_rows(tape, view1);
    Tensor n2 = l2_normalize_rows(tape, view2);
    Tensor d12 = direction_loss(tape, n1, n2, tau, negatives);
    Tensor d21 = direction_loss(tape, n2, n1, tau, negatives);
    return scale(tape, add(tape, d12, d21), 0.5);
}

Tensor cross_modal_loss(Tape& tape, const std::vector<Tensor>& group_embeddings, double tau,
                        NegativeMode negatives) {
    const std::size_t k = group_embeddings.size();
    if (k == 0) throw ParameterError("cross_modal_loss: no group embeddings");
    if (k == 1) {
        throw ContractError(
            "cross_modal_loss: a single group has no cross-modal pairs; "
            "use instance_contrastive_loss for single-group runs");
    }
    Tensor total;
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = i + 1; j < k; ++j) {
            Tensor term = pairwise_nt_xent(tape, group_embeddings[i], group_embeddings[j], tau,
                                           negatives);
            total = total.defined() ? add(tape, total, term) : term;
        }
    }
    return total;
}

Tensor instance_contrastive_loss(Tape& tape, const Tensor& view, const Tensor& augmented,
                                 double tau, NegativeMode negatives) {
    return pairwise_nt_xent(tape, view, augmented, tau, negatives);
}

MetricReport metrics(const std::vector<double>& predictions, const std::vector<double>& labels) {
    if (predictions.empty()) throw ParameterError("metrics: empty input");
    if (predictions.size() != labels.size()) {
        throw DimensionError("metrics: predictions and labels differ in length");
    }
    MetricReport r;
    r.task = TaskKind::regression;
    const std::size_t n = predictions.size();
    std::vector<double> abs_err(n);
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = predictions[i] - labels[i];
        abs_err[i] = std::fabs(e);
        sq += e * e;
    }
    r.mae = std::accumulate(abs_err.begin(), abs_err.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double a : abs_err) var += (a - r.mae) * (a - r.mae);
    r.sd_mae = std::sqrt(var / static_cast<double>(n));
    r.rmse = std::sqrt(sq / static_cast<double>(n));
    return r;
}

MetricReport metrics(const std::vector<std::vector<double>>& scores,
                     const std::vector<int>& labels) {
    if (scores.empty()) throw ParameterError("metrics: empty input");
    if (scores.size() != labels.size()) {
        throw DimensionError("metrics: scores and labels differ in length");
    }
    const std::size_t n = scores.size();
    const int n_classes = static_cast<int>(scores[0].size());
    if (n_classes < 2) throw ParameterError("metrics: need at least 2 class scores");
    for (const auto& row : scores) {
        if (static_cast<int>(row.size()) != n_classes) {
            throw DimensionError("metrics: ragged score rows");
        }
    }
    for (int label : labels) {
        if (label < 0 || label >= n_classes) throw ParameterError("metrics: label out of range");
    }

    MetricReport r;
    r.task = TaskKind::classification;

    std::vector<std::size_t> tp(static_cast<std::size_t>(n_classes), 0);
    std::vector<std::size_t> fp(static_cast<std::size_t>(n_classes), 0);
    std::vector<std::size_t> fn(static_cast<std::size_t>(n_classes), 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const int pred = argmax_row(scores[i]);
        const int truth = labels[i];
        if (pred == truth) {
            correct += 1;
            tp[static_cast<std::size_t>(truth)] += 1;
        } else {
            fp[static_cast<std::size_t>(pred)] += 1;
            fn[static_cast<std::size_t>(truth)] += 1;
        }
    }
    r.acc = static_cast<double>(correct) / static_cast<double>(n);

    double f1_sum = 0.0, recall_sum = 0.0, auprc_sum = 0.0;
    int present = 0;
    for (int c = 0; c < n_classes; ++c) {
        const std::size_t support = tp[static_cast<std::size_t>(c)] + fn[static_cast<std::size_t>(c)];
        if (support == 0) continue;  // class absent from the labels
        present += 1;
        const double recall = static_cast<double>(tp[static_cast<std::size_t>(c)]) /
                              static_cast<double>(support);
        const std::size_t predicted = tp[static_cast<std::size_t>(c)] + fp[static_cast<std::size_t>(c)];
        const double precision = predicted == 0
                                     ? 0.0
                                     : static_cast<double>(tp[static_cast<std::size_t>(c)]) /
                                           static_cast<double>(predicted);
        const double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall)
                                                   : 0.0;
        recall_sum += recall;
        f1_sum += f1;

        std::vector<double> class_scores(n);
        std::vector<bool> positive(n);
        for (std::size_t i = 0; i < n; ++i) {
            class_scores[i] = scores[i][static_cast<std::size_t>(c)];
            positive[i] = labels[i] == c;
        }
        auprc_sum += auprc_binary(class_scores, positive);
    }
    if (present == 0) throw ParameterError("metrics: no class present in labels");
    r.recall = recall_sum / present;
    r.f1 = f1_sum / present;
    r.auprc = auprc_sum / present;
    return r;
}

std::string MetricReport::to_json() const {
    nlohmann::json j;
    j["task"] = mbsl::to_string(task);
    if (task == TaskKind::regression) {
        j["MAE"] = mae;
        j["SD_of_MAE"] = sd_mae;
        j["RMSE"] = rmse;
    } else {
        j["Acc"] = acc;
        j["F1"] = f1;
        j["Recall"] = recall;
        j["AUPRC"] = auprc;
    }
    return j.dump();
}

}  // namespace mbsl
