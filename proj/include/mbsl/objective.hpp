#pragma once

#include <string>
#include <vector>

#include "mbsl/tensor.hpp"

namespace mbsl {

// Which embeddings populate the NT-Xent denominator: only the other view
// (SimCLR cross-view convention, the default) or additionally the same-view
// non-anchors.
enum class NegativeMode { cross_view, both_views };
NegativeMode negative_mode_from_string(const std::string& s);
std::string to_string(NegativeMode m);

// Symmetrized NT-Xent between two row-aligned views [N x D]: cosine
// similarities over temperature, positive pair (i, i), denominator over the
// other view's rows (the positive included), averaged over both directions
// and the batch.
Tensor pairwise_nt_xent(Tape& tape, const Tensor& view1, const Tensor& view2, double tau,
                        NegativeMode negatives = NegativeMode::cross_view);

// Sum of pairwise_nt_xent over all unordered group pairs; K groups give
// K*(K-1)/2 terms. K == 1 is a contract error (use the instance loss).
Tensor cross_modal_loss(Tape& tape, const std::vector<Tensor>& group_embeddings, double tau,
                        NegativeMode negatives = NegativeMode::cross_view);

// NT-Xent between a view and its masked-augmented view; ablation objective.
Tensor instance_contrastive_loss(Tape& tape, const Tensor& view, const Tensor& augmented,
                                 double tau, NegativeMode negatives = NegativeMode::cross_view);

enum class TaskKind { regression, classification };
TaskKind task_kind_from_string(const std::string& s);
std::string to_string(TaskKind t);

struct MetricReport {
    TaskKind task = TaskKind::regression;
    // regression
    double mae = 0.0;
    double sd_mae = 0.0;
    double rmse = 0.0;
    // classification (macro-averaged over classes present in the labels)
    double acc = 0.0;
    double f1 = 0.0;
    double recall = 0.0;
    double auprc = 0.0;

    std::string to_json() const;
};

MetricReport metrics(const std::vector<double>& predictions, const std::vector<double>& labels);
// scores[i] holds one score per class; labels are class ids.
MetricReport metrics(const std::vector<std::vector<double>>& scores,
                     const std::vector<int>& labels);

}  // namespace mbsl
