#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mbsl/datagen.hpp"

namespace mbsl {

enum class EmbedMethod { tsne, pca };
enum class ThresholdPolicy { median, largest_gap, fixed };
enum class GroupingVariant { img, none, random, full };

EmbedMethod embed_method_from_string(const std::string& s);
std::string to_string(EmbedMethod m);
ThresholdPolicy threshold_policy_from_string(const std::string& s);
std::string to_string(ThresholdPolicy p);
GroupingVariant grouping_variant_from_string(const std::string& s);
std::string to_string(GroupingVariant v);

struct GroupingOptions {
    EmbedMethod method = EmbedMethod::tsne;
    std::uint64_t seed = 0;
    int sample_cap = 200;  // windows per modality entering the embedding
    ThresholdPolicy policy = ThresholdPolicy::median;
    double fixed_threshold = 0.0;  // used when policy == fixed
};

// Partition of modalities plus the evidence that produced it. `groups` holds
// ascending modality indices, ordered by smallest member.
struct GroupingResult {
    std::vector<std::vector<int>> groups;
    std::vector<std::vector<double>> distance_matrix;
    std::vector<std::array<double, 2>> embedding;  // per-modality centroid
    double threshold = 0.0;

    int num_groups() const { return static_cast<int>(groups.size()); }
    int group_of(int modality) const;
};

// Embeds every modality into 2-D: each (window, channel) trace is z-scored
// and treated as one point, all points are embedded jointly, and a modality's
// coordinate is the centroid of its points.
std::vector<std::array<double, 2>> embed_modalities(const MultiModalDataset& dataset,
                                                    EmbedMethod method, std::uint64_t seed,
                                                    int sample_cap);

std::vector<std::vector<double>> inter_modal_distances(
    const std::vector<std::array<double, 2>>& embedding);

double choose_threshold(const std::vector<std::vector<double>>& distance_matrix,
                        ThresholdPolicy policy, double fixed_value);

// Connected components of the graph with an edge wherever d < threshold.
GroupingResult group_by_threshold(const std::vector<std::vector<double>>& distance_matrix,
                                  double threshold);

// Checks the partition and both threshold invariants; throws ContractError.
void validate(const GroupingResult& result);

GroupingResult grouping_variant(const MultiModalDataset& dataset, GroupingVariant variant,
                                const GroupingOptions& options);

// Same as grouping_variant but reuses an already-computed distance matrix and
// embedding (the ablation harness embeds once and derives all partitions).
GroupingResult grouping_variant_from(const std::vector<std::vector<double>>& distance_matrix,
                                     const std::vector<std::array<double, 2>>& embedding,
                                     GroupingVariant variant, const GroupingOptions& options);

std::string grouping_to_json(const GroupingResult& result);

}  // namespace mbsl
