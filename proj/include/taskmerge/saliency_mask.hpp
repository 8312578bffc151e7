// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "taskmerge/task_vector.hpp"

namespace taskmerge {

inline constexpr double kDefaultPruningRatio = 0.7;

/// K tasks x L layers of nonnegative layer scores.
struct SaliencyMatrix {
    std::vector<std::string> task_ids;
    std::vector<std::string> layer_names;
    std::vector<std::vector<double>> scores;

    std::size_t tasks() const { return task_ids.size(); }
    std::size_t layers() const { return layer_names.size(); }
};

/// Per-task binary layer masks produced by threshold_mask.
struct LayerMaskSet {
    std::vector<std::string> task_ids;
    std::vector<std::string> layer_names;
    std::vector<std::vector<std::uint8_t>> masks;
    double eta = kDefaultPruningRatio;
};

/// One keep(1)/prune(0) flag per layer, shared by all tasks.
struct SharedMask {
    std::vector<std::string> layer_names;
    std::vector<std::uint8_t> values;

    std::size_t ones() const;
    bool operator==(const SharedMask&) const = default;
};

/// Elementwise keep flags, one vector per layer in catalog order.
struct ParameterMask {
    std::vector<std::string> layer_names;
    std::vector<std::vector<std::uint8_t>> values;

    std::size_t ones() const;
    bool operator==(const ParameterMask&) const = default;
};

/// Mean absolute deviation of each task's layer from the cross-task mean layer:
///   s[k][l] = (1/d_l) * sum_i | tau_k^l[i] - (1/K) sum_j tau_j^l[i] |
SaliencyMatrix compute_saliency(std::span<const TaskVector> tvs);

/// Ablation score: mean absolute value of each task's layer, (1/d_l) * sum_i |tau_k^l[i]|.
SaliencyMatrix compute_absolute_score(std::span<const TaskVector> tvs);

/// Number of entries pruned out of `count` at ratio eta: floor(count * eta).
std::size_t pruned_count(std::size_t count, double eta);

/// Per row, keeps layers whose score is strictly greater than the
/// floor(L*eta)-th smallest score (1-indexed). Ties at the threshold are pruned.
LayerMaskSet threshold_mask(const SaliencyMatrix& s, double eta);

/// Layer l is kept iff at least one task keeps it.
SharedMask or_masks(const LayerMaskSet& ms);

/// Keeps exactly L - floor(L*eta) layers, chosen uniformly without replacement.
/// Layer l draws a Philox key from (seed, "random_layer_mask", l); the
/// smallest keys are retained.
std::vector<std::uint8_t> random_layer_mask(std::size_t layer_count, double eta, std::uint64_t seed);
SharedMask random_layer_mask(const std::vector<std::string>& layer_names, double eta, std::uint64_t seed);

/// Parameter-wise variant: per-parameter |tau_k[p] - mean_j tau_j[p]| ranked
/// globally over each task vector, thresholded like threshold_mask, OR-ed over tasks.
ParameterMask parameter_saliency_mask(std::span<const TaskVector> tvs, double eta);

} // namespace taskmerge
