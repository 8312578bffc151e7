// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "taskmerge/saliency_mask.hpp"
#include "taskmerge/task_vector.hpp"

namespace taskmerge {

inline constexpr double kTaskArithmeticLambda = 0.3;
inline constexpr double kTiesLambda = 0.3;
inline constexpr double kTiesKeepFraction = 0.2;
inline constexpr double kPcbLambda = 1.2;
inline constexpr double kWiseFtAlpha = 0.5;

/// No mask, a layer mask, or an elementwise mask. Elements whose flag is 0
/// take the base checkpoint's bytes verbatim.
using MergeMask = std::variant<std::monostate, SharedMask, ParameterMask>;

/// Merging coefficients for AdaMerging-style application. Task-wise tables
/// have one column and no layer names; layer-wise tables are K x L.
struct LambdaTable {
    std::vector<std::string> task_ids;
    std::vector<std::string> layer_names;
    std::vector<std::vector<double>> values;

    bool layer_wise() const { return !layer_names.empty(); }
    double at(std::size_t task, std::size_t layer) const;
};

enum class MergeMethod { WeightAverage, TaskArithmetic, Ties, AdaMergingApply, PcbApply, WiseFt };

std::string method_name(MergeMethod method);
/// Accepts "task-arithmetic", "task_arithmetic", etc. Throws InvalidArgument.
MergeMethod parse_method(const std::string& name);

/// Declarative description of a merge, recorded under "merge.recipe" in outputs.
struct MergeRecipe {
    MergeMethod method = MergeMethod::TaskArithmetic;
    std::optional<double> lambda;
    std::vector<double> lambdas;
    std::optional<LambdaTable> lambda_table;
    double eta = kDefaultPruningRatio;
    std::string mask_source = "none";
    double keep_fraction = kTiesKeepFraction;
    double alpha = kWiseFtAlpha;
    std::uint64_t seed = 0;
    std::string preprocess = "none";
    double drop_rate = 0.0;
    std::vector<std::string> task_ids;

    /// Compact JSON with sorted keys; identical recipes give identical strings.
    std::string to_canonical_json() const;
};

inline constexpr const char* kRecipeKey = "merge.recipe";

Checkpoint weight_average(std::span<const Checkpoint> ckpts);

/// base + lambda * sum_k tau_k on kept elements.
Checkpoint task_arithmetic(const Checkpoint& base, std::span<const TaskVector> tvs, double lambda,
                           const MergeMask& mask = {});

/// Zeroes all but the top keep_fraction of entries by magnitude, ranked over
/// the whole task vector. Ties go to the lower (layer, flat index) position.
TaskVector trim_top_magnitude(const TaskVector& tv, double keep_fraction);

/// Number of entries kept out of `count`: count - floor(count * (1 - keep_fraction)).
std::uint64_t kept_count(std::uint64_t count, double keep_fraction);

/// mask -> trim -> sign election -> disjoint mean -> base + lambda * merged.
Checkpoint ties_merge(const Checkpoint& base, std::span<const TaskVector> tvs, double keep_fraction, double lambda,
                      const MergeMask& mask = {});

/// base^l + sum_k eta * lambda_k^l * tau_k^l on kept layers. Coefficients are
/// supplied by the caller; task-wise tables broadcast across layers.
Checkpoint adamerging_apply(const Checkpoint& base, std::span<const TaskVector> tvs, const LambdaTable& lambdas,
                            double eta, const MergeMask& mask = {});

/// base + sum_k beta_k * lambda_k * tau_k / sum_k beta_k, elementwise. Where
/// every beta is zero the merged delta is zero.
Checkpoint pcb_apply(const Checkpoint& base, std::span<const TaskVector> tvs, std::span<const Checkpoint> beta,
                     std::span<const double> lambdas, const MergeMask& mask = {});

/// Drop-and-rescale. Element i of layer n is dropped when the Philox draw for
/// (seed, "dare/" + n, i) falls below p; survivors are scaled by 1/(1-p).
TaskVector dare(const TaskVector& tv, double p, std::uint64_t seed);

/// Magnitude pruning without rescale; same ranking as trim_top_magnitude.
TaskVector mwp(const TaskVector& tv, double keep_fraction);

/// (1 - alpha) * base + alpha * finetuned.
Checkpoint wise_ft(const Checkpoint& base, const Checkpoint& finetuned, double alpha);

} // namespace taskmerge
