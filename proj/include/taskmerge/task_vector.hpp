// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "taskmerge/tensor_store.hpp"

namespace taskmerge {

inline constexpr const char* kBaseFingerprintKey = "taskvec.base_fingerprint";
inline constexpr const char* kTaskIdKey = "taskvec.id";

/// Fine-tuned minus pre-trained weights for one task. Deltas are held as F64
/// tensors with the base checkpoint's names and shapes.
struct TaskVector {
    std::string id;
    Checkpoint deltas;
    /// Header fingerprint of the base this vector was derived from, if known.
    std::string base_fingerprint;

    LayerCatalog catalog() const { return catalog_of(deltas); }
};

TaskVector diff(const Checkpoint& finetuned, const Checkpoint& base, std::string id = "task");

/// base + coeff * delta, stored in the base dtype.
Checkpoint apply(const Checkpoint& base, const TaskVector& delta, double coeff);

/// Sum of coeff_k * tau_k, accumulated left to right in input order.
TaskVector linear_combine(std::span<const std::pair<const TaskVector*, double>> terms);

/// Layer catalog shared by a set of task vectors; throws IncompatibleError.
LayerCatalog validate_task_vectors(std::span<const TaskVector> tvs);

void save_task_vector(const TaskVector& tv, const std::filesystem::path& path);
/// Task id comes from the file's metadata, falling back to the filename stem.
TaskVector load_task_vector(const std::filesystem::path& path);

/// Throws IncompatibleError if tv records a fingerprint that does not match base.
void check_provenance(const TaskVector& tv, const Checkpoint& base);

} // namespace taskmerge
