// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "taskmerge/merge_methods.hpp"
#include "taskmerge/saliency_mask.hpp"
#include "taskmerge/theory_validation.hpp"

namespace taskmerge {

// JSON forms:
//   saliency:     {"task_ids": [...], "layer_names": [...], "scores": [[...], ...]}
//   shared mask:  {"layer_names": [...], "values": [0/1, ...]}
//   task masks:   {"task_ids": [...], "layer_names": [...], "masks": [[0/1, ...], ...], "eta": x}
//   lambda table: {"task_ids": [...], "layer_names": [...] | null, "lambdas": [[...], ...]}

nlohmann::json to_json(const SaliencyMatrix& s);
nlohmann::json to_json(const SharedMask& m);
nlohmann::json to_json(const LayerMaskSet& ms);
nlohmann::json to_json(const LambdaTable& t);
nlohmann::json to_json(const DiversityReport& r);

SaliencyMatrix saliency_from_json(const nlohmann::json& j);
/// Accepts a bare shared-mask object or a mask report carrying "shared_mask".
SharedMask shared_mask_from_json(const nlohmann::json& j);
LambdaTable lambda_table_from_json(const nlohmann::json& j);

/// Reads and parses a JSON file; IoError if unreadable, InvalidArgument if not JSON.
nlohmann::json read_json_file(const std::filesystem::path& path);
/// Writes j.dump(2) plus a trailing newline.
void write_json_file(const nlohmann::json& j, const std::filesystem::path& path);

} // namespace taskmerge
