// SPDX-License-Identifier: Apache-2.0
#include "taskmerge/reports.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "taskmerge/errors.hpp"

namespace taskmerge {

using nlohmann::json;

namespace {

template <typename T>
T field(const json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) {
        throw InvalidArgument(std::string("JSON report lacks \"") + key + "\"");
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("JSON field \"") + key + "\" has the wrong type: " + e.what());
    }
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

} // namespace

json to_json(const SaliencyMatrix& s) {
    return {{"task_ids", s.task_ids}, {"layer_names", s.layer_names}, {"scores", s.scores}};
}

json to_json(const SharedMask& m) { return {{"layer_names", m.layer_names}, {"values", m.values}}; }

json to_json(const LayerMaskSet& ms) {
    return {{"task_ids", ms.task_ids}, {"layer_names", ms.layer_names}, {"masks", ms.masks}, {"eta", ms.eta}};
}

json to_json(const LambdaTable& t) {
    return {{"task_ids", t.task_ids},
            {"layer_names", t.layer_wise() ? json(t.layer_names) : json(nullptr)},
            {"lambdas", t.values}};
}

json to_json(const DiversityReport& r) {
    return {{"K", r.tasks},
            {"dv_k1", r.dv_k1},
            {"dv_k2", r.dv_k2},
            {"ratio", finite_or_null(r.ratio)},
            {"sqrt_K", r.threshold},
            {"passed", r.passed}};
}

SaliencyMatrix saliency_from_json(const json& j) {
    SaliencyMatrix s;
    s.task_ids = field<std::vector<std::string>>(j, "task_ids");
    s.layer_names = field<std::vector<std::string>>(j, "layer_names");
    s.scores = field<std::vector<std::vector<double>>>(j, "scores");
    if (s.scores.size() != s.task_ids.size()) {
        throw InvalidArgument("saliency scores must have one row per task");
    }
    for (const auto& row : s.scores) {
        if (row.size() != s.layer_names.size()) {
            throw InvalidArgument("saliency rows must have one score per layer");
        }
    }
    return s;
}

SharedMask shared_mask_from_json(const json& j) {
    if (j.is_object() && j.contains("shared_mask")) {
        return shared_mask_from_json(j.at("shared_mask"));
    }
    SharedMask m;
    m.layer_names = field<std::vector<std::string>>(j, "layer_names");
    const auto values = field<std::vector<int>>(j, "values");
    if (values.size() != m.layer_names.size()) {
        throw InvalidArgument("mask must have one value per layer");
    }
    for (int v : values) {
        if (v != 0 && v != 1) {
            throw InvalidArgument("mask values must be 0 or 1");
        }
        m.values.push_back(static_cast<std::uint8_t>(v));
    }
    return m;
}

LambdaTable lambda_table_from_json(const json& j) {
    LambdaTable t;
    t.task_ids = field<std::vector<std::string>>(j, "task_ids");
    if (j.contains("layer_names") && !j.at("layer_names").is_null()) {
        t.layer_names = field<std::vector<std::string>>(j, "layer_names");
    }
    t.values = field<std::vector<std::vector<double>>>(j, "lambdas");
    if (t.values.size() != t.task_ids.size()) {
        throw InvalidArgument("lambda table must have one row per task");
    }
    const std::size_t cols = t.layer_wise() ? t.layer_names.size() : 1;
    for (const auto& row : t.values) {
        if (row.size() != cols) {
            throw InvalidArgument("lambda table rows must have " + std::to_string(cols) + " entries");
        }
    }
    return t;
}

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    try {
        return json::parse(buf.str());
    } catch (const json::parse_error& e) {
        throw InvalidArgument(path.string() + " is not valid JSON: " + e.what());
    }
}

void write_json_file(const json& j, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out << j.dump(2) << '\n';
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

} // namespace taskmerge
