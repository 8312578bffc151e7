// SPDX-License-Identifier: Apache-2.0
#include "taskmerge/theory_validation.hpp"

#include <cmath>
#include <limits>
#include <set>

#include "taskmerge/counter_rng.hpp"
#include "taskmerge/errors.hpp"

namespace taskmerge {

std::vector<double> diversity(std::span<const TaskVector> tvs, const NeuronSelector& sel) {
    const LayerCatalog cat = validate_task_vectors(tvs);
    const LayerInfo* layer = nullptr;
    for (const auto& l : cat.layers) {
        if (l.name == sel.layer_name) {
            layer = &l;
        }
    }
    if (layer == nullptr) {
        throw InvalidArgument("selector layer \"" + sel.layer_name + "\" is not in the catalog");
    }
    if (sel.indices.empty()) {
        throw InvalidArgument("selector needs at least one index");
    }
    const std::uint64_t size = element_count(layer->shape);
    std::set<std::uint64_t> seen;
    for (auto i : sel.indices) {
        if (i >= size) {
            throw InvalidArgument("selector index " + std::to_string(i) + " out of range for \"" + sel.layer_name + "\"");
        }
        if (!seen.insert(i).second) {
            throw InvalidArgument("selector index " + std::to_string(i) + " repeated");
        }
    }

    const std::size_t K = tvs.size();
    const std::size_t S = sel.indices.size();
    std::vector<std::vector<double>> g(K, std::vector<double>(S));
    std::vector<double> mean(S, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
        const Tensor& t = tvs[k].deltas.entries.at(sel.layer_name);
        for (std::size_t s = 0; s < S; ++s) {
            g[k][s] = t.get(sel.indices[s]);
            mean[s] += g[k][s];
        }
    }
    for (auto& m : mean) {
        m /= static_cast<double>(K);
    }
    std::vector<double> dv(K, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
        double sq = 0.0;
        for (std::size_t s = 0; s < S; ++s) {
            const double d = g[k][s] - mean[s];
            sq += d * d;
        }
        dv[k] = std::sqrt(sq);
    }
    return dv;
}

DiversityReport prop1_experiment(const SyntheticSpec& spec) {
    if (spec.tasks < 2) {
        throw InvalidArgument("the synthetic experiment needs K >= 2");
    }
    if (spec.support < 1 || spec.support > spec.dim) {
        throw InvalidArgument("support size must lie in [1, dim]");
    }
    if (!(spec.signal > 0.0) || !(spec.noise >= 0.0)) {
        throw InvalidArgument("signal must be positive and noise nonnegative");
    }

    std::vector<TaskVector> tvs(spec.tasks);
    for (std::size_t k = 0; k < spec.tasks; ++k) {
        Tensor t(Dtype::F64, {spec.dim});
        for (std::uint64_t i = 0; i < spec.dim; ++i) {
            double v;
            if (k == 0 && i < spec.support) {
                v = counter_uniform(spec.seed, "prop1/sign", i) < 0.5 ? -spec.signal : spec.signal;
            } else {
                v = spec.noise == 0.0 ? 0.0 : spec.noise * counter_normal(spec.seed, "prop1/noise", k * spec.dim + i);
            }
            t.set(i, v);
        }
        tvs[k].id = "task" + std::to_string(k);
        tvs[k].deltas.entries.emplace("w", std::move(t));
    }

    NeuronSelector sel{"w", {}};
    for (std::uint64_t i = 0; i < spec.support; ++i) {
        sel.indices.push_back(i);
    }

    DiversityReport r;
    r.tasks = spec.tasks;
    r.dv_per_task = diversity(tvs, sel);
    r.dv_k1 = r.dv_per_task[0];
    r.dv_k2 = r.dv_per_task[1];
    if (r.dv_k2 > 0.0) {
        r.ratio = r.dv_k1 / r.dv_k2;
    } else if (r.dv_k1 > 0.0) {
        r.ratio = std::numeric_limits<double>::infinity();
    } else {
        r.ratio = std::numeric_limits<double>::quiet_NaN();
    }
    r.threshold = std::sqrt(static_cast<double>(spec.tasks));
    r.passed = r.ratio > r.threshold;
    return r;
}

double h_score(double id_avg, double ood_avg) {
    if (!(id_avg > 0.0) || !(ood_avg > 0.0) || !std::isfinite(id_avg) || !std::isfinite(ood_avg)) {
        throw InvalidArgument("H-score inputs must be positive");
    }
    return 2.0 * id_avg * ood_avg / (id_avg + ood_avg);
}

} // namespace taskmerge
