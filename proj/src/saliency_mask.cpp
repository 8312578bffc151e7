// SPDX-License-Identifier: Apache-2.0
#include "taskmerge/saliency_mask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "taskmerge/counter_rng.hpp"
#include "taskmerge/errors.hpp"
#include "taskmerge/parallel.hpp"

namespace taskmerge {

namespace {

void check_eta(double eta) {
    if (!(eta >= 0.0 && eta <= 1.0)) {
        throw InvalidArgument("pruning ratio eta must lie in [0, 1], got " + std::to_string(eta));
    }
}

// Per-layer tensors of every task, in catalog order: layers[l][k].
std::vector<std::vector<const Tensor*>> gather(std::span<const TaskVector> tvs, const LayerCatalog& cat) {
    std::vector<std::vector<const Tensor*>> layers(cat.size());
    for (std::size_t l = 0; l < cat.size(); ++l) {
        for (const auto& tv : tvs) {
            layers[l].push_back(&tv.deltas.entries.at(cat.layers[l].name));
        }
    }
    return layers;
}

template <typename LayerScore>
SaliencyMatrix score_layers(std::span<const TaskVector> tvs, LayerScore&& score) {
    const LayerCatalog cat = validate_task_vectors(tvs);
    if (cat.size() == 0) {
        throw InvalidArgument("task vectors contain no layers");
    }
    const std::size_t K = tvs.size();
    SaliencyMatrix s;
    for (const auto& tv : tvs) {
        s.task_ids.push_back(tv.id);
    }
    s.layer_names = cat.names();
    s.scores.assign(K, std::vector<double>(cat.size(), 0.0));

    const auto layers = gather(tvs, cat);
    parallel_for(cat.size(), [&](std::size_t l) {
        std::vector<double> col(K, 0.0);
        score(layers[l], col);
        for (std::size_t k = 0; k < K; ++k) {
            s.scores[k][l] = col[k];
        }
    });
    return s;
}

} // namespace

std::size_t SharedMask::ones() const { return static_cast<std::size_t>(std::count(values.begin(), values.end(), 1)); }

std::size_t ParameterMask::ones() const {
    std::size_t n = 0;
    for (const auto& v : values) {
        n += static_cast<std::size_t>(std::count(v.begin(), v.end(), 1));
    }
    return n;
}

SaliencyMatrix compute_saliency(std::span<const TaskVector> tvs) {
    return score_layers(tvs, [](const std::vector<const Tensor*>& layer, std::vector<double>& out) {
        const std::size_t K = layer.size();
        const std::uint64_t d = layer.front()->size();
        if (d == 0) {
            return;
        }
        for (std::uint64_t i = 0; i < d; ++i) {
            double sum = 0.0;
            for (const Tensor* t : layer) {
                sum += t->get(i);
            }
            const double mean = sum / static_cast<double>(K);
            for (std::size_t k = 0; k < K; ++k) {
                out[k] += std::fabs(layer[k]->get(i) - mean);
            }
        }
        for (auto& v : out) {
            v /= static_cast<double>(d);
        }
    });
}

SaliencyMatrix compute_absolute_score(std::span<const TaskVector> tvs) {
    return score_layers(tvs, [](const std::vector<const Tensor*>& layer, std::vector<double>& out) {
        const std::uint64_t d = layer.front()->size();
        if (d == 0) {
            return;
        }
        for (std::size_t k = 0; k < layer.size(); ++k) {
            double acc = 0.0;
            for (std::uint64_t i = 0; i < d; ++i) {
                acc += std::fabs(layer[k]->get(i));
            }
            out[k] = acc / static_cast<double>(d);
        }
    });
}

std::size_t pruned_count(std::size_t count, double eta) {
    check_eta(eta);
    const auto n = static_cast<std::size_t>(std::floor(static_cast<double>(count) * eta));
    return std::min(n, count);
}

LayerMaskSet threshold_mask(const SaliencyMatrix& s, double eta) {
    check_eta(eta);
    const std::size_t L = s.layer_names.size();
    if (s.scores.size() != s.task_ids.size()) {
        throw InvalidArgument("saliency matrix has " + std::to_string(s.scores.size()) + " rows for " +
                              std::to_string(s.task_ids.size()) + " tasks");
    }
    const std::size_t n = pruned_count(L, eta);

    LayerMaskSet out;
    out.task_ids = s.task_ids;
    out.layer_names = s.layer_names;
    out.eta = eta;
    for (const auto& row : s.scores) {
        if (row.size() != L) {
            throw InvalidArgument("saliency row length does not match layer count");
        }
        for (double v : row) {
            if (std::isnan(v)) {
                throw InvalidArgument("saliency score is NaN");
            }
        }
        std::vector<std::uint8_t> mask(L, 1);
        if (n > 0) {
            std::vector<std::size_t> order(L);
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                if (row[a] != row[b]) {
                    return row[a] < row[b];
                }
                return s.layer_names[a] < s.layer_names[b];
            });
            const double threshold = row[order[n - 1]];
            for (std::size_t l = 0; l < L; ++l) {
                mask[l] = row[l] > threshold ? 1 : 0;
            }
        }
        out.masks.push_back(std::move(mask));
    }
    return out;
}

SharedMask or_masks(const LayerMaskSet& ms) {
    if (ms.masks.empty()) {
        throw InvalidArgument("or_masks needs at least one task mask");
    }
    SharedMask out;
    out.layer_names = ms.layer_names;
    out.values.assign(ms.layer_names.size(), 0);
    for (const auto& row : ms.masks) {
        if (row.size() != out.values.size()) {
            throw InvalidArgument("task mask length does not match layer count");
        }
        for (std::size_t l = 0; l < row.size(); ++l) {
            out.values[l] |= row[l] ? 1 : 0;
        }
    }
    return out;
}

std::vector<std::uint8_t> random_layer_mask(std::size_t layer_count, double eta, std::uint64_t seed) {
    const std::size_t keep = layer_count - pruned_count(layer_count, eta);
    std::vector<std::pair<double, std::size_t>> keys;
    keys.reserve(layer_count);
    for (std::size_t l = 0; l < layer_count; ++l) {
        keys.emplace_back(counter_uniform(seed, "random_layer_mask", l), l);
    }
    std::sort(keys.begin(), keys.end());
    std::vector<std::uint8_t> mask(layer_count, 0);
    for (std::size_t i = 0; i < keep; ++i) {
        mask[keys[i].second] = 1;
    }
    return mask;
}

SharedMask random_layer_mask(const std::vector<std::string>& layer_names, double eta, std::uint64_t seed) {
    return {layer_names, random_layer_mask(layer_names.size(), eta, seed)};
}

ParameterMask parameter_saliency_mask(std::span<const TaskVector> tvs, double eta) {
    check_eta(eta);
    const LayerCatalog cat = validate_task_vectors(tvs);
    const std::size_t K = tvs.size();
    const auto layers = gather(tvs, cat);
    const std::uint64_t P = cat.total_elements();
    const std::size_t n = pruned_count(static_cast<std::size_t>(P), eta);

    ParameterMask out;
    out.layer_names = cat.names();
    for (const auto& layer : cat.layers) {
        out.values.emplace_back(element_count(layer.shape), 0);
    }

    std::vector<double> scores(P);
    std::vector<double> scratch;
    for (std::size_t k = 0; k < K; ++k) {
        std::uint64_t p = 0;
        for (const auto& layer : layers) {
            for (std::uint64_t i = 0; i < layer.front()->size(); ++i) {
                double sum = 0.0;
                for (const Tensor* t : layer) {
                    sum += t->get(i);
                }
                scores[p] = std::fabs(layer[k]->get(i) - sum / static_cast<double>(K));
                if (std::isnan(scores[p++])) {
                    throw InvalidArgument("parameter saliency score is NaN");
                }
            }
        }
        if (n == 0) {
            for (auto& v : out.values) {
                std::fill(v.begin(), v.end(), 1);
            }
            break;
        }
        scratch = scores;
        std::nth_element(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(n - 1), scratch.end());
        const double threshold = scratch[n - 1];
        p = 0;
        for (auto& v : out.values) {
            for (auto& flag : v) {
                flag |= scores[p++] > threshold ? 1 : 0;
            }
        }
    }
    return out;
}

} // namespace taskmerge
