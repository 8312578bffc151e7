// SPDX-License-Identifier: Apache-2.0
#include "taskmerge/task_vector.hpp"

#include <cmath>

#include "taskmerge/errors.hpp"
#include "taskmerge/parallel.hpp"

namespace taskmerge {

namespace {

// Entries of a map addressed by catalog position, so parallel_for can index them.
template <typename Map>
std::vector<typename Map::mapped_type*> slots(Map& m) {
    std::vector<typename Map::mapped_type*> out;
    out.reserve(m.size());
    for (auto& [name, t] : m) {
        out.push_back(&t);
    }
    return out;
}

} // namespace

TaskVector diff(const Checkpoint& finetuned, const Checkpoint& base, std::string id) {
    const Checkpoint* pair[] = {&base, &finetuned};
    const LayerCatalog cat = validate_compatibility(pair);

    TaskVector tv;
    tv.id = std::move(id);
    tv.base_fingerprint = header_fingerprint(base);
    for (const auto& layer : cat.layers) {
        tv.deltas.entries.emplace(layer.name, Tensor(Dtype::F64, layer.shape));
    }
    auto out = slots(tv.deltas.entries);
    parallel_for(cat.size(), [&](std::size_t l) {
        const auto& name = cat.layers[l].name;
        const Tensor& ft = finetuned.entries.at(name);
        const Tensor& b = base.entries.at(name);
        Tensor& d = *out[l];
        for (std::uint64_t i = 0; i < d.size(); ++i) {
            d.set(i, ft.get(i) - b.get(i));
        }
    });
    return tv;
}

Checkpoint apply(const Checkpoint& base, const TaskVector& delta, double coeff) {
    if (!std::isfinite(coeff)) {
        throw InvalidArgument("apply coefficient must be finite");
    }
    const LayerCatalog cat = catalog_of(base);
    require_same_layout(cat, delta.deltas, "task vector \"" + delta.id + "\"");

    Checkpoint out = base;
    if (coeff == 0.0) {
        return out;
    }
    auto dst = slots(out.entries);
    parallel_for(cat.size(), [&](std::size_t l) {
        const auto& name = cat.layers[l].name;
        const Tensor& b = base.entries.at(name);
        const Tensor& d = delta.deltas.entries.at(name);
        Tensor& r = *dst[l];
        for (std::uint64_t i = 0; i < r.size(); ++i) {
            r.set(i, b.get(i) + coeff * d.get(i));
        }
    });
    return out;
}

LayerCatalog validate_task_vectors(std::span<const TaskVector> tvs) {
    if (tvs.empty()) {
        throw InvalidArgument("at least one task vector is required");
    }
    const LayerCatalog cat = tvs.front().catalog();
    for (std::size_t k = 1; k < tvs.size(); ++k) {
        require_same_layout(cat, tvs[k].deltas, "task vector \"" + tvs[k].id + "\"");
    }
    return cat;
}

TaskVector linear_combine(std::span<const std::pair<const TaskVector*, double>> terms) {
    if (terms.empty()) {
        throw InvalidArgument("linear_combine needs at least one term");
    }
    const LayerCatalog cat = terms.front().first->catalog();
    for (const auto& [tv, c] : terms) {
        require_same_layout(cat, tv->deltas, "task vector \"" + tv->id + "\"");
    }

    TaskVector out;
    out.id = "combined";
    out.base_fingerprint = terms.front().first->base_fingerprint;
    for (const auto& layer : cat.layers) {
        out.deltas.entries.emplace(layer.name, Tensor(Dtype::F64, layer.shape));
    }
    auto dst = slots(out.deltas.entries);
    parallel_for(cat.size(), [&](std::size_t l) {
        const auto& name = cat.layers[l].name;
        std::vector<const Tensor*> src;
        for (const auto& term : terms) {
            src.push_back(&term.first->deltas.entries.at(name));
        }
        Tensor& r = *dst[l];
        for (std::uint64_t i = 0; i < r.size(); ++i) {
            double acc = 0.0;
            for (std::size_t k = 0; k < terms.size(); ++k) {
                acc += terms[k].second * src[k]->get(i);
            }
            r.set(i, acc);
        }
    });
    return out;
}

void save_task_vector(const TaskVector& tv, const std::filesystem::path& path) {
    Checkpoint c = tv.deltas;
    Metadata meta = c.metadata.value_or(Metadata{});
    meta[kTaskIdKey] = tv.id;
    if (!tv.base_fingerprint.empty()) {
        meta[kBaseFingerprintKey] = tv.base_fingerprint;
    }
    c.metadata = std::move(meta);
    save_checkpoint(c, path);
}

TaskVector load_task_vector(const std::filesystem::path& path) {
    TaskVector tv;
    tv.deltas = load_checkpoint(path);
    tv.id = path.stem().string();
    if (tv.deltas.metadata) {
        auto& meta = *tv.deltas.metadata;
        if (auto it = meta.find(kTaskIdKey); it != meta.end()) {
            tv.id = it->second;
            meta.erase(it);
        }
        if (auto it = meta.find(kBaseFingerprintKey); it != meta.end()) {
            tv.base_fingerprint = it->second;
            meta.erase(it);
        }
        if (meta.empty()) {
            tv.deltas.metadata.reset();
        }
    }
    return tv;
}

void check_provenance(const TaskVector& tv, const Checkpoint& base) {
    if (!tv.base_fingerprint.empty() && tv.base_fingerprint != header_fingerprint(base)) {
        throw IncompatibleError("task vector \"" + tv.id + "\" was derived from a different base checkpoint");
    }
}

} // namespace taskmerge
