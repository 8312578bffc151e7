// SPDX-License-Identifier: Apache-2.0
#include "taskmerge/merge_methods.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "taskmerge/counter_rng.hpp"
#include "taskmerge/errors.hpp"
#include "taskmerge/parallel.hpp"

namespace taskmerge {

namespace {

void check_finite(double v, const char* what) {
    if (!std::isfinite(v)) {
        throw InvalidArgument(std::string(what) + " must be finite");
    }
}

void check_keep_fraction(double f) {
    if (!(f > 0.0 && f <= 1.0)) {
        throw InvalidArgument("keep_fraction must lie in (0, 1], got " + std::to_string(f));
    }
}

LayerCatalog check_inputs(const Checkpoint& base, std::span<const TaskVector> tvs) {
    if (tvs.empty()) {
        throw InvalidArgument("at least one task vector is required");
    }
    const LayerCatalog cat = catalog_of(base);
    for (const auto& tv : tvs) {
        require_same_layout(cat, tv.deltas, "task vector \"" + tv.id + "\"");
    }
    return cat;
}

void check_mask(const MergeMask& mask, const LayerCatalog& cat) {
    if (const auto* m = std::get_if<SharedMask>(&mask)) {
        if (m->values.size() != cat.size()) {
            throw InvalidArgument("mask has " + std::to_string(m->values.size()) + " entries but the model has " +
                                  std::to_string(cat.size()) + " layers");
        }
        if (!m->layer_names.empty() && m->layer_names != cat.names()) {
            throw InvalidArgument("mask layer names do not match the checkpoint");
        }
    } else if (const auto* p = std::get_if<ParameterMask>(&mask)) {
        if (p->values.size() != cat.size()) {
            throw InvalidArgument("parameter mask layer count does not match the checkpoint");
        }
        for (std::size_t l = 0; l < cat.size(); ++l) {
            if (p->values[l].size() != element_count(cat.layers[l].shape)) {
                throw InvalidArgument("parameter mask for \"" + cat.layers[l].name + "\" has the wrong size");
            }
        }
    }
}

bool layer_kept(const MergeMask& mask, std::size_t l) {
    if (const auto* m = std::get_if<SharedMask>(&mask)) {
        return m->values[l] != 0;
    }
    return true;
}

bool element_kept(const MergeMask& mask, std::size_t l, std::uint64_t i) {
    if (const auto* p = std::get_if<ParameterMask>(&mask)) {
        return p->values[l][i] != 0;
    }
    return layer_kept(mask, l);
}

// Writes base + delta(l, i) for every kept element. Pruned elements keep the
// base bytes untouched.
template <typename Delta>
Checkpoint merge_into_base(const Checkpoint& base, const LayerCatalog& cat, const MergeMask& mask, Delta&& delta) {
    check_mask(mask, cat);
    Checkpoint out = base;
    std::vector<Tensor*> dst;
    for (auto& [name, t] : out.entries) {
        dst.push_back(&t);
    }
    parallel_for(cat.size(), [&](std::size_t l) {
        if (!layer_kept(mask, l)) {
            return;
        }
        const Tensor& b = base.entries.at(cat.layers[l].name);
        Tensor& r = *dst[l];
        for (std::uint64_t i = 0; i < r.size(); ++i) {
            if (element_kept(mask, l, i)) {
                r.set(i, b.get(i) + delta(l, i));
            }
        }
    });
    return out;
}

std::vector<std::vector<const Tensor*>> layer_tensors(std::span<const TaskVector> tvs, const LayerCatalog& cat) {
    std::vector<std::vector<const Tensor*>> out(cat.size());
    for (std::size_t l = 0; l < cat.size(); ++l) {
        for (const auto& tv : tvs) {
            out[l].push_back(&tv.deltas.entries.at(cat.layers[l].name));
        }
    }
    return out;
}

// Whole task vector flattened in (layer name, flat index) order.
std::vector<double> flatten(const Checkpoint& c) {
    std::vector<double> flat;
    for (const auto& [name, t] : c.entries) {
        for (std::uint64_t i = 0; i < t.size(); ++i) {
            flat.push_back(t.get(i));
        }
    }
    return flat;
}

// Flags the `keep` entries of largest magnitude; equal magnitudes prefer the lower index.
std::vector<std::uint8_t> top_magnitude_flags(std::span<const double> flat, std::uint64_t keep) {
    std::vector<std::uint8_t> flags(flat.size(), 0);
    if (keep >= flat.size()) {
        std::fill(flags.begin(), flags.end(), 1);
        return flags;
    }
    if (keep == 0) {
        return flags;
    }
    std::vector<std::uint64_t> idx(flat.size());
    std::iota(idx.begin(), idx.end(), 0);
    auto before = [&](std::uint64_t a, std::uint64_t b) {
        const double ma = std::fabs(flat[a]);
        const double mb = std::fabs(flat[b]);
        return ma != mb ? ma > mb : a < b;
    };
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep - 1), idx.end(), before);
    for (std::uint64_t j = 0; j < keep; ++j) {
        flags[idx[j]] = 1;
    }
    return flags;
}

std::vector<std::uint64_t> layer_offsets(const LayerCatalog& cat) {
    std::vector<std::uint64_t> off(cat.size() + 1, 0);
    for (std::size_t l = 0; l < cat.size(); ++l) {
        off[l + 1] = off[l] + element_count(cat.layers[l].shape);
    }
    return off;
}

int sign_of(double v) { return (v > 0.0) - (v < 0.0); }

} // namespace

double LambdaTable::at(std::size_t task, std::size_t layer) const {
    return layer_wise() ? values[task][layer] : values[task][0];
}

std::string method_name(MergeMethod method) {
    switch (method) {
    case MergeMethod::WeightAverage:
        return "weight-average";
    case MergeMethod::TaskArithmetic:
        return "task-arithmetic";
    case MergeMethod::Ties:
        return "ties";
    case MergeMethod::AdaMergingApply:
        return "adamerging";
    case MergeMethod::PcbApply:
        return "pcb";
    case MergeMethod::WiseFt:
        return "wise-ft";
    }
    return "?";
}

MergeMethod parse_method(const std::string& name) {
    std::string key = name;
    std::replace(key.begin(), key.end(), '_', '-');
    std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
    if (key == "weight-average" || key == "weight-averaging") return MergeMethod::WeightAverage;
    if (key == "task-arithmetic") return MergeMethod::TaskArithmetic;
    if (key == "ties" || key == "ties-merge") return MergeMethod::Ties;
    if (key == "adamerging" || key == "adamerging-apply") return MergeMethod::AdaMergingApply;
    if (key == "pcb" || key == "pcb-apply") return MergeMethod::PcbApply;
    if (key == "wise-ft") return MergeMethod::WiseFt;
    throw InvalidArgument("unknown merge method \"" + name + "\"");
}

std::string MergeRecipe::to_canonical_json() const {
    nlohmann::json j;
    j["method"] = method_name(method);
    j["eta"] = eta;
    j["mask"] = mask_source;
    j["seed"] = seed;
    j["task_ids"] = task_ids;
    j["preprocess"] = preprocess;
    if (preprocess == "dare") {
        j["drop_rate"] = drop_rate;
    }
    if (lambda) {
        j["lambda"] = *lambda;
    }
    if (!lambdas.empty()) {
        j["lambdas"] = lambdas;
    }
    if (lambda_table) {
        j["lambda_table"] = {{"task_ids", lambda_table->task_ids},
                             {"layer_names", lambda_table->layer_wise() ? nlohmann::json(lambda_table->layer_names)
                                                                        : nlohmann::json(nullptr)},
                             {"lambdas", lambda_table->values}};
    }
    if (method == MergeMethod::Ties || preprocess == "mwp") {
        j["keep_fraction"] = keep_fraction;
    }
    if (method == MergeMethod::WiseFt) {
        j["alpha"] = alpha;
    }
    return j.dump();
}

Checkpoint weight_average(std::span<const Checkpoint> ckpts) {
    const LayerCatalog cat = validate_compatibility(ckpts);
    const double K = static_cast<double>(ckpts.size());
    Checkpoint out = ckpts.front();
    std::vector<Tensor*> dst;
    for (auto& [name, t] : out.entries) {
        dst.push_back(&t);
    }
    parallel_for(cat.size(), [&](std::size_t l) {
        const auto& name = cat.layers[l].name;
        std::vector<const Tensor*> src;
        for (const auto& c : ckpts) {
            src.push_back(&c.entries.at(name));
        }
        Tensor& r = *dst[l];
        for (std::uint64_t i = 0; i < r.size(); ++i) {
            double acc = 0.0;
            for (const Tensor* t : src) {
                acc += t->get(i);
            }
            r.set(i, acc / K);
        }
    });
    return out;
}

Checkpoint task_arithmetic(const Checkpoint& base, std::span<const TaskVector> tvs, double lambda,
                           const MergeMask& mask) {
    check_finite(lambda, "lambda");
    const LayerCatalog cat = check_inputs(base, tvs);
    const auto layers = layer_tensors(tvs, cat);
    return merge_into_base(base, cat, mask, [&](std::size_t l, std::uint64_t i) {
        double sum = 0.0;
        for (const Tensor* t : layers[l]) {
            sum += t->get(i);
        }
        return lambda * sum;
    });
}

std::uint64_t kept_count(std::uint64_t count, double keep_fraction) {
    check_keep_fraction(keep_fraction);
    const auto dropped = static_cast<std::uint64_t>(std::floor(static_cast<double>(count) * (1.0 - keep_fraction)));
    return count - std::min(dropped, count);
}

TaskVector trim_top_magnitude(const TaskVector& tv, double keep_fraction) {
    const std::vector<double> flat = flatten(tv.deltas);
    const auto flags = top_magnitude_flags(flat, kept_count(flat.size(), keep_fraction));
    TaskVector out = tv;
    std::uint64_t p = 0;
    for (auto& [name, t] : out.deltas.entries) {
        for (std::uint64_t i = 0; i < t.size(); ++i, ++p) {
            if (!flags[p]) {
                t.set(i, 0.0);
            }
        }
    }
    return out;
}

Checkpoint ties_merge(const Checkpoint& base, std::span<const TaskVector> tvs, double keep_fraction, double lambda,
                      const MergeMask& mask) {
    check_keep_fraction(keep_fraction);
    check_finite(lambda, "lambda");
    const LayerCatalog cat = check_inputs(base, tvs);
    check_mask(mask, cat);
    const auto offsets = layer_offsets(cat);
    const std::uint64_t P = offsets.back();
    const std::uint64_t keep = kept_count(P, keep_fraction);

    // Masked, then trimmed, task vectors: trimmed[k][p].
    std::vector<std::vector<double>> trimmed;
    for (const auto& tv : tvs) {
        std::vector<double> flat(P, 0.0);
        for (std::size_t l = 0; l < cat.size(); ++l) {
            const Tensor& t = tv.deltas.entries.at(cat.layers[l].name);
            for (std::uint64_t i = 0; i < t.size(); ++i) {
                if (element_kept(mask, l, i)) {
                    flat[offsets[l] + i] = t.get(i);
                }
            }
        }
        const auto flags = top_magnitude_flags(flat, keep);
        for (std::uint64_t p = 0; p < P; ++p) {
            if (!flags[p]) {
                flat[p] = 0.0;
            }
        }
        trimmed.push_back(std::move(flat));
    }

    return merge_into_base(base, cat, mask, [&](std::size_t l, std::uint64_t i) {
        const std::uint64_t p = offsets[l] + i;
        double total = 0.0;
        for (const auto& t : trimmed) {
            total += t[p];
        }
        const int elected = sign_of(total);
        if (elected == 0) {
            return 0.0;
        }
        double sum = 0.0;
        int count = 0;
        for (const auto& t : trimmed) {
            if (sign_of(t[p]) == elected) {
                sum += t[p];
                ++count;
            }
        }
        return lambda * (sum / count);
    });
}

Checkpoint adamerging_apply(const Checkpoint& base, std::span<const TaskVector> tvs, const LambdaTable& lambdas,
                            double eta, const MergeMask& mask) {
    if (!(eta >= 0.0 && eta <= 1.0)) {
        throw InvalidArgument("eta must lie in [0, 1]");
    }
    const LayerCatalog cat = check_inputs(base, tvs);
    const std::size_t K = tvs.size();
    const std::size_t cols = lambdas.layer_wise() ? cat.size() : 1;
    if (lambdas.values.size() != K) {
        throw InvalidArgument("lambda table has " + std::to_string(lambdas.values.size()) + " rows for " +
                              std::to_string(K) + " task vectors");
    }
    for (const auto& row : lambdas.values) {
        if (row.size() != cols) {
            throw InvalidArgument("lambda table rows must have " + std::to_string(cols) + " entries");
        }
        for (double v : row) {
            check_finite(v, "lambda table entry");
        }
    }
    if (lambdas.layer_wise() && lambdas.layer_names != cat.names()) {
        throw InvalidArgument("lambda table layer names do not match the checkpoint");
    }

    std::vector<std::vector<double>> coeff(cat.size(), std::vector<double>(K));
    for (std::size_t l = 0; l < cat.size(); ++l) {
        for (std::size_t k = 0; k < K; ++k) {
            coeff[l][k] = eta * lambdas.at(k, l);
        }
    }
    const auto layers = layer_tensors(tvs, cat);
    return merge_into_base(base, cat, mask, [&](std::size_t l, std::uint64_t i) {
        double sum = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            sum += coeff[l][k] * layers[l][k]->get(i);
        }
        return sum;
    });
}

Checkpoint pcb_apply(const Checkpoint& base, std::span<const TaskVector> tvs, std::span<const Checkpoint> beta,
                     std::span<const double> lambdas, const MergeMask& mask) {
    const LayerCatalog cat = check_inputs(base, tvs);
    const std::size_t K = tvs.size();
    if (beta.size() != K) {
        throw InvalidArgument("pcb needs one beta tensor set per task vector");
    }
    if (lambdas.size() != K) {
        throw InvalidArgument("pcb needs one lambda per task vector");
    }
    for (double v : lambdas) {
        check_finite(v, "lambda");
    }
    for (std::size_t k = 0; k < K; ++k) {
        require_same_layout(cat, beta[k], "beta #" + std::to_string(k));
        for (const auto& [name, t] : beta[k].entries) {
            for (std::uint64_t i = 0; i < t.size(); ++i) {
                const double v = t.get(i);
                if (!(v >= 0.0) || !std::isfinite(v)) {
                    throw InvalidArgument("beta for \"" + name + "\" must be finite and nonnegative");
                }
            }
        }
    }

    const auto layers = layer_tensors(tvs, cat);
    std::vector<std::vector<const Tensor*>> betas(cat.size());
    for (std::size_t l = 0; l < cat.size(); ++l) {
        for (const auto& b : beta) {
            betas[l].push_back(&b.entries.at(cat.layers[l].name));
        }
    }
    return merge_into_base(base, cat, mask, [&](std::size_t l, std::uint64_t i) {
        double num = 0.0;
        double den = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            const double b = betas[l][k]->get(i);
            num += b * lambdas[k] * layers[l][k]->get(i);
            den += b;
        }
        return den > 0.0 ? num / den : 0.0;
    });
}

TaskVector dare(const TaskVector& tv, double p, std::uint64_t seed) {
    if (!(p >= 0.0 && p < 1.0)) {
        throw InvalidArgument("DARE drop rate must lie in [0, 1), got " + std::to_string(p));
    }
    TaskVector out = tv;
    const double scale = 1.0 / (1.0 - p);
    std::vector<std::pair<const std::string*, Tensor*>> dst;
    for (auto& [name, t] : out.deltas.entries) {
        dst.emplace_back(&name, &t);
    }
    parallel_for(dst.size(), [&](std::size_t l) {
        const std::string stream = "dare/" + *dst[l].first;
        Tensor& t = *dst[l].second;
        for (std::uint64_t i = 0; i < t.size(); ++i) {
            if (counter_uniform(seed, stream, i) < p) {
                t.set(i, 0.0);
            } else {
                t.set(i, t.get(i) * scale);
            }
        }
    });
    return out;
}

TaskVector mwp(const TaskVector& tv, double keep_fraction) { return trim_top_magnitude(tv, keep_fraction); }

Checkpoint wise_ft(const Checkpoint& base, const Checkpoint& finetuned, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw InvalidArgument("alpha must lie in [0, 1]");
    }
    const Checkpoint* pair[] = {&base, &finetuned};
    const LayerCatalog cat = validate_compatibility(pair);
    Checkpoint out = base;
    if (alpha == 0.0) {
        return out;
    }
    if (alpha == 1.0) {
        out.entries = finetuned.entries;
        return out;
    }
    std::vector<Tensor*> dst;
    for (auto& [name, t] : out.entries) {
        dst.push_back(&t);
    }
    parallel_for(cat.size(), [&](std::size_t l) {
        const Tensor& b = base.entries.at(cat.layers[l].name);
        const Tensor& f = finetuned.entries.at(cat.layers[l].name);
        Tensor& r = *dst[l];
        for (std::uint64_t i = 0; i < r.size(); ++i) {
            r.set(i, (1.0 - alpha) * b.get(i) + alpha * f.get(i));
        }
    });
    return out;
}

} // namespace taskmerge
