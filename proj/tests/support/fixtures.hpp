// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "naive_reference.hpp"
#include "taskmerge/task_vector.hpp"

namespace fixtures {

struct Instance {
    std::vector<std::string> names;
    std::vector<taskmerge::Shape> shapes;
    naive::Layers base;
    naive::Tasks tau;
};

// Layer names are zero-padded so that lexicographic order matches index order.
inline std::string layer_name(std::size_t l) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "layer.%02zu", l);
    return buf;
}

inline Instance random_instance(std::uint64_t seed, std::size_t max_tasks = 5, std::size_t max_layers = 12,
                                std::size_t max_elems = 16) {
    std::mt19937_64 rng(seed);
    auto pick = [&](std::size_t lo, std::size_t hi) {
        return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
    };
    std::normal_distribution<double> normal(0.0, 1.0);
    Instance in;
    const std::size_t K = pick(1, max_tasks);
    const std::size_t L = pick(1, max_layers);
    for (std::size_t l = 0; l < L; ++l) {
        in.names.push_back(layer_name(l));
        const std::size_t d = pick(1, max_elems);
        if (d % 2 == 0 && pick(0, 1) == 1) {
            in.shapes.push_back({2, d / 2});
        } else {
            in.shapes.push_back({d});
        }
        naive::Vec b(d);
        for (auto& v : b) {
            v = normal(rng);
        }
        in.base.push_back(b);
    }
    in.tau.assign(K, naive::Layers(L));
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t l = 0; l < L; ++l) {
            const double scale = std::exp(normal(rng));
            for (std::size_t i = 0; i < in.base[l].size(); ++i) {
                in.tau[k][l].push_back(scale * normal(rng));
            }
        }
    }
    return in;
}

inline taskmerge::Checkpoint to_checkpoint(const naive::Layers& x, const Instance& in,
                                           taskmerge::Dtype dtype = taskmerge::Dtype::F64) {
    taskmerge::Checkpoint c;
    for (std::size_t l = 0; l < x.size(); ++l) {
        c.entries.emplace(in.names[l], taskmerge::Tensor::from_values(dtype, in.shapes[l], x[l]));
    }
    return c;
}

inline std::vector<taskmerge::TaskVector> to_task_vectors(const Instance& in) {
    std::vector<taskmerge::TaskVector> out;
    for (std::size_t k = 0; k < in.tau.size(); ++k) {
        out.push_back({"t" + std::to_string(k), to_checkpoint(in.tau[k], in), ""});
    }
    return out;
}

inline naive::Layers to_layers(const taskmerge::Checkpoint& c) {
    naive::Layers out;
    for (const auto& [name, t] : c.entries) {
        out.push_back(t.to_doubles());
    }
    return out;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("taskmerge-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

} // namespace fixtures
