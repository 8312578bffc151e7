// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "taskmerge/task_vector.hpp"

namespace taskmerge {

/// A block of neurons: flat indices into one layer.
struct NeuronSelector {
    std::string layer_name;
    std::vector<std::uint64_t> indices;
};

/// ||g(tau_k, S) - (1/K) sum_j g(tau_j, S)||_2 for every task k.
std::vector<double> diversity(std::span<const TaskVector> tvs, const NeuronSelector& sel);

struct SyntheticSpec {
    std::size_t tasks = 8;
    std::size_t dim = 64;
    std::size_t support = 8;
    double signal = 1.0;
    double noise = 0.01;
    std::uint64_t seed = 0;
};

struct DiversityReport {
    std::size_t tasks = 0;
    std::vector<double> dv_per_task;
    double dv_k1 = 0.0;
    double dv_k2 = 0.0;
    /// dv_k1 / dv_k2; +inf when dv_k2 is zero and dv_k1 is not, NaN when both are zero.
    double ratio = 0.0;
    double threshold = 0.0;
    bool passed = false;
};

/// Plants a discriminative block on coordinates [0, support) of task 0 (each
/// entry +/-signal with a random sign) and fills every other coordinate of every
/// task with N(0, noise^2). Reports DV of task 0 (k1) against task 1 (k2) on
/// that block and whether the ratio exceeds sqrt(K).
DiversityReport prop1_experiment(const SyntheticSpec& spec);

/// Harmonic mean of the average in-domain and out-of-domain scores.
double h_score(double id_avg, double ood_avg);

} // namespace taskmerge
