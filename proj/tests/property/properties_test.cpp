// SPDX-License-Identifier: Apache-2.0
// Invariants checked over seeded random instances.

#include <cmath>
#include <cstdlib>
#include <random>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "taskmerge/merge_methods.hpp"
#include "taskmerge/saliency_mask.hpp"
#include "taskmerge/theory_validation.hpp"

using namespace taskmerge;

namespace {

constexpr std::uint64_t kSeeds = 40;

struct World {
    fixtures::Instance in;
    Checkpoint base;
    std::vector<TaskVector> tvs;
    std::vector<Checkpoint> beta;
    std::vector<double> lambdas;
    LambdaTable table;
};

World make(std::uint64_t seed, Dtype dtype = Dtype::F32) {
    World s{fixtures::random_instance(seed), {}, {}, {}, {}, {}};
    s.base = fixtures::to_checkpoint(s.in.base, s.in, dtype);
    s.tvs = fixtures::to_task_vectors(s.in);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (const auto& tv : s.tvs) {
        naive::Layers b = s.in.tau[0];
        for (auto& layer : b) {
            for (auto& v : layer) {
                v = unit(rng);
            }
        }
        s.beta.push_back(fixtures::to_checkpoint(b, s.in));
        s.lambdas.push_back(unit(rng));
        s.table.task_ids.push_back(tv.id);
    }
    s.table.layer_names = s.in.names;
    for (std::size_t k = 0; k < s.tvs.size(); ++k) {
        std::vector<double> row;
        for (std::size_t l = 0; l < s.in.names.size(); ++l) {
            row.push_back(unit(rng));
        }
        s.table.values.push_back(row);
    }
    return s;
}

std::vector<Checkpoint> every_method(const World& s, const MergeMask& mask) {
    return {
        task_arithmetic(s.base, s.tvs, 0.3, mask),
        ties_merge(s.base, s.tvs, 0.2, 0.3, mask),
        adamerging_apply(s.base, s.tvs, s.table, 0.7, mask),
        pcb_apply(s.base, s.tvs, s.beta, s.lambdas, mask),
    };
}

ParameterMask param_mask(const World& s, std::uint8_t value) {
    ParameterMask m;
    m.layer_names = s.in.names;
    for (const auto& layer : s.in.base) {
        m.values.emplace_back(layer.size(), value);
    }
    return m;
}

} // namespace

TEST(Properties, AllOnesMaskIsNeutral) {
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        const World s = make(seed);
        const auto plain = every_method(s, {});
        const auto ones = every_method(s, SharedMask{s.in.names, std::vector<std::uint8_t>(s.in.names.size(), 1)});
        const auto pones = every_method(s, param_mask(s, 1));
        for (std::size_t m = 0; m < plain.size(); ++m) {
            EXPECT_EQ(serialize_checkpoint(plain[m]), serialize_checkpoint(ones[m])) << "seed " << seed << " method " << m;
            EXPECT_EQ(serialize_checkpoint(plain[m]), serialize_checkpoint(pones[m])) << "seed " << seed << " method " << m;
        }
    }
}

TEST(Properties, AllZerosMaskReturnsBase) {
    for (Dtype dt : {Dtype::F32, Dtype::F16, Dtype::BF16}) {
        for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
            const World s = make(seed, dt);
            const auto bytes = serialize_checkpoint(s.base);
            for (const auto& out :
                 every_method(s, SharedMask{s.in.names, std::vector<std::uint8_t>(s.in.names.size(), 0)})) {
                EXPECT_EQ(serialize_checkpoint(out), bytes);
            }
            for (const auto& out : every_method(s, param_mask(s, 0))) {
                EXPECT_EQ(serialize_checkpoint(out), bytes);
            }
        }
    }
}

TEST(Properties, PrunedLayersKeepBaseBytes) {
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        const World s = make(seed, Dtype::BF16);
        const SharedMask mask = random_layer_mask(s.in.names, 0.5, seed);
        for (const auto& out : every_method(s, mask)) {
            for (std::size_t l = 0; l < mask.values.size(); ++l) {
                if (!mask.values[l]) {
                    EXPECT_EQ(out.entries.at(s.in.names[l]), s.base.entries.at(s.in.names[l]));
                }
            }
        }
    }
}

TEST(Properties, TiesWithUnanimousSignsIsPlainMean) {
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        World s = make(seed, Dtype::F64);
        for (auto& tv : s.tvs) {
            for (auto& [name, t] : tv.deltas.entries) {
                for (std::uint64_t i = 0; i < t.size(); ++i) {
                    t.set(i, std::fabs(t.get(i)));
                }
            }
        }
        const auto merged = ties_merge(s.base, s.tvs, 1.0, 1.0);
        for (std::size_t l = 0; l < s.in.names.size(); ++l) {
            const auto& name = s.in.names[l];
            for (std::uint64_t i = 0; i < s.in.base[l].size(); ++i) {
                double mean = 0.0;
                for (const auto& tv : s.tvs) {
                    mean += tv.deltas.entries.at(name).get(i);
                }
                mean /= static_cast<double>(s.tvs.size());
                EXPECT_NEAR(merged.entries.at(name).get(i), s.in.base[l][i] + mean, 1e-6);
            }
        }
    }
}

TEST(Properties, UniformPcbIsScaledAverage) {
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        World s = make(seed, Dtype::F64);
        for (auto& b : s.beta) {
            for (auto& [name, t] : b.entries) {
                for (std::uint64_t i = 0; i < t.size(); ++i) {
                    t.set(i, 0.25);
                }
            }
        }
        const std::vector<double> lambdas(s.tvs.size(), 1.2);
        const auto pcb = pcb_apply(s.base, s.tvs, s.beta, lambdas);
        const auto ta = task_arithmetic(s.base, s.tvs, 1.2 / static_cast<double>(s.tvs.size()));
        for (const auto& [name, t] : pcb.entries) {
            for (std::uint64_t i = 0; i < t.size(); ++i) {
                EXPECT_NEAR(t.get(i), ta.entries.at(name).get(i), 1e-6);
            }
        }
    }
}

TEST(Properties, AdaMergingUniformTableIsTaskArithmetic) {
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        World s = make(seed, Dtype::F64);
        for (auto& row : s.table.values) {
            std::fill(row.begin(), row.end(), 0.3);
        }
        const auto ada = adamerging_apply(s.base, s.tvs, s.table, 1.0);
        const auto ta = task_arithmetic(s.base, s.tvs, 0.3);
        for (const auto& [name, t] : ada.entries) {
            for (std::uint64_t i = 0; i < t.size(); ++i) {
                EXPECT_NEAR(t.get(i), ta.entries.at(name).get(i), 1e-12);
            }
        }
    }
}

TEST(Properties, SaliencyIsNonnegativeAndSymmetricForTwoTasks) {
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        auto in = fixtures::random_instance(seed, 2);
        in.tau.resize(2, in.tau[0]);
        const auto s = compute_saliency(fixtures::to_task_vectors(in));
        for (const auto& row : s.scores) {
            for (double v : row) {
                EXPECT_GE(v, 0.0);
            }
        }
        for (std::size_t l = 0; l < s.layers(); ++l) {
            EXPECT_NEAR(s.scores[0][l], s.scores[1][l], 1e-12 * (1.0 + s.scores[0][l]));
        }
        // Mirrored pair: rows agree exactly.
        auto mirrored = in;
        for (auto& layer : mirrored.tau[1]) {
            for (auto& v : layer) {
                v = 0.0;
            }
        }
        for (std::size_t l = 0; l < in.tau[0].size(); ++l) {
            for (std::size_t i = 0; i < in.tau[0][l].size(); ++i) {
                mirrored.tau[1][l][i] = -in.tau[0][l][i];
            }
        }
        const auto m = compute_saliency(fixtures::to_task_vectors(mirrored));
        EXPECT_EQ(m.scores[0], m.scores[1]);
    }
}

TEST(Properties, ParameterMaskCardinalityAndDominance) {
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        const auto in = fixtures::random_instance(seed);
        const auto tvs = fixtures::to_task_vectors(in);
        std::uint64_t P = 0;
        for (const auto& l : in.base) {
            P += l.size();
        }
        for (double eta : {0.0, 0.3, 0.7, 1.0}) {
            const auto m = parameter_saliency_mask(tvs, eta);
            if (in.tau.size() > 1) {
                EXPECT_GE(m.ones(), P - pruned_count(P, eta));
            }
            EXPECT_LE(m.ones(), P);
        }
    }
}

TEST(Properties, MergesIndependentOfThreadCount) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const World s = make(seed, Dtype::F16);
        setenv("TASKVEC_THREADS", "1", 1);
        const auto serial = every_method(s, {});
        setenv("TASKVEC_THREADS", "5", 1);
        const auto parallel = every_method(s, {});
        unsetenv("TASKVEC_THREADS");
        EXPECT_EQ(serial, parallel);
    }
}

TEST(Properties, HScoreSymmetricAndBounded) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> pct(0.1, 100.0);
    for (int i = 0; i < 1000; ++i) {
        const double a = pct(rng), b = pct(rng);
        const double h = h_score(a, b);
        EXPECT_EQ(h, h_score(b, a));
        EXPECT_LE(std::min(a, b), h + 1e-12);
        EXPECT_GE(std::max(a, b), h - 1e-12);
    }
}

TEST(Properties, DiversityZeroIffBlockEqualsMean) {
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        auto in = fixtures::random_instance(seed);
        if (in.tau.size() < 2) {
            continue;
        }
        auto tvs = fixtures::to_task_vectors(in);
        NeuronSelector sel{in.names[0], {0}};
        for (std::uint64_t i = 1; i < in.base[0].size(); ++i) {
            sel.indices.push_back(i);
        }
        for (double v : diversity(tvs, sel)) {
            EXPECT_GT(v, 0.0);
        }
        for (auto& tv : tvs) {
            tv.deltas.entries.at(in.names[0]) = tvs[0].deltas.entries.at(in.names[0]);
        }
        // The cross-task mean of identical rows can differ from the row by rounding.
        for (double v : diversity(tvs, sel)) {
            EXPECT_LT(v, 1e-12);
        }
    }
}
