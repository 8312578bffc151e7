// SPDX-License-Identifier: Apache-2.0
#include "taskmerge/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace taskmerge {

std::size_t worker_count() {
    if (const char* env = std::getenv("TASKVEC_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v > 0) {
                return static_cast<std::size_t>(v);
            }
        } catch (const std::exception&) {
            // fall through to auto
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min(worker_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }

    std::exception_ptr first_error;
    std::mutex error_mutex;
    const std::size_t block = (n + workers - 1) / workers;
    {
        std::vector<std::jthread> threads;
        threads.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t lo = w * block;
            const std::size_t hi = std::min(n, lo + block);
            if (lo >= hi) {
                break;
            }
            threads.emplace_back([&, lo, hi] {
                try {
                    for (std::size_t i = lo; i < hi; ++i) {
                        fn(i);
                    }
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!first_error) {
                        first_error = std::current_exception();
                    }
                }
            });
        }
    }
    if (first_error) {
        std::rethrow_exception(first_error);
    }
}

} // namespace taskmerge
