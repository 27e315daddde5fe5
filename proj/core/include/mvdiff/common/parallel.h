// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace mvdiff {

// Worker count: MVDIFF_THREADS when set (>= 1), else hardware concurrency.
std::size_t worker_count();

// Runs body(i) for i in [0, n) over up to worker_count() threads. Each index
// runs exactly once; the first exception thrown is rethrown after joining.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace mvdiff
