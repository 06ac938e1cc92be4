#pragma once

#include <cstddef>
#include <functional>

namespace docdet {

/// Runs fn(i) for every i in [0, n) on up to `workers` threads; workers <= 1 runs inline in order.
/// The first exception thrown stops further work and is rethrown.
void parallel_for(size_t n, int workers, const std::function<void(size_t)>& fn);

}  // namespace docdet
