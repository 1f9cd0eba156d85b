#pragma once

// Data-parallel kernels. Each has a serial reference with the same signature;
// the OpenMP versions split work into fixed-size chunks and combine chunk
// results in index order, so their output does not depend on thread count.

#include <algorithm>
#include <cstddef>
#include <exception>
#include <span>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace edgeq::par {

inline constexpr std::size_t kGradientChunk = 32;

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline void set_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

/// fn(i, grad) adds sample i's gradient into `grad` and returns a per-sample
/// accumulator (a loss, or a struct of statistics with operator+=). Returns
/// the sum of those accumulators.
template <class Acc, class Fn>
Acc sum_gradients_serial(std::size_t count, std::span<double> grad, Fn&& fn) {
  Acc total{};
  for (std::size_t i = 0; i < count; ++i) total += fn(i, grad);
  return total;
}

template <class Acc, class Fn>
Acc sum_gradients_parallel(std::size_t count, std::span<double> grad, Fn&& fn) {
  const std::size_t n_chunks = (count + kGradientChunk - 1) / kGradientChunk;
  std::vector<std::vector<double>> partial(n_chunks);
  std::vector<Acc> acc(n_chunks);
  std::exception_ptr failure;

#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(n_chunks); ++c) {
    try {
      const auto chunk = static_cast<std::size_t>(c);
      auto& g = partial[chunk];
      g.assign(grad.size(), 0.0);
      const std::size_t begin = chunk * kGradientChunk;
      const std::size_t end = std::min(count, begin + kGradientChunk);
      Acc local{};
      for (std::size_t i = begin; i < end; ++i) local += fn(i, std::span<double>(g));
      acc[chunk] = local;
    } catch (...) {
#pragma omp critical(edgeq_par_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  Acc total{};
  for (std::size_t c = 0; c < n_chunks; ++c) {
    total += acc[c];
    for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += partial[c][j];
  }
  return total;
}

/// results[i] = fn(i), evaluated in index order.
template <class T, class Fn>
std::vector<T> map_serial(std::size_t count, Fn&& fn) {
  std::vector<T> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(fn(i));
  return out;
}

/// results[i] = fn(i) with items evaluated concurrently; fn must only touch
/// state owned by item i.
template <class T, class Fn>
std::vector<T> map_parallel(std::size_t count, Fn&& fn) {
  std::vector<T> out(count);
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(count); ++i) {
    try {
      out[static_cast<std::size_t>(i)] = fn(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(edgeq_par_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace edgeq::par
