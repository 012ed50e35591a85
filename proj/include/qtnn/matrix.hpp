#pragma once

#include <algorithm>
#include <cassert>
#include <cstring>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include "qtnn/errors.hpp"

namespace qtnn {

// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  std::size_t size() const { return data.size(); }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

namespace detail {

inline double reduce8(const double* s) { return ((s[0] + s[4]) + (s[2] + s[6])) + ((s[1] + s[5]) + (s[3] + s[7])); }

// Eight doubles; lane k of an accumulator only ever sees elements i = k mod 8.
typedef double lanes8 __attribute__((vector_size(64)));
// Same, for loads from plain double arrays.
typedef double lanes8_load __attribute__((vector_size(64), aligned(8), may_alias));

// out[r * C + c] = dot(a[r], b[c]), same summation order as dot().
template <std::size_t R, std::size_t C>
inline void dot_tile(const double* const* a, const double* const* b, std::size_t n, double* out) {
  lanes8 s[R][C] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    lanes8 x[C];
    for (std::size_t c = 0; c < C; ++c) x[c] = *reinterpret_cast<const lanes8_load*>(b[c] + i);
    for (std::size_t r = 0; r < R; ++r) {
      const lanes8 y = *reinterpret_cast<const lanes8_load*>(a[r] + i);
      for (std::size_t c = 0; c < C; ++c) s[r][c] += y * x[c];
    }
  }
  double t[R][C][8];
  std::memcpy(t, s, sizeof t);
  const std::size_t rem = n - i;
  for (std::size_t k = 0; k < rem; ++k)
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) t[r][c][k] += a[r][i + k] * b[c][i + k];
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] = reduce8(t[r][c]);
}

}  // namespace detail

// Dot product with eight interleaved partial sums combined in a fixed tree.
// The summation order is part of the definition, so results do not depend on
// how the compiler vectorises it.
inline double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double out;
  const double* pa = a.data();
  const double* pb = b.data();
  detail::dot_tile<1, 1>(&pa, &pb, a.size(), &out);
  return out;
}

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

// out = W x + bias
inline void affine(const Matrix& w, std::span<const double> bias, std::span<const double> x, std::span<double> out) {
  if (x.size() != w.cols || out.size() != w.rows || bias.size() != w.rows)
    throw DomainError("affine: shape mismatch (" + std::to_string(w.rows) + "x" + std::to_string(w.cols) +
                      " against input " + std::to_string(x.size()) + ")");
  for (std::size_t r = 0; r < w.rows; ++r) out[r] = dot(w.row(r), x) + bias[r];
}

// out[i * out_stride + r] = dot(W.row(r), inputs[i]) + bias[r] for every input;
// each entry is bit-identical to affine() on that input alone.
inline void affine_batch(const Matrix& w, std::span<const double> bias, std::span<const double* const> inputs,
                         double* out, std::size_t out_stride) {
  if (bias.size() != w.rows || out_stride < w.rows) throw DomainError("affine_batch: shape mismatch");
  constexpr std::size_t R = 4;
  const std::size_t n = inputs.size(), k = w.cols;
  double tile[R * 6];
  const double* rows[R];
  std::size_t i = 0;
  auto columns = [&]<std::size_t C>(std::integral_constant<std::size_t, C>) {
    std::size_t r = 0;
    for (; r + R <= w.rows; r += R) {
      for (std::size_t q = 0; q < R; ++q) rows[q] = w.row(r + q).data();
      detail::dot_tile<R, C>(rows, inputs.data() + i, k, tile);
      for (std::size_t q = 0; q < R; ++q)
        for (std::size_t c = 0; c < C; ++c) out[(i + c) * out_stride + r + q] = tile[q * C + c] + bias[r + q];
    }
    for (; r < w.rows; ++r) {
      rows[0] = w.row(r).data();
      detail::dot_tile<1, C>(rows, inputs.data() + i, k, tile);
      for (std::size_t c = 0; c < C; ++c) out[(i + c) * out_stride + r] = tile[c] + bias[r];
    }
    i += C;
  };
  while (i + 6 <= n) columns(std::integral_constant<std::size_t, 6>{});
  if (i + 4 <= n) columns(std::integral_constant<std::size_t, 4>{});
  if (i + 2 <= n) columns(std::integral_constant<std::size_t, 2>{});
  for (; i < n; ++i) {
    std::size_t r = 0;
    for (; r + R <= w.rows; r += R) {
      for (std::size_t q = 0; q < R; ++q) rows[q] = w.row(r + q).data();
      detail::dot_tile<R, 1>(rows, inputs.data() + i, k, tile);
      for (std::size_t q = 0; q < R; ++q) out[i * out_stride + r + q] = tile[q] + bias[r + q];
    }
    for (; r < w.rows; ++r) out[i * out_stride + r] = dot(w.row(r), {inputs[i], k}) + bias[r];
  }
}

// G.row(r) += delta[i * delta_stride + r] * inputs[i], summed over i in order;
// the same additions as one axpy per (i, r) with zero deltas skipped.
inline void outer_accumulate(Matrix& g, std::span<const double* const> inputs, const double* delta,
                             std::size_t delta_stride) {
  constexpr std::size_t R = 4, K = 16;
  const std::size_t n = inputs.size(), cols = g.cols;
  auto rows_block = [&](std::size_t r, std::size_t nr) {
    for (std::size_t k0 = 0; k0 < cols; k0 += K) {
      const std::size_t kk = std::min(K, cols - k0);
      double acc[R][K];
      for (std::size_t q = 0; q < nr; ++q)
        for (std::size_t j = 0; j < kk; ++j) acc[q][j] = g(r + q, k0 + j);
      for (std::size_t i = 0; i < n; ++i) {
        const double* x = inputs[i] + k0;
        const double* d = delta + i * delta_stride + r;
        for (std::size_t q = 0; q < nr; ++q) {
          if (d[q] == 0.0) continue;
          if (kk == K)
            for (std::size_t j = 0; j < K; ++j) acc[q][j] += d[q] * x[j];
          else
            for (std::size_t j = 0; j < kk; ++j) acc[q][j] += d[q] * x[j];
        }
      }
      for (std::size_t q = 0; q < nr; ++q)
        for (std::size_t j = 0; j < kk; ++j) g(r + q, k0 + j) = acc[q][j];
    }
  };
  std::size_t r = 0;
  for (; r + R <= g.rows; r += R) rows_block(r, R);
  if (r < g.rows) rows_block(r, g.rows - r);
}

// out += W^T g
inline void affine_transpose_accumulate(const Matrix& w, std::span<const double> g, std::span<double> out) {
  for (std::size_t r = 0; r < w.rows; ++r)
    if (g[r] != 0.0) axpy(g[r], w.row(r), out);
}

// Runs fn(i) for i in [0, n) over up to `threads` workers. Work items must
// write disjoint outputs; the partition never affects any single result.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace qtnn
