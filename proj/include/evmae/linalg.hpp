#pragma once

#include <cassert>
#include <cstdint>
#include <type_traits>
#include <span>
#include <vector>

namespace evmae {

// Row-major dense matrix owning its storage.
template <typename T>
struct Mat {
  int64_t rows = 0, cols = 0;
  std::vector<T> v;

  Mat() = default;
  Mat(int64_t r, int64_t c)
      : rows(r), cols(c), v(static_cast<size_t>(r) * static_cast<size_t>(c)) {}

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }
  T* row(int64_t r) { return v.data() + r * cols; }
  const T* row(int64_t r) const { return v.data() + r * cols; }
  T& operator()(int64_t r, int64_t c) { return v[static_cast<size_t>(r * cols + c)]; }
  const T& operator()(int64_t r, int64_t c) const {
    return v[static_cast<size_t>(r * cols + c)];
  }
  size_t size() const { return v.size(); }
  void fill(T x) { std::fill(v.begin(), v.end(), x); }
};

// Non-owning row-major view (used for parameter tensors inside a store).
template <typename T>
struct MatView {
  int64_t rows = 0, cols = 0;
  T* p = nullptr;

  T* row(int64_t r) const { return p + r * cols; }
  T& operator()(int64_t r, int64_t c) const { return p[r * cols + c]; }
  size_t size() const {
    return static_cast<size_t>(rows) * static_cast<size_t>(cols);
  }
  std::span<T> flat() const { return {p, size()}; }

  operator MatView<const T>() const
    requires(!std::is_const_v<T>)
  {
    return {rows, cols, p};
  }
};

// c = alpha * op(a) * op(b) + beta * c, row-major. Backed by BLAS.
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
          float alpha, const float* a, int64_t lda, const float* b, int64_t ldb,
          float beta, float* c, int64_t ldc);
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
          double alpha, const double* a, int64_t lda, const double* b,
          int64_t ldb, double beta, double* c, int64_t ldc);

}  // namespace evmae
