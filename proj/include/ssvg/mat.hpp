#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace ssvg {

// Dense row-major double matrix. Everything in the model/attribution path is
// small (S=77, d=32), so a flat vector plus cache-friendly loops is all the
// linear algebra this project needs.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

  double& operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }

  double* row(int i) { return a.data() + static_cast<size_t>(i) * cols; }
  const double* row(int i) const { return a.data() + static_cast<size_t>(i) * cols; }

  size_t size() const { return a.size(); }

  void resize(int r, int c) {
    rows = r;
    cols = c;
    a.assign(static_cast<size_t>(r) * c, 0.0);
  }

  void zero() { std::fill(a.begin(), a.end(), 0.0); }
};

// C = A * B (accumulate adds into C instead of overwriting).
inline void matmul(const Mat& A, const Mat& B, Mat& C, bool accumulate = false) {
  assert(A.cols == B.rows);
  if (C.rows != A.rows || C.cols != B.cols) C.resize(A.rows, B.cols);
  if (!accumulate) C.zero();
  for (int i = 0; i < A.rows; ++i) {
    const double* arow = A.row(i);
    double* crow = C.row(i);
    for (int k = 0; k < A.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = B.row(k);
      for (int j = 0; j < B.cols; ++j) crow[j] += aik * brow[j];
    }
  }
}

// C = A^T * B.
inline void matmul_tn(const Mat& A, const Mat& B, Mat& C, bool accumulate = false) {
  assert(A.rows == B.rows);
  if (C.rows != A.cols || C.cols != B.cols) C.resize(A.cols, B.cols);
  if (!accumulate) C.zero();
  for (int k = 0; k < A.rows; ++k) {
    const double* arow = A.row(k);
    const double* brow = B.row(k);
    for (int i = 0; i < A.cols; ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      double* crow = C.row(i);
      for (int j = 0; j < B.cols; ++j) crow[j] += aki * brow[j];
    }
  }
}

// C = A * B^T. B is transposed into scratch first; the inner loop then runs
// contiguously over C's columns, which vectorizes where the short dot-product
// form does not.
inline void matmul_nt(const Mat& A, const Mat& B, Mat& C, bool accumulate = false) {
  assert(A.cols == B.cols);
  if (C.rows != A.rows || C.cols != B.rows) C.resize(A.rows, B.rows);
  if (!accumulate) C.zero();
  thread_local std::vector<double> bt;
  const size_t need = static_cast<size_t>(B.rows) * B.cols;
  if (bt.size() < need) bt.resize(need);
  for (int j = 0; j < B.rows; ++j)
    for (int k = 0; k < B.cols; ++k) bt[static_cast<size_t>(k) * B.rows + j] = B(j, k);
  for (int i = 0; i < A.rows; ++i) {
    const double* arow = A.row(i);
    double* crow = C.row(i);
    for (int k = 0; k < A.cols; ++k) {
      const double aik = arow[k];
      const double* btrow = bt.data() + static_cast<size_t>(k) * B.rows;
      for (int j = 0; j < B.rows; ++j) crow[j] += aik * btrow[j];
    }
  }
}

}  // namespace ssvg
