#pragma once

#include <cstddef>
#include <vector>

namespace fellrec {

// Dense row-major matrix of doubles. The single numeric substrate of the
// library; all loops are plain and sequential so results are reproducible
// bit for bit across runs.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // rows*cols, row-major

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  static Matrix zeros(std::size_t r, std::size_t c) { return Matrix(r, c); }
};

// a (m x k) * b (k x n) -> m x n
Matrix matmul(const Matrix& a, const Matrix& b);
// a^T (k x m)^T * b (k x n) -> m x n
Matrix matmul_tn(const Matrix& a, const Matrix& b);
// a (m x k) * b^T (n x k)^T -> m x n
Matrix matmul_nt(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);

void add_inplace(Matrix& dst, const Matrix& src);
void scale_inplace(Matrix& m, double factor);
// dst += factor * src
void axpy_inplace(Matrix& dst, double factor, const Matrix& src);

bool all_finite(const Matrix& m);
// Exact representation equality (memcmp on the payload).
bool bit_equal(const Matrix& a, const Matrix& b);

double dot(const std::vector<double>& a, const std::vector<double>& b);
double l2_norm(const std::vector<double>& v);

}  // namespace fellrec
