#include "fellrec/matrix.hpp"

#include <cmath>
#include <cstring>

#include "fellrec/errors.hpp"

namespace fellrec {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw ContractViolation("matmul: inner dimensions differ");
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a.at(i, k);
      for (std::size_t j = 0; j < b.cols; ++j) {
        out.at(i, j) += aik * b.at(k, j);
      }
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) throw ContractViolation("matmul_tn: inner dimensions differ");
  Matrix out(a.cols, b.cols);
  for (std::size_t k = 0; k < a.rows; ++k) {
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double aki = a.at(k, i);
      for (std::size_t j = 0; j < b.cols; ++j) {
        out.at(i, j) += aki * b.at(k, j);
      }
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) throw ContractViolation("matmul_nt: inner dimensions differ");
  Matrix out(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < b.rows; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) {
        acc += a.at(i, k) * b.at(j, k);
      }
      out.at(i, j) = acc;
    }
  }
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) {
      out.at(j, i) = m.at(i, j);
    }
  }
  return out;
}

void add_inplace(Matrix& dst, const Matrix& src) {
  if (dst.rows != src.rows || dst.cols != src.cols) {
    throw ContractViolation("add_inplace: shape mismatch");
  }
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

void scale_inplace(Matrix& m, double factor) {
  for (double& v : m.data) v *= factor;
}

void axpy_inplace(Matrix& dst, double factor, const Matrix& src) {
  if (dst.rows != src.rows || dst.cols != src.cols) {
    throw ContractViolation("axpy_inplace: shape mismatch");
  }
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += factor * src.data[i];
}

bool all_finite(const Matrix& m) {
  for (double v : m.data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool bit_equal(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || a.cols != b.cols) return false;
  if (a.data.empty()) return true;
  return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ContractViolation("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double l2_norm(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

}  // namespace fellrec
