// Copyright 2026 The Calibrar Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CALIBRAR_NUM_ARRAY_HPP_
#define CALIBRAR_NUM_ARRAY_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "calibrar/error.hpp"

namespace calibrar {

// Dense row-major array of doubles with an explicit shape.
//
// Scalars have shape {1}; vectors {n}; matrices {rows, cols}. The element
// count always equals the product of the shape.
class NumArray {
 public:
  NumArray() : shape_{0} {}

  explicit NumArray(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(element_count(shape_), 0.0) {}

  NumArray(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (element_count(shape_) != data_.size()) {
      throw ShapeError("NumArray: shape " + shape_string(shape_) + " holds " +
                       std::to_string(element_count(shape_)) + " values, got " +
                       std::to_string(data_.size()));
    }
  }

  static NumArray scalar(double value) { return NumArray({1}, {value}); }

  static NumArray vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return NumArray({n}, std::move(values));
  }

  static NumArray matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return NumArray({rows, cols}, std::vector<double>(rows * cols, fill));
  }

  // Nested-list construction, used mostly by tests: {{1, 2}, {3, 4}}.
  static NumArray matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("NumArray::matrix: ragged rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return NumArray({r, c}, std::move(data));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  std::size_t rows() const {
    require_matrix("rows");
    return shape_[0];
  }
  std::size_t cols() const {
    require_matrix("cols");
    return shape_[1];
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::span<double> row(std::size_t r) {
    return std::span<double>(data_).subspan(r * shape_[1], shape_[1]);
  }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * shape_[1], shape_[1]);
  }

  double item() const {
    if (data_.size() != 1) throw ShapeError("NumArray::item on non-scalar " + shape_string(shape_));
    return data_[0];
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const NumArray&, const NumArray&) = default;

  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

  static std::string shape_string(const std::vector<std::size_t>& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
    out << ']';
    return out.str();
  }

 private:
  void require_matrix(const char* what) const {
    if (shape_.size() != 2) {
      throw ShapeError(std::string("NumArray::") + what + " needs a matrix, got " +
                       shape_string(shape_));
    }
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline void require_finite(const NumArray& a, const char* where) {
  if (!a.all_finite()) throw NumericError(std::string(where) + ": non-finite value");
}

inline void require_matrix(const NumArray& a, const char* where) {
  if (a.rank() != 2) {
    throw ShapeError(std::string(where) + ": expected a matrix, got " +
                     NumArray::shape_string(a.shape()));
  }
}

inline void require_same_shape(const NumArray& a, const NumArray& b, const char* where) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(where) + ": shape " + NumArray::shape_string(a.shape()) +
                     " vs " + NumArray::shape_string(b.shape()));
  }
}

// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

namespace ops {

inline NumArray matmul(const NumArray& a, const NumArray& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dimensions differ, " + NumArray::shape_string(a.shape()) +
                     " x " + NumArray::shape_string(b.shape()));
  }
  NumArray out = NumArray::matrix(m, n);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = po + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

// a^T b without materializing the transpose.
inline NumArray matmul_tn(const NumArray& a, const NumArray& b) {
  require_matrix(a, "matmul_tn");
  require_matrix(b, "matmul_tn");
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  if (b.rows() != k) throw ShapeError("matmul_tn: leading dimensions differ");
  NumArray out = NumArray::matrix(m, n);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = pa + p * m;
    const double* brow = pb + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* orow = po + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

// a b^T without materializing the transpose.
inline NumArray matmul_nt(const NumArray& a, const NumArray& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) throw ShapeError("matmul_nt: trailing dimensions differ");
  NumArray out = NumArray::matrix(m, n);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = pb + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      po[i * n + j] = acc;
    }
  }
  return out;
}

// Adds a length-cols bias vector to every row.
inline NumArray add_bias(const NumArray& x, const NumArray& bias) {
  require_matrix(x, "add_bias");
  if (bias.rank() != 1 || bias.size() != x.cols()) {
    throw ShapeError("add_bias: bias " + NumArray::shape_string(bias.shape()) + " vs input " +
                     NumArray::shape_string(x.shape()));
  }
  NumArray out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
  }
  return out;
}

inline NumArray relu(const NumArray& x) {
  NumArray out = x;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

// Row-wise softmax, stabilized by subtracting the row maximum.
inline NumArray softmax(const NumArray& logits) {
  require_matrix(logits, "softmax");
  require_finite(logits, "softmax");
  NumArray out = logits;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double peak = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double& v : row) {
      v = std::exp(v - peak);
      total += v;
    }
    for (double& v : row) v /= total;
  }
  return out;
}

}  // namespace ops
}  // namespace calibrar

#endif  // CALIBRAR_NUM_ARRAY_HPP_
