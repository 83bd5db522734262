#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cva {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

/// Thrown when operand shapes are incompatible. The message names both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
  ShapeError(const std::string& what, const Shape& a, const Shape& b);
};

/// Thrown when a value leaves the finite range (NaN or Inf).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed binary or text input. `offset` is the byte (or line) position.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset);
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Well-formed header carrying a version this build cannot read.
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Dense row-major tensor of doubles. Rank 0 is a scalar, rank 1 a vector,
/// rank 2 a matrix. Every dimension is positive.
class Tensor {
 public:
  Tensor() : shape_{}, data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::span<const double> row(std::size_t r) const;
  std::span<double> row(std::size_t r);

  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_size(const Shape& shape);

/// Shift-stable softmax: the maximum is subtracted before exponentiation.
Tensor softmax(const Tensor& x);

/// out(i, j) = a[i] * b[j].
Tensor outer_product(const Tensor& a, const Tensor& b);

/// W * x + b. With a matrix `x` the map is applied to every row.
Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b);

/// Column means of a K x D matrix.
Tensor mean_over_rows(const Tensor& m);

void require_finite(const Tensor& t, const char* what);

}  // namespace cva
