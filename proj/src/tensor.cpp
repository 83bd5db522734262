#include "cva/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cva {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

ShapeError::ShapeError(const std::string& what, const Shape& a, const Shape& b)
    : std::invalid_argument(what + ": " + shape_string(a) + " vs " + shape_string(b)) {}

FormatError::FormatError(const std::string& what, std::uint64_t offset)
    : std::runtime_error(what + " (at offset " + std::to_string(offset) + ")"), offset_(offset) {}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d == 0) throw std::invalid_argument("tensor dimensions must be positive, got " + shape_string(shape));
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size())
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_string(shape_));
}

Tensor Tensor::vector(std::vector<double> v) {
  const auto n = v.size();
  return Tensor(Shape{n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Tensor(Shape{rows, cols}, std::move(v));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<double> v;
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& r : rows) {
    if (r.size() != cols) throw std::invalid_argument("ragged matrix literal");
    v.insert(v.end(), r.begin(), r.end());
  }
  return Tensor(Shape{rows.size(), cols}, std::move(v));
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw std::invalid_argument("rows() on non-matrix " + shape_string(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw std::invalid_argument("cols() on non-matrix " + shape_string(shape_));
  return shape_[1];
}

std::span<const double> Tensor::row(std::size_t r) const {
  const auto c = cols();
  return std::span<const double>(data_).subspan(r * c, c);
}

std::span<double> Tensor::row(std::size_t r) {
  const auto c = cols();
  return std::span<double>(data_).subspan(r * c, c);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite value in ") + what);
}

namespace {

void require_vector(const Tensor& t, const char* what) {
  if (t.rank() != 1) throw ShapeError(std::string(what) + " expects a vector", t.shape(), Shape{});
}

}  // namespace

Tensor softmax(const Tensor& x) {
  require_vector(x, "softmax");
  require_finite(x, "softmax input");
  const auto in = x.data();
  const double mx = *std::max_element(in.begin(), in.end());
  Tensor out(x.shape());
  double sum = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    out[i] = std::exp(in[i] - mx);
    sum += out[i];
  }
  for (auto& v : out.data()) v /= sum;
  return out;
}

Tensor outer_product(const Tensor& a, const Tensor& b) {
  require_vector(a, "outer_product");
  require_vector(b, "outer_product");
  Tensor out(Shape{a.size(), b.size()});
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) out(i, j) = a[i] * b[j];
  return out;
}

Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b) {
  if (W.rank() != 2) throw ShapeError("affine weight must be a matrix", W.shape(), x.shape());
  if (b.rank() != 1 || b.size() != W.rows()) throw ShapeError("affine bias/weight mismatch", b.shape(), W.shape());
  const std::size_t in = x.rank() == 1 ? x.size() : (x.rank() == 2 ? x.cols() : 0);
  if (in != W.cols() || in == 0) throw ShapeError("affine weight/input mismatch", W.shape(), x.shape());
  const std::size_t n_rows = x.rank() == 1 ? 1 : x.rows();
  Tensor out = x.rank() == 1 ? Tensor(Shape{W.rows()}) : Tensor(Shape{n_rows, W.rows()});
  for (std::size_t r = 0; r < n_rows; ++r) {
    const double* xr = x.data().data() + r * in;
    double* yr = out.data().data() + r * W.rows();
    for (std::size_t i = 0; i < W.rows(); ++i) {
      const double* wi = W.data().data() + i * in;
      double acc = b[i];
      for (std::size_t j = 0; j < in; ++j) acc += wi[j] * xr[j];
      yr[i] = acc;
    }
  }
  return out;
}

Tensor mean_over_rows(const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("mean_over_rows expects a K x D matrix, got " + shape_string(m.shape()));
  Tensor out(Shape{m.cols()});
  for (std::size_t k = 0; k < m.rows(); ++k) {
    auto r = m.row(k);
    for (std::size_t d = 0; d < m.cols(); ++d) out[d] += r[d];
  }
  const double inv = 1.0 / static_cast<double>(m.rows());
  for (auto& v : out.data()) v *= inv;
  return out;
}

}  // namespace cva
