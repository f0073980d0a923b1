#include "sicl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "sicl/errors.hpp"

namespace sicl {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Array::Array(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Array::Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw ArgumentError("array shape " + shape_string(shape_) + " does not match " +
                        std::to_string(data_.size()) + " values");
  }
}

std::size_t Array::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ArgumentError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
  }
  return shape_[axis];
}

std::size_t Array::slab_size() const {
  if (shape_.empty() || shape_[0] == 0) return 0;
  return data_.size() / shape_[0];
}

std::span<double> Array::slab(std::size_t index) {
  const std::size_t n = slab_size();
  return std::span<double>(data_).subspan(index * n, n);
}

std::span<const double> Array::slab(std::size_t index) const {
  const std::size_t n = slab_size();
  return std::span<const double>(data_).subspan(index * n, n);
}

Array Array::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ArgumentError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Array(std::move(shape), data_);
}

Array Array::slice_rows(std::size_t begin, std::size_t end) const {
  if (shape_.empty() || begin > end || end > shape_[0]) {
    throw ArgumentError("row slice out of range for shape " + shape_string(shape_));
  }
  Shape s = shape_;
  s[0] = end - begin;
  const std::size_t n = slab_size();
  return Array(std::move(s), std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * n),
                                                 data_.begin() + static_cast<std::ptrdiff_t>(end * n)));
}

bool Array::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Array::require_finite(std::string_view what) const {
  if (!all_finite()) throw NumericError("non-finite values in " + std::string(what));
}

namespace {

template <typename Op>
Array zip(const Array& a, const Array& b, Op op, const char* name) {
  if (a.shape() != b.shape()) {
    throw ArgumentError(std::string(name) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                        shape_string(b.shape()));
  }
  Array out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = op(a[i], b[i]);
  return out;
}

}  // namespace

Array add(const Array& a, const Array& b) { return zip(a, b, std::plus<>(), "add"); }
Array subtract(const Array& a, const Array& b) { return zip(a, b, std::minus<>(), "subtract"); }
Array multiply(const Array& a, const Array& b) { return zip(a, b, std::multiplies<>(), "multiply"); }

Array scale(const Array& a, double factor) {
  Array out = a;
  for (double& v : out.data()) v *= factor;
  return out;
}

double sum(const Array& a) { return std::accumulate(a.values().begin(), a.values().end(), 0.0); }

double mean(const Array& a) {
  if (a.empty()) throw ArgumentError("mean of empty array");
  return sum(a) / static_cast<double>(a.size());
}

double max_abs_diff(const Array& a, const Array& b) {
  if (a.shape() != b.shape()) throw ArgumentError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double frobenius_norm(const Array& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

Array stack(const std::vector<Array>& items) {
  if (items.empty()) throw ArgumentError("stack of zero arrays");
  Shape s{items.size()};
  s.insert(s.end(), items.front().shape().begin(), items.front().shape().end());
  std::vector<double> data;
  data.reserve(shape_size(s));
  for (const Array& item : items) {
    if (item.shape() != items.front().shape()) throw ArgumentError("stack: shape mismatch");
    data.insert(data.end(), item.values().begin(), item.values().end());
  }
  return Array(std::move(s), std::move(data));
}

std::size_t argmax_row(const Array& matrix, std::size_t row) {
  const std::size_t cols = matrix.dim(1);
  const double* p = matrix.data().data() + row * cols;
  std::size_t best = 0;
  for (std::size_t j = 1; j < cols; ++j) {
    if (p[j] > p[best]) best = j;  // strict: lowest index wins ties
  }
  return best;
}

Array log_softmax_rows(const Array& logits) {
  if (logits.rank() != 2) throw ArgumentError("log_softmax_rows expects a 2-D array");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  Array out(logits.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    const double* z = logits.data().data() + i * cols;
    double* o = out.data().data() + i * cols;
    const double m = *std::max_element(z, z + cols);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += std::exp(z[j] - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < cols; ++j) o[j] = z[j] - lse;
  }
  return out;
}

Array softmax_rows(const Array& logits) {
  Array out = log_softmax_rows(logits);
  for (double& v : out.data()) v = std::exp(v);
  return out;
}

Array matmul(const Array& a, const Array& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ArgumentError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                        shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Array out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* o = out.data().data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a.at(i, p);
      const double* brow = b.data().data() + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * brow[j];
    }
  }
  return out;
}

Array transpose(const Array& a) {
  if (a.rank() != 2) throw ArgumentError("transpose expects a 2-D array");
  Array out({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

Array identity(std::size_t n) {
  Array out({n, n});
  for (std::size_t i = 0; i < n; ++i) out.at(i, i) = 1.0;
  return out;
}

}  // namespace sicl
