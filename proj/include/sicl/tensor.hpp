#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sicl {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles. The element count always equals the
// product of the extents.
class Array {
 public:
  Array() = default;
  explicit Array(Shape shape, double fill = 0.0);
  Array(Shape shape, std::vector<double> data);

  static Array zeros(Shape shape) { return Array(std::move(shape), 0.0); }
  static Array full(Shape shape, double value) { return Array(std::move(shape), value); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  // Contiguous slice along the leading axis (e.g. one image of a batch).
  std::span<double> slab(std::size_t index);
  std::span<const double> slab(std::size_t index) const;
  std::size_t slab_size() const;

  Array reshaped(Shape shape) const;
  Array slice_rows(std::size_t begin, std::size_t end) const;

  bool all_finite() const;
  // Throws NumericError naming `what` when any element is NaN or infinite.
  void require_finite(std::string_view what) const;

  friend bool operator==(const Array& a, const Array& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

Array add(const Array& a, const Array& b);
Array subtract(const Array& a, const Array& b);
Array multiply(const Array& a, const Array& b);
Array scale(const Array& a, double factor);

double sum(const Array& a);
double mean(const Array& a);
double max_abs_diff(const Array& a, const Array& b);
double frobenius_norm(const Array& a);

// Stacks equally shaped arrays along a new leading axis.
Array stack(const std::vector<Array>& items);

// Row-wise helpers for 2-D [rows x cols] arrays.
std::size_t argmax_row(const Array& matrix, std::size_t row);
Array softmax_rows(const Array& logits);
Array log_softmax_rows(const Array& logits);

Array matmul(const Array& a, const Array& b);
Array transpose(const Array& a);
Array identity(std::size_t n);

}  // namespace sicl
