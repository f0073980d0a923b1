#include "sicl/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sicl/errors.hpp"

namespace sicl {

namespace {

void require_square(const Array& m, const char* who) {
  if (m.rank() != 2 || m.dim(0) != m.dim(1)) {
    throw ArgumentError(std::string(who) + ": expected a square matrix, got " + shape_string(m.shape()));
  }
}

}  // namespace

Array cholesky(const Array& m) {
  require_square(m, "cholesky");
  const std::size_t n = m.dim(0);
  Array l({n, n});
  for (std::size_t j = 0; j < n; ++j) {
    double d = m.at(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l.at(j, k) * l.at(j, k);
    if (!(d > 0.0)) throw NumericError("matrix is singular or not positive definite at pivot " + std::to_string(j));
    const double ljj = std::sqrt(d);
    l.at(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m.at(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l.at(i, k) * l.at(j, k);
      l.at(i, j) = s / ljj;
    }
  }
  return l;
}

Array invert_spd(const Array& m, double ridge) {
  require_square(m, "invert_spd");
  if (!(ridge >= 0.0)) throw ArgumentError("invert_spd: ridge must be nonnegative");
  m.require_finite("invert_spd input");
  const std::size_t n = m.dim(0);
  double scale = 0.0;
  for (double v : m.data()) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::abs(m.at(i, j) - m.at(j, i)) > 1e-12 * std::max(scale, 1.0)) {
        throw NumericError("invert_spd: matrix is not symmetric at (" + std::to_string(i) + ", " +
                           std::to_string(j) + ")");
      }
    }
  }
  Array ridged = m;
  for (std::size_t i = 0; i < n; ++i) ridged.at(i, i) += ridge;
  const Array l = cholesky(ridged);

  // Solve L L^T X = I column by column.
  Array inv({n, n});
  std::vector<double> y(n);
  for (std::size_t col = 0; col < n; ++col) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = (i == col) ? 1.0 : 0.0;
      for (std::size_t k = 0; k < i; ++k) s -= l.at(i, k) * y[k];
      y[i] = s / l.at(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
      double s = y[ii];
      for (std::size_t k = ii + 1; k < n; ++k) s -= l.at(k, ii) * inv.at(k, col);
      inv.at(ii, col) = s / l.at(ii, ii);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double avg = 0.5 * (inv.at(i, j) + inv.at(j, i));
      inv.at(i, j) = inv.at(j, i) = avg;
    }
  }

  const Array residual = subtract(matmul(ridged, inv), identity(n));
  const double err = frobenius_norm(residual);
  if (!(err < 1e-8)) {
    throw NumericError("invert_spd: ill-conditioned matrix, residual " + std::to_string(err));
  }
  return inv;
}

double quadratic_form(const Array& a, std::span<const double> v) {
  require_square(a, "quadratic_form");
  const std::size_t n = a.dim(0);
  if (v.size() != n) throw ArgumentError("quadratic_form: vector length mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) row += a.at(i, j) * v[j];
    total += v[i] * row;
  }
  return total;
}

}  // namespace sicl
