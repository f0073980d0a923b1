#pragma once

#include "sicl/tensor.hpp"

namespace sicl {

// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
// Throws NumericError when a pivot is not positive.
Array cholesky(const Array& m);

// (m + ridge*I)^-1 for symmetric m. Throws NumericError on asymmetric input,
// on loss of positive definiteness, or when the inverse fails the product
// check ||(m + ridge*I) * inv - I||_F < 1e-8.
Array invert_spd(const Array& m, double ridge);

// Quadratic form v^T A v.
double quadratic_form(const Array& a, std::span<const double> v);

}  // namespace sicl
