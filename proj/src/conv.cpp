#include "sicl/conv.hpp"

#include <algorithm>
#include <vector>

#include <Eigen/Core>

#include "sicl/errors.hpp"

namespace sicl {

namespace {

constexpr std::size_t kChunkColumns = 4096;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

Eigen::Index ix(std::size_t v) { return static_cast<Eigen::Index>(v); }

void check_sizes(const Conv2dGeometry& g, std::size_t batch, std::size_t input, std::size_t weight,
                 std::size_t output) {
  if (g.kernel == 0 || g.stride == 0 || g.height + 2 * g.pad < g.kernel || g.width + 2 * g.pad < g.kernel) {
    throw ArgumentError("conv2d: invalid geometry");
  }
  if (input != batch * g.input_size() || weight != g.weight_size() || output != batch * g.output_size()) {
    throw ArgumentError("conv2d: buffer sizes do not match geometry");
  }
}

// col is [Cin*k*k x ld]; this image fills columns [0, OH*OW) of each row.
void im2col(const Conv2dGeometry& g, const double* in, double* col, std::size_t ld) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), k = g.kernel;
  const auto h = static_cast<std::ptrdiff_t>(g.height), w = static_cast<std::ptrdiff_t>(g.width);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const double* plane = in + c * g.height * g.width;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = col + ((c * k + ky) * k + kx) * ld;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          double* dst = row + oy * ow;
          if (y < 0 || y >= h) {
            std::fill(dst, dst + ow, 0.0);
            continue;
          }
          const double* src = plane + y * w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (x < 0 || x >= w) ? 0.0 : src[x];
          }
        }
      }
    }
  }
}

void col2im(const Conv2dGeometry& g, const double* col, std::size_t ld, double* in) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), k = g.kernel;
  const auto h = static_cast<std::ptrdiff_t>(g.height), w = static_cast<std::ptrdiff_t>(g.width);
  std::fill(in, in + g.input_size(), 0.0);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    double* plane = in + c * g.height * g.width;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = col + ((c * k + ky) * k + kx) * ld;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (y < 0 || y >= h) continue;
          double* dst = plane + y * w;
          const double* src = row + oy * ow;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (x >= 0 && x < w) dst[x] += src[ox];
          }
        }
      }
    }
  }
}

std::size_t chunk_images(std::size_t n, std::size_t batch) {
  return std::clamp<std::size_t>(kChunkColumns / std::max<std::size_t>(n, 1), 1, std::max<std::size_t>(batch, 1));
}

}  // namespace

void conv2d_forward(const Conv2dGeometry& g, std::size_t batch, std::span<const double> input,
                    std::span<const double> weight, std::span<const double> bias, std::span<double> output) {
  check_sizes(g, batch, input.size(), weight.size(), output.size());
  if (bias.size() != g.out_channels) throw ArgumentError("conv2d: bias size mismatch");
  const std::size_t kdim = g.in_channels * g.kernel * g.kernel;
  const std::size_t n = g.out_height() * g.out_width(), chunk = chunk_images(n, batch);
  // [Cout x kdim] * [kdim x chunk*OH*OW] per chunk of images
  std::vector<double> col(kdim * chunk * n), prod(g.out_channels * chunk * n);
  for (std::size_t b0 = 0; b0 < batch; b0 += chunk) {
    const std::size_t nb = std::min(chunk, batch - b0), ld = nb * n;
    for (std::size_t b = 0; b < nb; ++b) im2col(g, input.data() + (b0 + b) * g.input_size(), col.data() + b * n, ld);
    for (std::size_t m = 0; m < g.out_channels; ++m) std::fill_n(prod.data() + m * ld, ld, bias[m]);
    MapMat(prod.data(), ix(g.out_channels), ix(ld)).noalias() +=
        ConstMapMat(weight.data(), ix(g.out_channels), ix(kdim)) * ConstMapMat(col.data(), ix(kdim), ix(ld));
    for (std::size_t b = 0; b < nb; ++b) {
      for (std::size_t m = 0; m < g.out_channels; ++m) {
        std::copy_n(prod.data() + m * ld + b * n, n, output.data() + (b0 + b) * g.output_size() + m * n);
      }
    }
  }
}

void conv2d_backward(const Conv2dGeometry& g, std::size_t batch, std::span<const double> input,
                     std::span<const double> weight, std::span<const double> grad_output,
                     std::span<double> grad_input, std::span<double> grad_weight, std::span<double> grad_bias) {
  check_sizes(g, batch, input.size(), weight.size(), grad_output.size());
  const bool want_input = !grad_input.empty();
  const bool want_weight = !grad_weight.empty();
  if (want_input && grad_input.size() != input.size()) throw ArgumentError("conv2d: grad_input size mismatch");
  if (want_weight && grad_weight.size() != weight.size()) throw ArgumentError("conv2d: grad_weight size mismatch");
  if (!grad_bias.empty() && grad_bias.size() != g.out_channels) throw ArgumentError("conv2d: grad_bias size mismatch");

  const std::size_t kdim = g.in_channels * g.kernel * g.kernel;
  const std::size_t n = g.out_height() * g.out_width(), chunk = chunk_images(n, batch);
  std::vector<double> dout(g.out_channels * chunk * n), col, dcol;
  if (want_weight) col.resize(kdim * chunk * n);
  if (want_input) dcol.resize(kdim * chunk * n);
  for (std::size_t b0 = 0; b0 < batch; b0 += chunk) {
    const std::size_t nb = std::min(chunk, batch - b0), ld = nb * n;
    for (std::size_t b = 0; b < nb; ++b) {
      for (std::size_t m = 0; m < g.out_channels; ++m) {
        std::copy_n(grad_output.data() + (b0 + b) * g.output_size() + m * n, n, dout.data() + m * ld + b * n);
      }
    }
    if (!grad_bias.empty()) {
      for (std::size_t m = 0; m < g.out_channels; ++m) {
        double s = 0.0;
        for (std::size_t j = 0; j < ld; ++j) s += dout[m * ld + j];
        grad_bias[m] += s;
      }
    }
    if (want_weight) {
      for (std::size_t b = 0; b < nb; ++b) im2col(g, input.data() + (b0 + b) * g.input_size(), col.data() + b * n, ld);
      MapMat(grad_weight.data(), ix(g.out_channels), ix(kdim)).noalias() +=
          ConstMapMat(dout.data(), ix(g.out_channels), ix(ld)) * ConstMapMat(col.data(), ix(kdim), ix(ld)).transpose();
    }
    if (want_input) {
      MapMat(dcol.data(), ix(kdim), ix(ld)).noalias() =
          ConstMapMat(weight.data(), ix(g.out_channels), ix(kdim)).transpose() *
          ConstMapMat(dout.data(), ix(g.out_channels), ix(ld));
      for (std::size_t b = 0; b < nb; ++b) {
        col2im(g, dcol.data() + b * n, ld, grad_input.data() + (b0 + b) * g.input_size());
      }
    }
  }
}

}  // namespace sicl
