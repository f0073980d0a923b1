#pragma once

#include <cstddef>
#include <span>

namespace sicl {

// Square-kernel 2-D cross-correlation over NCHW batches (the "convolution"
// of deep-learning frameworks), zero padded.
struct Conv2dGeometry {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;

  std::size_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  std::size_t input_size() const { return in_channels * height * width; }
  std::size_t output_size() const { return out_channels * out_height() * out_width(); }
  std::size_t weight_size() const { return out_channels * in_channels * kernel * kernel; }
};

// input [B x Cin x H x W], weight [Cout x Cin x k x k], bias [Cout],
// output [B x Cout x OH x OW] (overwritten).
void conv2d_forward(const Conv2dGeometry& g, std::size_t batch, std::span<const double> input,
                    std::span<const double> weight, std::span<const double> bias, std::span<double> output);

// Accumulates into grad_weight and grad_bias; overwrites grad_input. Pass an
// empty span for any gradient that is not needed.
void conv2d_backward(const Conv2dGeometry& g, std::size_t batch, std::span<const double> input,
                     std::span<const double> weight, std::span<const double> grad_output,
                     std::span<double> grad_input, std::span<double> grad_weight, std::span<double> grad_bias);

}  // namespace sicl
