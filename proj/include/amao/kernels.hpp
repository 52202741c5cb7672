#pragma once

#include <cstddef>
#include <span>
#include <vector>

// Dense CPU kernels for the tiny CNN. Every OpenMP kernel partitions work so
// that each output element is summed by one thread in a fixed order, which
// keeps results bit-identical across thread counts. The *_serial variants are
// direct transcriptions of the defining sums and serve as test oracles.
namespace amao::nn {

// Shapes are channel-major: in is [cin][h][w], weight is [cout][cin][k][k],
// out is [cout][h-k+1][w-k+1] ("valid" correlation, stride 1).
struct ConvShape {
    std::size_t cin, cout, h, w, k;
    std::size_t oh() const { return h - k + 1; }
    std::size_t ow() const { return w - k + 1; }
};

void conv_forward(const ConvShape& s, std::span<const double> in, std::span<const double> weight,
                  std::span<const double> bias, std::span<double> out);
void conv_forward_serial(const ConvShape& s, std::span<const double> in, std::span<const double> weight,
                         std::span<const double> bias, std::span<double> out);

// Accumulates into grad_weight / grad_bias and overwrites grad_in; pass an
// empty span for either side to skip it.
void conv_backward(const ConvShape& s, std::span<const double> in, std::span<const double> weight,
                   std::span<const double> grad_out, std::span<double> grad_in, std::span<double> grad_weight,
                   std::span<double> grad_bias);
void conv_backward_serial(const ConvShape& s, std::span<const double> in, std::span<const double> weight,
                          std::span<const double> grad_out, std::span<double> grad_in,
                          std::span<double> grad_weight, std::span<double> grad_bias);

// 2x2 max pool, stride 2, floor on odd sizes. `argmax` receives the flat input
// index chosen for every output cell.
void maxpool_forward(std::size_t c, std::size_t h, std::size_t w, std::span<const double> in, std::span<double> out,
                     std::span<std::size_t> argmax);
void maxpool_backward(std::span<const double> grad_out, std::span<const std::size_t> argmax,
                      std::span<double> grad_in);

// out[o] = bias[o] + sum_i weight[o][i] * in[i]
void dense_forward(std::size_t nin, std::size_t nout, std::span<const double> in, std::span<const double> weight,
                   std::span<const double> bias, std::span<double> out);
void dense_forward_serial(std::size_t nin, std::size_t nout, std::span<const double> in,
                          std::span<const double> weight, std::span<const double> bias, std::span<double> out);
void dense_backward(std::size_t nin, std::size_t nout, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> grad_out, std::span<double> grad_in, std::span<double> grad_weight,
                    std::span<double> grad_bias);

void relu_inplace(std::span<double> x);
// Zeroes grad where the forward activation was clipped.
void relu_backward(std::span<const double> activated, std::span<double> grad);

std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0);

} // namespace amao::nn
