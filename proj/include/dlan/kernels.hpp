#ifndef DLAN_KERNELS_HPP_
#define DLAN_KERNELS_HPP_

#include <cstdint>
#include <utility>
#include <vector>

#include "dlan/tensor.hpp"

namespace dlan {

// Per-element tower index chosen by elementwise_max_select.
struct SelectionMap {
  std::vector<int> shape;
  std::vector<int32_t> idx;
};

// ---------------------------------------------------------------------------
// Forward/backward compute kernels.
//
// The default entry points parallelize with OpenMP; dlan::ref holds serial
// twins with identical loop structure and accumulation order, kept as the
// reference for the equality tests and the kernel benchmark. Every output
// element is written by exactly one thread and summed in a fixed order, so
// results are bit-identical for any thread count.
// ---------------------------------------------------------------------------

// Dilated 2-D cross-correlation, stride 1, zero padding.
// input [C_in,H,W], kernel [C_out,C_in,kH,kW] ->
// output [C_out, H + 2*padding - dilation*(kH-1), likewise for W].
Tensor conv2d(const Tensor& input, const Tensor& kernel, int dilation, int padding);
std::pair<Tensor, Tensor> conv2d_backward(const Tensor& input, const Tensor& kernel,
                                          int dilation, int padding, const Tensor& grad_out);

// Bilinear sampling of F [C,H,W] at grid [h,w,2] holding normalized (x,y)
// coordinates, pixel-center convention; out-of-range taps read zero.
Tensor bilinear_sample(const Tensor& F, const Tensor& grid);
std::pair<Tensor, Tensor> bilinear_sample_backward(const Tensor& F, const Tensor& grid,
                                                   const Tensor& grad_out);

// out = weight * input + bias, for input [N], weight [M,N], bias [M].
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);
// Returns (grad_input, grad_weight, grad_bias).
struct LinearGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};
LinearGrads linear_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out);

Tensor relu(const Tensor& input);
// Gradient at exactly 0 is defined as 0.
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);

// Per-element max over equally shaped towers; ties go to the lowest index.
std::pair<Tensor, SelectionMap> elementwise_max_select(const std::vector<Tensor>& towers);
// Routes each grad element exclusively to its selected tower.
std::vector<Tensor> max_select_backward(const SelectionMap& selection, const Tensor& grad_out,
                                        int num_towers);

// 2x2 mean pooling, stride 2; extents must be even.
Tensor avgpool2(const Tensor& input);
Tensor avgpool2_backward(const Tensor& input, const Tensor& grad_out);

namespace ref {
Tensor conv2d(const Tensor& input, const Tensor& kernel, int dilation, int padding);
std::pair<Tensor, Tensor> conv2d_backward(const Tensor& input, const Tensor& kernel,
                                          int dilation, int padding, const Tensor& grad_out);
Tensor bilinear_sample(const Tensor& F, const Tensor& grid);
std::pair<Tensor, Tensor> bilinear_sample_backward(const Tensor& F, const Tensor& grid,
                                                   const Tensor& grad_out);
}  // namespace ref

namespace detail {
void conv2d_check(const Tensor& input, const Tensor& kernel, int dilation, int padding,
                  int* out_h, int* out_w);
}

}  // namespace dlan

#endif  // DLAN_KERNELS_HPP_
