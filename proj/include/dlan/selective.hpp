#pragma once

#include <utility>
#include <vector>

#include "dlan/kernels.hpp"

// Multi-dilation convolution bank: one shared kernel run at several dilation
// rates, towers aggregated per element by maximum (with argmax routing for
// the backward pass) or by mean.

namespace dlan {

enum class Aggregation { Maximum, Average };

struct ScaleTowerBank {
  Tensor kernel;               // [C_out, C_in, kH, kW], odd kH/kW
  std::vector<int> dilations;  // strictly increasing, >= 1
  Aggregation aggregation = Aggregation::Maximum;
};

// Per-tower padding is dilation*(kH-1)/2, so every tower keeps the spatial
// extent of F and the towers can be reduced elementwise.
std::pair<Tensor, SelectionMap> selective_forward(const ScaleTowerBank& bank, const Tensor& F);

std::pair<Tensor, Tensor> selective_backward(const ScaleTowerBank& bank, const Tensor& F,
                                             const SelectionMap& selection, const Tensor& grad_out);

void validate_bank(const ScaleTowerBank& bank);

}  // namespace dlan
