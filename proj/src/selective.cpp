#include "dlan/selective.hpp"

namespace dlan {

void validate_bank(const ScaleTowerBank& bank) {
  if (bank.kernel.rank() != 4) throw DimensionError("tower bank: kernel must be [C_out,C_in,kH,kW]");
  if (bank.kernel.extent(2) % 2 == 0 || bank.kernel.extent(3) % 2 == 0)
    throw ConfigError("tower bank: kernel extents must be odd to preserve shape");
  if (bank.dilations.empty()) throw ConfigError("tower bank: no dilations");
  int prev = 0;
  for (int d : bank.dilations) {
    if (d <= prev) throw ConfigError("tower bank: dilations must be strictly increasing positives");
    prev = d;
  }
}

static int tower_padding(const ScaleTowerBank& bank, int d) {
  return d * (bank.kernel.extent(2) - 1) / 2;
}

std::pair<Tensor, SelectionMap> selective_forward(const ScaleTowerBank& bank, const Tensor& F) {
  validate_bank(bank);
  std::vector<Tensor> towers;
  towers.reserve(bank.dilations.size());
  for (int d : bank.dilations) towers.push_back(conv2d(F, bank.kernel, d, tower_padding(bank, d)));
  for (const Tensor& t : towers)
    if (!t.same_shape(towers[0])) throw ConfigError("tower bank: tower shapes diverged");

  if (bank.aggregation == Aggregation::Maximum) return elementwise_max_select(towers);

  const double inv = 1.0 / static_cast<double>(towers.size());
  Tensor mean(towers[0].shape());
  for (const Tensor& t : towers)
    for (int64_t i = 0; i < mean.size(); ++i) mean[i] += t[i];
  for (int64_t i = 0; i < mean.size(); ++i) mean[i] *= inv;
  return {std::move(mean), SelectionMap{}};
}

std::pair<Tensor, Tensor> selective_backward(const ScaleTowerBank& bank, const Tensor& F,
                                             const SelectionMap& selection,
                                             const Tensor& grad_out) {
  validate_bank(bank);
  const int S = static_cast<int>(bank.dilations.size());
  Tensor grad_F(F.shape());
  Tensor grad_kernel(bank.kernel.shape());

  std::vector<Tensor> tower_grads;
  if (bank.aggregation == Aggregation::Maximum) {
    tower_grads = max_select_backward(selection, grad_out, S);
  } else {
    Tensor share(grad_out.shape());
    const double inv = 1.0 / static_cast<double>(S);
    for (int64_t i = 0; i < share.size(); ++i) share[i] = grad_out[i] * inv;
    tower_grads.assign(static_cast<size_t>(S), share);
  }

  for (int s = 0; s < S; ++s) {
    const int d = bank.dilations[static_cast<size_t>(s)];
    auto [gF, gK] = conv2d_backward(F, bank.kernel, d, tower_padding(bank, d),
                                    tower_grads[static_cast<size_t>(s)]);
    for (int64_t i = 0; i < grad_F.size(); ++i) grad_F[i] += gF[i];
    for (int64_t i = 0; i < grad_kernel.size(); ++i) grad_kernel[i] += gK[i];
  }
  return {std::move(grad_F), std::move(grad_kernel)};
}

}  // namespace dlan
