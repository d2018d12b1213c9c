#include "dlan/hrst.hpp"

#include <cmath>

namespace dlan {

namespace {

Tensor flattened(const Tensor& t) {
  return Tensor({static_cast<int>(t.size())}, t.vec());
}

void head_grad_to_vec(const AffineGrad& g, Tensor* out6) {
  (*out6)[0] = g.a[0][0];
  (*out6)[1] = g.a[0][1];
  (*out6)[2] = g.a[1][0];
  (*out6)[3] = g.a[1][1];
  (*out6)[4] = g.t[0];
  (*out6)[5] = g.t[1];
}

LinearGrads zero_linear_grads(const LinearHead& head) {
  LinearGrads g;
  if (head.w.size() == 0) return g;  // absent head (single step or ablated)
  g.input = Tensor({head.w.extent(1)});
  g.weight = Tensor(head.w.shape());
  g.bias = Tensor(head.b.shape());
  return g;
}

void accumulate(LinearGrads* dst, const LinearGrads& src) {
  for (int64_t i = 0; i < src.weight.size(); ++i) dst->weight[i] += src.weight[i];
  for (int64_t i = 0; i < src.bias.size(); ++i) dst->bias[i] += src.bias[i];
}

void add_tensor(Tensor* dst, const Tensor& src) {
  for (int64_t i = 0; i < src.size(); ++i) (*dst)[i] += src[i];
}

}  // namespace

AffineTransform predict_transform(const LinearHead& head, const Tensor& features_flat) {
  if (head.w.extent(0) != 6) throw DimensionError("predict_transform: head must emit 6 values");
  const Tensor out = linear(features_flat, head.w, head.b);
  if (!out.all_finite()) throw NumericError("predict_transform: non-finite head output");
  AffineTransform T;
  T.a[0][0] = 1.0 + out[0];
  T.a[0][1] = out[1];
  T.a[1][0] = out[2];
  T.a[1][1] = 1.0 + out[3];
  T.t[0] = out[4];
  T.t[1] = out[5];
  return T;
}

HrstOutput hrst_forward(const HeadParams& params, const Tensor& features, int steps) {
  if (steps < 1) throw ArgumentError("hrst_forward: steps must be >= 1");
  if (features.rank() != 3) throw DimensionError("hrst_forward: features must be [C,h,w]");
  const int h = features.extent(1), w = features.extent(2);
  const int J = params.num_landmarks();
  if (J < 1) throw DimensionError("hrst_forward: landmark head must emit >= 2 values");

  HrstOutput out;
  out.state.trace.features = features;
  out.state.theta_global = predict_transform(params.global_loc, flattened(features));
  out.state.trace.theta_global = out.state.theta_global;
  out.state.theta_local.assign(static_cast<size_t>(J), AffineTransform::identity());
  out.state.trace.steps_run = steps;

  std::vector<AffineTransform> composed(static_cast<size_t>(J), out.state.theta_global);
  for (int i = 2; i <= steps; ++i) {
    StepRecord rec;
    rec.crops.reserve(static_cast<size_t>(J));
    rec.refinement.reserve(static_cast<size_t>(J));
    rec.composed.reserve(static_cast<size_t>(J));
    for (int j = 0; j < J; ++j) {
      const Tensor grid = generate_grid(composed[static_cast<size_t>(j)], h, w);
      Tensor crop = bilinear_sample(features, grid);
      const AffineTransform refine = predict_transform(params.local_loc, flattened(crop));
      composed[static_cast<size_t>(j)] =
          affine_compose(composed[static_cast<size_t>(j)], refine);
      out.state.theta_local[static_cast<size_t>(j)] =
          affine_compose(out.state.theta_local[static_cast<size_t>(j)], refine);
      rec.crops.push_back(std::move(crop));
      rec.refinement.push_back(refine);
      rec.composed.push_back(composed[static_cast<size_t>(j)]);
    }
    out.state.trace.steps.push_back(std::move(rec));
  }
  out.state.step = steps;

  out.rel.points.resize(static_cast<size_t>(J));
  out.rel.visible.assign(static_cast<size_t>(J), 1);
  out.abs.points.resize(static_cast<size_t>(J));
  out.abs.visible.assign(static_cast<size_t>(J), 1);
  for (int j = 0; j < J; ++j) {
    const Tensor grid = generate_grid(composed[static_cast<size_t>(j)], h, w);
    Tensor crop = bilinear_sample(features, grid);
    const Tensor coords = linear(flattened(crop), params.landmark.w, params.landmark.b);
    if (!coords.all_finite()) throw NumericError("hrst_forward: non-finite landmark output");
    const NormalizedPoint rel{coords[2 * j], coords[2 * j + 1]};
    out.rel.points[static_cast<size_t>(j)] = rel;
    out.abs.points[static_cast<size_t>(j)] =
        affine_apply(composed[static_cast<size_t>(j)], rel);
    out.state.trace.final_crops.push_back(std::move(crop));
    out.state.trace.theta_final.push_back(composed[static_cast<size_t>(j)]);
  }
  return out;
}

HeadGrads hrst_backward(const HeadParams& params, const HrstTrace& trace,
                        const std::vector<std::array<double, 2>>& grad_rel,
                        const std::vector<AffineGrad>& grad_theta) {
  const int J = params.num_landmarks();
  const size_t Ju = static_cast<size_t>(J);
  if (trace.theta_final.size() != Ju || trace.final_crops.size() != Ju ||
      grad_rel.size() != Ju || grad_theta.size() != Ju)
    throw DimensionError("hrst_backward: trace/gradient landmark count mismatch");
  const Tensor& features = trace.features;
  const int h = features.extent(1), w = features.extent(2);

  HeadGrads g;
  g.global_loc = zero_linear_grads(params.global_loc);
  g.local_loc = zero_linear_grads(params.local_loc);
  g.landmark = zero_linear_grads(params.landmark);
  g.features = Tensor(features.shape());

  std::vector<AffineGrad> theta_grad = grad_theta;

  Tensor go_coords({2 * J});
  for (size_t j = 0; j < Ju; ++j) {
    go_coords.fill(0.0);
    go_coords[2 * static_cast<int>(j)] = grad_rel[j][0];
    go_coords[2 * static_cast<int>(j) + 1] = grad_rel[j][1];
    const LinearGrads lg = linear_backward(flattened(trace.final_crops[j]), params.landmark.w,
                                           go_coords);
    accumulate(&g.landmark, lg);
    const Tensor grad_crop(features.shape(), lg.input.vec());
    const Tensor grid = generate_grid(trace.theta_final[j], h, w);
    auto [gF, gGrid] = bilinear_sample_backward(features, grid, grad_crop);
    add_tensor(&g.features, gF);
    theta_grad[j].add(generate_grid_backward(gGrid));
  }

  Tensor go6({6});
  for (size_t s = trace.steps.size(); s-- > 0;) {
    const StepRecord& rec = trace.steps[s];
    if (rec.crops.size() != Ju || rec.refinement.size() != Ju)
      throw DimensionError("hrst_backward: malformed step record");
    for (size_t j = 0; j < Ju; ++j) {
      const AffineTransform& prev =
          s == 0 ? trace.theta_global : trace.steps[s - 1].composed[j];
      AffineGrad g_prev, g_refine;
      affine_compose_backward(prev, rec.refinement[j], theta_grad[j], &g_prev, &g_refine);
      head_grad_to_vec(g_refine, &go6);
      const LinearGrads lg = linear_backward(flattened(rec.crops[j]), params.local_loc.w, go6);
      accumulate(&g.local_loc, lg);
      const Tensor grad_crop(features.shape(), lg.input.vec());
      const Tensor grid = generate_grid(prev, h, w);
      auto [gF, gGrid] = bilinear_sample_backward(features, grid, grad_crop);
      add_tensor(&g.features, gF);
      g_prev.add(generate_grid_backward(gGrid));
      theta_grad[j] = g_prev;
    }
  }

  AffineGrad g_global;
  for (size_t j = 0; j < Ju; ++j) g_global.add(theta_grad[j]);
  head_grad_to_vec(g_global, &go6);
  const LinearGrads lg = linear_backward(flattened(features), params.global_loc.w, go6);
  accumulate(&g.global_loc, lg);
  add_tensor(&g.features, Tensor(features.shape(), lg.input.vec()));
  return g;
}

}  // namespace dlan
