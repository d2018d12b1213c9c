#include "dlan/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace dlan {

namespace detail {

void conv2d_check(const Tensor& input, const Tensor& kernel, int dilation, int padding,
                  int* out_h, int* out_w) {
  if (input.rank() != 3) throw DimensionError("conv2d: input must be [C,H,W]");
  if (kernel.rank() != 4) throw DimensionError("conv2d: kernel must be [C_out,C_in,kH,kW]");
  if (dilation < 1) throw ArgumentError("conv2d: dilation must be >= 1");
  if (padding < 0) throw ArgumentError("conv2d: padding must be >= 0");
  if (kernel.extent(1) != input.extent(0))
    throw DimensionError("conv2d: kernel C_in does not match input channels");
  int h = input.extent(1) + 2 * padding - dilation * (kernel.extent(2) - 1);
  int w = input.extent(2) + 2 * padding - dilation * (kernel.extent(3) - 1);
  if (h < 1 || w < 1) throw DimensionError("conv2d: dilated kernel does not fit padded input");
  *out_h = h;
  *out_w = w;
}

}  // namespace detail

// The conv loops run tap-major (c,i,j) with a contiguous inner x loop; each
// output element is accumulated by exactly one thread in that fixed order,
// so any OMP schedule or thread count produces identical bits.

Tensor conv2d(const Tensor& input, const Tensor& kernel, int dilation, int padding) {
  int Ho, Wo;
  detail::conv2d_check(input, kernel, dilation, padding, &Ho, &Wo);
  const int Cin = input.extent(0), H = input.extent(1), W = input.extent(2);
  const int Cout = kernel.extent(0), kH = kernel.extent(2), kW = kernel.extent(3);
  Tensor out({Cout, Ho, Wo});
  const double* in = input.data();
  const double* kd = kernel.data();
  double* od = out.data();

#pragma omp parallel for schedule(static)
  for (int o = 0; o < Cout; ++o) {
    for (int c = 0; c < Cin; ++c) {
      for (int i = 0; i < kH; ++i) {
        for (int j = 0; j < kW; ++j) {
          const double w = kd[((static_cast<int64_t>(o) * Cin + c) * kH + i) * kW + j];
          const int ylo = std::max(0, padding - i * dilation);
          const int yhi = std::min(Ho - 1, H - 1 + padding - i * dilation);
          const int xlo = std::max(0, padding - j * dilation);
          const int xhi = std::min(Wo - 1, W - 1 + padding - j * dilation);
          const int shift = j * dilation - padding;
          for (int y = ylo; y <= yhi; ++y) {
            const double* in_row =
                in + (static_cast<int64_t>(c) * H + (y + i * dilation - padding)) * W;
            double* out_row = od + (static_cast<int64_t>(o) * Ho + y) * Wo;
            for (int x = xlo; x <= xhi; ++x) out_row[x] += w * in_row[x + shift];
          }
        }
      }
    }
  }
  return out;
}

std::pair<Tensor, Tensor> conv2d_backward(const Tensor& input, const Tensor& kernel, int dilation,
                                          int padding, const Tensor& grad_out) {
  int Ho, Wo;
  detail::conv2d_check(input, kernel, dilation, padding, &Ho, &Wo);
  if (grad_out.rank() != 3 || grad_out.extent(0) != kernel.extent(0) ||
      grad_out.extent(1) != Ho || grad_out.extent(2) != Wo)
    throw DimensionError("conv2d_backward: grad_out shape does not match forward output");
  const int Cin = input.extent(0), H = input.extent(1), W = input.extent(2);
  const int Cout = kernel.extent(0), kH = kernel.extent(2), kW = kernel.extent(3);
  Tensor grad_input(input.shape());
  Tensor grad_kernel(kernel.shape());
  const double* in = input.data();
  const double* kd = kernel.data();
  const double* go = grad_out.data();
  double* gi = grad_input.data();
  double* gk = grad_kernel.data();

#pragma omp parallel for schedule(static)
  for (int c = 0; c < Cin; ++c) {
    for (int o = 0; o < Cout; ++o) {
      for (int i = 0; i < kH; ++i) {
        for (int j = 0; j < kW; ++j) {
          const double w = kd[((static_cast<int64_t>(o) * Cin + c) * kH + i) * kW + j];
          const int ylo = std::max(0, i * dilation - padding);
          const int yhi = std::min(H - 1, Ho - 1 + i * dilation - padding);
          const int xlo = std::max(0, j * dilation - padding);
          const int xhi = std::min(W - 1, Wo - 1 + j * dilation - padding);
          const int shift = j * dilation - padding;
          for (int iy = ylo; iy <= yhi; ++iy) {
            double* gi_row = gi + (static_cast<int64_t>(c) * H + iy) * W;
            const double* go_row =
                go + (static_cast<int64_t>(o) * Ho + (iy - i * dilation + padding)) * Wo;
            for (int ix = xlo; ix <= xhi; ++ix) gi_row[ix] += w * go_row[ix - shift];
          }
        }
      }
    }
  }

#pragma omp parallel for collapse(2) schedule(static)
  for (int o = 0; o < Cout; ++o) {
    for (int c = 0; c < Cin; ++c) {
      for (int i = 0; i < kH; ++i) {
        for (int j = 0; j < kW; ++j) {
          const int ylo = std::max(0, padding - i * dilation);
          const int yhi = std::min(Ho - 1, H - 1 + padding - i * dilation);
          const int xlo = std::max(0, padding - j * dilation);
          const int xhi = std::min(Wo - 1, W - 1 + padding - j * dilation);
          const int shift = j * dilation - padding;
          double acc = 0.0;
          for (int y = ylo; y <= yhi; ++y) {
            const double* in_row =
                in + (static_cast<int64_t>(c) * H + (y + i * dilation - padding)) * W;
            const double* go_row = go + (static_cast<int64_t>(o) * Ho + y) * Wo;
            for (int x = xlo; x <= xhi; ++x) acc += in_row[x + shift] * go_row[x];
          }
          gk[((static_cast<int64_t>(o) * Cin + c) * kH + i) * kW + j] = acc;
        }
      }
    }
  }
  return {std::move(grad_input), std::move(grad_kernel)};
}

namespace {

inline double tap(const double* plane, int H, int W, int y, int x) {
  if (y < 0 || y >= H || x < 0 || x >= W) return 0.0;
  return plane[static_cast<int64_t>(y) * W + x];
}

void bilinear_check(const Tensor& F, const Tensor& grid) {
  if (F.rank() != 3) throw DimensionError("bilinear_sample: F must be [C,H,W]");
  if (grid.rank() != 3 || grid.extent(2) != 2)
    throw DimensionError("bilinear_sample: grid must be [h,w,2]");
}

}  // namespace

Tensor bilinear_sample(const Tensor& F, const Tensor& grid) {
  bilinear_check(F, grid);
  const int C = F.extent(0), H = F.extent(1), W = F.extent(2);
  const int h = grid.extent(0), w = grid.extent(1);
  Tensor out({C, h, w});
  const double* Fd = F.data();
  const double* gd = grid.data();
  double* od = out.data();

#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    const double* plane = Fd + static_cast<int64_t>(c) * H * W;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int64_t gidx = (static_cast<int64_t>(y) * w + x) * 2;
        const double px = (gd[gidx + 0] + 1.0) * W * 0.5 - 0.5;
        const double py = (gd[gidx + 1] + 1.0) * H * 0.5 - 0.5;
        const int x0 = static_cast<int>(std::floor(px));
        const int y0 = static_cast<int>(std::floor(py));
        const double wx = px - x0;
        const double wy = py - y0;
        const double v00 = tap(plane, H, W, y0, x0);
        const double v01 = tap(plane, H, W, y0, x0 + 1);
        const double v10 = tap(plane, H, W, y0 + 1, x0);
        const double v11 = tap(plane, H, W, y0 + 1, x0 + 1);
        od[(static_cast<int64_t>(c) * h + y) * w + x] =
            (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) + wy * ((1.0 - wx) * v10 + wx * v11);
      }
    }
  }
  return out;
}

std::pair<Tensor, Tensor> bilinear_sample_backward(const Tensor& F, const Tensor& grid,
                                                   const Tensor& grad_out) {
  bilinear_check(F, grid);
  const int C = F.extent(0), H = F.extent(1), W = F.extent(2);
  const int h = grid.extent(0), w = grid.extent(1);
  if (grad_out.rank() != 3 || grad_out.extent(0) != C || grad_out.extent(1) != h ||
      grad_out.extent(2) != w)
    throw DimensionError("bilinear_sample_backward: grad_out shape mismatch");
  Tensor grad_F(F.shape());
  Tensor grad_grid(grid.shape());
  const double* Fd = F.data();
  const double* gd = grid.data();
  const double* god = grad_out.data();
  double* gF = grad_F.data();
  double* gg = grad_grid.data();

  // Scatter into grad_F: channels are independent, so one thread owns each
  // channel plane and walks the grid in row-major order.
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    double* gplane = gF + static_cast<int64_t>(c) * H * W;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int64_t gidx = (static_cast<int64_t>(y) * w + x) * 2;
        const double px = (gd[gidx + 0] + 1.0) * W * 0.5 - 0.5;
        const double py = (gd[gidx + 1] + 1.0) * H * 0.5 - 0.5;
        const int x0 = static_cast<int>(std::floor(px));
        const int y0 = static_cast<int>(std::floor(py));
        const double wx = px - x0;
        const double wy = py - y0;
        const double g = god[(static_cast<int64_t>(c) * h + y) * w + x];
        if (y0 >= 0 && y0 < H) {
          if (x0 >= 0 && x0 < W) gplane[static_cast<int64_t>(y0) * W + x0] += (1.0 - wy) * (1.0 - wx) * g;
          if (x0 + 1 >= 0 && x0 + 1 < W)
            gplane[static_cast<int64_t>(y0) * W + x0 + 1] += (1.0 - wy) * wx * g;
        }
        if (y0 + 1 >= 0 && y0 + 1 < H) {
          if (x0 >= 0 && x0 < W) gplane[static_cast<int64_t>(y0 + 1) * W + x0] += wy * (1.0 - wx) * g;
          if (x0 + 1 >= 0 && x0 + 1 < W)
            gplane[static_cast<int64_t>(y0 + 1) * W + x0 + 1] += wy * wx * g;
        }
      }
    }
  }

  // Gather for grad_grid: each grid point sums its channel contributions in
  // ascending channel order.
#pragma omp parallel for collapse(2) schedule(static)
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int64_t gidx = (static_cast<int64_t>(y) * w + x) * 2;
      const double px = (gd[gidx + 0] + 1.0) * W * 0.5 - 0.5;
      const double py = (gd[gidx + 1] + 1.0) * H * 0.5 - 0.5;
      const int x0 = static_cast<int>(std::floor(px));
      const int y0 = static_cast<int>(std::floor(py));
      const double wx = px - x0;
      const double wy = py - y0;
      double dpx = 0.0, dpy = 0.0;
      for (int c = 0; c < C; ++c) {
        const double* plane = Fd + static_cast<int64_t>(c) * H * W;
        const double v00 = tap(plane, H, W, y0, x0);
        const double v01 = tap(plane, H, W, y0, x0 + 1);
        const double v10 = tap(plane, H, W, y0 + 1, x0);
        const double v11 = tap(plane, H, W, y0 + 1, x0 + 1);
        const double g = god[(static_cast<int64_t>(c) * h + y) * w + x];
        dpx += ((1.0 - wy) * (v01 - v00) + wy * (v11 - v10)) * g;
        dpy += ((1.0 - wx) * (v10 - v00) + wx * (v11 - v01)) * g;
      }
      gg[gidx + 0] = dpx * W * 0.5;
      gg[gidx + 1] = dpy * H * 0.5;
    }
  }
  return {std::move(grad_F), std::move(grad_grid)};
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (input.rank() != 1 || weight.rank() != 2 || bias.rank() != 1)
    throw DimensionError("linear: expects input [N], weight [M,N], bias [M]");
  const int N = input.extent(0), M = weight.extent(0);
  if (weight.extent(1) != N || bias.extent(0) != M)
    throw DimensionError("linear: dimension mismatch");
  Tensor out({M});
  const double* in = input.data();
  const double* wd = weight.data();
  const double* bd = bias.data();
  double* od = out.data();
#pragma omp parallel for schedule(static)
  for (int m = 0; m < M; ++m) {
    double acc = bd[m];
    const double* row = wd + static_cast<int64_t>(m) * N;
    for (int n = 0; n < N; ++n) acc += row[n] * in[n];
    od[m] = acc;
  }
  return out;
}

LinearGrads linear_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out) {
  const int N = input.extent(0), M = weight.extent(0);
  if (grad_out.rank() != 1 || grad_out.extent(0) != M)
    throw DimensionError("linear_backward: grad_out must be [M]");
  LinearGrads g;
  g.input = Tensor({N});
  g.weight = Tensor({M, N});
  g.bias = Tensor({M});
  const double* in = input.data();
  const double* wd = weight.data();
  const double* go = grad_out.data();
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    double acc = 0.0;
    for (int m = 0; m < M; ++m) acc += wd[static_cast<int64_t>(m) * N + n] * go[m];
    g.input[n] = acc;
  }
#pragma omp parallel for schedule(static)
  for (int m = 0; m < M; ++m) {
    double* row = g.weight.data() + static_cast<int64_t>(m) * N;
    for (int n = 0; n < N; ++n) row[n] = go[m] * in[n];
    g.bias[m] = go[m];
  }
  return g;
}

Tensor relu(const Tensor& input) {
  Tensor out(input.shape());
  const double* in = input.data();
  double* od = out.data();
  const int64_t n = input.size();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) od[i] = in[i] > 0.0 ? in[i] : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  if (!input.same_shape(grad_out)) throw DimensionError("relu_backward: shape mismatch");
  Tensor out(input.shape());
  const double* in = input.data();
  const double* go = grad_out.data();
  double* od = out.data();
  const int64_t n = input.size();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) od[i] = in[i] > 0.0 ? go[i] : 0.0;
  return out;
}

std::pair<Tensor, SelectionMap> elementwise_max_select(const std::vector<Tensor>& towers) {
  if (towers.empty()) throw ArgumentError("elementwise_max_select: no towers");
  for (const Tensor& t : towers)
    if (!t.same_shape(towers[0])) throw DimensionError("elementwise_max_select: shape mismatch");
  const int S = static_cast<int>(towers.size());
  const int64_t n = towers[0].size();
  Tensor out(towers[0].shape());
  SelectionMap sel;
  sel.shape = towers[0].shape();
  sel.idx.assign(static_cast<size_t>(n), 0);
  double* od = out.data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    double best = towers[0][i];
    int32_t best_s = 0;
    for (int s = 1; s < S; ++s) {
      const double v = towers[static_cast<size_t>(s)][i];
      if (v > best) {  // strict: ties keep the lowest tower index
        best = v;
        best_s = s;
      }
    }
    od[i] = best;
    sel.idx[static_cast<size_t>(i)] = best_s;
  }
  return {std::move(out), std::move(sel)};
}

std::vector<Tensor> max_select_backward(const SelectionMap& selection, const Tensor& grad_out,
                                        int num_towers) {
  if (selection.shape != grad_out.shape())
    throw DimensionError("max_select_backward: selection/grad_out shape mismatch");
  if (num_towers < 1) throw ArgumentError("max_select_backward: num_towers must be >= 1");
  std::vector<Tensor> grads;
  grads.reserve(static_cast<size_t>(num_towers));
  for (int s = 0; s < num_towers; ++s) grads.emplace_back(grad_out.shape());
  const int64_t n = grad_out.size();
  for (int64_t i = 0; i < n; ++i) {
    const int32_t s = selection.idx[static_cast<size_t>(i)];
    if (s < 0 || s >= num_towers) throw DimensionError("max_select_backward: stale selection");
    grads[static_cast<size_t>(s)][i] = grad_out[i];
  }
  return grads;
}

Tensor avgpool2(const Tensor& input) {
  if (input.rank() != 3) throw DimensionError("avgpool2: input must be [C,H,W]");
  const int C = input.extent(0), H = input.extent(1), W = input.extent(2);
  if (H % 2 != 0 || W % 2 != 0) throw ArgumentError("avgpool2: extents must be even");
  Tensor out({C, H / 2, W / 2});
  const double* in = input.data();
  double* od = out.data();
  const int ho = H / 2, wo = W / 2;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    for (int y = 0; y < ho; ++y) {
      for (int x = 0; x < wo; ++x) {
        const double* r0 = in + (static_cast<int64_t>(c) * H + 2 * y) * W + 2 * x;
        const double* r1 = r0 + W;
        od[(static_cast<int64_t>(c) * ho + y) * wo + x] = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
      }
    }
  }
  return out;
}

Tensor avgpool2_backward(const Tensor& input, const Tensor& grad_out) {
  const int C = input.extent(0), H = input.extent(1), W = input.extent(2);
  const int ho = H / 2, wo = W / 2;
  if (grad_out.rank() != 3 || grad_out.extent(0) != C || grad_out.extent(1) != ho ||
      grad_out.extent(2) != wo)
    throw DimensionError("avgpool2_backward: grad_out shape mismatch");
  Tensor grad_input(input.shape());
  const double* go = grad_out.data();
  double* gi = grad_input.data();
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    for (int y = 0; y < ho; ++y) {
      for (int x = 0; x < wo; ++x) {
        const double g = 0.25 * go[(static_cast<int64_t>(c) * ho + y) * wo + x];
        double* r0 = gi + (static_cast<int64_t>(c) * H + 2 * y) * W + 2 * x;
        double* r1 = r0 + W;
        r0[0] += g;
        r0[1] += g;
        r1[0] += g;
        r1[1] += g;
      }
    }
  }
  return grad_input;
}

}  // namespace dlan
