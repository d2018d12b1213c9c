#include "dlan/kernels.hpp"

#include <algorithm>
#include <cmath>

// Serial twins of the parallel kernels. Loop structure and accumulation
// order match the OMP versions exactly, so outputs must be bit-identical.

namespace dlan {
namespace ref {

Tensor conv2d(const Tensor& input, const Tensor& kernel, int dilation, int padding) {
  int Ho, Wo;
  detail::conv2d_check(input, kernel, dilation, padding, &Ho, &Wo);
  const int Cin = input.extent(0), H = input.extent(1), W = input.extent(2);
  const int Cout = kernel.extent(0), kH = kernel.extent(2), kW = kernel.extent(3);
  Tensor out({Cout, Ho, Wo});
  const double* in = input.data();
  const double* kd = kernel.data();
  double* od = out.data();

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

}  // namespace ref
}  // namespace dlan
