#include "dlan/geometry.hpp"

#include <cmath>

namespace dlan {

NormalizedPoint affine_apply(const AffineTransform& T, NormalizedPoint p) {
  return {T.a[0][0] * p.x + T.a[0][1] * p.y + T.t[0],
          T.a[1][0] * p.x + T.a[1][1] * p.y + T.t[1]};
}

AffineTransform affine_compose(const AffineTransform& outer, const AffineTransform& inner) {
  AffineTransform r;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      r.a[i][j] = outer.a[i][0] * inner.a[0][j] + outer.a[i][1] * inner.a[1][j];
  for (int i = 0; i < 2; ++i)
    r.t[i] = outer.a[i][0] * inner.t[0] + outer.a[i][1] * inner.t[1] + outer.t[i];
  return r;
}

void affine_compose_backward(const AffineTransform& outer, const AffineTransform& inner,
                             const AffineGrad& grad_composed, AffineGrad* g_outer,
                             AffineGrad* g_inner) {
  for (int i = 0; i < 2; ++i) {
    for (int k = 0; k < 2; ++k) {
      double acc = grad_composed.t[i] * inner.t[k];
      for (int j = 0; j < 2; ++j) acc += grad_composed.a[i][j] * inner.a[k][j];
      g_outer->a[i][k] += acc;
    }
    g_outer->t[i] += grad_composed.t[i];
  }
  for (int k = 0; k < 2; ++k) {
    for (int j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (int i = 0; i < 2; ++i) acc += outer.a[i][k] * grad_composed.a[i][j];
      g_inner->a[k][j] += acc;
    }
    double acc = 0.0;
    for (int i = 0; i < 2; ++i) acc += outer.a[i][k] * grad_composed.t[i];
    g_inner->t[k] += acc;
  }
}

double linear_det(const AffineTransform& T) {
  return T.a[0][0] * T.a[1][1] - T.a[0][1] * T.a[1][0];
}

AffineTransform affine_inverse(const AffineTransform& T) {
  const double det = linear_det(T);
  if (std::abs(det) <= 1e-9) throw SingularityError(det);
  const double inv = 1.0 / det;
  AffineTransform r;
  r.a[0][0] = T.a[1][1] * inv;
  r.a[0][1] = -T.a[0][1] * inv;
  r.a[1][0] = -T.a[1][0] * inv;
  r.a[1][1] = T.a[0][0] * inv;
  r.t[0] = -(r.a[0][0] * T.t[0] + r.a[0][1] * T.t[1]);
  r.t[1] = -(r.a[1][0] * T.t[0] + r.a[1][1] * T.t[1]);
  return r;
}

Mat2 affine_adjugate_transpose(const AffineTransform& T) {
  Mat2 r;
  r.m[0][0] = T.a[1][1];
  r.m[0][1] = -T.a[1][0];
  r.m[1][0] = -T.a[0][1];
  r.m[1][1] = T.a[0][0];
  return r;
}

Tensor generate_grid(const AffineTransform& T, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ArgumentError("generate_grid: extents must be >= 1");
  Tensor grid({out_h, out_w, 2});
  double* gd = grid.data();
  for (int y = 0; y < out_h; ++y) {
    const double sy = pixel_index_to_normalized(y, out_h);
    for (int x = 0; x < out_w; ++x) {
      const double sx = pixel_index_to_normalized(x, out_w);
      const NormalizedPoint p = affine_apply(T, {sx, sy});
      gd[(static_cast<int64_t>(y) * out_w + x) * 2 + 0] = p.x;
      gd[(static_cast<int64_t>(y) * out_w + x) * 2 + 1] = p.y;
    }
  }
  return grid;
}

AffineGrad generate_grid_backward(const Tensor& grad_grid) {
  if (grad_grid.rank() != 3 || grad_grid.extent(2) != 2)
    throw DimensionError("generate_grid_backward: grad_grid must be [h,w,2]");
  const int h = grad_grid.extent(0), w = grad_grid.extent(1);
  AffineGrad g;
  const double* gd = grad_grid.data();
  for (int y = 0; y < h; ++y) {
    const double sy = pixel_index_to_normalized(y, h);
    for (int x = 0; x < w; ++x) {
      const double sx = pixel_index_to_normalized(x, w);
      const double gx = gd[(static_cast<int64_t>(y) * w + x) * 2 + 0];
      const double gy = gd[(static_cast<int64_t>(y) * w + x) * 2 + 1];
      g.a[0][0] += gx * sx;
      g.a[0][1] += gx * sy;
      g.t[0] += gx;
      g.a[1][0] += gy * sx;
      g.a[1][1] += gy * sy;
      g.t[1] += gy;
    }
  }
  return g;
}

double pixel_index_to_normalized(double i, int n) {
  return (2.0 * i + 1.0) / n - 1.0;
}

double normalized_to_pixel_index(double v, int n) {
  return (v + 1.0) * n * 0.5 - 0.5;
}

NormalizedPoint pixel_to_normalized(PixelPoint p, int width, int height) {
  if (width < 1 || height < 1) throw ArgumentError("pixel_to_normalized: extents must be >= 1");
  return {pixel_index_to_normalized(p.x, width), pixel_index_to_normalized(p.y, height)};
}

PixelPoint normalized_to_pixel(NormalizedPoint p, int width, int height) {
  if (width < 1 || height < 1) throw ArgumentError("normalized_to_pixel: extents must be >= 1");
  return {normalized_to_pixel_index(p.x, width), normalized_to_pixel_index(p.y, height)};
}

}  // namespace dlan
