#pragma once

#include <vector>

#include "dlan/errors.hpp"
#include "dlan/tensor.hpp"

// Affine algebra over normalized image coordinates, where the image spans
// [-1,1]^2 and pixel index i in extent n sits at -1 + (2i+1)/n (pixel-center
// convention). Grids store coordinate pairs as (x, y).

namespace dlan {

struct NormalizedPoint {
  double x = 0.0;
  double y = 0.0;
};

struct PixelPoint {
  double x = 0.0;
  double y = 0.0;
};

struct Mat2 {
  double m[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
};

// x' = a[0][0]*x + a[0][1]*y + t[0]
// y' = a[1][0]*x + a[1][1]*y + t[1]
struct AffineTransform {
  double a[2][2] = {{1.0, 0.0}, {0.0, 1.0}};
  double t[2] = {0.0, 0.0};

  static AffineTransform identity() { return AffineTransform{}; }
};

// Gradient w.r.t. an AffineTransform's six entries; zero-initialized.
struct AffineGrad {
  double a[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
  double t[2] = {0.0, 0.0};

  void add(const AffineGrad& o) {
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) a[i][j] += o.a[i][j];
      t[i] += o.t[i];
    }
  }
  void scale(double s) {
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) a[i][j] *= s;
      t[i] *= s;
    }
  }
};

// Landmark order is fixed per model; the bundled dataset uses
// {left collar, right collar, left sleeve, right sleeve, left hem, right hem}.
// Invisible landmarks keep their coordinates but are skipped by loss/metrics.
struct LandmarkSet {
  std::vector<NormalizedPoint> points;
  std::vector<unsigned char> visible;

  int count() const { return static_cast<int>(points.size()); }
};

NormalizedPoint affine_apply(const AffineTransform& T, NormalizedPoint p);

// apply(compose(outer, inner), p) == apply(outer, apply(inner, p))
AffineTransform affine_compose(const AffineTransform& outer, const AffineTransform& inner);

// Accumulates into g_outer/g_inner the pullback of grad_composed through
// affine_compose(outer, inner).
void affine_compose_backward(const AffineTransform& outer, const AffineTransform& inner,
                             const AffineGrad& grad_composed, AffineGrad* g_outer,
                             AffineGrad* g_inner);

double linear_det(const AffineTransform& T);

// Requires |det| > 1e-9, otherwise throws SingularityError.
AffineTransform affine_inverse(const AffineTransform& T);

// det(a) * inverse(a)^T, computed entrywise; defined even at det = 0.
Mat2 affine_adjugate_transpose(const AffineTransform& T);

// grid[y,x] = apply(T, center(y, x)), shape [out_h, out_w, 2] storing (x, y).
Tensor generate_grid(const AffineTransform& T, int out_h, int out_w);

// Accumulates d(loss)/d(T) from d(loss)/d(grid) for the grid above.
AffineGrad generate_grid_backward(const Tensor& grad_grid);

double pixel_index_to_normalized(double i, int n);
double normalized_to_pixel_index(double v, int n);

NormalizedPoint pixel_to_normalized(PixelPoint p, int width, int height);
PixelPoint normalized_to_pixel(NormalizedPoint p, int width, int height);

}  // namespace dlan
