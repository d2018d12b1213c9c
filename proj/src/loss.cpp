#include "dlan/loss.hpp"

#include <algorithm>
#include <cmath>

namespace dlan {

namespace {

void check_counts(const LandmarkSet& gt, const LandmarkSet& pred_rel,
                  const std::vector<AffineTransform>& thetas) {
  const size_t J = gt.points.size();
  if (gt.visible.size() != J || pred_rel.points.size() != J || thetas.size() != J)
    throw DimensionError("loss: landmark count mismatch");
}

}  // namespace

double regression_loss(const LandmarkSet& gt, const LandmarkSet& pred_rel,
                       const std::vector<AffineTransform>& thetas,
                       std::vector<double>* per_landmark) {
  check_counts(gt, pred_rel, thetas);
  const size_t J = gt.points.size();
  if (per_landmark) per_landmark->assign(J, 0.0);
  double sum = 0.0;
  for (size_t j = 0; j < J; ++j) {
    if (!gt.visible[j]) continue;
    const NormalizedPoint back = affine_apply(thetas[j], pred_rel.points[j]);
    const double rx = gt.points[j].x - back.x;
    const double ry = gt.points[j].y - back.y;
    const double term = 0.5 * (rx * rx + ry * ry);
    if (per_landmark) (*per_landmark)[j] = term;
    sum += term;
  }
  return sum;
}

double convex_hull_area(const LandmarkSet& gt) {
  std::vector<NormalizedPoint> pts;
  for (size_t j = 0; j < gt.points.size(); ++j)
    if (gt.visible[j]) pts.push_back(gt.points[j]);
  if (pts.empty()) throw DegenerateInputError("convex_hull_area: no visible landmarks");
  if (pts.size() < 3) return 0.0;

  std::sort(pts.begin(), pts.end(), [](const NormalizedPoint& a, const NormalizedPoint& b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  auto cross = [](const NormalizedPoint& o, const NormalizedPoint& a, const NormalizedPoint& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
  };
  std::vector<NormalizedPoint> hull(2 * pts.size());
  size_t k = 0;
  for (size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  for (size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k > 1 ? k - 1 : k);
  if (hull.size() < 3) return 0.0;

  double twice_area = 0.0;
  for (size_t i = 0; i < hull.size(); ++i) {
    const NormalizedPoint& p = hull[i];
    const NormalizedPoint& q = hull[(i + 1) % hull.size()];
    twice_area += p.x * q.y - q.x * p.y;
  }
  return 0.5 * std::abs(twice_area);
}

double scale_loss(const std::vector<AffineTransform>& thetas, double C, const ScaleRegConfig& cfg,
                  const std::vector<unsigned char>* visible,
                  std::vector<double>* per_landmark) {
  if (C < 0.0) throw ArgumentError("scale_loss: hull area must be >= 0");
  if (per_landmark) per_landmark->assign(thetas.size(), 0.0);
  if (!cfg.enabled) return 0.0;
  if (visible && visible->size() != thetas.size())
    throw DimensionError("scale_loss: visibility count mismatch");
  double sum = 0.0;
  for (size_t j = 0; j < thetas.size(); ++j) {
    if (cfg.mask_invisible && visible && !(*visible)[j]) continue;
    const double r = cfg.lambda * C - 4.0 * linear_det(thetas[j]);
    const double term = 0.5 * r * r;
    if (per_landmark) (*per_landmark)[j] = term;
    sum += term;
  }
  return sum;
}

LossBreakdown total_loss(const LandmarkSet& gt, const LandmarkSet& pred_rel,
                         const std::vector<AffineTransform>& thetas, double C,
                         const ScaleRegConfig& cfg) {
  LossBreakdown b;
  std::vector<double> reg_terms, scale_terms;
  b.regression = regression_loss(gt, pred_rel, thetas, &reg_terms);
  b.scale = scale_loss(thetas, C, cfg, &gt.visible, &scale_terms);
  b.total = b.regression + b.scale;
  b.per_landmark.resize(gt.points.size());
  for (size_t j = 0; j < gt.points.size(); ++j)
    b.per_landmark[j] = {reg_terms[j], scale_terms[j]};
  return b;
}

LossGrads loss_gradients(const LandmarkSet& gt, const LandmarkSet& pred_rel,
                         const std::vector<AffineTransform>& thetas, double C,
                         const ScaleRegConfig& cfg) {
  check_counts(gt, pred_rel, thetas);
  const size_t J = gt.points.size();
  LossGrads g;
  g.rel.assign(J, {0.0, 0.0});
  g.theta.assign(J, AffineGrad{});
  for (size_t j = 0; j < J; ++j) {
    const AffineTransform& T = thetas[j];
    if (gt.visible[j]) {
      const NormalizedPoint rel = pred_rel.points[j];
      const NormalizedPoint back = affine_apply(T, rel);
      const double rx = gt.points[j].x - back.x;
      const double ry = gt.points[j].y - back.y;
      g.rel[j][0] = -(T.a[0][0] * rx + T.a[1][0] * ry);
      g.rel[j][1] = -(T.a[0][1] * rx + T.a[1][1] * ry);
      const double hom[3] = {rel.x, rel.y, 1.0};
      const double res[2] = {rx, ry};
      for (int i = 0; i < 2; ++i) {
        g.theta[j].a[i][0] -= res[i] * hom[0];
        g.theta[j].a[i][1] -= res[i] * hom[1];
        g.theta[j].t[i] -= res[i] * hom[2];
      }
    }
    if (cfg.enabled && !(cfg.mask_invisible && !gt.visible[j])) {
      const double r = cfg.lambda * C - 4.0 * linear_det(T);
      const Mat2 adjT = affine_adjugate_transpose(T);
      const double f = -4.0 * r;
      for (int i = 0; i < 2; ++i)
        for (int k = 0; k < 2; ++k) g.theta[j].a[i][k] += f * adjT.m[i][k];
    }
  }
  return g;
}

double pdl(const std::vector<PixelPoint>& gt_px, const std::vector<PixelPoint>& pred_px,
           const std::vector<unsigned char>& visible, double threshold_px) {
  if (threshold_px <= 0.0) throw ArgumentError("pdl: threshold must be > 0");
  if (gt_px.size() != pred_px.size() || gt_px.size() != visible.size())
    throw DimensionError("pdl: landmark count mismatch");
  int seen = 0, hit = 0;
  for (size_t j = 0; j < gt_px.size(); ++j) {
    if (!visible[j]) continue;
    ++seen;
    const double dx = gt_px[j].x - pred_px[j].x;
    const double dy = gt_px[j].y - pred_px[j].y;
    if (std::sqrt(dx * dx + dy * dy) <= threshold_px) ++hit;
  }
  if (seen == 0) throw DegenerateInputError("pdl: no visible landmarks");
  return 100.0 * hit / seen;
}

}  // namespace dlan
