#pragma once

#include <array>
#include <utility>
#include <vector>

#include "dlan/geometry.hpp"

// Landmark regression loss with a scale regularizer on the per-landmark
// transforms, plus the detection-rate metric used for evaluation.

namespace dlan {

struct LossBreakdown {
  double regression = 0.0;
  double scale = 0.0;
  double total = 0.0;
  // (regression term, scale term) per landmark.
  std::vector<std::pair<double, double>> per_landmark;
};

struct ScaleRegConfig {
  double lambda = 0.4;
  bool enabled = true;
  // When true, invisible landmarks are excluded from the scale term too
  // (by default only the regression term masks them).
  bool mask_invisible = false;
};

struct LossGrads {
  std::vector<std::array<double, 2>> rel;  // d(loss)/d(relative prediction)
  std::vector<AffineGrad> theta;           // d(loss)/d(per-landmark transform)
};

// Sum over visible landmarks of 0.5*|gt_j - theta_j * rel_j|^2.
double regression_loss(const LandmarkSet& gt, const LandmarkSet& pred_rel,
                       const std::vector<AffineTransform>& thetas,
                       std::vector<double>* per_landmark = nullptr);

// Area of the convex hull of the visible ground-truth points.
// Throws DegenerateInputError when no landmark is visible; returns 0 for
// fewer than 3 distinct visible points or collinear points.
double convex_hull_area(const LandmarkSet& gt);

// Sum over landmarks of 0.5*(lambda*C - 4*det(theta_j))^2; 0 when disabled.
double scale_loss(const std::vector<AffineTransform>& thetas, double C,
                  const ScaleRegConfig& cfg,
                  const std::vector<unsigned char>* visible = nullptr,
                  std::vector<double>* per_landmark = nullptr);

LossBreakdown total_loss(const LandmarkSet& gt, const LandmarkSet& pred_rel,
                         const std::vector<AffineTransform>& thetas, double C,
                         const ScaleRegConfig& cfg);

// Closed-form gradients of total_loss w.r.t. the relative predictions and
// the six entries of each transform.
LossGrads loss_gradients(const LandmarkSet& gt, const LandmarkSet& pred_rel,
                         const std::vector<AffineTransform>& thetas, double C,
                         const ScaleRegConfig& cfg);

// Percentage of visible landmarks whose prediction lies within threshold_px
// (Euclidean, pixel space). Throws DegenerateInputError with no visible.
double pdl(const std::vector<PixelPoint>& gt_px, const std::vector<PixelPoint>& pred_px,
           const std::vector<unsigned char>& visible, double threshold_px);

}  // namespace dlan
