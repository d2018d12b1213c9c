#pragma once

#include <array>
#include <vector>

#include "dlan/geometry.hpp"
#include "dlan/kernels.hpp"

// Recurrent spatial-transformer head. Step 1 predicts one global transform
// from the feature map; each later step resamples the features under every
// landmark's current transform and predicts a per-landmark refinement, which
// composes onto the running product. The landmark regressor then reads
// relative coordinates off each landmark's final aligned crop, and the
// composed transform maps them back to image coordinates.

namespace dlan {

struct LinearHead {
  Tensor w;  // [out, in]
  Tensor b;  // [out]
};

struct HeadParams {
  LinearHead global_loc;  // features -> 6 affine values (a11 a12 a21 a22 t1 t2)
  LinearHead local_loc;   // shared across landmarks and steps, same layout
  LinearHead landmark;    // features -> 2J relative coordinates

  int num_landmarks() const { return landmark.w.extent(0) / 2; }
};

struct HeadGrads {
  LinearGrads global_loc;
  LinearGrads local_loc;
  LinearGrads landmark;
  Tensor features;  // d(loss)/d(input feature map)
};

struct StepRecord {
  std::vector<Tensor> crops;                  // per landmark, input to the local head
  std::vector<AffineTransform> refinement;    // predicted this step
  std::vector<AffineTransform> composed;      // running transform after this step
};

struct HrstTrace {
  Tensor features;                            // feature map the head ran on
  AffineTransform theta_global;
  std::vector<StepRecord> steps;              // steps 2..M
  std::vector<Tensor> final_crops;            // per landmark, under theta_final
  std::vector<AffineTransform> theta_final;   // composed transform per landmark
  int steps_run = 1;
};

struct HrstState {
  int step = 1;
  AffineTransform theta_global;
  std::vector<AffineTransform> theta_local;   // product of refinements per landmark
  HrstTrace trace;
};

// Residual parameterization: identity plus the head's 6 outputs.
AffineTransform predict_transform(const LinearHead& head, const Tensor& features_flat);

struct HrstOutput {
  HrstState state;
  LandmarkSet rel;  // regressor outputs in aligned coordinates
  LandmarkSet abs;  // mapped back through each composed transform
};

HrstOutput hrst_forward(const HeadParams& params, const Tensor& features, int steps);

// grad_rel pairs with HrstOutput::rel, grad_theta with trace.theta_final.
HeadGrads hrst_backward(const HeadParams& params, const HrstTrace& trace,
                        const std::vector<std::array<double, 2>>& grad_rel,
                        const std::vector<AffineGrad>& grad_theta);

}  // namespace dlan
