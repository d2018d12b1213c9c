#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dlan/hrst.hpp"
#include "dlan/loss.hpp"
#include "dlan/rng.hpp"
#include "dlan/selective.hpp"
#include "dlan/synthdata.hpp"

// Desk-scale landmark model: a small conv backbone (3x3 convs, relu, 2x2
// mean-pool between stages), a multi-dilation bank at the last stage, and
// the recurrent transformer head. Ablation flags strip components down to a
// plain regressor.

namespace dlan {

struct ModelConfig {
  int extent = 64;
  std::vector<int> channels = {8, 16, 32, 32};  // one entry per conv stage
  int landmarks = 6;
  int steps = 3;
  std::vector<int> dilations = {1, 2, 4, 8};
  Aggregation aggregation = Aggregation::Maximum;
  double lambda = 0.4;
  bool scale_mask_invisible = false;
  bool use_stn = true;
  bool use_selective = true;
  bool use_hrst = true;
  bool use_scale_reg = true;

  void validate() const;
  int stages() const { return static_cast<int>(channels.size()); }
  int feature_extent() const { return extent >> (stages() - 1); }
  int feature_dim() const { return channels.back() * feature_extent() * feature_extent(); }
  int effective_steps() const { return use_hrst ? steps : 1; }
  std::vector<int> effective_dilations() const {
    return use_selective ? dilations : std::vector<int>{1};
  }
  bool has_global_head() const { return use_stn; }
  bool has_local_head() const { return use_stn && use_hrst && steps >= 2; }
  int64_t parameter_count() const;
};

struct Parameters {
  std::vector<Tensor> conv;  // 3x3 kernels for stages 1..n-1
  Tensor bank_kernel;        // last-stage kernel, shared across dilations
  HeadParams heads;          // unused heads stay empty

  std::vector<Tensor*> list();
  std::vector<const Tensor*> list() const;
  int64_t count() const;
  uint64_t content_hash() const;
};

Parameters build_model(const ModelConfig& cfg, uint64_t seed);

// Same tensor shapes as p, all zeros (gradient / momentum containers).
Parameters zeros_like(const Parameters& p);

struct ModelTrace {
  std::vector<Tensor> stage_in;   // input to each stage
  std::vector<Tensor> stage_pre;  // conv output per early stage
  std::vector<Tensor> stage_act;  // relu output per early stage
  Tensor agg_pre;                 // bank output before relu
  SelectionMap selection;
  Tensor f_conv;
  HrstTrace hrst;
  bool used_stn = false;
};

struct ModelOutput {
  LandmarkSet rel;
  LandmarkSet abs;
  std::vector<AffineTransform> thetas;
  ModelTrace trace;
};

// steps_override > 0 truncates the recurrent head to that many steps.
ModelOutput model_forward(const ModelConfig& cfg, const Parameters& p, const Tensor& image,
                          int steps_override = 0);

Parameters model_backward(const ModelConfig& cfg, const Parameters& p, const ModelTrace& trace,
                          const LossGrads& lg);

struct SampleLoss {
  LossBreakdown breakdown;
  LossGrads grads;
  double hull_area = 0.0;
  bool scale_active = false;
};

SampleLoss sample_loss(const ModelConfig& cfg, const LandmarkSet& gt, const ModelOutput& out);

void save_checkpoint(const std::string& path, const Parameters& params,
                     const Parameters& velocity, int epoch, const Rng& rng);

struct Checkpoint {
  Parameters params;
  Parameters velocity;
  int epoch = 0;
  Rng rng{0};
};

Checkpoint load_checkpoint(const std::string& path, const ModelConfig& cfg);

}  // namespace dlan
