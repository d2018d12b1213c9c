#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "dlan/model.hpp"

// SGD-with-momentum training on the combined loss, deterministic given
// (config, seed), with periodic checkpoints that resume bit-exactly.
// Evaluation reports the detection rate overall, per landmark, per scale
// class, and per recurrent step (truncated inference), plus per-step timing.

namespace dlan {

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
  int batch = 32;
  int epochs = 30;
  uint64_t seed = 1;
  int checkpoint_interval = 0;  // in epochs; 0 disables
  std::string checkpoint_path;
  std::string resume_path;

  void validate() const;
};

struct EpochRow {
  int epoch = 0;
  double train_total = 0, train_reg = 0, train_scale = 0;
  double val_total = 0, val_reg = 0, val_scale = 0;
  // Mean |4 det(theta_j) - lambda*C| over scale-active validation samples.
  double val_scale_residual = 0;
};

struct EvalReport {
  double pdl_overall = 0;
  std::vector<double> pdl_per_landmark;   // NaN where a landmark is never visible
  std::vector<double> pdl_per_scale;      // one per scale class, NaN for empty bins
  std::vector<double> pdl_per_step;       // truncated inference at steps 1..M
  std::vector<double> step_time_ms;       // median forward wall-clock at steps 1..M
  int visible_total = 0;
};

struct RunReport {
  std::vector<EpochRow> epochs;
  EvalReport test;
};

struct TrainResult {
  Parameters params;
  RunReport report;
};

double pdl_threshold_px(int extent);

TrainResult train(const ModelConfig& cfg, const TrainConfig& tcfg,
                  const std::vector<SampleRecord>& train_data,
                  const std::vector<SampleRecord>& val_data);

EvalReport evaluate(const ModelConfig& cfg, const Parameters& params,
                    const std::vector<SampleRecord>& split, double threshold_px,
                    bool with_timing);

struct GradCheckRow {
  std::string layer;
  double worst_rel = 0;
};

struct GradCheckReport {
  std::vector<GradCheckRow> rows;
  double worst = 0;
};

// Central finite differences over every parameter tensor and over the loss
// inputs (relative coordinates and transforms), against the analytic pass.
GradCheckReport gradcheck(const ModelConfig& cfg, uint64_t seed, double fd_step = 1e-5);

struct AblateVariant {
  std::string name;
  ModelConfig cfg;
  RunReport report;
  double test_pdl = 0;
};

struct AblateReport {
  std::vector<AblateVariant> chain;        // component build-up
  std::vector<AblateVariant> sweep;        // lambda grid {off, 0.8, 0.4, 0.2, 0.1}
  std::vector<AblateVariant> aggregation;  // {max, avg}
};

AblateReport ablate(const ModelConfig& base, const TrainConfig& tcfg,
                    const std::vector<SampleRecord>& train_data,
                    const std::vector<SampleRecord>& val_data,
                    const std::vector<SampleRecord>& test_data);

void write_epoch_csv(const std::string& path, const std::vector<EpochRow>& rows);
void write_eval_csv(const std::string& path, const EvalReport& r);
void write_ablate_csvs(const std::string& dir, const AblateReport& r);

// Per-sample metric rows: id, per-landmark pixel error, hit flags, loss terms.
void write_sample_csv(const std::string& path, const ModelConfig& cfg, const Parameters& params,
                      const std::vector<SampleRecord>& split, double threshold_px);

// Per-step, per-landmark composed transforms for the given sample indices.
void write_trace(std::ostream& os, const ModelConfig& cfg, const Parameters& params,
                 const std::vector<SampleRecord>& split, const std::vector<int>& ids);

}  // namespace dlan
