#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dlan/errors.hpp"
#include "dlan/train.hpp"
#include "doctest.h"
#include "testutil.hpp"

using namespace dlan;

namespace {

// Small-but-real setup: 32x32 images, two stages, shared across the cases
// below so the generated splits are built once.
struct Fixture {
  ModelConfig cfg;
  GenConfig gen;
  std::vector<SampleRecord> train_data;
  std::vector<SampleRecord> val_data;

  Fixture() {
    cfg.extent = 32;
    cfg.channels = {4, 8};
    cfg.landmarks = 6;
    cfg.steps = 2;
    cfg.dilations = {1, 2};
    gen.extent = 32;
    for (uint64_t s = 0; s < 12; ++s)
      train_data.push_back(
          generate_sample(1000 + s, gen, static_cast<ScaleClass>(s % kNumScaleClasses)));
    for (uint64_t s = 0; s < 6; ++s)
      val_data.push_back(
          generate_sample(2000 + s, gen, static_cast<ScaleClass>(s % kNumScaleClasses)));
  }
};

const Fixture& fixture() {
  static Fixture f;
  return f;
}

bool reports_identical(const RunReport& a, const RunReport& b) {
  if (a.epochs.size() != b.epochs.size()) return false;
  for (size_t i = 0; i < a.epochs.size(); ++i) {
    const EpochRow& x = a.epochs[i];
    const EpochRow& y = b.epochs[i];
    if (x.epoch != y.epoch) return false;
    if (x.train_total != y.train_total || x.train_reg != y.train_reg ||
        x.train_scale != y.train_scale)
      return false;
    if (x.val_total != y.val_total || x.val_reg != y.val_reg || x.val_scale != y.val_scale)
      return false;
    const bool nx = std::isnan(x.val_scale_residual), ny = std::isnan(y.val_scale_residual);
    if (nx != ny || (!nx && x.val_scale_residual != y.val_scale_residual)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig t;
  CHECK_NOTHROW(t.validate());
  TrainConfig bad = t;
  bad.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = t;
  bad.momentum = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = t;
  bad.momentum = -0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = t;
  bad.batch = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = t;
  bad.epochs = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = t;
  bad.checkpoint_interval = 2;  // interval without a path
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("detection threshold scales with image extent") {
  CHECK(pdl_threshold_px(512) == doctest::Approx(35.0).epsilon(1e-12));
  CHECK(pdl_threshold_px(64) == doctest::Approx(4.375).epsilon(1e-12));
  CHECK(pdl_threshold_px(32) == doctest::Approx(2.1875).epsilon(1e-12));
}

TEST_CASE("zero-epoch training returns the freshly built model") {
  const Fixture& f = fixture();
  TrainConfig t;
  t.epochs = 0;
  t.seed = 3;
  const TrainResult r = train(f.cfg, t, f.train_data, f.val_data);
  CHECK(r.report.epochs.empty());
  CHECK(r.params.content_hash() == build_model(f.cfg, 3).content_hash());
}

TEST_CASE("training is deterministic and actually learns") {
  const Fixture& f = fixture();
  TrainConfig t;
  t.epochs = 2;
  t.batch = 4;
  t.seed = 11;
  t.lr = 0.001;  // the scale term diverges at the default rate on raw features
  const TrainResult a = train(f.cfg, t, f.train_data, f.val_data);
  const TrainResult b = train(f.cfg, t, f.train_data, f.val_data);
  CHECK(a.params.content_hash() == b.params.content_hash());
  CHECK(reports_identical(a.report, b.report));

  REQUIRE(a.report.epochs.size() == 2);
  for (const EpochRow& row : a.report.epochs) {
    CHECK(row.train_total == doctest::Approx(row.train_reg + row.train_scale).epsilon(1e-12));
    CHECK(row.val_total == doctest::Approx(row.val_reg + row.val_scale).epsilon(1e-12));
    CHECK(std::isfinite(row.train_total));
    CHECK(std::isfinite(row.val_total));
  }
  CHECK(a.report.epochs.back().train_total < a.report.epochs.front().train_total);

  TrainConfig t2 = t;
  t2.seed = 12;
  CHECK(train(f.cfg, t2, f.train_data, f.val_data).params.content_hash() !=
        a.params.content_hash());
}

TEST_CASE("training rejects an empty split") {
  const Fixture& f = fixture();
  TrainConfig t;
  t.epochs = 1;
  CHECK_THROWS_AS((void)train(f.cfg, t, {}, f.val_data), DegenerateInputError);
}

TEST_CASE("evaluation leaves the parameters untouched") {
  const Fixture& f = fixture();
  const Parameters p = build_model(f.cfg, 5);
  const uint64_t before = p.content_hash();
  const EvalReport r = evaluate(f.cfg, p, f.val_data, pdl_threshold_px(f.cfg.extent), false);
  CHECK(p.content_hash() == before);
  CHECK(r.pdl_overall >= 0.0);
  CHECK(r.pdl_overall <= 100.0);
}

TEST_CASE("evaluation report is internally consistent") {
  const Fixture& f = fixture();
  TrainConfig t;
  t.epochs = 1;
  t.batch = 4;
  t.lr = 0.001;
  const TrainResult r = train(f.cfg, t, f.train_data, f.val_data);
  const double thr = pdl_threshold_px(f.cfg.extent);
  const EvalReport ev = evaluate(f.cfg, r.params, f.val_data, thr, false);

  REQUIRE(ev.pdl_per_landmark.size() == static_cast<size_t>(f.cfg.landmarks));
  REQUIRE(ev.pdl_per_scale.size() == kNumScaleClasses);
  REQUIRE(ev.pdl_per_step.size() == static_cast<size_t>(f.cfg.steps));
  CHECK(ev.step_time_ms.empty());  // timing was not requested

  // The overall rate must be the visibility-weighted mean of the per-landmark
  // rates; recover the weights by scanning the split.
  std::vector<int> vis(static_cast<size_t>(f.cfg.landmarks), 0);
  int vis_total = 0;
  for (const SampleRecord& rec : f.val_data)
    for (int j = 0; j < f.cfg.landmarks; ++j)
      if (rec.landmarks.visible[static_cast<size_t>(j)]) {
        vis[static_cast<size_t>(j)]++;
        vis_total++;
      }
  CHECK(ev.visible_total == vis_total);
  double weighted = 0.0;
  for (int j = 0; j < f.cfg.landmarks; ++j) {
    const double r_j = ev.pdl_per_landmark[static_cast<size_t>(j)];
    if (vis[static_cast<size_t>(j)] > 0) {
      REQUIRE(std::isfinite(r_j));
      weighted += r_j * vis[static_cast<size_t>(j)];
    } else {
      CHECK(std::isnan(r_j));
    }
  }
  CHECK(std::abs(weighted / vis_total - ev.pdl_overall) < 1e-9);

  // Truncated inference at the final step is the full model.
  CHECK(ev.pdl_per_step.back() == ev.pdl_overall);

  // A looser threshold can only help.
  const EvalReport loose = evaluate(f.cfg, r.params, f.val_data, 4.0 * thr, false);
  CHECK(loose.pdl_overall >= ev.pdl_overall);
  for (size_t s = 0; s < ev.pdl_per_step.size(); ++s)
    CHECK(loose.pdl_per_step[s] >= ev.pdl_per_step[s]);
}

TEST_CASE("evaluation input validation") {
  const Fixture& f = fixture();
  const Parameters p = build_model(f.cfg, 5);
  CHECK_THROWS_AS((void)evaluate(f.cfg, p, {}, 1.0, false), DegenerateInputError);
  CHECK_THROWS_AS((void)evaluate(f.cfg, p, f.val_data, 0.0, false), ArgumentError);
  CHECK_THROWS_AS((void)evaluate(f.cfg, p, f.val_data, -2.0, false), ArgumentError);
}

TEST_CASE("checkpoint resume reproduces an uninterrupted run bit-exactly") {
  const Fixture& f = fixture();
  const std::string dir =
      (std::filesystem::temp_directory_path() / "dlan_train_resume").string();
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);

  TrainConfig full;
  full.epochs = 3;
  full.batch = 4;
  full.seed = 17;
  full.lr = 0.001;
  const TrainResult straight = train(f.cfg, full, f.train_data, f.val_data);

  TrainConfig first = full;
  first.epochs = 2;
  first.checkpoint_interval = 2;
  first.checkpoint_path = dir + "/ck.bin";
  (void)train(f.cfg, first, f.train_data, f.val_data);

  TrainConfig second = full;
  second.resume_path = dir + "/ck.bin";
  const TrainResult resumed = train(f.cfg, second, f.train_data, f.val_data);

  CHECK(resumed.params.content_hash() == straight.params.content_hash());
  REQUIRE(resumed.report.epochs.size() == 1);
  CHECK(resumed.report.epochs[0].epoch == 3);
  const EpochRow& a = resumed.report.epochs[0];
  const EpochRow& b = straight.report.epochs[2];
  CHECK(a.train_total == b.train_total);
  CHECK(a.val_total == b.val_total);
  std::filesystem::remove_all(dir);
}

TEST_CASE("gradient check on the tiny configuration") {
  ModelConfig cfg;
  cfg.extent = 8;
  cfg.channels = {2, 2};
  cfg.landmarks = 2;
  cfg.steps = 2;
  cfg.dilations = {1, 2};
  const GradCheckReport r = gradcheck(cfg, 3);
  CHECK(r.worst < 1e-4);
  REQUIRE(!r.rows.empty());
  double worst = 0.0;
  bool saw_loss_rows = false;
  for (const GradCheckRow& row : r.rows) {
    worst = std::max(worst, row.worst_rel);
    CHECK(row.worst_rel < 1e-4);
    saw_loss_rows |= row.layer.rfind("loss.", 0) == 0;
  }
  CHECK(worst == r.worst);
  CHECK(saw_loss_rows);
}

TEST_CASE("gradient check with an active scale term") {
  ModelConfig cfg;
  cfg.extent = 8;
  cfg.channels = {2, 2};
  cfg.landmarks = 3;  // three visible landmarks span area, engaging the scale term
  cfg.steps = 2;
  cfg.dilations = {1, 2};
  // Seed keeps every crop coordinate away from the bilinear interpolation
  // kinks, where finite differences are invalid.
  const GradCheckReport r = gradcheck(cfg, 9);
  CHECK(r.worst < 1e-4);
}

TEST_CASE("csv writers emit the documented headers") {
  const Fixture& f = fixture();
  const std::string dir = (std::filesystem::temp_directory_path() / "dlan_train_csv").string();
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);

  TrainConfig t;
  t.epochs = 1;
  t.batch = 4;
  t.lr = 0.001;
  const TrainResult r = train(f.cfg, t, f.train_data, f.val_data);
  write_epoch_csv(dir + "/epochs.csv", r.report.epochs);
  const EvalReport ev = evaluate(f.cfg, r.params, f.val_data, pdl_threshold_px(32), false);
  write_eval_csv(dir + "/eval.csv", ev);
  write_sample_csv(dir + "/samples.csv", f.cfg, r.params, f.val_data, pdl_threshold_px(32));

  const auto first_line = [](const std::string& path) {
    std::ifstream is(path);
    REQUIRE(is.good());
    std::string line;
    std::getline(is, line);
    return line;
  };
  CHECK(first_line(dir + "/epochs.csv") ==
        "epoch,train_total,train_reg,train_scale,val_total,val_reg,val_scale,val_scale_residual");
  CHECK(first_line(dir + "/eval.csv") == "metric,index,value");
  CHECK(first_line(dir + "/samples.csv").rfind("sample,", 0) == 0);

  std::ifstream is(dir + "/epochs.csv");
  std::string header, row;
  std::getline(is, header);
  REQUIRE(std::getline(is, row));
  CHECK(row.rfind("1,", 0) == 0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("trace output lists every requested sample at every step") {
  const Fixture& f = fixture();
  const Parameters p = build_model(f.cfg, 5);
  std::ostringstream os;
  write_trace(os, f.cfg, p, f.val_data, {0, 2});
  const std::string text = os.str();
  CHECK(text.find("sample 0") != std::string::npos);
  CHECK(text.find("sample 2") != std::string::npos);
  CHECK(text.find("step 1 landmark 0:") != std::string::npos);
  CHECK(text.find("step 2 landmark 5:") != std::string::npos);
  CHECK_THROWS_AS(write_trace(os, f.cfg, p, f.val_data, {99}), ArgumentError);
}

TEST_CASE("single-sample training drives the regression loss to near zero") {
  // Memorization check: one sample, plain regressor, enough steps.
  ModelConfig cfg;
  cfg.extent = 32;
  cfg.channels = {4, 8};
  cfg.landmarks = 6;
  cfg.steps = 1;
  cfg.dilations = {1, 2};
  cfg.use_stn = false;
  cfg.use_hrst = false;
  cfg.use_scale_reg = false;
  GenConfig gen;
  gen.extent = 32;
  const std::vector<SampleRecord> one = {generate_sample(404, gen, ScaleClass::M)};
  TrainConfig t;
  t.batch = 1;
  t.epochs = 300;
  t.lr = 0.05;
  t.seed = 2;
  const TrainResult r = train(cfg, t, one, one);
  double best = 1e9;
  for (const EpochRow& row : r.report.epochs) best = std::min(best, row.train_reg);
  CHECK(best < 1e-3);
}
