#include "dlan/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace dlan {

void TrainConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("train: learning rate must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train: momentum must be in [0,1)");
  if (batch < 1) throw ConfigError("train: batch size must be >= 1");
  if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (checkpoint_interval < 0) throw ConfigError("train: checkpoint interval must be >= 0");
  if (checkpoint_interval > 0 && checkpoint_path.empty())
    throw ConfigError("train: checkpoint interval set without a checkpoint path");
}

double pdl_threshold_px(int extent) { return 35.0 / 512.0 * extent; }

namespace {

struct ValStats {
  double total = 0, reg = 0, scale = 0;
  double residual = std::numeric_limits<double>::quiet_NaN();
};

ValStats validation_pass(const ModelConfig& cfg, const Parameters& params,
                         const std::vector<SampleRecord>& val) {
  ValStats vs;
  if (val.empty()) return vs;
  double rsum = 0;
  int64_t rcount = 0;
  for (const SampleRecord& rec : val) {
    const ModelOutput out = model_forward(cfg, params, rec.image);
    const SampleLoss sl = sample_loss(cfg, rec.landmarks, out);
    vs.total += sl.breakdown.total;
    vs.reg += sl.breakdown.regression;
    vs.scale += sl.breakdown.scale;
    if (sl.scale_active) {
      for (size_t j = 0; j < out.thetas.size(); ++j) {
        if (cfg.scale_mask_invisible && !rec.landmarks.visible[j]) continue;
        rsum += std::abs(4.0 * linear_det(out.thetas[j]) - cfg.lambda * sl.hull_area);
        ++rcount;
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(val.size());
  vs.total *= inv;
  vs.reg *= inv;
  vs.scale *= inv;
  if (rcount > 0) vs.residual = rsum / static_cast<double>(rcount);
  return vs;
}

}  // namespace

TrainResult train(const ModelConfig& cfg, const TrainConfig& tcfg,
                  const std::vector<SampleRecord>& train_data,
                  const std::vector<SampleRecord>& val_data) {
  cfg.validate();
  tcfg.validate();
  if (train_data.empty()) throw DegenerateInputError("train: empty training split");

  Parameters params;
  Parameters vel;
  Rng rng(mix_seed(tcfg.seed, 0x7368756666u));
  int start_epoch = 0;
  if (!tcfg.resume_path.empty()) {
    Checkpoint ck = load_checkpoint(tcfg.resume_path, cfg);
    params = std::move(ck.params);
    vel = std::move(ck.velocity);
    rng = ck.rng;
    start_epoch = ck.epoch;
  } else {
    params = build_model(cfg, tcfg.seed);
    vel = zeros_like(params);
  }

  RunReport report;
  const int N = static_cast<int>(train_data.size());
  std::vector<int> order(static_cast<size_t>(N));

  const int max_batch = std::min(tcfg.batch, N);
  std::vector<Parameters> slots(static_cast<size_t>(max_batch));
  std::vector<LossBreakdown> slot_loss(static_cast<size_t>(max_batch));

  const auto plist = params.list();
  const auto vlist = vel.list();

  for (int e = start_epoch + 1; e <= tcfg.epochs; ++e) {
    // Rebuilt from identity each epoch so the permutation depends only on the
    // RNG state, which the checkpoint carries; resumed runs then see the same
    // batch order as uninterrupted ones.
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    double sum_total = 0, sum_reg = 0, sum_scale = 0;
    for (int b0 = 0, batch_id = 0; b0 < N; b0 += tcfg.batch, ++batch_id) {
      const int bn = std::min(tcfg.batch, N - b0);
      std::exception_ptr err;
#pragma omp parallel for schedule(static)
      for (int k = 0; k < bn; ++k) {
        try {
          const SampleRecord& rec = train_data[static_cast<size_t>(order[static_cast<size_t>(b0 + k)])];
          ModelOutput out = model_forward(cfg, params, rec.image);
          SampleLoss sl = sample_loss(cfg, rec.landmarks, out);
          slots[static_cast<size_t>(k)] = model_backward(cfg, params, out.trace, sl.grads);
          slot_loss[static_cast<size_t>(k)] = sl.breakdown;
        } catch (...) {
#pragma omp critical
          err = std::current_exception();
        }
      }
      if (err) {
        try {
          std::rethrow_exception(err);
        } catch (const NumericError& ne) {
          throw NumericError("training diverged at epoch " + std::to_string(e) + ", batch " +
                             std::to_string(batch_id) + ": " + ne.what());
        }
      }

      double batch_total = 0;
      Parameters acc = zeros_like(params);
      const auto alist = acc.list();
      for (int k = 0; k < bn; ++k) {
        const auto gl = slots[static_cast<size_t>(k)].list();
        for (size_t t = 0; t < alist.size(); ++t) {
          Tensor& a = *alist[t];
          const Tensor& g = *gl[t];
          for (int64_t i = 0; i < a.size(); ++i) a[i] += g[i];
        }
        const LossBreakdown& lb = slot_loss[static_cast<size_t>(k)];
        batch_total += lb.total;
        sum_total += lb.total;
        sum_reg += lb.regression;
        sum_scale += lb.scale;
      }
      if (!std::isfinite(batch_total))
        throw NumericError("training diverged at epoch " + std::to_string(e) + ", batch " +
                           std::to_string(batch_id) + ": non-finite loss");

      const double inv = 1.0 / static_cast<double>(bn);
      for (size_t t = 0; t < plist.size(); ++t) {
        Tensor& w = *plist[t];
        Tensor& v = *vlist[t];
        const Tensor& g = *alist[t];
        for (int64_t i = 0; i < w.size(); ++i) {
          v[i] = tcfg.momentum * v[i] + g[i] * inv;
          w[i] -= tcfg.lr * v[i];
        }
      }
    }

    EpochRow row;
    row.epoch = e;
    row.train_total = sum_total / N;
    row.train_reg = sum_reg / N;
    row.train_scale = sum_scale / N;
    const ValStats vs = validation_pass(cfg, params, val_data);
    row.val_total = vs.total;
    row.val_reg = vs.reg;
    row.val_scale = vs.scale;
    row.val_scale_residual = vs.residual;
    report.epochs.push_back(row);

    if (tcfg.checkpoint_interval > 0 &&
        (e % tcfg.checkpoint_interval == 0 || e == tcfg.epochs))
      save_checkpoint(tcfg.checkpoint_path, params, vel, e, rng);
  }

  return {std::move(params), std::move(report)};
}

EvalReport evaluate(const ModelConfig& cfg, const Parameters& params,
                    const std::vector<SampleRecord>& split, double threshold_px,
                    bool with_timing) {
  cfg.validate();
  if (split.empty()) throw DegenerateInputError("evaluate: empty split");
  if (threshold_px <= 0.0) throw ArgumentError("evaluate: threshold must be > 0");
  const int J = cfg.landmarks;
  const int M = cfg.effective_steps();
  const int n = cfg.extent;

  std::vector<int64_t> lm_vis(static_cast<size_t>(J), 0), lm_hit(static_cast<size_t>(J), 0);
  std::vector<int64_t> sc_vis(kNumScaleClasses, 0), sc_hit(kNumScaleClasses, 0);
  std::vector<int64_t> step_hit(static_cast<size_t>(M), 0);
  int64_t vis_total = 0;

  for (const SampleRecord& rec : split) {
    const size_t cls = static_cast<size_t>(rec.meta.scale_class);
    for (int m = 1; m <= M; ++m) {
      const ModelOutput out = model_forward(cfg, params, rec.image, m);
      for (int j = 0; j < J; ++j) {
        const size_t ju = static_cast<size_t>(j);
        if (!rec.landmarks.visible[ju]) continue;
        const PixelPoint gp = normalized_to_pixel(rec.landmarks.points[ju], n, n);
        const PixelPoint pp = normalized_to_pixel(out.abs.points[ju], n, n);
        const double dx = gp.x - pp.x, dy = gp.y - pp.y;
        const bool hit = std::sqrt(dx * dx + dy * dy) <= threshold_px;
        if (hit) ++step_hit[static_cast<size_t>(m - 1)];
        if (m == M) {
          ++lm_vis[ju];
          ++sc_vis[cls];
          ++vis_total;
          if (hit) {
            ++lm_hit[ju];
            ++sc_hit[cls];
          }
        }
      }
    }
  }
  if (vis_total == 0) throw DegenerateInputError("evaluate: no visible landmarks in split");

  EvalReport r;
  r.visible_total = static_cast<int>(vis_total);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int j = 0; j < J; ++j) {
    const size_t ju = static_cast<size_t>(j);
    r.pdl_per_landmark.push_back(lm_vis[ju] ? 100.0 * lm_hit[ju] / lm_vis[ju] : nan);
  }
  for (int c = 0; c < kNumScaleClasses; ++c) {
    const size_t cu = static_cast<size_t>(c);
    r.pdl_per_scale.push_back(sc_vis[cu] ? 100.0 * sc_hit[cu] / sc_vis[cu] : nan);
  }
  int64_t hit_total = 0;
  for (int64_t h : lm_hit) hit_total += h;
  r.pdl_overall = 100.0 * hit_total / vis_total;
  for (int m = 0; m < M; ++m)
    r.pdl_per_step.push_back(100.0 * step_hit[static_cast<size_t>(m)] / vis_total);

  if (with_timing) {
    const Tensor& probe = split[0].image;
    for (int m = 1; m <= M; ++m) (void)model_forward(cfg, params, probe, m);
    for (int m = 1; m <= M; ++m) {
      std::vector<double> ms;
      ms.reserve(50);
      for (int rep = 0; rep < 50; ++rep) {
        const auto t0 = std::chrono::steady_clock::now();
        (void)model_forward(cfg, params, probe, m);
        const auto t1 = std::chrono::steady_clock::now();
        ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      }
      std::sort(ms.begin(), ms.end());
      r.step_time_ms.push_back(0.5 * (ms[24] + ms[25]));
    }
  }
  return r;
}

GradCheckReport gradcheck(const ModelConfig& cfg, uint64_t seed, double fd_step) {
  cfg.validate();
  Rng rng(mix_seed(seed, 0x67636b1ull));
  Parameters params = build_model(cfg, seed);
  // Nudge everything off the symmetric start so grids land between pixel
  // centers and no tower tie or dead unit sits on a finite-difference kink.
  for (Tensor* t : params.list())
    for (int64_t i = 0; i < t->size(); ++i) (*t)[i] += rng.uniform(-0.02, 0.02);

  Tensor image({1, cfg.extent, cfg.extent});
  for (int64_t i = 0; i < image.size(); ++i) image[i] = rng.uniform(0.0, 1.0);
  LandmarkSet gt;
  gt.points.resize(static_cast<size_t>(cfg.landmarks));
  gt.visible.assign(static_cast<size_t>(cfg.landmarks), 1);
  for (auto& p : gt.points) {
    p.x = rng.uniform(-0.9, 0.9);
    p.y = rng.uniform(-0.9, 0.9);
  }

  const auto loss_of = [&](const Parameters& pp) {
    const ModelOutput out = model_forward(cfg, pp, image);
    return sample_loss(cfg, gt, out).breakdown.total;
  };

  const ModelOutput out = model_forward(cfg, params, image);
  const SampleLoss sl = sample_loss(cfg, gt, out);
  Parameters grads = model_backward(cfg, params, out.trace, sl.grads);

  std::vector<std::string> names;
  for (size_t s = 0; s < params.conv.size(); ++s) names.push_back("conv" + std::to_string(s + 1));
  names.push_back("bank");
  if (params.heads.global_loc.w.size() > 0) {
    names.push_back("global.w");
    names.push_back("global.b");
  }
  if (params.heads.local_loc.w.size() > 0) {
    names.push_back("local.w");
    names.push_back("local.b");
  }
  names.push_back("landmark.w");
  names.push_back("landmark.b");

  GradCheckReport rep;
  const auto rel_err = [](double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-6});
    return std::abs(a - b) / scale;
  };

  const auto plist = params.list();
  const auto glist = grads.list();
  for (size_t t = 0; t < plist.size(); ++t) {
    Tensor& w = *plist[t];
    double worst = 0;
    for (int64_t i = 0; i < w.size(); ++i) {
      const double orig = w[i];
      w[i] = orig + fd_step;
      const double lp = loss_of(params);
      w[i] = orig - fd_step;
      const double lm = loss_of(params);
      w[i] = orig;
      const double fd = (lp - lm) / (2.0 * fd_step);
      worst = std::max(worst, rel_err((*glist[t])[i], fd));
    }
    rep.rows.push_back({names[t], worst});
    rep.worst = std::max(rep.worst, worst);
  }

  // Loss inputs: perturb the head outputs directly against the closed-form
  // gradients of the loss.
  {
    double worst = 0;
    ModelOutput probe = out;
    for (size_t j = 0; j < probe.rel.points.size(); ++j) {
      for (int d = 0; d < 2; ++d) {
        double& v = d == 0 ? probe.rel.points[j].x : probe.rel.points[j].y;
        const double orig = v;
        v = orig + fd_step;
        const double lp = sample_loss(cfg, gt, probe).breakdown.total;
        v = orig - fd_step;
        const double lm = sample_loss(cfg, gt, probe).breakdown.total;
        v = orig;
        const double fd = (lp - lm) / (2.0 * fd_step);
        worst = std::max(worst, rel_err(sl.grads.rel[j][d], fd));
      }
    }
    rep.rows.push_back({"loss.rel", worst});
    rep.worst = std::max(rep.worst, worst);
  }
  {
    double worst = 0;
    ModelOutput probe = out;
    for (size_t j = 0; j < probe.thetas.size(); ++j) {
      for (int e = 0; e < 6; ++e) {
        double* v = nullptr;
        const double* g = nullptr;
        const AffineGrad& ag = sl.grads.theta[j];
        switch (e) {
          case 0: v = &probe.thetas[j].a[0][0]; g = &ag.a[0][0]; break;
          case 1: v = &probe.thetas[j].a[0][1]; g = &ag.a[0][1]; break;
          case 2: v = &probe.thetas[j].a[1][0]; g = &ag.a[1][0]; break;
          case 3: v = &probe.thetas[j].a[1][1]; g = &ag.a[1][1]; break;
          case 4: v = &probe.thetas[j].t[0]; g = &ag.t[0]; break;
          default: v = &probe.thetas[j].t[1]; g = &ag.t[1]; break;
        }
        const double orig = *v;
        *v = orig + fd_step;
        const double lp = sample_loss(cfg, gt, probe).breakdown.total;
        *v = orig - fd_step;
        const double lm = sample_loss(cfg, gt, probe).breakdown.total;
        *v = orig;
        const double fd = (lp - lm) / (2.0 * fd_step);
        worst = std::max(worst, rel_err(*g, fd));
      }
    }
    rep.rows.push_back({"loss.theta", worst});
    rep.worst = std::max(rep.worst, worst);
  }
  return rep;
}

namespace {

std::string config_signature(const ModelConfig& c) {
  std::ostringstream os;
  os << c.extent << '|';
  for (int ch : c.channels) os << ch << ',';
  os << '|' << c.landmarks << '|' << c.steps << '|';
  for (int d : c.dilations) os << d << ',';
  os << '|' << (c.aggregation == Aggregation::Maximum ? "max" : "avg") << '|'
     << std::setprecision(17) << c.lambda << '|' << c.scale_mask_invisible << '|' << c.use_stn
     << c.use_selective << c.use_hrst << c.use_scale_reg;
  return os.str();
}

}  // namespace

AblateReport ablate(const ModelConfig& base, const TrainConfig& tcfg,
                    const std::vector<SampleRecord>& train_data,
                    const std::vector<SampleRecord>& val_data,
                    const std::vector<SampleRecord>& test_data) {
  base.validate();
  const double threshold = pdl_threshold_px(base.extent);

  std::vector<std::pair<std::string, AblateVariant>> cache;
  const auto run = [&](const std::string& name, const ModelConfig& cfg) {
    const std::string sig = config_signature(cfg);
    for (const auto& [key, variant] : cache) {
      if (key == sig) {
        AblateVariant v = variant;
        v.name = name;
        return v;
      }
    }
    TrainResult tr = train(cfg, tcfg, train_data, val_data);
    AblateVariant v;
    v.name = name;
    v.cfg = cfg;
    v.report.epochs = tr.report.epochs;
    v.report.test = evaluate(cfg, tr.params, test_data, threshold, true);
    v.test_pdl = v.report.test.pdl_overall;
    cache.emplace_back(sig, v);
    return v;
  };

  AblateReport rep;

  ModelConfig plain = base;
  plain.use_stn = plain.use_selective = plain.use_hrst = plain.use_scale_reg = false;
  ModelConfig stn = plain;
  stn.use_stn = true;
  ModelConfig sel = stn;
  sel.use_selective = true;
  ModelConfig hrst = sel;
  hrst.use_hrst = true;
  ModelConfig full = hrst;
  full.use_scale_reg = true;
  rep.chain.push_back(run("plain", plain));
  rep.chain.push_back(run("+stn", stn));
  rep.chain.push_back(run("+selective", sel));
  rep.chain.push_back(run("+hrst", hrst));
  rep.chain.push_back(run("+scale_reg", full));

  rep.sweep.push_back(run("off", hrst));
  for (double lam : {0.8, 0.4, 0.2, 0.1}) {
    ModelConfig c = full;
    c.lambda = lam;
    std::ostringstream name;
    name << lam;
    rep.sweep.push_back(run(name.str(), c));
  }

  rep.aggregation.push_back(run("max", full));
  ModelConfig avg = full;
  avg.aggregation = Aggregation::Average;
  rep.aggregation.push_back(run("avg", avg));
  return rep;
}

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  os << std::setprecision(17);
  return os;
}

}  // namespace

void write_epoch_csv(const std::string& path, const std::vector<EpochRow>& rows) {
  auto os = open_out(path);
  os << "epoch,train_total,train_reg,train_scale,val_total,val_reg,val_scale,val_scale_residual\n";
  for (const EpochRow& r : rows)
    os << r.epoch << ',' << r.train_total << ',' << r.train_reg << ',' << r.train_scale << ','
       << r.val_total << ',' << r.val_reg << ',' << r.val_scale << ',' << r.val_scale_residual
       << "\n";
}

void write_eval_csv(const std::string& path, const EvalReport& r) {
  auto os = open_out(path);
  os << "metric,index,value\n";
  os << "pdl_overall,," << r.pdl_overall << "\n";
  for (size_t j = 0; j < r.pdl_per_landmark.size(); ++j)
    os << "pdl_landmark," << j << ',' << r.pdl_per_landmark[j] << "\n";
  for (size_t c = 0; c < r.pdl_per_scale.size(); ++c)
    os << "pdl_scale_class," << c << ',' << r.pdl_per_scale[c] << "\n";
  for (size_t m = 0; m < r.pdl_per_step.size(); ++m)
    os << "pdl_step," << m + 1 << ',' << r.pdl_per_step[m] << "\n";
  for (size_t m = 0; m < r.step_time_ms.size(); ++m)
    os << "step_time_ms," << m + 1 << ',' << r.step_time_ms[m] << "\n";
  os << "visible_total,," << r.visible_total << "\n";
}

void write_ablate_csvs(const std::string& dir, const AblateReport& r) {
  std::filesystem::create_directories(dir);
  {
    auto os = open_out(dir + "/chain.csv");
    os << "variant,test_pdl\n";
    for (const AblateVariant& v : r.chain) os << v.name << ',' << v.test_pdl << "\n";
  }
  {
    auto os = open_out(dir + "/lambda_sweep.csv");
    os << "lambda,test_pdl,first_epoch_scale_residual,final_epoch_scale_residual\n";
    for (const AblateVariant& v : r.sweep) {
      double first = std::numeric_limits<double>::quiet_NaN();
      double last = std::numeric_limits<double>::quiet_NaN();
      if (!v.report.epochs.empty()) {
        first = v.report.epochs.front().val_scale_residual;
        last = v.report.epochs.back().val_scale_residual;
      }
      os << v.name << ',' << v.test_pdl << ',' << first << ',' << last << "\n";
    }
  }
  {
    auto os = open_out(dir + "/aggregation.csv");
    os << "mode,test_pdl\n";
    for (const AblateVariant& v : r.aggregation) os << v.name << ',' << v.test_pdl << "\n";
  }
}

void write_sample_csv(const std::string& path, const ModelConfig& cfg, const Parameters& params,
                      const std::vector<SampleRecord>& split, double threshold_px) {
  auto os = open_out(path);
  const int J = cfg.landmarks;
  os << "sample";
  for (int j = 0; j < J; ++j) os << ",err_px_" << j;
  for (int j = 0; j < J; ++j) os << ",hit_" << j;
  os << ",loss_total,loss_reg,loss_scale\n";
  const int n = cfg.extent;
  for (size_t i = 0; i < split.size(); ++i) {
    const SampleRecord& rec = split[i];
    const ModelOutput out = model_forward(cfg, params, rec.image);
    const SampleLoss sl = sample_loss(cfg, rec.landmarks, out);
    os << i;
    std::vector<double> err(static_cast<size_t>(J),
                            std::numeric_limits<double>::quiet_NaN());
    for (int j = 0; j < J; ++j) {
      const size_t ju = static_cast<size_t>(j);
      if (!rec.landmarks.visible[ju]) continue;
      const PixelPoint gp = normalized_to_pixel(rec.landmarks.points[ju], n, n);
      const PixelPoint pp = normalized_to_pixel(out.abs.points[ju], n, n);
      err[ju] = std::hypot(gp.x - pp.x, gp.y - pp.y);
    }
    for (int j = 0; j < J; ++j) os << ',' << err[static_cast<size_t>(j)];
    for (int j = 0; j < J; ++j) {
      const size_t ju = static_cast<size_t>(j);
      const bool hit = rec.landmarks.visible[ju] && err[ju] <= threshold_px;
      os << ',' << (rec.landmarks.visible[ju] ? (hit ? 1 : 0) : -1);
    }
    os << ',' << sl.breakdown.total << ',' << sl.breakdown.regression << ','
       << sl.breakdown.scale << "\n";
  }
}

void write_trace(std::ostream& os, const ModelConfig& cfg, const Parameters& params,
                 const std::vector<SampleRecord>& split, const std::vector<int>& ids) {
  os << std::setprecision(10);
  const auto dump = [&os](const AffineTransform& T) {
    os << T.a[0][0] << ' ' << T.a[0][1] << ' ' << T.a[1][0] << ' ' << T.a[1][1] << ' ' << T.t[0]
       << ' ' << T.t[1];
  };
  for (int id : ids) {
    if (id < 0 || id >= static_cast<int>(split.size()))
      throw ArgumentError("trace: sample id out of range: " + std::to_string(id));
    const ModelOutput out = model_forward(cfg, params, split[static_cast<size_t>(id)].image);
    os << "sample " << id << "\n";
    const int J = cfg.landmarks;
    for (int j = 0; j < J; ++j) {
      os << "  step 1 landmark " << j << ": ";
      dump(out.trace.used_stn ? out.trace.hrst.theta_global : AffineTransform::identity());
      os << "\n";
    }
    if (out.trace.used_stn) {
      for (size_t s = 0; s < out.trace.hrst.steps.size(); ++s) {
        for (int j = 0; j < J; ++j) {
          os << "  step " << s + 2 << " landmark " << j << ": ";
          dump(out.trace.hrst.steps[s].composed[static_cast<size_t>(j)]);
          os << "\n";
        }
      }
    }
  }
}

}  // namespace dlan
