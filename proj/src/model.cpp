#include "dlan/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "dlan/wire.hpp"

namespace dlan {

void ModelConfig::validate() const {
  if (channels.empty()) throw ConfigError("model: channels must be nonempty");
  for (int c : channels)
    if (c < 1) throw ConfigError("model: channel widths must be >= 1");
  const int down = 1 << (stages() - 1);
  if (extent < down || extent % down != 0)
    throw ConfigError("model: extent must be a positive multiple of the downsampling factor");
  if (feature_extent() < 1) throw ConfigError("model: feature map collapsed to nothing");
  if (landmarks < 1) throw ConfigError("model: landmarks must be >= 1");
  if (steps < 1) throw ConfigError("model: steps must be >= 1");
  if (lambda <= 0.0 || lambda > 1.0) throw ConfigError("model: lambda must be in (0,1]");
  if (use_hrst && !use_stn) throw ConfigError("model: recurrent refinement requires the transformer");
  if (use_scale_reg && !use_stn)
    throw ConfigError("model: scale regularization requires the transformer");
  if (use_selective) {
    if (dilations.empty()) throw ConfigError("model: dilations must be nonempty");
    int prev = 0;
    for (int d : dilations) {
      if (d <= prev) throw ConfigError("model: dilations must be strictly increasing positives");
      prev = d;
    }
  }
}

int64_t ModelConfig::parameter_count() const {
  int64_t n = 0;
  int cin = 1;
  for (size_t s = 0; s + 1 < channels.size(); ++s) {
    n += static_cast<int64_t>(channels[s]) * cin * 9;
    cin = channels[s];
  }
  n += static_cast<int64_t>(channels.back()) * cin * 9;
  const int64_t D = feature_dim();
  if (has_global_head()) n += 6 * D + 6;
  if (has_local_head()) n += 6 * D + 6;
  n += static_cast<int64_t>(2 * landmarks) * D + 2 * landmarks;
  return n;
}

std::vector<Tensor*> Parameters::list() {
  std::vector<Tensor*> out;
  for (Tensor& t : conv) out.push_back(&t);
  out.push_back(&bank_kernel);
  if (heads.global_loc.w.size() > 0) {
    out.push_back(&heads.global_loc.w);
    out.push_back(&heads.global_loc.b);
  }
  if (heads.local_loc.w.size() > 0) {
    out.push_back(&heads.local_loc.w);
    out.push_back(&heads.local_loc.b);
  }
  out.push_back(&heads.landmark.w);
  out.push_back(&heads.landmark.b);
  return out;
}

std::vector<const Tensor*> Parameters::list() const {
  std::vector<const Tensor*> out;
  for (const Tensor& t : conv) out.push_back(&t);
  out.push_back(&bank_kernel);
  if (heads.global_loc.w.size() > 0) {
    out.push_back(&heads.global_loc.w);
    out.push_back(&heads.global_loc.b);
  }
  if (heads.local_loc.w.size() > 0) {
    out.push_back(&heads.local_loc.w);
    out.push_back(&heads.local_loc.b);
  }
  out.push_back(&heads.landmark.w);
  out.push_back(&heads.landmark.b);
  return out;
}

int64_t Parameters::count() const {
  int64_t n = 0;
  for (const Tensor* t : list()) n += t->size();
  return n;
}

uint64_t Parameters::content_hash() const {
  std::ostringstream os;
  for (const Tensor* t : list()) t->write(os);
  return wire::fnv1a(os.str());
}

namespace {

void glorot_fill(Tensor* t, double fan_in, double fan_out, Rng* rng) {
  const double lim = std::sqrt(6.0 / (fan_in + fan_out));
  for (int64_t i = 0; i < t->size(); ++i) (*t)[i] = rng->uniform(-lim, lim);
}

}  // namespace

Parameters build_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(mix_seed(seed, 0x6d6f64656cull));
  Parameters p;
  int cin = 1;
  for (size_t s = 0; s + 1 < cfg.channels.size(); ++s) {
    Tensor k({cfg.channels[s], cin, 3, 3});
    glorot_fill(&k, cin * 9.0, cfg.channels[s] * 9.0, &rng);
    p.conv.push_back(std::move(k));
    cin = cfg.channels[s];
  }
  p.bank_kernel = Tensor({cfg.channels.back(), cin, 3, 3});
  glorot_fill(&p.bank_kernel, cin * 9.0, cfg.channels.back() * 9.0, &rng);

  const int D = cfg.feature_dim();
  // Localization heads start at zero so every transform begins as identity.
  if (cfg.has_global_head()) {
    p.heads.global_loc.w = Tensor({6, D});
    p.heads.global_loc.b = Tensor({6});
  }
  if (cfg.has_local_head()) {
    p.heads.local_loc.w = Tensor({6, D});
    p.heads.local_loc.b = Tensor({6});
  }
  p.heads.landmark.w = Tensor({2 * cfg.landmarks, D});
  glorot_fill(&p.heads.landmark.w, D, 2.0 * cfg.landmarks, &rng);
  p.heads.landmark.b = Tensor({2 * cfg.landmarks});
  return p;
}

Parameters zeros_like(const Parameters& p) {
  Parameters z;
  for (const Tensor& t : p.conv) z.conv.emplace_back(t.shape());
  z.bank_kernel = Tensor(p.bank_kernel.shape());
  if (p.heads.global_loc.w.size() > 0) {
    z.heads.global_loc.w = Tensor(p.heads.global_loc.w.shape());
    z.heads.global_loc.b = Tensor(p.heads.global_loc.b.shape());
  }
  if (p.heads.local_loc.w.size() > 0) {
    z.heads.local_loc.w = Tensor(p.heads.local_loc.w.shape());
    z.heads.local_loc.b = Tensor(p.heads.local_loc.b.shape());
  }
  z.heads.landmark.w = Tensor(p.heads.landmark.w.shape());
  z.heads.landmark.b = Tensor(p.heads.landmark.b.shape());
  return z;
}

namespace {

Tensor flat_copy(const Tensor& t) { return Tensor({static_cast<int>(t.size())}, t.vec()); }

}  // namespace

ModelOutput model_forward(const ModelConfig& cfg, const Parameters& p, const Tensor& image,
                          int steps_override) {
  if (image.rank() != 3 || image.extent(0) != 1 || image.extent(1) != cfg.extent ||
      image.extent(2) != cfg.extent)
    throw DimensionError("model_forward: image must be [1,extent,extent]");

  ModelOutput out;
  ModelTrace& tr = out.trace;
  tr.stage_in.push_back(image);
  for (size_t s = 0; s + 1 < cfg.channels.size(); ++s) {
    Tensor pre = conv2d(tr.stage_in.back(), p.conv[s], 1, 1);
    Tensor act = relu(pre);
    Tensor pooled = avgpool2(act);
    tr.stage_pre.push_back(std::move(pre));
    tr.stage_act.push_back(std::move(act));
    tr.stage_in.push_back(std::move(pooled));
  }

  ScaleTowerBank bank{p.bank_kernel, cfg.effective_dilations(), cfg.aggregation};
  auto [agg, sel] = selective_forward(bank, tr.stage_in.back());
  tr.agg_pre = std::move(agg);
  tr.selection = std::move(sel);
  tr.f_conv = relu(tr.agg_pre);

  const int J = cfg.landmarks;
  if (cfg.use_stn) {
    const int steps = steps_override > 0 ? steps_override : cfg.effective_steps();
    HrstOutput h = hrst_forward(p.heads, tr.f_conv, steps);
    out.rel = std::move(h.rel);
    out.abs = std::move(h.abs);
    out.thetas = h.state.trace.theta_final;
    tr.hrst = std::move(h.state.trace);
    tr.used_stn = true;
  } else {
    const Tensor coords = linear(flat_copy(tr.f_conv), p.heads.landmark.w, p.heads.landmark.b);
    if (!coords.all_finite()) throw NumericError("model_forward: non-finite landmark output");
    out.rel.points.resize(static_cast<size_t>(J));
    out.rel.visible.assign(static_cast<size_t>(J), 1);
    for (int j = 0; j < J; ++j) out.rel.points[static_cast<size_t>(j)] = {coords[2 * j], coords[2 * j + 1]};
    out.abs = out.rel;
    out.thetas.assign(static_cast<size_t>(J), AffineTransform::identity());
    tr.used_stn = false;
  }
  return out;
}

Parameters model_backward(const ModelConfig& cfg, const Parameters& p, const ModelTrace& tr,
                          const LossGrads& lg) {
  Parameters g = zeros_like(p);
  Tensor grad_f;

  if (tr.used_stn) {
    HeadGrads hg = hrst_backward(p.heads, tr.hrst, lg.rel, lg.theta);
    g.heads.landmark.w = std::move(hg.landmark.weight);
    g.heads.landmark.b = std::move(hg.landmark.bias);
    if (g.heads.global_loc.w.size() > 0) {
      g.heads.global_loc.w = std::move(hg.global_loc.weight);
      g.heads.global_loc.b = std::move(hg.global_loc.bias);
    }
    if (g.heads.local_loc.w.size() > 0) {
      g.heads.local_loc.w = std::move(hg.local_loc.weight);
      g.heads.local_loc.b = std::move(hg.local_loc.bias);
    }
    grad_f = std::move(hg.features);
  } else {
    const int J = cfg.landmarks;
    Tensor go({2 * J});
    for (int j = 0; j < J; ++j) {
      go[2 * j] = lg.rel[static_cast<size_t>(j)][0];
      go[2 * j + 1] = lg.rel[static_cast<size_t>(j)][1];
    }
    LinearGrads lgs = linear_backward(flat_copy(tr.f_conv), p.heads.landmark.w, go);
    g.heads.landmark.w = std::move(lgs.weight);
    g.heads.landmark.b = std::move(lgs.bias);
    grad_f = Tensor(tr.f_conv.shape(), lgs.input.vec());
  }

  Tensor grad_agg = relu_backward(tr.agg_pre, grad_f);
  ScaleTowerBank bank{p.bank_kernel, cfg.effective_dilations(), cfg.aggregation};
  auto [grad_pool, grad_bank] =
      selective_backward(bank, tr.stage_in.back(), tr.selection, grad_agg);
  g.bank_kernel = std::move(grad_bank);

  Tensor flow = std::move(grad_pool);
  for (size_t s = cfg.channels.size() - 1; s-- > 0;) {
    Tensor grad_act = avgpool2_backward(tr.stage_act[s], flow);
    Tensor grad_pre = relu_backward(tr.stage_pre[s], grad_act);
    auto [grad_in, grad_k] = conv2d_backward(tr.stage_in[s], p.conv[s], 1, 1, grad_pre);
    g.conv[s] = std::move(grad_k);
    flow = std::move(grad_in);
  }
  return g;
}

SampleLoss sample_loss(const ModelConfig& cfg, const LandmarkSet& gt, const ModelOutput& out) {
  int vis = 0;
  for (unsigned char v : gt.visible) vis += v ? 1 : 0;
  SampleLoss sl;
  ScaleRegConfig src;
  src.lambda = cfg.lambda;
  src.mask_invisible = cfg.scale_mask_invisible;
  src.enabled = cfg.use_scale_reg && out.trace.used_stn && vis >= 3;
  sl.hull_area = src.enabled ? convex_hull_area(gt) : 0.0;
  sl.scale_active = src.enabled;
  sl.breakdown = total_loss(gt, out.rel, out.thetas, sl.hull_area, src);
  sl.grads = loss_gradients(gt, out.rel, out.thetas, sl.hull_area, src);
  return sl;
}

void save_checkpoint(const std::string& path, const Parameters& params,
                     const Parameters& velocity, int epoch, const Rng& rng) {
  std::ostringstream payload;
  wire::put_u32(payload, 1);
  wire::put_u32(payload, static_cast<uint32_t>(epoch));
  std::ostringstream rs;
  rs << rng.engine();
  const std::string rng_state = rs.str();
  wire::put_u64(payload, rng_state.size());
  payload.write(rng_state.data(), static_cast<std::streamsize>(rng_state.size()));
  const auto plist = params.list();
  const auto vlist = velocity.list();
  if (plist.size() != vlist.size())
    throw DimensionError("save_checkpoint: parameter/velocity structure mismatch");
  wire::put_u32(payload, static_cast<uint32_t>(plist.size()));
  for (const Tensor* t : plist) t->write(payload);
  for (const Tensor* t : vlist) t->write(payload);
  const std::string bytes = payload.str();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("save_checkpoint: cannot open " + path);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  wire::put_u64(os, wire::fnv1a(bytes));
  if (!os) throw FormatError("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path, const ModelConfig& cfg) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("load_checkpoint: cannot open " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  const std::string all = buf.str();
  if (all.size() < 8) throw FormatError("load_checkpoint: truncated file");
  const std::string bytes = all.substr(0, all.size() - 8);
  std::istringstream tail(all.substr(all.size() - 8));
  if (wire::get_u64(tail) != wire::fnv1a(bytes))
    throw FormatError("load_checkpoint: checksum mismatch");

  std::istringstream ps(bytes);
  if (wire::get_u32(ps) != 1) throw FormatError("load_checkpoint: unsupported version");
  Checkpoint ck;
  ck.epoch = static_cast<int>(wire::get_u32(ps));
  const uint64_t rlen = wire::get_u64(ps);
  std::string rng_state(static_cast<size_t>(rlen), '\0');
  if (!ps.read(rng_state.data(), static_cast<std::streamsize>(rlen)))
    throw FormatError("load_checkpoint: truncated rng state");
  std::istringstream rs(rng_state);
  rs >> ck.rng.engine();
  if (rs.fail()) throw FormatError("load_checkpoint: malformed rng state");

  ck.params = build_model(cfg, 0);
  ck.velocity = zeros_like(ck.params);
  const uint32_t n = wire::get_u32(ps);
  auto plist = ck.params.list();
  auto vlist = ck.velocity.list();
  if (n != plist.size())
    throw FormatError("load_checkpoint: tensor count does not match model configuration");
  for (Tensor* t : plist) {
    Tensor read = Tensor::read(ps);
    if (!read.same_shape(*t))
      throw FormatError("load_checkpoint: tensor shape does not match model configuration");
    *t = std::move(read);
  }
  for (Tensor* t : vlist) {
    Tensor read = Tensor::read(ps);
    if (!read.same_shape(*t))
      throw FormatError("load_checkpoint: tensor shape does not match model configuration");
    *t = std::move(read);
  }
  return ck;
}

}  // namespace dlan
