#include "dlan/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dlan/wire.hpp"

namespace dlan {

namespace {

constexpr int kPolyVerts = 11;

// Garment outline, traversed clockwise from the left collar. Landmark
// vertices: 0 L-collar, 2 R-collar, 9 L-sleeve, 4 R-sleeve, 7 L-hem, 6 R-hem.
const double kOutline[kPolyVerts][2] = {
    {-0.25, -0.55},  // 0 left collar
    {0.00, -0.45},   // 1 neck dip
    {0.25, -0.55},   // 2 right collar
    {0.55, -0.45},   // 3 right shoulder
    {0.85, 0.05},    // 4 right sleeve
    {0.45, 0.12},    // 5 right underarm
    {0.45, 0.80},    // 6 right hem
    {-0.45, 0.80},   // 7 left hem
    {-0.45, 0.12},   // 8 left underarm
    {-0.85, 0.05},   // 9 left sleeve
    {-0.55, -0.45},  // 10 left shoulder
};

const int kLandmarkVertex[kNumLandmarks] = {0, 2, 9, 4, 7, 6};

// Widest span of the canonical outline, used to map occupancy to scale.
constexpr double kOutlineSpan = 1.7;

const double kOccupancy[kNumScaleClasses] = {0.10, 0.25, 0.50, 0.75, 0.95};

struct PixelPolygon {
  std::vector<double> xs, ys;
};

bool point_in_polygon(const PixelPolygon& poly, double px, double py) {
  bool inside = false;
  const size_t n = poly.xs.size();
  for (size_t i = 0, j = n - 1; i < n; j = i++) {
    const double yi = poly.ys[i], yj = poly.ys[j];
    if ((yi > py) != (yj > py)) {
      const double xcross = (poly.xs[j] - poly.xs[i]) * (py - yi) / (yj - yi) + poly.xs[i];
      if (px < xcross) inside = !inside;
    }
  }
  return inside;
}

struct Ellipse {
  double cx, cy, rx, ry, cphi, sphi;
};

bool point_in_ellipse(const Ellipse& e, double px, double py) {
  const double dx = px - e.cx, dy = py - e.cy;
  const double lx = (e.cphi * dx + e.sphi * dy) / e.rx;
  const double ly = (-e.sphi * dx + e.cphi * dy) / e.ry;
  return lx * lx + ly * ly <= 1.0;
}

// 2x2 supersampled coverage blend of a shape over its pixel bounding box.
template <class InsideFn>
void rasterize(Tensor* image, int extent, double x_lo, double x_hi, double y_lo, double y_hi,
               double intensity, double slope, const InsideFn& inside) {
  const int px_lo = std::max(0, static_cast<int>(std::floor(x_lo)) - 1);
  const int px_hi = std::min(extent - 1, static_cast<int>(std::ceil(x_hi)) + 1);
  const int py_lo = std::max(0, static_cast<int>(std::floor(y_lo)) - 1);
  const int py_hi = std::min(extent - 1, static_cast<int>(std::ceil(y_hi)) + 1);
  static const double kSub[2] = {-0.25, 0.25};
  double* img = image->data();
  for (int y = py_lo; y <= py_hi; ++y) {
    for (int x = px_lo; x <= px_hi; ++x) {
      int hits = 0;
      for (double dy : kSub)
        for (double dx : kSub)
          if (inside(x + dx, y + dy)) ++hits;
      if (hits == 0) continue;
      const double cov = hits * 0.25;
      const double shade = intensity + slope * (static_cast<double>(y) / extent - 0.5);
      double& v = img[static_cast<int64_t>(y) * extent + x];
      v = v * (1.0 - cov) + shade * cov;
    }
  }
}

struct ClutterShape {
  bool is_ellipse = false;
  bool front = false;
  double intensity = 0.5;
  PixelPolygon poly;
  Ellipse ellipse{};
  double x_lo = 0, x_hi = 0, y_lo = 0, y_hi = 0;
};

void draw_clutter(Tensor* image, int extent, const ClutterShape& s) {
  if (s.is_ellipse) {
    rasterize(image, extent, s.x_lo, s.x_hi, s.y_lo, s.y_hi, s.intensity, 0.0,
              [&](double px, double py) { return point_in_ellipse(s.ellipse, px, py); });
  } else {
    rasterize(image, extent, s.x_lo, s.x_hi, s.y_lo, s.y_hi, s.intensity, 0.0,
              [&](double px, double py) { return point_in_polygon(s.poly, px, py); });
  }
}

}  // namespace

std::array<NormalizedPoint, kNumLandmarks> canonical_landmarks() {
  std::array<NormalizedPoint, kNumLandmarks> out;
  for (int j = 0; j < kNumLandmarks; ++j)
    out[static_cast<size_t>(j)] = {kOutline[kLandmarkVertex[j]][0],
                                   kOutline[kLandmarkVertex[j]][1]};
  return out;
}

SampleRecord generate_sample(uint64_t seed, const GenConfig& cfg, ScaleClass cls) {
  if (cfg.extent < 32) throw ArgumentError("generate_sample: extent must be >= 32");
  if (cfg.clutter_max < 0) throw ArgumentError("generate_sample: clutter_max must be >= 0");
  const int n = cfg.extent;
  Rng rng(seed);

  SampleRecord rec;
  rec.meta.seed = seed;
  rec.meta.scale_class = cls;

  const double f =
      kOccupancy[static_cast<size_t>(cls)] + rng.uniform(-0.02, 0.02);
  const double s = 2.0 * f / kOutlineSpan;
  const double theta = rng.uniform(-M_PI / 6.0, M_PI / 6.0);
  const double aspect = rng.uniform(-0.15, 0.15);
  const double sx = s * (1.0 + aspect);
  const double sy = s / (1.0 + aspect);
  const double dev = 0.7 * (1.0 - f) + 0.05;
  AffineTransform& T = rec.meta.global;
  const double c = std::cos(theta), sn = std::sin(theta);
  T.a[0][0] = c * sx;
  T.a[0][1] = -sn * sy;
  T.a[1][0] = sn * sx;
  T.a[1][1] = c * sy;
  T.t[0] = rng.uniform(-dev, dev);
  T.t[1] = rng.uniform(-dev, dev);

  for (int j = 0; j < 2 * kNumLandmarks; ++j)
    rec.meta.jitter[static_cast<size_t>(j)] = rng.uniform(-cfg.pose_jitter, cfg.pose_jitter);

  // Landmarks ride the jittered outline vertices through the global affine.
  rec.landmarks.points.resize(kNumLandmarks);
  rec.landmarks.visible.resize(kNumLandmarks);
  double vx[kPolyVerts], vy[kPolyVerts];
  for (int v = 0; v < kPolyVerts; ++v) {
    vx[v] = kOutline[v][0];
    vy[v] = kOutline[v][1];
  }
  for (int j = 0; j < kNumLandmarks; ++j) {
    vx[kLandmarkVertex[j]] += rec.meta.jitter[static_cast<size_t>(2 * j)];
    vy[kLandmarkVertex[j]] += rec.meta.jitter[static_cast<size_t>(2 * j + 1)];
  }
  for (int j = 0; j < kNumLandmarks; ++j) {
    const NormalizedPoint p =
        affine_apply(T, {vx[kLandmarkVertex[j]], vy[kLandmarkVertex[j]]});
    rec.landmarks.points[static_cast<size_t>(j)] = p;
    rec.landmarks.visible[static_cast<size_t>(j)] =
        (p.x >= -1.0 && p.x <= 1.0 && p.y >= -1.0 && p.y <= 1.0) ? 1 : 0;
  }

  PixelPolygon garment;
  garment.xs.resize(kPolyVerts);
  garment.ys.resize(kPolyVerts);
  double gx_lo = 1e9, gx_hi = -1e9, gy_lo = 1e9, gy_hi = -1e9;
  for (int v = 0; v < kPolyVerts; ++v) {
    const NormalizedPoint p = affine_apply(T, {vx[v], vy[v]});
    const PixelPoint q = normalized_to_pixel(p, n, n);
    garment.xs[static_cast<size_t>(v)] = q.x;
    garment.ys[static_cast<size_t>(v)] = q.y;
    gx_lo = std::min(gx_lo, q.x);
    gx_hi = std::max(gx_hi, q.x);
    gy_lo = std::min(gy_lo, q.y);
    gy_hi = std::max(gy_hi, q.y);
  }

  const double background = rng.uniform(0.15, 0.35);
  const double garment_shade = rng.uniform(0.5, 0.85);
  const double garment_slope = rng.uniform(-0.2, 0.2);

  rec.meta.clutter = rng.uniform_int(0, cfg.clutter_max);
  std::vector<ClutterShape> clutter;
  clutter.reserve(static_cast<size_t>(rec.meta.clutter));
  for (int k = 0; k < rec.meta.clutter; ++k) {
    ClutterShape shp;
    shp.is_ellipse = rng.coin();
    shp.front = rng.coin();
    shp.intensity = rng.uniform(0.05, 0.95);
    const double cxn = rng.uniform(-0.95, 0.95);
    const double cyn = rng.uniform(-0.95, 0.95);
    const double size = rng.uniform(0.05, 0.4);
    const double phi = rng.uniform(0.0, 2.0 * M_PI);
    const PixelPoint cpx = normalized_to_pixel({cxn, cyn}, n, n);
    const double size_px = size * n * 0.5;
    if (shp.is_ellipse) {
      shp.ellipse.cx = cpx.x;
      shp.ellipse.cy = cpx.y;
      shp.ellipse.rx = size_px * rng.uniform(0.5, 1.0);
      shp.ellipse.ry = size_px * rng.uniform(0.5, 1.0);
      shp.ellipse.cphi = std::cos(phi);
      shp.ellipse.sphi = std::sin(phi);
      const double r = std::max(shp.ellipse.rx, shp.ellipse.ry);
      shp.x_lo = cpx.x - r;
      shp.x_hi = cpx.x + r;
      shp.y_lo = cpx.y - r;
      shp.y_hi = cpx.y + r;
    } else {
      const int nv = rng.uniform_int(3, 5);
      shp.x_lo = shp.y_lo = 1e9;
      shp.x_hi = shp.y_hi = -1e9;
      for (int v = 0; v < nv; ++v) {
        const double ang = phi + 2.0 * M_PI * v / nv;
        const double rad = size_px * rng.uniform(0.5, 1.0);
        const double x = cpx.x + std::cos(ang) * rad;
        const double y = cpx.y + std::sin(ang) * rad;
        shp.poly.xs.push_back(x);
        shp.poly.ys.push_back(y);
        shp.x_lo = std::min(shp.x_lo, x);
        shp.x_hi = std::max(shp.x_hi, x);
        shp.y_lo = std::min(shp.y_lo, y);
        shp.y_hi = std::max(shp.y_hi, y);
      }
    }
    clutter.push_back(std::move(shp));
  }

  rec.image = Tensor::full({1, n, n}, background);
  for (const ClutterShape& shp : clutter)
    if (!shp.front) draw_clutter(&rec.image, n, shp);
  rasterize(&rec.image, n, gx_lo, gx_hi, gy_lo, gy_hi, garment_shade, garment_slope,
            [&](double px, double py) { return point_in_polygon(garment, px, py); });
  for (const ClutterShape& shp : clutter)
    if (shp.front) draw_clutter(&rec.image, n, shp);

  double* img = rec.image.data();
  for (int64_t i = 0; i < rec.image.size(); ++i) {
    img[i] = std::clamp(img[i] + rng.uniform(-cfg.noise_amp, cfg.noise_amp), 0.0, 1.0);
  }
  return rec;
}

namespace {

void write_record(std::ostream& os, const SampleRecord& rec) {
  std::ostringstream payload;
  wire::put_u64(payload, rec.meta.seed);
  wire::put_f64(payload, rec.meta.global.a[0][0]);
  wire::put_f64(payload, rec.meta.global.a[0][1]);
  wire::put_f64(payload, rec.meta.global.a[1][0]);
  wire::put_f64(payload, rec.meta.global.a[1][1]);
  wire::put_f64(payload, rec.meta.global.t[0]);
  wire::put_f64(payload, rec.meta.global.t[1]);
  wire::put_u32(payload, static_cast<uint32_t>(rec.meta.scale_class));
  wire::put_u32(payload, static_cast<uint32_t>(rec.meta.clutter));
  for (double v : rec.meta.jitter) wire::put_f64(payload, v);
  for (const NormalizedPoint& p : rec.landmarks.points) {
    wire::put_f64(payload, p.x);
    wire::put_f64(payload, p.y);
  }
  for (unsigned char v : rec.landmarks.visible) payload.put(static_cast<char>(v));
  rec.image.write(payload);
  const std::string bytes = payload.str();
  wire::put_u64(os, bytes.size());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  wire::put_u64(os, wire::fnv1a(bytes));
}

SampleRecord parse_record(const std::string& bytes) {
  std::istringstream is(bytes);
  SampleRecord rec;
  rec.meta.seed = wire::get_u64(is);
  rec.meta.global.a[0][0] = wire::get_f64(is);
  rec.meta.global.a[0][1] = wire::get_f64(is);
  rec.meta.global.a[1][0] = wire::get_f64(is);
  rec.meta.global.a[1][1] = wire::get_f64(is);
  rec.meta.global.t[0] = wire::get_f64(is);
  rec.meta.global.t[1] = wire::get_f64(is);
  const uint32_t cls = wire::get_u32(is);
  if (cls >= kNumScaleClasses) throw FormatError("record: invalid scale class");
  rec.meta.scale_class = static_cast<ScaleClass>(cls);
  rec.meta.clutter = static_cast<int>(wire::get_u32(is));
  for (double& v : rec.meta.jitter) v = wire::get_f64(is);
  rec.landmarks.points.resize(kNumLandmarks);
  rec.landmarks.visible.resize(kNumLandmarks);
  for (NormalizedPoint& p : rec.landmarks.points) {
    p.x = wire::get_f64(is);
    p.y = wire::get_f64(is);
  }
  for (unsigned char& v : rec.landmarks.visible) {
    const int ch = is.get();
    if (ch < 0) throw FormatError("record: truncated visibility flags");
    v = static_cast<unsigned char>(ch);
  }
  rec.image = Tensor::read(is);
  return rec;
}

}  // namespace

DatasetManifest write_dataset(const GenConfig& cfg, uint64_t base_seed,
                              const std::array<int, 3>& counts, const std::string& dir) {
  if (cfg.extent < 32) throw ArgumentError("write_dataset: extent must be >= 32");
  for (int c : counts)
    if (c < 0) throw ArgumentError("write_dataset: negative split count");
  std::filesystem::create_directories(dir);

  DatasetManifest m;
  m.version = kManifestVersion;
  m.extent = cfg.extent;
  m.num_landmarks = kNumLandmarks;
  m.gen = cfg;
  m.base_seed = base_seed;

  std::set<uint64_t> all_seeds;
  for (int s = 0; s < 3; ++s) {
    for (int i = 0; i < counts[static_cast<size_t>(s)]; ++i) {
      const uint64_t salt = (static_cast<uint64_t>(s + 1) << 40) + static_cast<uint64_t>(i);
      const uint64_t seed = mix_seed(base_seed, salt);
      if (!all_seeds.insert(seed).second)
        throw ConfigError("write_dataset: seed collision across splits");
      m.seeds[static_cast<size_t>(s)].push_back(seed);
    }
  }

  for (int s = 0; s < 3; ++s) {
    std::ofstream os(dir + "/" + kSplitNames[s] + ".bin", std::ios::binary);
    if (!os) throw FormatError("write_dataset: cannot open split file for writing");
    const auto& seeds = m.seeds[static_cast<size_t>(s)];
    for (size_t i = 0; i < seeds.size(); ++i) {
      const ScaleClass cls = static_cast<ScaleClass>(i % kNumScaleClasses);
      write_record(os, generate_sample(seeds[i], cfg, cls));
    }
  }

  std::ofstream mf(dir + "/manifest.txt");
  if (!mf) throw FormatError("write_dataset: cannot open manifest for writing");
  mf << "version = " << m.version << "\n";
  mf << "extent = " << m.extent << "\n";
  mf << "landmarks = " << m.num_landmarks << "\n";
  mf << "noise_amp = " << m.gen.noise_amp << "\n";
  mf << "pose_jitter = " << m.gen.pose_jitter << "\n";
  mf << "clutter_max = " << m.gen.clutter_max << "\n";
  mf << "base_seed = " << m.base_seed << "\n";
  for (int s = 0; s < 3; ++s)
    mf << kSplitNames[s] << "_count = " << m.split_count(s) << "\n";
  for (int s = 0; s < 3; ++s) {
    const auto& seeds = m.seeds[static_cast<size_t>(s)];
    for (size_t i = 0; i < seeds.size(); ++i)
      mf << "sample " << kSplitNames[s] << " " << i << " " << seeds[i] << "\n";
  }
  return m;
}

DatasetManifest read_manifest(const std::string& dir) {
  std::ifstream is(dir + "/manifest.txt");
  if (!is) throw FormatError("read_manifest: cannot open " + dir + "/manifest.txt");
  DatasetManifest m;
  std::map<std::string, std::string> kv;
  std::array<int, 3> counts{0, 0, 0};
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string head;
    ls >> head;
    if (head == "sample") {
      std::string split;
      size_t idx = 0;
      uint64_t seed = 0;
      ls >> split >> idx >> seed;
      int s = -1;
      for (int k = 0; k < 3; ++k)
        if (split == kSplitNames[k]) s = k;
      if (s < 0 || ls.fail()) throw FormatError("read_manifest: malformed sample line: " + line);
      auto& seeds = m.seeds[static_cast<size_t>(s)];
      if (idx != seeds.size()) throw FormatError("read_manifest: out-of-order sample line: " + line);
      seeds.push_back(seed);
    } else {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw FormatError("read_manifest: malformed line: " + line);
      std::string key = line.substr(0, eq);
      std::string val = line.substr(eq + 1);
      const auto trim = [](std::string& t) {
        const auto b = t.find_first_not_of(" \t");
        const auto e = t.find_last_not_of(" \t");
        t = b == std::string::npos ? "" : t.substr(b, e - b + 1);
      };
      trim(key);
      trim(val);
      kv[key] = val;
    }
  }
  try {
    m.version = kv.at("version");
    m.extent = std::stoi(kv.at("extent"));
    m.num_landmarks = std::stoi(kv.at("landmarks"));
    m.gen.extent = m.extent;
    m.gen.noise_amp = std::stod(kv.at("noise_amp"));
    m.gen.pose_jitter = std::stod(kv.at("pose_jitter"));
    m.gen.clutter_max = std::stoi(kv.at("clutter_max"));
    m.base_seed = std::stoull(kv.at("base_seed"));
    for (int s = 0; s < 3; ++s)
      counts[static_cast<size_t>(s)] = std::stoi(kv.at(std::string(kSplitNames[s]) + "_count"));
  } catch (const std::out_of_range&) {
    throw FormatError("read_manifest: missing required key");
  } catch (const std::invalid_argument&) {
    throw FormatError("read_manifest: malformed numeric value");
  }
  if (m.version != kManifestVersion)
    throw FormatError("read_manifest: unsupported version '" + m.version + "'");
  std::set<uint64_t> all;
  for (int s = 0; s < 3; ++s) {
    if (m.split_count(s) != counts[static_cast<size_t>(s)])
      throw FormatError("read_manifest: sample line count disagrees with declared count");
    for (uint64_t seed : m.seeds[static_cast<size_t>(s)])
      if (!all.insert(seed).second)
        throw FormatError("read_manifest: splits share a seed (must be disjoint)");
  }
  return m;
}

std::vector<SampleRecord> read_split(const std::string& dir, const DatasetManifest& manifest,
                                     int split) {
  if (split < 0 || split > 2) throw ArgumentError("read_split: split index out of range");
  const std::string path = dir + "/" + kSplitNames[split] + ".bin";
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("read_split: cannot open " + path);
  const auto& seeds = manifest.seeds[static_cast<size_t>(split)];
  std::vector<SampleRecord> out;
  out.reserve(seeds.size());
  for (size_t i = 0; i < seeds.size(); ++i) {
    const std::string where =
        std::string(kSplitNames[split]) + " sample " + std::to_string(i);
    uint64_t len = 0;
    try {
      len = wire::get_u64(is);
    } catch (const FormatError&) {
      throw FormatError("read_split: truncated blob at " + where);
    }
    if (len > (1ull << 32)) throw FormatError("read_split: implausible record size at " + where);
    std::string bytes(static_cast<size_t>(len), '\0');
    if (!is.read(bytes.data(), static_cast<std::streamsize>(len)))
      throw FormatError("read_split: truncated blob at " + where);
    uint64_t stored = 0;
    try {
      stored = wire::get_u64(is);
    } catch (const FormatError&) {
      throw FormatError("read_split: truncated checksum at " + where);
    }
    if (wire::fnv1a(bytes) != stored)
      throw FormatError("read_split: checksum mismatch at " + where);
    SampleRecord rec = parse_record(bytes);
    if (rec.meta.seed != seeds[i])
      throw FormatError("read_split: seed mismatch at " + where);
    out.push_back(std::move(rec));
  }
  return out;
}

int clutter_level(int clutter) {
  if (clutter <= 2) return 0;
  if (clutter <= 5) return 1;
  return 2;
}

Stratification stratify(const std::vector<SampleRecord>& records) {
  Stratification st;
  for (size_t i = 0; i < records.size(); ++i) {
    st.by_scale[static_cast<size_t>(records[i].meta.scale_class)].push_back(
        static_cast<int>(i));
    st.by_clutter[static_cast<size_t>(clutter_level(records[i].meta.clutter))].push_back(
        static_cast<int>(i));
  }
  return st;
}

}  // namespace dlan
