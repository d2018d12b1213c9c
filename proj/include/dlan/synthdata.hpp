#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dlan/geometry.hpp"
#include "dlan/rng.hpp"
#include "dlan/tensor.hpp"

// Procedural landmark dataset: a garment-shaped polygon with six designated
// landmark vertices (collars, sleeves, hems), placed by a random affine whose
// scale is drawn per scale class, with per-landmark pose jitter, background
// clutter shapes, and additive noise. Every record regenerates bit-exactly
// from (seed, config).

namespace dlan {

inline constexpr int kNumLandmarks = 6;
inline constexpr int kNumScaleClasses = 5;
inline constexpr int kNumClutterLevels = 3;

enum class ScaleClass : int { XS = 0, S = 1, M = 2, L = 3, XL = 4 };

struct GenConfig {
  int extent = 64;            // square image extent
  double noise_amp = 0.02;    // additive pixel noise amplitude
  double pose_jitter = 0.05;  // per-landmark jitter in canonical units
  int clutter_max = 8;
};

struct SampleMeta {
  AffineTransform global;  // canonical -> normalized image coordinates
  ScaleClass scale_class = ScaleClass::M;
  int clutter = 0;
  uint64_t seed = 0;
  // Canonical-frame jitter applied to each landmark vertex before the affine.
  std::array<double, 2 * kNumLandmarks> jitter{};
};

struct SampleRecord {
  Tensor image;  // [1, extent, extent], values in [0,1]
  LandmarkSet landmarks;
  SampleMeta meta;
};

// The unjittered landmark positions in the canonical template frame.
std::array<NormalizedPoint, kNumLandmarks> canonical_landmarks();

SampleRecord generate_sample(uint64_t seed, const GenConfig& cfg, ScaleClass cls);

struct DatasetManifest {
  std::string version;
  int extent = 0;
  int num_landmarks = 0;
  GenConfig gen;
  uint64_t base_seed = 0;
  // Split order: train, val, test.
  std::array<std::vector<uint64_t>, 3> seeds;

  int split_count(int s) const { return static_cast<int>(seeds[static_cast<size_t>(s)].size()); }
};

inline const char* kSplitNames[3] = {"train", "val", "test"};
inline const char* kManifestVersion = "landmark-synth-1";

// Generates counts[0..2] samples per split (scale classes assigned
// round-robin within each split) and writes manifest.txt plus
// train.bin/val.bin/test.bin under dir.
DatasetManifest write_dataset(const GenConfig& cfg, uint64_t base_seed,
                              const std::array<int, 3>& counts, const std::string& dir);

DatasetManifest read_manifest(const std::string& dir);

// Reads one split's records, verifying per-record checksums against the
// manifest's seed list. split is an index into kSplitNames.
std::vector<SampleRecord> read_split(const std::string& dir, const DatasetManifest& manifest,
                                     int split);

// Clutter level buckets: 0-2 low, 3-5 mid, 6-8 high.
int clutter_level(int clutter);

struct Stratification {
  std::array<std::vector<int>, kNumScaleClasses> by_scale;
  std::array<std::vector<int>, kNumClutterLevels> by_clutter;
};

Stratification stratify(const std::vector<SampleRecord>& records);

}  // namespace dlan
