#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "xvt/tensor.hpp"

namespace xvt {

// Per-task label states. Negative/uncertain/positive are trainable classes
// of the three-class head; unknown entries are masked out of the loss.
enum class LabelState { kNegative = 0, kUncertain = 1, kPositive = 2, kUnknown = 3 };

std::string label_state_name(LabelState s);
LabelState parse_label_state(const std::string& name);

// Synthetic unregistered two-view agreement task. Each view contains one
// oriented-grating marker stamped at an independent uniform position; the
// marker's orientation is its categorical feature. The label is positive iff
// the two views' features agree. Each view's marginal distribution is
// label-independent by construction, so single-view models carry no signal;
// only relating content across views does.
struct SynthTaskSpec {
  int image_size = 32;
  int marker_size = 12;
  int alphabet = 4;        // feature values = grating orientations
  double noise = 0.05;     // additive Gaussian sigma
  double marker_base = 1.0;
  double marker_amp = 1.0;
  double cycles = 2.0;     // grating cycles across the marker
};

struct ManifestRow {
  std::int64_t id;
  std::string task;
  LabelState state;
  int fold;
};

// In-memory dataset: paired single-channel views plus the per-task manifest.
// Payload layout: sample-major, view-major, then (C,H,W) row-major float32.
struct DatasetContainer {
  int channels = 1;
  int height = 0;
  int width = 0;
  std::uint64_t count = 0;
  std::vector<float> payload;
  std::vector<ManifestRow> manifest;

  std::int64_t view_size() const {
    return static_cast<std::int64_t>(channels) * height * width;
  }
  const float* view(std::uint64_t sample, int v) const {
    return payload.data() + (static_cast<std::int64_t>(sample) * 2 + v) * view_size();
  }
  float* view(std::uint64_t sample, int v) {
    return payload.data() + (static_cast<std::int64_t>(sample) * 2 + v) * view_size();
  }
  // Distinct task names in first-seen manifest order.
  std::vector<std::string> task_names() const;
};

// Generator ground truth, kept for oracle tests.
struct SynthTruth {
  int label;
  std::array<int, 2> feature;
  std::array<int, 2> row;
  std::array<int, 2> col;
};

struct SynthDataset {
  DatasetContainer container;
  std::vector<SynthTruth> truth;
};

// Noise-free marker template value for feature k at marker pixel (r, c),
// including the base offset. Shared by the generator and the matched-filter
// oracle decoder.
double marker_pattern(const SynthTaskSpec& spec, int feature, int r, int c);

// Generates fold_counts[f] samples for folds 0/1/2 (train/val/test). Labels
// alternate deterministically (exact 50% balance); all other randomness comes
// from per-sample streams derived from (seed, sample id), so generation is
// order-independent and bit-reproducible.
SynthDataset synth_generate(const SynthTaskSpec& spec, const std::array<int, 3>& fold_counts,
                            std::uint64_t seed);

// ---- preprocessing utilities (rank-2 single-channel images) ----

// Affine map making the nonzero-foreground pixels mean 0, std 1; zero pixels
// go through the same map.
Tensor<float> normalize_foreground(const Tensor<float>& image);

// Positions a (win_h, win_w) window to maximize the contained above-threshold
// mass (sum of pixel values strictly above `threshold`), ties broken by the
// smallest row then column index, and returns the crop.
Tensor<float> crop_threshold(const Tensor<float>& image, int win_h, int win_w, double threshold);

Tensor<float> flip_horizontal(const Tensor<float>& image);

struct AugmentParams {
  double flip_prob = 0.5;
  double max_rotate_deg = 15.0;
  double scale_lo = 0.9;
  double scale_hi = 1.1;
  double max_shift_frac = 0.1;   // per axis
  double elastic_alpha = 8.0;    // displacement magnitude, px
  double elastic_sigma = 4.0;    // smoothing sigma, px
};

// Applies, in order: horizontal flip, rotation, isotropic scale, translation
// (one combined affine resample, bilinear, zero fill), then an elastic
// deformation with a Gaussian-smoothed random displacement field.
Tensor<float> augment(const Tensor<float>& image, const AugmentParams& params, Rng& rng);

// ---- on-disk container ----
// Binary layout (all integers little-endian): magic "XVDS", u32 version,
// u64 sample count, u32 views (2), u32 channels, u32 height, u32 width,
// u32 dtype tag (1 = float32), then the raw payload. The manifest CSV
// (columns id,task,state,fold) lives next to it at manifest_path(path).
void write_container(const DatasetContainer& data, const std::string& path);
DatasetContainer read_container(const std::string& path);
std::string manifest_path(const std::string& container_path);

}  // namespace xvt
