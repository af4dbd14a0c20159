#pragma once

// Synthetic audio-visual benchmark with a controllable share of dark clips.
//
// Each class has a visual signature (shape, colour, stripe texture, motion
// direction) and an audio signature (tone group). Audio signatures are shared
// by pairs of classes when audio_groups < n_classes, so audio alone narrows a
// clip down to a group and vision must disambiguate inside it. Dark clips are
// exposed with a small gain, desaturated, and carry extra sensor noise.

#include "d2d/clip.hpp"
#include "d2d/util.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace d2d::toybench {

struct FrameGeometry {
  int t = 8;
  int h = 32;
  int w = 32;
};

struct BenchConfig {
  int n_classes = 8;
  int clips_per_class = 100;
  int val_per_class = 0;
  int test_per_class = 60;
  double dark_fraction_train = 0.02;
  double dark_fraction_test = 0.5;
  int unlabeled_pool_size = 400;
  double relevant_fraction = 0.0;  // share of pool clips that contain target classes
  FrameGeometry geometry;
  int fps = 8;
  int sample_rate = 8000;
  std::uint64_t seed = 1;
  double t = 40.0;
  int audio_groups = 4;  // 0 means one group per class
  bool multi_label = false;

  // Exposure model.
  double day_y_min = 60.0;
  double day_y_max = 170.0;
  double dark_y_min = 10.0;
  double dark_y_max = 36.0;
  double noise_sigma = 2.0;       // read noise, all clips
  double dark_noise_sigma = 5.0;  // extra noise added when the target is dark
  double dark_desaturation = 0.6;  // 0 keeps colour, 1 renders dark clips grey
  double lamp_probability = 0.3;

  void validate() const;
};

struct DatasetSplit {
  std::vector<Clip> train;
  std::vector<Clip> val;
  std::vector<Clip> test;
  std::vector<Clip> pool;  // unlabeled, all dark
  BenchConfig config;
};

// Generates one labeled clip whose clip_Y lands within 10% of illuminance_target.
Clip generate_clip(const BenchConfig& config, int class_id, double illuminance_target, std::uint64_t seed);

// Multi-label variant: `active` lists the classes present in the clip.
Clip generate_multilabel_clip(const BenchConfig& config, const std::vector<int>& active,
                              double illuminance_target, std::uint64_t seed);

// Unlabeled distractor clip (no target-class visual or audio signature).
Clip generate_distractor_clip(const BenchConfig& config, double illuminance_target, std::uint64_t seed);

// Scale intensities by factor, add Gaussian sensor noise, clamp to [0, 255].
// Audio is left untouched.
Clip darken(const Clip& clip, double factor, double noise_sigma, std::uint64_t seed);

DatasetSplit generate_dataset(const BenchConfig& config);

// Audio group used for a class (tone signature index).
int audio_group(const BenchConfig& config, int class_id);

// Per-class counts of labeled clips in a split (single-label mode).
std::vector<int> class_counts(const std::vector<Clip>& clips, int n_classes);

// --- on-disk layout -------------------------------------------------------
//
// <root>/manifest                     text, see write_dataset
// <root>/<split>/<clip_id>/frames.npy NPY v1.0, '<f4', shape (T, H, W, 3)
// <root>/<split>/<clip_id>/audio.raw  little-endian float32 mono PCM
// <root>/<split>/<clip_id>/meta       key = value lines (label, clip_Y, seed,
//                                     sample_rate, ...)
void write_dataset(const DatasetSplit& data, const std::filesystem::path& root);
DatasetSplit read_dataset(const std::filesystem::path& root);

void write_clip(const Clip& clip, const std::filesystem::path& dir);
Clip read_clip(const std::filesystem::path& dir);

BenchConfig load_bench_config(const std::filesystem::path& file);
void save_bench_config(const BenchConfig& config, const std::filesystem::path& file);

}  // namespace d2d::toybench
