#pragma once

// Visual and audio encoders. The toy implementations are small enough to
// train on a CPU; anything implementing VisualEncoder / AudioEncoder can
// replace them without touching the recognizer.

#include "d2d/autograd.hpp"
#include "d2d/clip.hpp"
#include "d2d/nn.hpp"

#include <span>
#include <string>
#include <vector>

namespace d2d::encoders {

struct PatchLayout {
  int temporal = 1;
  int spatial_h = 1;
  int spatial_w = 1;
  int count() const { return temporal * spatial_h * spatial_w; }
};

struct VisualFeatures {
  Var tokens;  // n_v x d_v
  PatchLayout layout;
};

struct AudioFeatures {
  Var tokens;  // n_a x d_a
};

struct FeatureDims {
  int tokens = 0;
  int width = 0;
};

class VisualEncoder {
 public:
  virtual ~VisualEncoder() = default;
  virtual VisualFeatures encode(const Clip& clip) const = 0;
  virtual FeatureDims feature_dims() const = 0;
  virtual PatchLayout token_layout() const = 0;
};

class AudioEncoder {
 public:
  virtual ~AudioEncoder() = default;
  virtual AudioFeatures encode(std::span<const float> waveform, int sample_rate) const = 0;
  virtual FeatureDims feature_dims() const = 0;
};

// ---------------------------------------------------------------------------

struct SpectrogramConfig {
  double window_ms = 25.0;
  double hop_ms = 10.0;
  int bands = 64;
  double floor = 1e-10;  // energies are clamped here before the log
};

// Log band energies, one row per analysis frame, one column per band.
// Bands are triangular filters with linearly spaced centres over (0, sr/2).
Mat log_spectrogram(std::span<const float> waveform, int sample_rate, const SpectrogramConfig& cfg);
std::vector<double> band_centers(int sample_rate, const SpectrogramConfig& cfg);

struct VisualEncoderConfig {
  int frames = 8;
  int height = 32;
  int width = 32;
  // Overall token patch; the stack is conv(1, ph/2, pw/2) -> conv(pt, 2, 2) -> embed.
  int patch_t = 2;
  int patch_h = 8;
  int patch_w = 8;
  int conv_channels = 16;
  int d_v = 64;
};

// n_v for a geometry/patch pair; throws ShapeError when they do not tile.
PatchLayout patch_layout(const VisualEncoderConfig& cfg);

class ToyVisualEncoder final : public VisualEncoder {
 public:
  ToyVisualEncoder(ParamStore& store, const std::string& prefix, const VisualEncoderConfig& cfg, Rng& rng);

  VisualFeatures encode(const Clip& clip) const override;
  FeatureDims feature_dims() const override { return {layout_.count(), cfg_.d_v}; }
  PatchLayout token_layout() const override { return layout_; }

  // First-stage patches for a clip: rows are (t, y, x) cells of the first
  // convolution, columns the (dy, dx, c) pixels of each cell scaled to [0, 1].
  Mat first_stage_patches(const Clip& clip) const;
  const std::vector<int>& second_stage_index() const { return group_index_; }
  int second_stage_group() const { return cfg_.patch_t * 4; }

 private:
  VisualEncoderConfig cfg_;
  PatchLayout layout_;
  Linear conv1_, conv2_, embed_;
  std::vector<int> group_index_;
};

struct AudioEncoderConfig {
  SpectrogramConfig spectrogram;
  int band_groups = 4;
  int time_chunks = 4;
  int d_a = 64;
};

// Per-cell mean log energy: rows are (band group, time chunk) cells, columns
// the bands of the group. Pure function of the waveform.
Mat audio_cells(std::span<const float> waveform, int sample_rate, const AudioEncoderConfig& cfg);

class ToyAudioEncoder final : public AudioEncoder {
 public:
  ToyAudioEncoder(ParamStore& store, const std::string& prefix, const AudioEncoderConfig& cfg, Rng& rng);

  AudioFeatures encode(std::span<const float> waveform, int sample_rate) const override;
  FeatureDims feature_dims() const override { return {cfg_.band_groups * cfg_.time_chunks, cfg_.d_a}; }

  // Same as encode() but from precomputed audio_cells().
  AudioFeatures encode_cells(const Mat& cells) const;

 private:
  AudioEncoderConfig cfg_;
  LayerNorm norm_;
  Linear fc1_, fc2_;
};

// A = A' E^a (no bias).
Var project_audio(const Var& audio_tokens, const Var& projection);

}  // namespace d2d::encoders
