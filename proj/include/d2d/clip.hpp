#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace d2d {

// Non-owning view of one RGB frame, pixels interleaved as (y, x, channel).
struct FrameView {
  int height = 0;
  int width = 0;
  std::span<const float> rgb;
};

// One audio-visual sample. Frames are stored as a dense (t, y, x, c) volume
// of intensities in [0, 255]; audio is mono float PCM.
struct Clip {
  std::string id;
  int frames_t = 0;
  int height = 0;
  int width = 0;
  std::vector<float> frames;
  std::vector<float> audio;
  int sample_rate = 0;

  // Single-label clips carry label >= 0; multi-label clips carry a 0/1 vector
  // in `labels`. Unlabeled clips have label == -1 and empty labels.
  int label = -1;
  std::vector<std::uint8_t> labels;

  double clip_y = 0.0;
  std::uint64_t seed = 0;

  std::size_t frame_size() const { return static_cast<std::size_t>(height) * width * 3; }
  FrameView frame(int t) const {
    return {height, width,
            std::span<const float>(frames).subspan(static_cast<std::size_t>(t) * frame_size(), frame_size())};
  }
  bool multi_label() const { return !labels.empty(); }
  bool has_label() const { return label >= 0 || !labels.empty(); }
};

}  // namespace d2d
