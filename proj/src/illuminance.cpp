#include "d2d/illuminance.hpp"

#include "d2d/util.hpp"

#include <algorithm>
#include <cmath>

namespace d2d::illuminance {

double frame_illuminance(const FrameView& frame, const LumaCoefficients& k) {
  if (frame.height < 1 || frame.width < 1) throw InvalidInput("frame_illuminance: empty frame");
  const std::size_t pixels = static_cast<std::size_t>(frame.height) * frame.width;
  if (frame.rgb.size() != pixels * 3)
    throw InvalidInput("frame_illuminance: expected " + std::to_string(pixels * 3) + " values, got " +
                       std::to_string(frame.rgb.size()));
  double acc = 0.0;
  for (std::size_t j = 0; j < pixels; ++j) {
    const double r = frame.rgb[3 * j];
    const double g = frame.rgb[3 * j + 1];
    const double b = frame.rgb[3 * j + 2];
    if (!(r >= 0.0 && r <= 255.0 && g >= 0.0 && g <= 255.0 && b >= 0.0 && b <= 255.0))
      throw InvalidInput("frame_illuminance: intensity outside [0, 255] at pixel " + std::to_string(j));
    acc += k.r * r + k.g * g + k.b * b;
  }
  return acc / static_cast<double>(pixels);
}

IlluminanceRecord clip_illuminance(const Clip& clip, int stride, const LumaCoefficients& k) {
  if (clip.frames_t < 1) throw InvalidInput("clip_illuminance: clip '" + clip.id + "' has no frames");
  if (stride < 1) throw InvalidInput("clip_illuminance: stride must be >= 1");
  if (clip.frames.size() != static_cast<std::size_t>(clip.frames_t) * clip.frame_size())
    throw InvalidInput("clip_illuminance: frame volume size does not match T x H x W x 3");
  IlluminanceRecord rec;
  double sum = 0.0;
  for (int t = 0; t < clip.frames_t; t += stride) {
    const double y = frame_illuminance(clip.frame(t), k);
    rec.per_frame.push_back(y);
    sum += y;
  }
  rec.clip_y = sum / static_cast<double>(rec.per_frame.size());
  return rec;
}

Partition partition(std::span<const ClipLuma> records, double t) {
  if (!(t > 0.0)) throw InvalidInput("partition: threshold must be > 0");
  Partition p;
  for (const auto& r : records) (is_dark(r.y, t) ? p.dark : p.day).push_back(r.id);
  return p;
}

void validate_edges(std::span<const double> edges) {
  if (edges.size() < 2) throw InvalidInput("bin edges: need at least 2 edges");
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (!(edges[i] > edges[i - 1])) throw InvalidInput("bin edges: not strictly ascending at index " + std::to_string(i));
}

int bin_index(std::span<const double> edges, double y) {
  if (y < edges.front() || y >= edges.back()) return -1;
  auto it = std::upper_bound(edges.begin(), edges.end(), y);
  return static_cast<int>(it - edges.begin()) - 1;
}

Histogram illuminance_histogram(std::span<const ClipLuma> records, std::span<const double> edges) {
  validate_edges(edges);
  Histogram h;
  h.edges.assign(edges.begin(), edges.end());
  h.counts.assign(edges.size() - 1, 0);
  for (const auto& r : records) {
    const int b = bin_index(edges, r.y);
    if (b >= 0)
      ++h.counts[static_cast<std::size_t>(b)];
    else if (r.y < edges.front())
      ++h.below;
    else
      ++h.above;
  }
  h.total = records.size();
  h.fractions.resize(h.counts.size(), 0.0);
  if (h.total > 0)
    for (std::size_t i = 0; i < h.counts.size(); ++i)
      h.fractions[i] = static_cast<double>(h.counts[i]) / static_cast<double>(h.total);
  return h;
}

std::vector<double> default_bin_edges(double width) {
  std::vector<double> e;
  for (double v = 0.0;; v += width) {
    e.push_back(v);
    if (v > kMaxLuma) break;
  }
  return e;
}

}  // namespace d2d::illuminance
