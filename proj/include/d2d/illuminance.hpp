#pragma once

// Frame and clip illuminance, day/dark partitioning and illuminance histograms.

#include "d2d/clip.hpp"

#include <span>
#include <string>
#include <vector>

namespace d2d::illuminance {

struct LumaCoefficients {
  double r;
  double g;
  double b;
};

// Weights used throughout this project. Blue is 0.144, not the Rec.601 0.114.
inline constexpr LumaCoefficients kDefaultCoefficients{0.299, 0.587, 0.144};
inline constexpr LumaCoefficients kRec601Coefficients{0.299, 0.587, 0.114};

inline constexpr double kDefaultThreshold = 40.0;

// Largest value a frame can reach with the default coefficients.
inline constexpr double kMaxLuma =
    (kDefaultCoefficients.r + kDefaultCoefficients.g + kDefaultCoefficients.b) * 255.0;

double frame_illuminance(const FrameView& frame, const LumaCoefficients& k = kDefaultCoefficients);

struct IlluminanceRecord {
  std::vector<double> per_frame;
  double clip_y = 0.0;
};

// stride > 1 samples every stride-th frame (for large corpora).
IlluminanceRecord clip_illuminance(const Clip& clip, int stride = 1,
                                   const LumaCoefficients& k = kDefaultCoefficients);

struct ClipLuma {
  std::string id;
  double y = 0.0;
};

struct Partition {
  std::vector<std::string> day;
  std::vector<std::string> dark;
};

// dark = {Y <= t}, day = {Y > t}; input order is preserved within each side.
Partition partition(std::span<const ClipLuma> records, double t = kDefaultThreshold);

inline bool is_dark(double y, double t = kDefaultThreshold) { return y <= t; }

struct Histogram {
  std::vector<double> edges;
  std::vector<std::size_t> counts;
  std::vector<double> fractions;  // count / total, total includes out-of-range clips
  std::size_t below = 0;          // Y < edges.front()
  std::size_t above = 0;          // Y >= edges.back()
  std::size_t total = 0;
};

// Half-open bins [e_i, e_{i+1}).
Histogram illuminance_histogram(std::span<const ClipLuma> records, std::span<const double> edges);

void validate_edges(std::span<const double> edges);

// Index of the half-open bin containing y, or -1 when out of range.
int bin_index(std::span<const double> edges, double y);

// {0, 10, 20, ...} up to and including the first edge above the luma ceiling.
std::vector<double> default_bin_edges(double width = 10.0);

}  // namespace d2d::illuminance
