#pragma once

// Metrics and analyses: top-1 accuracy, Hamming distance, illuminance-binned
// curves, the day2dark gap, channel-activation profiles, and report output.

#include "d2d/autograd.hpp"
#include "d2d/clip.hpp"
#include "d2d/encoders.hpp"
#include "d2d/recognizer.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace d2d::evalkit {

// Index of the largest entry; ties go to the lowest index.
int argmax(const RowVec& v);

// Fraction of rows whose argmax equals the label. Throws InvalidInput on
// empty or mismatched input.
double top1_accuracy(const std::vector<RowVec>& predictions, const std::vector<int>& labels);

inline constexpr double kMultiLabelThreshold = 0.5;

// Mean per-label mismatch after thresholding probabilities at 0.5
// (p >= 0.5 counts as positive). Rows are samples.
double hamming_distance(const Mat& probabilities, const Mat& labels);

struct Prediction {
  std::string id;
  double clip_y = 0.0;
  RowVec logits;
  RowVec probabilities;
  int label = -1;
  RowVec labels;  // multi-label targets
};

// Read-only forward pass over clips, routed by illuminance.
std::vector<Prediction> predict(const recognizer::Recognizer& model, const std::vector<Clip>& clips);

// Accuracy (single-label) or Hamming distance (multi-label) over predictions.
double metric(const std::vector<Prediction>& predictions, bool multi_label);

struct Bin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double value = 0.0;
};

struct BinnedCurve {
  std::vector<Bin> bins;  // non-empty bins only, in edge order
  std::vector<std::pair<double, double>> absent;  // empty bins, never reported as 0
  std::size_t out_of_range = 0;
};

BinnedCurve binned_metric(const std::vector<Prediction>& predictions, const std::vector<double>& edges,
                          bool multi_label);
BinnedCurve binned_metric(const recognizer::Recognizer& model, const std::vector<Clip>& testset,
                          const std::vector<double>& edges);

// Positive gap means the dark partition (Y <= t) is worse: day - dark for
// accuracy, dark - day for Hamming distance.
struct Gap {
  double day = 0.0;
  double dark = 0.0;
  double gap = 0.0;
  std::size_t day_count = 0;
  std::size_t dark_count = 0;
  bool lower_is_better = false;
  bool defined() const { return day_count > 0 && dark_count > 0; }
};

Gap day2dark_gap(const std::vector<Prediction>& predictions, double t, bool multi_label);

struct ClassProfile {
  int class_id = 0;
  std::vector<int> channels;       // sampled channel indices
  Mat mean;                        // bins x channels, NaN where a bin is empty
  std::vector<std::size_t> counts;  // clips per bin
};

struct ActivationProfile {
  std::vector<double> edges;
  std::vector<ClassProfile> classes;
};

// Per class: seeded choice of n_channels channels, per-clip token means,
// averaged within each illuminance bin.
ActivationProfile channel_activation_profile(const encoders::VisualEncoder& encoder, const std::vector<Clip>& clips,
                                             const std::vector<double>& edges, int n_channels, std::uint64_t seed);

struct EvalReport {
  std::string split = "test";
  bool multi_label = false;
  std::string metric_name;  // "top1_accuracy" or "hamming_distance"
  std::size_t count = 0;
  double overall = 0.0;
  double t = 40.0;
  Gap gap;
  BinnedCurve curve;
  std::string model_fingerprint;
  std::string config_fingerprint;
  std::optional<ActivationProfile> profile;
};

EvalReport evaluate(const recognizer::Recognizer& model, const std::vector<Clip>& testset,
                    const std::vector<double>& edges, std::optional<int> profile_channels = std::nullopt,
                    std::uint64_t profile_seed = 0);

// Writes report.txt, curve.csv, profile_class<c>.csv and the PNG plots.
// Throws IoError when the directory cannot be written.
void emit_report(const EvalReport& report, const std::filesystem::path& out_dir);

// Renders curve.png and activation_class<c>.png from the CSVs in dir.
std::vector<std::filesystem::path> render_plots(const std::filesystem::path& dir);

// --- minimal raster output ---------------------------------------------------

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;
  Image(int w, int h, std::uint8_t fill = 255);
  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b);
  void line(int x0, int y0, int x1, int y1, std::uint8_t r, std::uint8_t g, std::uint8_t b);
  void rect(int x0, int y0, int x1, int y1, std::uint8_t r, std::uint8_t g, std::uint8_t b);
};

// 8-bit RGB PNG, zlib-compressed.
void write_png(const Image& image, const std::filesystem::path& file);

}  // namespace d2d::evalkit
