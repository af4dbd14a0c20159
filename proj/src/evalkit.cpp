#include "d2d/evalkit.hpp"

#include "d2d/illuminance.hpp"
#include "d2d/io.hpp"
#include "d2d/util.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace d2d::evalkit {

int argmax(const RowVec& v) {
  if (v.size() == 0) throw InvalidInput("argmax of an empty vector");
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = static_cast<int>(i);
  return best;
}

double top1_accuracy(const std::vector<RowVec>& predictions, const std::vector<int>& labels) {
  if (predictions.empty()) throw InvalidInput("top1_accuracy: no predictions");
  if (predictions.size() != labels.size())
    throw InvalidInput("top1_accuracy: " + std::to_string(predictions.size()) + " predictions vs " +
                       std::to_string(labels.size()) + " labels");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) correct += argmax(predictions[i]) == labels[i];
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

double hamming_distance(const Mat& probabilities, const Mat& labels) {
  if (probabilities.size() == 0) throw InvalidInput("hamming_distance: no predictions");
  if (probabilities.rows() != labels.rows() || probabilities.cols() != labels.cols())
    throw InvalidInput("hamming_distance: prediction and label shapes differ");
  std::size_t wrong = 0;
  for (Eigen::Index i = 0; i < labels.rows(); ++i)
    for (Eigen::Index j = 0; j < labels.cols(); ++j)
      wrong += (probabilities(i, j) >= kMultiLabelThreshold) != (labels(i, j) >= 0.5);
  return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

std::vector<Prediction> predict(const recognizer::Recognizer& model, const std::vector<Clip>& clips) {
  NoGradGuard guard;
  const bool ml = model.config().multi_label;
  std::vector<Prediction> out;
  out.reserve(clips.size());
  for (const auto& c : clips) {
    const auto r = model.forward(c);
    Prediction p;
    p.id = c.id;
    p.clip_y = c.clip_y;
    p.logits = r.logits.value();
    p.probabilities = r.probabilities(ml);
    p.label = c.label;
    if (c.multi_label()) {
      p.labels.resize(static_cast<Eigen::Index>(c.labels.size()));
      for (std::size_t i = 0; i < c.labels.size(); ++i) p.labels(static_cast<Eigen::Index>(i)) = c.labels[i];
    }
    out.push_back(std::move(p));
  }
  return out;
}

double metric(const std::vector<Prediction>& predictions, bool multi_label) {
  if (predictions.empty()) throw InvalidInput("metric: no predictions");
  if (multi_label) {
    const auto n = static_cast<Eigen::Index>(predictions.size());
    const auto c = predictions.front().probabilities.size();
    Mat p(n, c), y(n, c);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& pr = predictions[static_cast<std::size_t>(i)];
      if (pr.labels.size() != c) throw InvalidInput("metric: clip " + pr.id + " lacks multi-label targets");
      p.row(i) = pr.probabilities;
      y.row(i) = pr.labels;
    }
    return hamming_distance(p, y);
  }
  std::vector<RowVec> logits;
  std::vector<int> labels;
  for (const auto& p : predictions) {
    logits.push_back(p.logits);
    labels.push_back(p.label);
  }
  return top1_accuracy(logits, labels);
}

BinnedCurve binned_metric(const std::vector<Prediction>& predictions, const std::vector<double>& edges,
                          bool multi_label) {
  illuminance::validate_edges(edges);
  std::vector<std::vector<Prediction>> per(edges.size() - 1);
  BinnedCurve curve;
  for (const auto& p : predictions) {
    const int b = illuminance::bin_index(edges, p.clip_y);
    if (b < 0)
      ++curve.out_of_range;
    else
      per[static_cast<std::size_t>(b)].push_back(p);
  }
  for (std::size_t b = 0; b < per.size(); ++b) {
    if (per[b].empty()) {
      curve.absent.emplace_back(edges[b], edges[b + 1]);
      continue;
    }
    curve.bins.push_back({edges[b], edges[b + 1], per[b].size(), metric(per[b], multi_label)});
  }
  return curve;
}

BinnedCurve binned_metric(const recognizer::Recognizer& model, const std::vector<Clip>& testset,
                          const std::vector<double>& edges) {
  return binned_metric(predict(model, testset), edges, model.config().multi_label);
}

Gap day2dark_gap(const std::vector<Prediction>& predictions, double t, bool multi_label) {
  std::vector<Prediction> day, dark;
  for (const auto& p : predictions) (illuminance::is_dark(p.clip_y, t) ? dark : day).push_back(p);
  Gap g;
  g.lower_is_better = multi_label;
  g.day_count = day.size();
  g.dark_count = dark.size();
  g.day = day.empty() ? std::numeric_limits<double>::quiet_NaN() : metric(day, multi_label);
  g.dark = dark.empty() ? std::numeric_limits<double>::quiet_NaN() : metric(dark, multi_label);
  g.gap = multi_label ? g.dark - g.day : g.day - g.dark;
  return g;
}

ActivationProfile channel_activation_profile(const encoders::VisualEncoder& encoder, const std::vector<Clip>& clips,
                                             const std::vector<double>& edges, int n_channels, std::uint64_t seed) {
  illuminance::validate_edges(edges);
  const int width = encoder.feature_dims().width;
  if (n_channels < 1 || n_channels > width)
    throw InvalidInput("channel_activation_profile: n_channels must lie in [1, " + std::to_string(width) + "]");
  NoGradGuard guard;
  const std::size_t n_bins = edges.size() - 1;
  int max_class = -1;
  for (const auto& c : clips) max_class = std::max(max_class, c.label);

  ActivationProfile prof;
  prof.edges = edges;
  std::vector<Mat> sums(static_cast<std::size_t>(max_class + 1));
  for (int k = 0; k <= max_class; ++k) {
    ClassProfile cp;
    cp.class_id = k;
    std::vector<int> all(static_cast<std::size_t>(width));
    std::iota(all.begin(), all.end(), 0);
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    rng.shuffle(all.begin(), all.end());
    cp.channels.assign(all.begin(), all.begin() + n_channels);
    std::sort(cp.channels.begin(), cp.channels.end());
    cp.counts.assign(n_bins, 0);
    sums[static_cast<std::size_t>(k)] = Mat::Zero(static_cast<Eigen::Index>(n_bins), n_channels);
    prof.classes.push_back(std::move(cp));
  }
  for (const auto& c : clips) {
    if (c.label < 0) continue;
    const int b = illuminance::bin_index(edges, c.clip_y);
    if (b < 0) continue;
    auto& cp = prof.classes[static_cast<std::size_t>(c.label)];
    const RowVec pooled = encoder.encode(c).tokens.value().colwise().mean();
    for (int j = 0; j < n_channels; ++j)
      sums[static_cast<std::size_t>(c.label)](b, j) += pooled(cp.channels[static_cast<std::size_t>(j)]);
    ++cp.counts[static_cast<std::size_t>(b)];
  }
  for (auto& cp : prof.classes) {
    cp.mean = sums[static_cast<std::size_t>(cp.class_id)];
    for (std::size_t b = 0; b < n_bins; ++b) {
      const auto bi = static_cast<Eigen::Index>(b);
      if (cp.counts[b] == 0)
        cp.mean.row(bi).setConstant(std::numeric_limits<double>::quiet_NaN());
      else
        cp.mean.row(bi) /= static_cast<double>(cp.counts[b]);
    }
  }
  return prof;
}

EvalReport evaluate(const recognizer::Recognizer& model, const std::vector<Clip>& testset,
                    const std::vector<double>& edges, std::optional<int> profile_channels,
                    std::uint64_t profile_seed) {
  EvalReport r;
  r.multi_label = model.config().multi_label;
  r.metric_name = r.multi_label ? "hamming_distance" : "top1_accuracy";
  r.t = model.config().t;
  const auto preds = predict(model, testset);
  r.count = preds.size();
  r.overall = metric(preds, r.multi_label);
  r.gap = day2dark_gap(preds, r.t, r.multi_label);
  r.curve = binned_metric(preds, edges, r.multi_label);
  r.model_fingerprint = hex64(model.params().hash());
  r.config_fingerprint = hex64(model.config().fingerprint());
  if (profile_channels)
    r.profile = channel_activation_profile(model.visual_encoder(), testset, edges, *profile_channels, profile_seed);
  return r;
}

// --- report output -----------------------------------------------------------

namespace {

std::string fmt(double v) { return std::isnan(v) ? "nan" : io::format_double(v); }

}  // namespace

void emit_report(const EvalReport& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create report directory " + dir.string());

  std::ostringstream txt;
  txt << "# evaluation report\n";
  txt << "split = " << r.split << "\n";
  txt << "metric = " << r.metric_name << "\n";
  txt << "count = " << r.count << "\n";
  txt << "overall = " << fmt(r.overall) << "\n";
  txt << "t = " << fmt(r.t) << "\n";
  txt << "day = " << fmt(r.gap.day) << "\n";
  txt << "day_count = " << r.gap.day_count << "\n";
  txt << "dark = " << fmt(r.gap.dark) << "\n";
  txt << "dark_count = " << r.gap.dark_count << "\n";
  txt << "day2dark_gap = " << fmt(r.gap.gap) << "\n";
  txt << "gap_orientation = " << (r.gap.lower_is_better ? "dark_minus_day" : "day_minus_dark") << "\n";
  txt << "out_of_range = " << r.curve.out_of_range << "\n";
  txt << "absent_bins = " << r.curve.absent.size() << "\n";
  txt << "model_fingerprint = " << r.model_fingerprint << "\n";
  txt << "config_fingerprint = " << r.config_fingerprint << "\n";
  io::write_text(dir / "report.txt", txt.str());

  std::string curve = "lo,hi,count," + r.metric_name + "\n";
  for (const auto& b : r.curve.bins)
    curve += fmt(b.lo) + "," + fmt(b.hi) + "," + std::to_string(b.count) + "," + fmt(b.value) + "\n";
  io::write_text(dir / "curve.csv", curve);

  if (r.profile) {
    const auto& e = r.profile->edges;
    for (const auto& cp : r.profile->classes) {
      std::string csv = "lo,hi,count";
      for (int ch : cp.channels) csv += ",ch" + std::to_string(ch);
      csv += "\n";
      for (Eigen::Index b = 0; b < cp.mean.rows(); ++b) {
        csv += fmt(e[static_cast<std::size_t>(b)]) + "," + fmt(e[static_cast<std::size_t>(b) + 1]) + "," +
               std::to_string(cp.counts[static_cast<std::size_t>(b)]);
        for (Eigen::Index j = 0; j < cp.mean.cols(); ++j) csv += "," + fmt(cp.mean(b, j));
        csv += "\n";
      }
      io::write_text(dir / ("profile_class" + std::to_string(cp.class_id) + ".csv"), csv);
    }
  }
  render_plots(dir);
}

// --- plotting ---------------------------------------------------------------

Image::Image(int w, int h, std::uint8_t fill)
    : width(w), height(h), rgb(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, fill) {
  if (w < 1 || h < 1) throw InvalidInput("Image: size must be positive");
}

void Image::set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  const std::size_t i = (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * 3;
  rgb[i] = r;
  rgb[i + 1] = g;
  rgb[i + 2] = b;
}

void Image::line(int x0, int y0, int x1, int y1, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    set(x0, y0, r, g, b);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void Image::rect(int x0, int y0, int x1, int y1, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
    for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(x, y, r, g, b);
}

namespace {

void put_be32(std::string& s, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_chunk(std::string& out, const char* type, const std::string& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

Csv read_csv(const std::filesystem::path& file) {
  std::istringstream in(io::read_text(file));
  Csv csv;
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> f;
    std::stringstream ss(l);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    return f;
  };
  if (std::getline(in, line)) csv.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    for (const auto& cell : split(line))
      row.push_back(cell == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(cell));
    csv.rows.push_back(std::move(row));
  }
  return csv;
}

void frame_axes(Image& img, int left, int top, int right, int bottom) {
  img.line(left, bottom, right, bottom, 0, 0, 0);
  img.line(left, top, left, bottom, 0, 0, 0);
}

// Blue (low) to red (high).
void heat(double v, std::uint8_t& r, std::uint8_t& g, std::uint8_t& b) {
  v = std::clamp(v, 0.0, 1.0);
  r = static_cast<std::uint8_t>(255 * v);
  g = static_cast<std::uint8_t>(255 * (1 - std::abs(2 * v - 1)));
  b = static_cast<std::uint8_t>(255 * (1 - v));
}

}  // namespace

void write_png(const Image& image, const std::filesystem::path& file) {
  std::string raw;
  raw.reserve(static_cast<std::size_t>(image.height) * (static_cast<std::size_t>(image.width) * 3 + 1));
  for (int y = 0; y < image.height; ++y) {
    raw.push_back('\0');  // no filter
    raw.append(reinterpret_cast<const char*>(image.rgb.data()) + static_cast<std::size_t>(y) * image.width * 3,
               static_cast<std::size_t>(image.width) * 3);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::string z(bound, '\0');
  if (compress2(reinterpret_cast<Bytef*>(z.data()), &bound, reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), 9) != Z_OK)
    throw IoError("png compression failed");
  z.resize(bound);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(image.width));
  put_be32(ihdr, static_cast<std::uint32_t>(image.height));
  ihdr += std::string("\x08\x02\x00\x00\x00", 5);  // 8-bit RGB, deflate, no filter, no interlace
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", z);
  put_chunk(out, "IEND", "");
  io::write_text(file, out);
}

std::vector<std::filesystem::path> render_plots(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> written;
  const auto curve_file = dir / "curve.csv";
  if (!std::filesystem::exists(curve_file)) throw IoError("no curve.csv in " + dir.string());

  // Binned curve: bars spanning each bin, metric on a [0, 1] axis.
  {
    const Csv csv = read_csv(curve_file);
    const int W = 480, H = 320, L = 40, R = W - 20, T = 20, B = H - 30;
    Image img(W, H);
    double xmax = 1.0;
    for (const auto& r : csv.rows) xmax = std::max(xmax, r[1]);
    auto px = [&](double x) { return L + static_cast<int>(std::lround((R - L) * x / xmax)); };
    auto py = [&](double v) { return B - static_cast<int>(std::lround((B - T) * std::clamp(v, 0.0, 1.0))); };
    for (double g = 0.25; g <= 1.0; g += 0.25) img.line(L, py(g), R, py(g), 220, 220, 220);
    int prev_x = -1, prev_y = -1;
    for (const auto& r : csv.rows) {
      img.rect(px(r[0]) + 1, py(r[3]), px(r[1]) - 1, B, 150, 180, 230);
      const int cx = (px(r[0]) + px(r[1])) / 2, cy = py(r[3]);
      if (prev_x >= 0) img.line(prev_x, prev_y, cx, cy, 200, 40, 40);
      img.rect(cx - 2, cy - 2, cx + 2, cy + 2, 200, 40, 40);
      prev_x = cx;
      prev_y = cy;
    }
    frame_axes(img, L, T, R, B);
    write_png(img, dir / "curve.png");
    written.push_back(dir / "curve.png");
  }

  // Activation heatmaps: rows are bins, columns channels, colour min-max scaled per class.
  std::vector<std::filesystem::path> profiles;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("profile_class", 0) == 0 && e.path().extension() == ".csv") profiles.push_back(e.path());
  }
  std::sort(profiles.begin(), profiles.end());
  for (const auto& f : profiles) {
    const Csv csv = read_csv(f);
    const int bins = static_cast<int>(csv.rows.size());
    const int ch = static_cast<int>(csv.header.size()) - 3;
    if (bins < 1 || ch < 1) continue;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& r : csv.rows)
      for (int j = 0; j < ch; ++j)
        if (!std::isnan(r[static_cast<std::size_t>(3 + j)])) {
          lo = std::min(lo, r[static_cast<std::size_t>(3 + j)]);
          hi = std::max(hi, r[static_cast<std::size_t>(3 + j)]);
        }
    const int cell = 8;
    Image img(ch * cell, bins * cell, 255);
    for (int b = 0; b < bins; ++b)
      for (int j = 0; j < ch; ++j) {
        const double v = csv.rows[static_cast<std::size_t>(b)][static_cast<std::size_t>(3 + j)];
        std::uint8_t r = 128, g = 128, bl = 128;  // grey marks an empty bin
        if (!std::isnan(v)) heat(hi > lo ? (v - lo) / (hi - lo) : 0.5, r, g, bl);
        // Lowest illuminance at the bottom.
        const int y0 = (bins - 1 - b) * cell;
        img.rect(j * cell, y0, j * cell + cell - 1, y0 + cell - 1, r, g, bl);
      }
    auto out = f;
    out.replace_extension(".png");
    const auto name = out.filename().string();
    out.replace_filename("activation_" + name.substr(std::string("profile_").size()));
    write_png(img, out);
    written.push_back(out);
  }
  return written;
}

}  // namespace d2d::evalkit
