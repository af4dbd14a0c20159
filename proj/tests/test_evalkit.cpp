#include "helpers.hpp"

#include "d2d/evalkit.hpp"
#include "d2d/illuminance.hpp"
#include "d2d/io.hpp"
#include "d2d/toybench.hpp"

#include <doctest.h>
#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

using namespace d2d;
using namespace d2d::evalkit;

namespace {

RowVec row(std::initializer_list<double> v) {
  RowVec r(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) r(i++) = x;
  return r;
}

Prediction pred(double y, int label, int predicted, int n = 3) {
  Prediction p;
  p.id = "p" + std::to_string(y);
  p.clip_y = y;
  p.label = label;
  p.logits = RowVec::Zero(n);
  p.logits(predicted) = 1.0;
  p.probabilities = p.logits;
  return p;
}

class ConstantEncoder final : public encoders::VisualEncoder {
 public:
  encoders::VisualFeatures encode(const Clip&) const override {
    return {Var::constant(Mat::Constant(4, 6, 0.25)), {1, 2, 2}};
  }
  encoders::FeatureDims feature_dims() const override { return {4, 6}; }
  encoders::PatchLayout token_layout() const override { return {1, 2, 2}; }
};

std::uint32_t be32(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) | p[3];
}

// Parses chunks, checks CRCs, inflates IDAT and checks the raster size.
bool valid_png(const std::filesystem::path& file, int* w = nullptr, int* h = nullptr) {
  std::ifstream in(file, std::ios::binary);
  std::string s((std::istreambuf_iterator<char>(in)), {});
  const auto* b = reinterpret_cast<const unsigned char*>(s.data());
  if (s.size() < 8 || std::memcmp(b, "\x89PNG\r\n\x1a\n", 8) != 0) return false;
  std::size_t off = 8;
  std::string idat;
  std::uint32_t width = 0, height = 0;
  bool ended = false;
  while (off + 12 <= s.size()) {
    const std::uint32_t len = be32(b + off);
    const std::string type(s.data() + off + 4, 4);
    if (off + 12 + len > s.size()) return false;
    const std::uint32_t crc = static_cast<std::uint32_t>(crc32(0, b + off + 4, len + 4));
    if (crc != be32(b + off + 8 + len)) return false;
    if (type == "IHDR") {
      width = be32(b + off + 8);
      height = be32(b + off + 12);
      if (b[off + 16] != 8 || b[off + 17] != 2) return false;
    } else if (type == "IDAT") {
      idat.append(s.data() + off + 8, len);
    } else if (type == "IEND") {
      ended = true;
    }
    off += 12 + len;
  }
  if (!ended || width == 0) return false;
  uLongf raw_len = static_cast<uLongf>(height) * (1 + 3 * width);
  std::vector<unsigned char> raw(raw_len);
  if (uncompress(raw.data(), &raw_len, reinterpret_cast<const Bytef*>(idat.data()), idat.size()) != Z_OK) return false;
  if (raw_len != static_cast<uLongf>(height) * (1 + 3 * width)) return false;
  if (w) *w = static_cast<int>(width);
  if (h) *h = static_cast<int>(height);
  return true;
}

}  // namespace

TEST_CASE("argmax breaks ties towards the lowest index") {
  CHECK(argmax(row({0.1, 0.5, 0.5})) == 1);
  CHECK(argmax(row({2, 2, 2})) == 0);
  CHECK_THROWS_AS(argmax(RowVec()), InvalidInput);
}

TEST_CASE("top-1 accuracy") {
  std::vector<RowVec> p{row({1, 0}), row({0, 1}), row({1, 0}), row({0, 1})};
  CHECK(top1_accuracy(p, {0, 1, 0, 1}) == 1.0);
  CHECK(top1_accuracy(p, {0, 0, 1, 0}) == 0.25);
  CHECK_THROWS_AS(top1_accuracy({}, {}), InvalidInput);
  CHECK_THROWS_AS(top1_accuracy(p, {0, 1}), InvalidInput);

  Rng rng(1);
  std::vector<RowVec> r;
  std::vector<int> labels;
  int correct = 0;
  for (int i = 0; i < 500; ++i) {
    RowVec v = d2d::testing::random_mat(1, 5, rng);
    const int l = static_cast<int>(rng.index(5));
    int best = 0;
    for (int k = 1; k < 5; ++k)
      if (v(k) > v(best)) best = k;
    correct += best == l;
    r.push_back(v);
    labels.push_back(l);
  }
  CHECK(top1_accuracy(r, labels) == static_cast<double>(correct) / 500);
}

TEST_CASE("hamming distance") {
  Mat labels(1, 4);
  labels << 1, 0, 1, 0;
  CHECK(hamming_distance(labels, labels) == 0.0);
  CHECK(hamming_distance(Mat::Ones(1, 4) - labels, labels) == 1.0);
  Mat probs(1, 4);
  probs << 0.9, 0.2, 0.4, 0.1;
  CHECK(hamming_distance(probs, labels) == 0.25);
  Mat edge(1, 4);
  edge << 0.5, 0.49, 0.5, 0.0;
  CHECK(hamming_distance(edge, labels) == 0.0);
  CHECK_THROWS_AS(hamming_distance(probs, Mat::Ones(2, 4)), InvalidInput);
}

TEST_CASE("binned curve, gap and decomposition") {
  std::vector<Prediction> p{pred(5, 0, 0), pred(15, 1, 2), pred(35, 1, 1), pred(40, 2, 0),
                            pred(55, 0, 0), pred(70, 1, 1), pred(90, 2, 2), pred(95, 2, 1)};
  const double overall = metric(p, false);
  CHECK(overall == 5.0 / 8);

  auto one = binned_metric(p, {0, 1000}, false);
  REQUIRE(one.bins.size() == 1);
  CHECK(one.bins[0].value == overall);

  auto two = binned_metric(p, {0, 40.0000001, 1000}, false);
  auto gap = day2dark_gap(p, 40, false);
  REQUIRE(two.bins.size() == 2);
  CHECK(gap.dark == two.bins[0].value);
  CHECK(gap.day == two.bins[1].value);
  CHECK(gap.gap == doctest::Approx(two.bins[1].value - two.bins[0].value));
  CHECK(gap.dark_count == 4);
  CHECK(gap.day_count == 4);
  CHECK(gap.dark == 0.5);
  CHECK(gap.day == 0.75);

  auto fine = binned_metric(p, illuminance::default_bin_edges(10), false);
  double weighted = 0.0;
  std::size_t n = 0;
  for (const auto& b : fine.bins) {
    CHECK(b.count > 0);
    weighted += b.value * static_cast<double>(b.count);
    n += b.count;
  }
  CHECK(n == p.size());
  CHECK(weighted / static_cast<double>(n) == doctest::Approx(overall));
  // Empty bins are reported as absent, never as zero.
  CHECK_FALSE(fine.absent.empty());
  CHECK(fine.bins.size() + fine.absent.size() == illuminance::default_bin_edges(10).size() - 1);

  auto partial = binned_metric(p, {10, 50}, false);
  CHECK(partial.out_of_range == 5);
}

TEST_CASE("gap orientation for Hamming distance") {
  std::vector<Prediction> p;
  for (double y : {10.0, 80.0}) {
    Prediction x;
    x.clip_y = y;
    x.labels = row({1, 0});
    x.probabilities = y < 40 ? row({0.1, 0.9}) : row({0.9, 0.1});
    x.logits = x.probabilities;
    p.push_back(x);
  }
  auto g = day2dark_gap(p, 40, true);
  CHECK(g.lower_is_better);
  CHECK(g.dark == 1.0);
  CHECK(g.day == 0.0);
  CHECK(g.gap == 1.0);
}

TEST_CASE("activation profile of a constant encoder is flat") {
  ConstantEncoder enc;
  toybench::BenchConfig b;
  b.n_classes = 2;
  b.geometry = {2, 8, 8};
  b.dark_y_min = 20;
  std::vector<Clip> clips;
  for (int i = 0; i < 6; ++i) clips.push_back(toybench::generate_clip(b, i % 2, i < 3 ? 25.0 : 100.0, 10 + i));
  auto prof = channel_activation_profile(enc, clips, {0, 40, 80, 160}, 6, 3);
  REQUIRE(prof.classes.size() == 2);
  for (const auto& cp : prof.classes) {
    CHECK(cp.channels.size() == 6);
    std::vector<int> sorted = cp.channels;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4, 5});
    CHECK(std::isnan(cp.mean(1, 0)));  // no clip in [40, 80)
    CHECK(cp.counts[1] == 0);
    for (Eigen::Index bin : {0, 2})
      for (Eigen::Index j = 0; j < 6; ++j) CHECK(cp.mean(bin, j) == 0.25);
  }
  CHECK_THROWS_AS(channel_activation_profile(enc, clips, {0, 40}, 7, 3), InvalidInput);
}

TEST_CASE("evaluate, emit and plot") {
  d2d::testing::TempDir dir("report");
  toybench::BenchConfig b;
  b.n_classes = 3;
  b.geometry = {4, 16, 16};
  std::vector<Clip> test;
  for (int i = 0; i < 9; ++i) test.push_back(toybench::generate_clip(b, i % 3, i < 3 ? 20.0 : i < 6 ? 60.0 : 90.0, 50 + i));
  recognizer::Recognizer model(d2d::testing::tiny_config());
  const auto before = model.params().hash();
  auto report = evaluate(model, test, {0, 40, 80, 120}, 4, 2);
  CHECK(model.params().hash() == before);
  CHECK(report.count == 9);
  CHECK(report.metric_name == "top1_accuracy");
  std::size_t n = 0;
  for (const auto& bin : report.curve.bins) n += bin.count;
  CHECK(n == 9);
  CHECK(report.curve.bins.size() == 3);

  emit_report(report, dir.path / "a");
  emit_report(report, dir.path / "b");
  const auto curve = io::read_text(dir.path / "a" / "curve.csv");
  CHECK(curve == io::read_text(dir.path / "b" / "curve.csv"));
  CHECK(std::count(curve.begin(), curve.end(), '\n') == 4);
  CHECK(io::read_text(dir.path / "a" / "profile_class0.csv") == io::read_text(dir.path / "b" / "profile_class0.csv"));
  const auto kv = io::read_key_values(dir.path / "a" / "report.txt");
  CHECK(kv.at("count") == "9");
  CHECK(kv.count("day2dark_gap") == 1);

  int w = 0, h = 0;
  CHECK(valid_png(dir.path / "a" / "curve.png", &w, &h));
  CHECK(w > 100);
  CHECK(h > 100);
  CHECK(valid_png(dir.path / "a" / "activation_class0.png"));

  auto plots = render_plots(dir.path / "a");
  CHECK(plots.size() == 4);

  io::write_text(dir.path / "file", "x");
  CHECK_THROWS_AS(emit_report(report, dir.path / "file" / "sub"), IoError);
}

TEST_CASE("png writer produces a decodable image") {
  d2d::testing::TempDir dir("png");
  Image img(7, 5);
  img.line(0, 0, 6, 4, 255, 0, 0);
  img.rect(1, 1, 3, 3, 0, 0, 255);
  write_png(img, dir.path / "x.png");
  int w = 0, h = 0;
  CHECK(valid_png(dir.path / "x.png", &w, &h));
  CHECK(w == 7);
  CHECK(h == 5);
}
