#include "helpers.hpp"

#include "d2d/illuminance.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>

using namespace d2d;
using namespace d2d::illuminance;

namespace {

std::vector<float> uniform_frame(int h, int w, float r, float g, float b) {
  std::vector<float> px;
  for (int i = 0; i < h * w; ++i) px.insert(px.end(), {r, g, b});
  return px;
}

double scalar_oracle(const std::vector<float>& px, int h, int w) {
  double acc = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t o = (static_cast<std::size_t>(y) * w + x) * 3;
      acc += 0.299 * px[o] + 0.587 * px[o + 1] + 0.144 * px[o + 2];
    }
  return acc / (h * w);
}

Clip clip_from_frames(const std::vector<std::vector<float>>& frames, int h, int w) {
  Clip c;
  c.id = "c";
  c.frames_t = static_cast<int>(frames.size());
  c.height = h;
  c.width = w;
  for (const auto& f : frames) c.frames.insert(c.frames.end(), f.begin(), f.end());
  return c;
}

}  // namespace

TEST_CASE("frame illuminance examples") {
  auto zero = uniform_frame(2, 2, 0, 0, 0);
  CHECK(frame_illuminance({2, 2, zero}) == 0.0);

  auto grey = uniform_frame(4, 4, 100, 100, 100);
  CHECK(frame_illuminance({4, 4, grey}) == doctest::Approx(103.0).epsilon(1e-12));

  Rng rng(3);
  std::vector<float> px(3 * 2 * 3);
  for (auto& v : px) v = static_cast<float>(rng.index(256));
  CHECK(frame_illuminance({3, 2, px}) == doctest::Approx(scalar_oracle(px, 3, 2)).epsilon(1e-12));
}

TEST_CASE("frame illuminance rejects empty and out-of-range frames") {
  std::vector<float> none;
  CHECK_THROWS_AS(frame_illuminance({0, 0, none}), InvalidInput);
  auto bad = uniform_frame(1, 1, 256, 0, 0);
  CHECK_THROWS_AS(frame_illuminance({1, 1, bad}), InvalidInput);
}

TEST_CASE("coefficients are configurable") {
  auto px = uniform_frame(1, 1, 0, 0, 100);
  CHECK(frame_illuminance({1, 1, px}) == doctest::Approx(14.4));
  CHECK(frame_illuminance({1, 1, px}, kRec601Coefficients) == doctest::Approx(11.4));
  CHECK(kMaxLuma == doctest::Approx(1.03 * 255));
}

TEST_CASE("frame illuminance is permutation invariant and homogeneous") {
  Rng rng(11);
  const int h = 6, w = 5;
  std::vector<float> px(h * w * 3);
  for (auto& v : px) v = static_cast<float>(rng.index(256));
  const double y = frame_illuminance({h, w, px});

  std::vector<int> order(h * w);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order.begin(), order.end());
  std::vector<float> shuffled;
  for (int i : order) shuffled.insert(shuffled.end(), px.begin() + 3 * i, px.begin() + 3 * i + 3);
  CHECK(frame_illuminance({h, w, shuffled}) == doctest::Approx(y).epsilon(1e-12));

  for (double s : {0.0, 0.25, 0.5, 1.0}) {
    std::vector<float> scaled(px.size());
    for (std::size_t i = 0; i < px.size(); ++i) scaled[i] = static_cast<float>(px[i] * s);
    // Values like 0.25 * integer are exact in float.
    CHECK(std::abs(frame_illuminance({h, w, scaled}) - s * y) <= 1e-9 * std::max(1.0, y));
  }
}

TEST_CASE("clip illuminance averages frames") {
  // Y = 10 and Y = 30 grey frames (grey level v gives 1.03 v).
  auto f10 = uniform_frame(2, 2, 10 / 1.03f, 10 / 1.03f, 10 / 1.03f);
  auto f30 = uniform_frame(2, 2, 30 / 1.03f, 30 / 1.03f, 30 / 1.03f);
  auto rec = clip_illuminance(clip_from_frames({f10, f30}, 2, 2));
  REQUIRE(rec.per_frame.size() == 2);
  CHECK(rec.clip_y == doctest::Approx(20.0).epsilon(1e-6));

  // Y = 7.5 from red only: 7.5 / 0.299.
  auto single = uniform_frame(1, 1, static_cast<float>(7.5 / 0.299), 0, 0);
  CHECK(clip_illuminance(clip_from_frames({single}, 1, 1)).clip_y == doctest::Approx(7.5).epsilon(1e-6));

  Rng rng(5);
  Clip c = d2d::testing::random_clip(32, 8, 8, rng);
  auto r = clip_illuminance(c);
  double mean = 0.0;
  for (int t = 0; t < 32; ++t) {
    std::vector<float> px(c.frame(t).rgb.begin(), c.frame(t).rgb.end());
    mean += scalar_oracle(px, 8, 8);
  }
  mean /= 32;
  CHECK(std::abs(r.clip_y - mean) <= 1e-9 * mean);
  const double avg = std::accumulate(r.per_frame.begin(), r.per_frame.end(), 0.0) / 32;
  CHECK(r.clip_y == doctest::Approx(avg).epsilon(1e-12));
  for (double y : r.per_frame) CHECK((y >= 0 && y <= kMaxLuma));
}

TEST_CASE("clip illuminance errors and stride") {
  Clip empty;
  CHECK_THROWS_AS(clip_illuminance(empty), InvalidInput);
  Rng rng(6);
  Clip c = d2d::testing::random_clip(4, 2, 2, rng);
  auto strided = clip_illuminance(c, 2);
  CHECK(strided.per_frame.size() == 2);
}

TEST_CASE("partition uses Y <= t as dark") {
  std::vector<ClipLuma> recs{{"a", 10}, {"b", 40}, {"c", 41}};
  auto p = partition(recs, 40);
  CHECK(p.dark == std::vector<std::string>{"a", "b"});
  CHECK(p.day == std::vector<std::string>{"c"});

  auto e = partition(std::vector<ClipLuma>{}, 40);
  CHECK(e.day.empty());
  CHECK(e.dark.empty());

  std::vector<ClipLuma> bright{{"x", 50}, {"y", 90}};
  auto b = partition(bright, 40);
  CHECK(b.dark.empty());
  CHECK(b.day.size() == 2);
}

TEST_CASE("partition at t and t + eps differ only on (t, t + eps]") {
  Rng rng(8);
  std::vector<ClipLuma> recs;
  for (int i = 0; i < 500; ++i) recs.push_back({std::to_string(i), rng.uniform(0, 100)});
  recs.push_back({"edge", 42.0});
  const double t = 40, eps = 2.0;
  auto p0 = partition(recs, t);
  auto p1 = partition(recs, t + eps);
  std::vector<std::string> moved;
  for (const auto& id : p1.dark)
    if (std::find(p0.dark.begin(), p0.dark.end(), id) == p0.dark.end()) moved.push_back(id);
  std::size_t expected = 0;
  for (const auto& r : recs) expected += (r.y > t && r.y <= t + eps);
  CHECK(moved.size() == expected);
  CHECK(p1.dark.size() == p0.dark.size() + expected);
  for (const auto& id : moved) {
    auto it = std::find_if(recs.begin(), recs.end(), [&](const ClipLuma& r) { return r.id == id; });
    CHECK((it->y > t && it->y <= t + eps));
  }
}

TEST_CASE("histogram binning") {
  std::vector<ClipLuma> recs{{"a", 5}, {"b", 15}};
  std::vector<double> edges{0, 10, 20};
  auto h = illuminance_histogram(recs, edges);
  CHECK(h.counts == std::vector<std::size_t>{1, 1});
  CHECK(h.fractions[0] == doctest::Approx(0.5));
  CHECK(h.fractions[1] == doctest::Approx(0.5));

  std::vector<ClipLuma> one{{"a", 1}, {"b", 2}, {"c", 3}};
  auto h1 = illuminance_histogram(one, edges);
  CHECK(h1.fractions[0] == doctest::Approx(1.0));

  // Half-open: a clip at an interior edge belongs to the upper bin; the last
  // edge is out of range.
  std::vector<ClipLuma> edge{{"a", 10}, {"b", 20}, {"c", -1}};
  auto he = illuminance_histogram(edge, edges);
  CHECK(he.counts == std::vector<std::size_t>{0, 1});
  CHECK(he.above == 1);
  CHECK(he.below == 1);
}

TEST_CASE("histogram matches brute-force counting") {
  Rng rng(9);
  std::vector<ClipLuma> recs;
  for (int i = 0; i < 1000; ++i) recs.push_back({std::to_string(i), rng.uniform(-5, 270)});
  auto edges = default_bin_edges(10.0);
  auto h = illuminance_histogram(recs, edges);
  std::vector<std::size_t> brute(edges.size() - 1, 0);
  std::size_t out = 0;
  for (const auto& r : recs) {
    bool placed = false;
    for (std::size_t i = 0; i + 1 < edges.size(); ++i)
      if (r.y >= edges[i] && r.y < edges[i + 1]) {
        ++brute[i];
        placed = true;
      }
    out += !placed;
  }
  CHECK(h.counts == brute);
  CHECK(h.below + h.above == out);
  CHECK(h.total == 1000);
}

TEST_CASE("histogram rejects bad edges") {
  std::vector<ClipLuma> recs{{"a", 5}};
  CHECK_THROWS_AS(illuminance_histogram(recs, std::vector<double>{0, 10, 10}), InvalidInput);
  CHECK_THROWS_AS(illuminance_histogram(recs, std::vector<double>{5}), InvalidInput);
  CHECK_THROWS_AS(illuminance_histogram(recs, std::vector<double>{10, 0}), InvalidInput);
}
