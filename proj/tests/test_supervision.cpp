#include "helpers.hpp"

#include "d2d/recognizer.hpp"
#include "d2d/supervision.hpp"
#include "d2d/toybench.hpp"

#include <doctest.h>

#include <cmath>

using namespace d2d;
using namespace d2d::supervision;

namespace {

toybench::BenchConfig bench() {
  toybench::BenchConfig c;
  c.n_classes = 4;
  c.geometry = {4, 16, 16};
  return c;
}

std::vector<Clip> dark_pool(int n, std::uint64_t seed = 1) {
  std::vector<Clip> pool;
  for (int i = 0; i < n; ++i) {
    Clip c = toybench::generate_distractor_clip(bench(), 15.0 + i % 20, derive_seed(seed, static_cast<std::uint64_t>(i)));
    c.id = "pool_" + std::to_string(i);
    pool.push_back(std::move(c));
  }
  return pool;
}

// Teacher whose output width depends on the clip, to provoke drift errors.
class DriftingTeacher final : public Teacher {
 public:
  std::string name() const override { return "drift"; }
  int dim() const override { return 3; }
  RowVec predict(const Clip& clip) const override { return RowVec::Zero(clip.id == "pool_1" ? 4 : 3); }
  std::uint64_t fingerprint() const override { return 1; }
};


}  // namespace

TEST_CASE("auxiliary predictions concatenate teacher outputs") {
  auto pool = dark_pool(2);
  auto teachers = default_teachers(3);
  REQUIRE(teachers.size() == 2);
  auto one = collect_auxiliary_predictions(pool[0], {teachers[0]});
  CHECK(one.concat().size() == 32);
  auto both = collect_auxiliary_predictions(pool[0], teachers);
  CHECK(both.dims() == std::vector<int>{32, 49});
  CHECK(both.concat().size() == 81);
  CHECK(collect_auxiliary_predictions(pool[0], teachers).concat() == both.concat());
  CHECK(both.concat().allFinite());
  CHECK_THROWS_AS(collect_auxiliary_predictions(pool[0], {}), InvalidInput);
}

TEST_CASE("teacher dimension drift is a consistency error") {
  auto pool = dark_pool(3);
  std::vector<std::shared_ptr<const Teacher>> t{std::make_shared<DriftingTeacher>()};
  CHECK_THROWS_AS(collect_pool_predictions(pool, t), ConsistencyError);
  CHECK_THROWS_AS(collect_auxiliary_predictions(pool[1], t), ConsistencyError);
}

TEST_CASE("teacher fingerprints depend on the seed") {
  CHECK(teachers_fingerprint(default_teachers(1)) == teachers_fingerprint(default_teachers(1)));
  CHECK(teachers_fingerprint(default_teachers(1)) != teachers_fingerprint(default_teachers(2)));
}

TEST_CASE("autoencoder reconstructs a constant pool") {
  Mat pool = Mat::Constant(16, 10, 0.7);
  AutoencoderConfig cfg;
  cfg.epochs = 50;
  auto ae = train_autoencoder(pool, cfg);
  CHECK(reconstruction_l1(*ae, pool) < 1e-2);
  CHECK(ae->encode(pool).cols() == 64);
  CHECK(ae->reconstruct(pool).cols() == 10);
}

TEST_CASE("autoencoder beats the mean predictor on teacher outputs") {
  auto pool = dark_pool(40);
  Mat p = collect_pool_predictions(pool, default_teachers(5));
  AutoencoderConfig cfg;
  cfg.epochs = 100;
  AutoencoderReport report;
  auto ae = train_autoencoder(p, cfg, &report);
  CHECK(report.epoch_loss.size() == 100);
  CHECK(report.epoch_loss.back() < report.epoch_loss.front());
  CHECK(reconstruction_l1(*ae, p) < mean_predictor_l1(p));
  // Deterministic given the seed.
  auto again = train_autoencoder(p, cfg);
  CHECK(again->fingerprint() == ae->fingerprint());
}

TEST_CASE("autoencoder input validation") {
  AutoencoderConfig cfg;
  CHECK_THROWS_AS(train_autoencoder(Mat(0, 5), cfg), InvalidInput);
  cfg.epochs = 1;
  auto ae = train_autoencoder(Mat::Ones(4, 5), cfg);
  CHECK_THROWS_AS(ae->encode(Mat::Ones(1, 6)), ShapeError);
  CHECK_THROWS_AS(pseudo_label(*ae, RowVec::Ones(3)), ShapeError);
}

TEST_CASE("pseudo labels are deterministic 64-vectors matching a manual encoder pass") {
  Rng rng(4);
  Mat pool = d2d::testing::random_mat(20, 12, rng);
  AutoencoderConfig cfg;
  cfg.epochs = 5;
  auto ae = train_autoencoder(pool, cfg);
  RowVec p = pool.row(3);
  RowVec q1 = pseudo_label(*ae, p);
  CHECK(q1.size() == 64);
  CHECK(pseudo_label(*ae, p) == q1);

  RowVec h = (p - ae->mean()).array() / ae->scale().array();
  const auto& layers = ae->encoder_layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    RowVec next = h * layers[i].w->value;
    if (layers[i].b) next += layers[i].b->value.row(0);
    if (i + 1 < layers.size()) next = next.cwiseMax(0.0);
    h = next;
  }
  CHECK((h - q1).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("pseudo-target cache round trip and freshness") {
  d2d::testing::TempDir dir("psl");
  auto pool = dark_pool(6);
  auto teachers = default_teachers(2);
  AutoencoderConfig cfg;
  cfg.epochs = 3;
  auto ae = train_autoencoder(collect_pool_predictions(pool, teachers), cfg);
  auto targets = compute_pseudo_targets(pool, teachers, ae.get(), TargetMode::kLatent);
  CHECK(targets.dim == 64);
  CHECK(targets.by_clip.size() == 6);
  for (const auto& [id, q] : targets.by_clip) CHECK(q.size() == 64);

  const auto file = dir.path / "targets.bin";
  save_pseudo_targets(targets, file);
  auto back = load_pseudo_targets(file);
  CHECK(back.by_clip == targets.by_clip);
  CHECK(back.autoencoder_fingerprint == ae->fingerprint());
  const auto tfp = teachers_fingerprint(teachers);
  CHECK(cache_is_fresh(file, tfp, ae->fingerprint(), TargetMode::kLatent, pool));
  CHECK_FALSE(cache_is_fresh(file, tfp + 1, ae->fingerprint(), TargetMode::kLatent, pool));
  CHECK_FALSE(cache_is_fresh(file, tfp, ae->fingerprint(), TargetMode::kRaw, pool));
  auto smaller = pool;
  smaller.pop_back();
  CHECK_FALSE(cache_is_fresh(file, tfp, ae->fingerprint(), TargetMode::kLatent, smaller));
  CHECK_FALSE(cache_is_fresh(dir.path / "missing", tfp, ae->fingerprint(), TargetMode::kLatent, pool));

  auto raw = compute_pseudo_targets(pool, teachers, nullptr, TargetMode::kRaw);
  CHECK(raw.dim == 81);
  CHECK_THROWS_AS(compute_pseudo_targets(pool, teachers, nullptr, TargetMode::kLatent), PreconditionError);
}

TEST_CASE("stage-1 loss arithmetic") {
  CHECK(combine_losses(2.0, 10.0, 0.0, 0.01) == doctest::Approx(2.1));
  CHECK(combine_losses(2.0, 10.0, 1.5, 0.01) == doctest::Approx(3.6));

  Mat z(1, 3);
  z << 0.2, -1.0, 0.5;
  Mat q(1, 4);
  q << 1, 2, 3, 4;
  RowVec target(4);
  target << 0, 2, 3, 1;  // L1 = 1 + 3 = 4
  std::vector<LabeledOutput> lab{{Var::constant(z), 2, {}}};
  std::vector<UnlabeledOutput> unl{{Var::constant(q), target}, {Var::constant(q), target}};
  const double ce = ops::cross_entropy(Var::constant(z), 2).item();

  auto zero = loss_stage1(lab, unl, 0.0);
  CHECK(zero.value() == ce);
  auto l = loss_stage1(lab, unl, 0.01);
  CHECK(l.l1_sum == doctest::Approx(8.0));
  CHECK(l.value() == doctest::Approx(ce + 0.08));

  std::vector<UnlabeledOutput> exact{{Var::constant(q), q.row(0)}};
  CHECK(loss_stage1(lab, exact, 0.5).weighted_u == 0.0);

  CHECK_THROWS_AS(loss_stage1(lab, unl, -0.1), InvalidInput);
  std::vector<UnlabeledOutput> bad{{Var::constant(q), RowVec::Zero(3)}};
  CHECK_THROWS_AS(loss_stage1(lab, bad, 0.01), InvalidInput);
  std::vector<LabeledOutput> unlabeled_sample{{Var::constant(z), -1, {}}};
  CHECK_THROWS_AS(loss_stage1(unlabeled_sample, {}, 0.01), InvalidInput);
}

TEST_CASE("stage-1 loss grows with the pseudo-label distance") {
  Mat z = Mat::Zero(1, 3);
  std::vector<LabeledOutput> lab{{Var::constant(z), 0, {}}};
  double prev = -1.0;
  for (double d : {0.0, 0.5, 1.0, 3.0}) {
    std::vector<UnlabeledOutput> u{{Var::constant(Mat::Constant(1, 4, d)), RowVec::Zero(4)}};
    const double v = loss_stage1(lab, u, 0.01).value();
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("end-to-end loss adds the mix term") {
  Mat z(1, 3);
  z << 0.1, 0.3, -0.2;
  std::vector<LabeledOutput> lab{{Var::constant(z), 1, {}}};
  std::vector<UnlabeledOutput> unl{{Var::constant(Mat::Ones(1, 2)), RowVec::Zero(2)}};
  std::vector<LabeledOutput> mix{{Var::constant(z), 0, {}}};
  const double s1 = loss_stage1(lab, unl, 0.01).value();
  CHECK(loss_end_to_end(lab, unl, {}, 0.01).value() == s1);
  auto e = loss_end_to_end(lab, {}, mix, 0.0);
  CHECK(e.value() == doctest::Approx(e.ce + e.mix));
  auto all = loss_end_to_end(lab, unl, mix, 0.01);
  CHECK(all.value() == doctest::Approx(all.ce + all.weighted_u + all.mix).epsilon(1e-12));
}

TEST_CASE("multi-label classification uses summed binary cross-entropy") {
  Mat z(1, 3);
  z << 0.5, -0.5, 2.0;
  RowVec y(3);
  y << 1, 0, 1;
  double expected = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-z(0, i)));
    expected -= y(i) * std::log(p) + (1 - y(i)) * std::log(1 - p);
  }
  CHECK(classification_loss({Var::constant(z), -1, y}).item() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("alpha sampler range and mean") {
  AlphaSampler s(9);
  double sum = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double a = s();
    REQUIRE(a >= 0.4);
    REQUIRE(a < 1.0);
    sum += a;
  }
  CHECK(std::abs(sum / 10000 - 0.7) < 0.01);
  CHECK_THROWS_AS(AlphaSampler(1, 0.5, 0.4), ConfigError);
}

TEST_CASE("day2dark mix") {
  auto cfg = bench();
  Clip day = toybench::generate_clip(cfg, 2, 120.0, 1);
  Clip dark = toybench::generate_distractor_clip(cfg, 20.0, 2);
  dark.id = "dark";

  Clip one = day2dark_mix(day, dark, 1.0);
  CHECK(one.frames == day.frames);
  CHECK(one.label == 2);

  Clip a = day;
  Clip b = day;
  std::fill(a.frames.begin(), a.frames.end(), 100.0f);
  std::fill(b.frames.begin(), b.frames.end(), 50.0f);
  CHECK(day2dark_mix(a, b, 0.5).frames[0] == 75.0f);

  for (double alpha : {0.4, 0.55, 0.93}) {
    Clip m = day2dark_mix(day, dark, alpha);
    CHECK(m.label == day.label);
    CHECK(m.audio == day.audio);
    for (std::size_t i = 0; i < m.frames.size(); ++i)
      REQUIRE(m.frames[i] == static_cast<float>(alpha * day.frames[i] + (1.0 - alpha) * dark.frames[i]));
  }
  Clip self = day2dark_mix(day, day, 0.63);
  for (std::size_t i = 0; i < self.frames.size(); ++i) REQUIRE(std::abs(self.frames[i] - day.frames[i]) < 1e-4f);

  Clip audio_mixed = day2dark_mix(day, dark, 0.5, true);
  CHECK(audio_mixed.audio != day.audio);

  CHECK_THROWS_AS(day2dark_mix(day, dark, 0.0), InvalidInput);
  CHECK_THROWS_AS(day2dark_mix(day, dark, 1.2), InvalidInput);
}

TEST_CASE("day2dark mix resamples mismatched geometry") {
  auto cfg = bench();
  Clip day = toybench::generate_clip(cfg, 0, 120.0, 1);
  auto small = cfg;
  small.geometry = {2, 8, 8};
  Clip dark = toybench::generate_distractor_clip(small, 20.0, 2);
  Clip m = day2dark_mix(day, dark, 0.7);
  CHECK(m.frames.size() == day.frames.size());
  CHECK(m.frames_t == day.frames_t);
}

TEST_CASE("filter keeps clips with confidence at most the threshold") {
  auto pool = dark_pool(5);
  std::map<std::string, double> conf{{"pool_0", 0.2}, {"pool_1", 0.6}, {"pool_2", 0.5}, {"pool_3", 0.51}, {"pool_4", 0.1}};
  auto kept = filter_unlabeled(pool, [&](const Clip& c) { return conf.at(c.id); }, 0.5);
  std::vector<std::string> ids;
  for (const auto& c : kept) ids.push_back(c.id);
  CHECK(ids == std::vector<std::string>{"pool_0", "pool_2", "pool_4"});

  auto low = filter_unlabeled(pool, [](const Clip&) { return 0.3; }, 0.5);
  CHECK(low.size() == pool.size());
  CHECK(filter_unlabeled({}, [](const Clip&) { return 0.9; }, 0.5).empty());
}

TEST_CASE("model-based filter uses the largest class probability") {
  auto c = d2d::testing::tiny_config(2);
  c.visual.height = c.visual.width = 16;
  recognizer::Recognizer m(c);
  auto pool = dark_pool(4);
  // Zero classifier heads: uniform probabilities of 1/3.
  for (auto* p : m.params().with_prefix("dark.cls.")) p->value.setZero();
  CHECK(filter_unlabeled(pool, m, 0.5).size() == 4);
  // A huge bias on class 0 makes every clip confident.
  m.params().get("dark.cls.0.b").value(0, 0) = 50.0;
  m.params().get("dark.cls.1.b").value(0, 0) = 50.0;
  CHECK(filter_unlabeled(pool, m, 0.5).empty());
}
