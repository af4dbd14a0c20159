#include "helpers.hpp"

#include "d2d/io.hpp"
#include "d2d/recognizer.hpp"

#include <doctest.h>

#include <cmath>

using namespace d2d;
using namespace d2d::recognizer;
using d2d::testing::gradient_error;
using d2d::testing::random_mat;
using d2d::testing::tiny_config;

namespace {

// --- independent forward oracle ---------------------------------------------

Mat o_linear(const ParamStore& s, const std::string& n, const Mat& x) {
  Mat y = x * s.get(n + ".w").value;
  if (s.contains(n + ".b")) y.rowwise() += s.get(n + ".b").value.row(0);
  return y;
}

Mat o_ln(const ParamStore& s, const std::string& n, const Mat& x) {
  const Mat& g = s.get(n + ".gamma").value;
  const Mat& b = s.get(n + ".beta").value;
  Mat y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mu = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) mu += x(r, c);
    mu /= static_cast<double>(x.cols());
    double var = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) var += (x(r, c) - mu) * (x(r, c) - mu);
    var /= static_cast<double>(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) y(r, c) = (x(r, c) - mu) / std::sqrt(var + 1e-5) * g(0, c) + b(0, c);
  }
  return y;
}

Mat o_softmax(Mat m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    double z = 0.0;
    for (Eigen::Index c = 0; c < m.cols(); ++c) z += (m(r, c) = std::exp(m(r, c) - mx));
    m.row(r) /= z;
  }
  return m;
}

Mat o_attention(const Mat& qkv, int heads) {
  const Eigen::Index d = qkv.cols() / 3, dh = d / heads;
  Mat out(qkv.rows(), d);
  for (int h = 0; h < heads; ++h) {
    Mat q = qkv.middleCols(h * dh, dh), k = qkv.middleCols(d + h * dh, dh), v = qkv.middleCols(2 * d + h * dh, dh);
    Mat p = o_softmax(q * k.transpose() / std::sqrt(static_cast<double>(dh)));
    out.middleCols(h * dh, dh) = p * v;
  }
  return out;
}

Mat o_transformer(const ParamStore& s, const std::string& n, int layers, int heads, Mat x) {
  for (int i = 0; i < layers; ++i) {
    const std::string b = n + ".block" + std::to_string(i);
    x = x + o_linear(s, b + ".proj", o_attention(o_linear(s, b + ".qkv", o_ln(s, b + ".ln1", x)), heads));
    Mat h = o_linear(s, b + ".fc1", o_ln(s, b + ".ln2", x));
    h = h.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); });
    x = x + o_linear(s, b + ".fc2", h);
  }
  return o_ln(s, n + ".norm", x);
}

void randomize(ParamStore& s, const std::string& prefix, Rng& rng, double scale = 0.5) {
  for (auto* p : s.with_prefix(prefix))
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = rng.uniform(-scale, scale);
}

Clip clip_for(const RecognizerConfig& c, std::uint64_t seed, double clip_y) {
  Rng rng(seed);
  Clip clip = d2d::testing::random_clip(c.visual.frames, c.visual.height, c.visual.width, rng);
  clip.clip_y = clip_y;
  return clip;
}

}  // namespace

TEST_CASE("config validation") {
  auto c = tiny_config();
  CHECK_NOTHROW(c.validate());
  c.prompt_tokens = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.d_in = 9;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.branches = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.visual.height = 12;
  CHECK_THROWS_AS(c.validate(), ShapeError);
}

TEST_CASE("config json round trip and fingerprint") {
  auto c = tiny_config(3, 8);
  c.adaptive_prompts = false;
  auto back = RecognizerConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.fingerprint() == c.fingerprint());
  auto seeded = c;
  seeded.init_seed = 99;
  CHECK(seeded.fingerprint() == c.fingerprint());
  auto wider = c;
  wider.branches = 4;
  CHECK(wider.fingerprint() != c.fingerprint());
}

TEST_CASE("zero-initialised probe head gives uniform beta") {
  Recognizer m(tiny_config(4));
  Clip clip = clip_for(m.config(), 1, 10);
  Var beta = m.darkness_probe(m.encode_visual(clip).tokens);
  REQUIRE(beta.cols() == 4);
  for (int k = 0; k < 4; ++k) CHECK(beta.value()(0, k) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("probe beta matches an independent forward recomputation") {
  Recognizer m(tiny_config(3));
  Rng rng(2);
  randomize(m.params(), "probe.head", rng);
  Clip clip = clip_for(m.config(), 3, 10);
  Var f = m.encode_visual(clip).tokens;
  Var b1 = m.darkness_probe(f);
  Var b2 = m.darkness_probe(f);
  CHECK(b1.value() == b2.value());
  CHECK(b1.value().sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((b1.value().array() >= 0).all());

  const auto& s = m.params();
  Mat h = o_linear(s, "probe.in", f.value()) + s.get("probe.pos").value;
  h = o_transformer(s, "probe", m.config().probe_layers, m.config().heads, h);
  Mat pooled = h.colwise().mean();
  Mat beta = o_softmax(o_linear(s, "probe.head", pooled));
  CHECK((beta - b1.value()).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("adaptive encode is the beta-weighted sum of projections") {
  Recognizer m(tiny_config(2));
  Rng rng(4);
  Mat f = random_mat(m.visual_tokens(), m.config().visual.d_v, rng);
  const Mat& e0 = m.params().get("dark.proj.0").value;
  const Mat& e1 = m.params().get("dark.proj.1").value;

  Mat oh(1, 2);
  oh << 0.0, 1.0;
  CHECK(m.adaptive_encode(Var::constant(f), Var::constant(oh)).value() == f * e1);

  Mat b(1, 2);
  b << 0.3, 0.7;
  Mat v = m.adaptive_encode(Var::constant(f), Var::constant(b)).value();
  Mat expected = 0.3 * (f * e0) + 0.7 * (f * e1);
  CHECK((v - expected).cwiseAbs().maxCoeff() < 1e-12);

  m.params().get("dark.proj.1").value = e0;
  Mat v1 = m.adaptive_encode(Var::constant(f), Var::constant(b)).value();
  Mat v2 = m.adaptive_encode(Var::constant(f), Var::constant(oh)).value();
  CHECK((v1 - v2).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("generated prompt is the beta-weighted sum of prompts") {
  Recognizer m(tiny_config(2));
  const Mat& o0 = m.params().get("dark.prompt.0").value;
  const Mat& o1 = m.params().get("dark.prompt.1").value;
  Mat oh(1, 2);
  oh << 1.0, 0.0;
  CHECK(m.generate_prompt(Var::constant(oh)).value() == o0);
  Mat half(1, 2);
  half << 0.5, 0.5;
  CHECK((m.generate_prompt(Var::constant(half)).value() - 0.5 * (o0 + o1)).cwiseAbs().maxCoeff() < 1e-15);

  Recognizer m3(tiny_config(3));
  Rng rng(5);
  Mat b = o_softmax(random_mat(1, 3, rng));
  Mat o = m3.generate_prompt(Var::constant(b)).value();
  for (Eigen::Index r = 0; r < o.rows(); ++r)
    for (Eigen::Index c = 0; c < o.cols(); ++c) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += b(0, k) * m3.params().get("dark.prompt." + std::to_string(k)).value(r, c);
      CHECK(o(r, c) == doctest::Approx(s).epsilon(1e-12));
    }
}

TEST_CASE("fuse keeps sequence bookkeeping and matches a per-layer oracle") {
  Recognizer m(tiny_config(2));
  Rng rng(6);
  const int d = m.config().d_in;
  Mat v = random_mat(m.visual_tokens(), d, rng);
  Mat a = random_mat(m.audio_tokens(), d, rng);
  Mat o = random_mat(m.config().prompt_tokens, d, rng);
  Mat out = m.fuse(Var::constant(v), Var::constant(a), Var::constant(o)).value();
  CHECK(out.rows() == m.visual_tokens() + m.audio_tokens() + m.config().prompt_tokens);
  CHECK(m.sequence_length() == out.rows());

  const auto& s = m.params();
  Mat x(out.rows(), d);
  x << v, a, o;
  x += s.get("fusion.pos").value;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const int seg = r < m.visual_tokens() ? 0 : r < m.visual_tokens() + m.audio_tokens() ? 1 : 2;
    x.row(r) += s.get("fusion.segment").value.row(seg);
  }
  Mat ref = o_transformer(s, "fusion", m.config().fusion_layers, m.config().heads, x);
  CHECK((ref - out).cwiseAbs().maxCoeff() < 1e-6);

  // Permuting audio tokens leaves the length alone.
  Mat ap = a.colwise().reverse();
  CHECK(m.fuse(Var::constant(v), Var::constant(ap), Var::constant(o)).rows() == out.rows());

  CHECK_THROWS_AS(m.fuse(Var::constant(random_mat(m.visual_tokens(), d + 1, rng)), Var::constant(a), Var::constant(o)),
                  ShapeError);
}

TEST_CASE("sequence length for the reference layout") {
  RecognizerConfig c = tiny_config();
  c.visual.frames = 8;
  c.visual.height = 32;
  c.visual.width = 32;
  c.visual.patch_t = 2;
  c.visual.patch_h = 8;
  c.visual.patch_w = 8;
  c.audio.spectrogram.bands = 64;
  c.audio.band_groups = 4;
  c.audio.time_chunks = 4;
  c.prompt_tokens = 10;
  Recognizer m(c);
  CHECK(m.visual_tokens() == 64);
  CHECK(m.audio_tokens() == 16);
  CHECK(m.sequence_length() == 90);
}

TEST_CASE("classification is a convex combination of branch logits") {
  Recognizer m(tiny_config(3));
  Rng rng(7);
  randomize(m.params(), "probe.head", rng, 2.0);
  for (int i = 0; i < 20; ++i) {
    Clip clip = clip_for(m.config(), 100 + i, 5.0 + i);
    auto out = m.forward(clip);
    REQUIRE(out.path == Path::kDark);
    REQUIRE(out.branch_logits.size() == 3);
    for (int c = 0; c < m.config().n_classes; ++c) {
      double lo = 1e300, hi = -1e300;
      for (const auto& y : out.branch_logits) {
        lo = std::min(lo, y.value()(0, c));
        hi = std::max(hi, y.value()(0, c));
      }
      CHECK(out.logits.value()(0, c) >= lo - 1e-12);
      CHECK(out.logits.value()(0, c) <= hi + 1e-12);
    }
  }
}

TEST_CASE("one-hot beta selects a branch exactly") {
  Recognizer m(tiny_config(3));
  Rng rng(8);
  Mat fused = random_mat(m.sequence_length(), m.config().d_in, rng);
  Mat oh = Mat::Zero(1, 3);
  oh(0, 2) = 1.0;
  std::vector<Var> ys;
  Var y = m.classify(Var::constant(fused), Var::constant(oh), &ys);
  CHECK(y.value() == ys[2].value());
}

TEST_CASE("identical branches make beta irrelevant") {
  Recognizer m(tiny_config(3));
  auto& s = m.params();
  for (int k = 1; k < 3; ++k) {
    const std::string n = std::to_string(k);
    s.get("dark.proj." + n).value = s.get("dark.proj.0").value;
    s.get("dark.prompt." + n).value = s.get("dark.prompt.0").value;
    s.get("dark.cls." + n + ".w").value = s.get("dark.cls.0.w").value;
    s.get("dark.cls." + n + ".b").value = s.get("dark.cls.0.b").value;
  }
  Rng rng(9);
  Mat fused = random_mat(m.sequence_length(), m.config().d_in, rng);
  std::vector<Var> ys;
  Mat b = o_softmax(random_mat(1, 3, rng));
  Var y = m.classify(Var::constant(fused), Var::constant(b), &ys);
  CHECK((y.value() - ys[0].value()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("routing by illuminance") {
  Recognizer m(tiny_config(2));
  CHECK(m.forward(clip_for(m.config(), 1, 50)).path == Path::kDay);
  CHECK(m.forward(clip_for(m.config(), 1, 40)).path == Path::kDark);
  CHECK(m.forward(clip_for(m.config(), 1, 41), Route::kForceDark).path == Path::kDark);
  auto day = m.forward(clip_for(m.config(), 1, 90));
  CHECK(day.beta.value()(0, 0) == 1.0);
  CHECK(day.beta.value().sum() == 1.0);
  CHECK(day.pseudo.cols() == m.config().pseudo_dim);
  CHECK(m.forward(clip_for(m.config(), 1, 10)).pseudo.cols() == m.config().pseudo_dim);
}

TEST_CASE("K = 1 with a tied day branch: dark path equals day path") {
  auto c = tiny_config(1);
  c.tie_day_branch = true;
  Recognizer m(c);
  Clip clip = clip_for(c, 3, 30);
  auto dark = m.forward(clip, Route::kForceDark);
  auto day = m.forward(clip, Route::kForceDay);
  CHECK(dark.logits.value() == day.logits.value());
}

TEST_CASE("feature cache gives the same output as a plain forward") {
  Recognizer m(tiny_config(2));
  Clip clip = clip_for(m.config(), 4, 12);
  FeatureCache cache;
  auto a = m.forward(clip, Route::kByIlluminance, cache, clip.id);
  auto b = m.forward(clip, Route::kByIlluminance, cache, clip.id);
  auto c = m.forward(clip);
  CHECK(cache.audio_cells.size() == 1);
  CHECK(a.logits.value() == c.logits.value());
  CHECK(b.logits.value() == c.logits.value());
}

TEST_CASE("component toggles shape the parameter set") {
  auto c = tiny_config(3);
  c.adaptive_encoder = c.adaptive_prompts = c.adaptive_classifier = false;
  Recognizer vanilla(c);
  CHECK_FALSE(vanilla.params().contains("probe.head.w"));
  CHECK_FALSE(vanilla.params().contains("dark.proj.0"));
  auto out = vanilla.forward(clip_for(c, 1, 10));
  CHECK(out.path == Path::kDark);
  CHECK(out.branch_logits.empty());
  CHECK(out.logits.value() == vanilla.forward(clip_for(c, 1, 10), Route::kForceDay).logits.value());

  auto p = tiny_config(3);
  p.adaptive_classifier = false;
  Recognizer partial(p);
  auto names = partial.dark_path_parameters(true);
  CHECK(std::find(names.begin(), names.end(), "day.cls.w") != names.end());
  CHECK(std::find(names.begin(), names.end(), "dark.proj.2") != names.end());
  CHECK(std::find(names.begin(), names.end(), "probe.head.w") != names.end());
  for (const auto& n : names) CHECK(n.rfind("fusion", 0) != 0);
}

TEST_CASE("gradients of the adaptive components match finite differences") {
  Recognizer m(tiny_config(2, 8));
  Rng rng(10);
  randomize(m.params(), "probe.head", rng, 1.0);
  Clip clip = clip_for(m.config(), 11, 15);
  Mat f = m.encode_visual(clip).tokens.value();
  Mat a = m.encode_audio(clip).value();
  Mat target = random_mat(1, m.config().pseudo_dim, rng);
  auto loss = [&] {
    auto out = m.forward_features(Var::constant(f), Var::constant(a), clip.clip_y);
    return ops::add(ops::cross_entropy(out.logits, 1), ops::scale(ops::sum(ops::tanh(out.pseudo)), 0.1));
  };
  for (const char* name : {"probe.head.w", "probe.head.b", "probe.in.w", "dark.prompt.0", "dark.prompt.1",
                           "dark.proj.0", "dark.proj.1", "dark.cls.1.w"}) {
    CAPTURE(name);
    CHECK(gradient_error(m.params().get(name), loss) < 1e-4);
  }
  (void)target;
}

TEST_CASE("checkpoints round trip and reject mismatched configs") {
  d2d::testing::TempDir dir("ckpt");
  Recognizer m(tiny_config(2));
  Rng rng(12);
  randomize(m.params(), "probe.head", rng);
  auto ck = snapshot(m, "stage1", 3, {{"probe.head.w", Mat::Ones(2, 2)}});
  save_checkpoint(ck, dir.path / "a.ckpt");
  auto back = load_checkpoint(dir.path / "a.ckpt", m.config().fingerprint());
  CHECK(back.stage == "stage1");
  CHECK(back.epoch == 3);
  CHECK(back.optimizer.at("probe.head.w") == Mat::Ones(2, 2));
  auto m2 = model_from_checkpoint(back);
  CHECK(m2->params().hash() == m.params().hash());

  CHECK_THROWS_AS(load_checkpoint(dir.path / "a.ckpt", m.config().fingerprint() + 1), LoadError);
  Recognizer other(tiny_config(3));
  CHECK_THROWS_AS(restore(other, back), LoadError);
  io::write_text(dir.path / "bad.ckpt", "garbage");
  CHECK_THROWS_AS(load_checkpoint(dir.path / "bad.ckpt"), LoadError);
}

TEST_CASE("initialisation is per component, so toggles share weights") {
  auto full = tiny_config(2);
  auto noprompt = full;
  noprompt.adaptive_prompts = false;
  Recognizer a(full), b(noprompt);
  CHECK(a.params().get("dark.proj.1").value == b.params().get("dark.proj.1").value);
  CHECK(a.params().hash("fusion.") == b.params().hash("fusion."));
}
