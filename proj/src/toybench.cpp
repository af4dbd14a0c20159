#include "d2d/toybench.hpp"

#include "d2d/illuminance.hpp"
#include "d2d/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

namespace d2d::toybench {

namespace {

using Rgb = std::array<double, 3>;

Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int i = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

// Scene radiance in [0, 1], laid out like Clip::frames.
struct Scene {
  int t, h, w;
  std::vector<double> rad;
  double& at(int f, int y, int x, int c) {
    return rad[((static_cast<std::size_t>(f) * h + y) * w + x) * 3 + static_cast<std::size_t>(c)];
  }
};

enum class Shape { kSquare, kDisk, kCross, kRing, kTriangle, kEllipse };

struct ObjectSpec {
  Shape shape;
  Rgb color;
  int stripe_period;
  bool stripe_vertical;
  double x0, y0, vx, vy, radius;
};

bool inside(Shape s, double dx, double dy, double r) {
  const double ax = std::abs(dx), ay = std::abs(dy);
  switch (s) {
    case Shape::kSquare: return ax <= r && ay <= r;
    case Shape::kDisk: return dx * dx + dy * dy <= r * r;
    case Shape::kCross: return (ax <= r / 3 && ay <= r) || (ay <= r / 3 && ax <= r);
    case Shape::kRing: {
      const double d2 = dx * dx + dy * dy;
      return d2 <= r * r && d2 >= 0.25 * r * r;
    }
    case Shape::kTriangle: return dy <= r && dy >= -r && ax <= (dy + r) * 0.5;
    case Shape::kEllipse: return dx * dx / (r * r) + dy * dy / (0.16 * r * r) <= 1.0;
  }
  return false;
}

double reflect(double p, double lo, double hi) {
  const double span = hi - lo;
  if (span <= 0) return lo;
  double u = std::fmod(p - lo, 2 * span);
  if (u < 0) u += 2 * span;
  return lo + (u <= span ? u : 2 * span - u);
}

Scene background(const FrameGeometry& g, Rng& rng) {
  Scene s{g.t, g.h, g.w, std::vector<double>(static_cast<std::size_t>(g.t) * g.h * g.w * 3)};
  const double base = rng.uniform(0.35, 0.55);
  const Rgb tint = {rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)};
  const double fx = rng.uniform(0.1, 0.3), fy = rng.uniform(0.1, 0.3);
  const double ph = rng.uniform(0, 2 * M_PI), amp = rng.uniform(0.03, 0.08);
  for (int f = 0; f < g.t; ++f)
    for (int y = 0; y < g.h; ++y)
      for (int x = 0; x < g.w; ++x) {
        const double tex = amp * std::sin(fx * x + fy * y + ph);
        for (int c = 0; c < 3; ++c) s.at(f, y, x, c) = std::clamp(base + tint[c] + tex, 0.0, 1.0);
      }
  return s;
}

void draw(Scene& s, const ObjectSpec& o) {
  const double m = o.radius;
  for (int f = 0; f < s.t; ++f) {
    const double cx = reflect(o.x0 + o.vx * f, m, s.w - 1 - m);
    const double cy = reflect(o.y0 + o.vy * f, m, s.h - 1 - m);
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - m))), x1 = std::min(s.w - 1, static_cast<int>(std::ceil(cx + m)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - m))), y1 = std::min(s.h - 1, static_cast<int>(std::ceil(cy + m)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        if (!inside(o.shape, x - cx, y - cy, m)) continue;
        const int coord = o.stripe_vertical ? x : y;
        const double k = ((coord / std::max(1, o.stripe_period)) % 2 == 0) ? 1.0 : 0.55;
        for (int c = 0; c < 3; ++c) s.at(f, y, x, c) = o.color[static_cast<std::size_t>(c)] * k;
      }
  }
}

ObjectSpec class_object(const BenchConfig& cfg, int c, Rng& rng) {
  const auto& g = cfg.geometry;
  ObjectSpec o;
  o.shape = static_cast<Shape>(c % 4);
  o.color = hsv_to_rgb(static_cast<double>(c) / cfg.n_classes, 0.85, 0.95);
  o.stripe_period = 2 + c % 3;
  o.stripe_vertical = (c / 4) % 2 == 1;
  o.radius = rng.uniform(0.17, 0.24) * std::min(g.h, g.w);
  const double ang = 2.0 * M_PI * (c + 0.5) / cfg.n_classes;
  const double speed = rng.uniform(0.9, 1.2) * 0.05 * std::min(g.h, g.w);
  o.vx = speed * std::cos(ang);
  o.vy = speed * std::sin(ang);
  o.x0 = rng.uniform(o.radius, g.w - 1 - o.radius);
  o.y0 = rng.uniform(o.radius, g.h - 1 - o.radius);
  return o;
}

ObjectSpec distractor_object(const BenchConfig& cfg, Rng& rng) {
  const auto& g = cfg.geometry;
  ObjectSpec o;
  o.shape = rng.uniform() < 0.5 ? Shape::kTriangle : Shape::kEllipse;
  const double grey = rng.uniform(0.2, 0.9);
  o.color = hsv_to_rgb(rng.uniform(), rng.uniform(0.0, 0.2), grey);
  o.stripe_period = 64;
  o.stripe_vertical = false;
  o.radius = rng.uniform(0.12, 0.3) * std::min(g.h, g.w);
  const double ang = rng.uniform(0, 2 * M_PI);
  const double speed = rng.uniform(0.0, 0.08) * std::min(g.h, g.w);
  o.vx = speed * std::cos(ang);
  o.vy = speed * std::sin(ang);
  o.x0 = rng.uniform(o.radius, g.w - 1 - o.radius);
  o.y0 = rng.uniform(o.radius, g.h - 1 - o.radius);
  return o;
}

std::size_t audio_samples(const BenchConfig& cfg) {
  return static_cast<std::size_t>(
      std::llround(static_cast<double>(cfg.sample_rate) * cfg.geometry.t / static_cast<double>(cfg.fps)));
}

void add_tone_group(std::vector<float>& a, const BenchConfig& cfg, int group, Rng& rng) {
  const double sr = cfg.sample_rate;
  const double f0 = (200.0 + 220.0 * group) * rng.uniform(0.98, 1.02);
  const double am_rate = 2.0 + group;
  const double amp = rng.uniform(0.2, 0.4);
  const double p1 = rng.uniform(0, 2 * M_PI), p2 = rng.uniform(0, 2 * M_PI), p3 = rng.uniform(0, 2 * M_PI),
               pa = rng.uniform(0, 2 * M_PI);
  const double weights[3] = {1.0, 0.5, 0.25};
  const double phases[3] = {p1, p2, p3};
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = static_cast<double>(i) / sr;
    double v = 0.0;
    for (int hmn = 0; hmn < 3; ++hmn) {
      const double f = f0 * (hmn + 1);
      if (f >= 0.5 * sr) break;
      v += weights[hmn] * std::sin(2 * M_PI * f * t + phases[hmn]);
    }
    const double env = 0.6 + 0.4 * std::sin(2 * M_PI * am_rate * t + pa);
    a[i] += static_cast<float>(amp * env * v);
  }
}

void add_noise(std::vector<float>& a, double sd, Rng& rng) {
  for (auto& v : a) v += static_cast<float>(rng.normal(0.0, sd));
}

void add_distractor_audio(std::vector<float>& a, const BenchConfig& cfg, Rng& rng) {
  const double sr = cfg.sample_rate;
  // A high tone above every class band plus a few noise bursts.
  const double f = rng.uniform(0.55, 0.85) * 0.5 * sr;
  const double amp = rng.uniform(0.05, 0.3);
  const double ph = rng.uniform(0, 2 * M_PI);
  for (std::size_t i = 0; i < a.size(); ++i)
    a[i] += static_cast<float>(amp * std::sin(2 * M_PI * f * static_cast<double>(i) / sr + ph));
  const int bursts = 1 + static_cast<int>(rng.index(3));
  for (int b = 0; b < bursts; ++b) {
    const std::size_t len = a.size() / 10;
    const std::size_t start = rng.index(a.size() - len);
    const double bamp = rng.uniform(0.05, 0.2);
    for (std::size_t i = 0; i < len; ++i) a[start + i] += static_cast<float>(rng.normal(0.0, bamp));
  }
}

struct Exposure {
  std::vector<double> noise;  // per sample, fixed across gain search
  bool lamp = false;
  int lamp_x = 0, lamp_y = 0, lamp_size = 0;
  bool dark = false;
};

void render(const Scene& s, const Exposure& e, double gain, double desat, std::vector<float>& out) {
  out.resize(s.rad.size());
  const std::size_t pixels = s.rad.size() / 3;
  for (std::size_t p = 0; p < pixels; ++p) {
    const double* r = &s.rad[3 * p];
    const double luma = 0.299 * r[0] + 0.587 * r[1] + 0.114 * r[2];
    for (int c = 0; c < 3; ++c) {
      const double v = (1.0 - desat) * r[c] + desat * luma;
      const double val = std::round(gain * v * 255.0 + e.noise[3 * p + static_cast<std::size_t>(c)]);
      out[3 * p + static_cast<std::size_t>(c)] = static_cast<float>(std::clamp(val, 0.0, 255.0));
    }
  }
  if (e.lamp) {
    static constexpr float kLamp[3] = {245.f, 225.f, 170.f};
    for (int f = 0; f < s.t; ++f)
      for (int y = e.lamp_y; y < std::min(s.h, e.lamp_y + e.lamp_size); ++y)
        for (int x = e.lamp_x; x < std::min(s.w, e.lamp_x + e.lamp_size); ++x)
          for (int c = 0; c < 3; ++c)
            out[((static_cast<std::size_t>(f) * s.h + y) * s.w + x) * 3 + static_cast<std::size_t>(c)] = kLamp[c];
  }
}

double volume_luma(const std::vector<float>& frames, const FrameGeometry& g) {
  const std::size_t fs = static_cast<std::size_t>(g.h) * g.w * 3;
  double acc = 0.0;
  for (int t = 0; t < g.t; ++t)
    acc += illuminance::frame_illuminance({g.h, g.w, std::span<const float>(frames).subspan(t * fs, fs)});
  return acc / g.t;
}

// Chooses the exposure gain that lands clip_Y on target and renders frames.
void expose(const BenchConfig& cfg, const Scene& scene, double target, Rng& rng, Clip& clip) {
  Exposure e;
  e.dark = target <= cfg.t;
  const double sd = cfg.noise_sigma + (e.dark ? cfg.dark_noise_sigma : 0.0);
  e.noise.resize(scene.rad.size());
  for (auto& n : e.noise) n = rng.normal(0.0, sd);
  if (e.dark && rng.uniform() < cfg.lamp_probability) {
    e.lamp = true;
    e.lamp_size = std::max(2, std::min(cfg.geometry.h, cfg.geometry.w) / 8);
    e.lamp_x = static_cast<int>(rng.index(static_cast<std::size_t>(cfg.geometry.w - e.lamp_size + 1)));
    e.lamp_y = static_cast<int>(rng.index(static_cast<std::size_t>(cfg.geometry.h - e.lamp_size + 1)));
  }
  const double desat = e.dark ? cfg.dark_desaturation : 0.0;

  std::vector<float> frames;
  double lo = 0.0, hi = 6.0;
  render(scene, e, lo, desat, frames);
  const double y_lo = volume_luma(frames, cfg.geometry);
  render(scene, e, hi, desat, frames);
  const double y_hi = volume_luma(frames, cfg.geometry);
  if (target < y_lo || target > y_hi) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "illuminance target %.3f unreachable; feasible range [%.3f, %.3f]", target,
                  y_lo, y_hi);
    throw GenerationError(buf);
  }
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    render(scene, e, mid, desat, frames);
    (volume_luma(frames, cfg.geometry) < target ? lo : hi) = mid;
  }
  render(scene, e, 0.5 * (lo + hi), desat, frames);
  clip.frames = std::move(frames);
  clip.frames_t = cfg.geometry.t;
  clip.height = cfg.geometry.h;
  clip.width = cfg.geometry.w;
  clip.clip_y = illuminance::clip_illuminance(clip).clip_y;
  if (std::abs(clip.clip_y - target) > 0.1 * target) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "could not land illuminance %.3f within 10%% (got %.3f)", target, clip.clip_y);
    throw GenerationError(buf);
  }
}

void check_target(double target) {
  if (!(target > 0.0) || target > illuminance::kMaxLuma) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "illuminance target %.3f outside feasible range (0, %.3f]", target,
                  illuminance::kMaxLuma);
    throw GenerationError(buf);
  }
}

std::string clip_name(const std::string& split, int index) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%05d", split.c_str(), index);
  return buf;
}

}  // namespace

void BenchConfig::validate() const {
  auto frac = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
  };
  frac(dark_fraction_train, "dark_fraction_train");
  frac(dark_fraction_test, "dark_fraction_test");
  frac(relevant_fraction, "relevant_fraction");
  frac(lamp_probability, "lamp_probability");
  frac(dark_desaturation, "dark_desaturation");
  if (n_classes < 1) throw ConfigError("n_classes must be >= 1");
  if (clips_per_class < 0 || val_per_class < 0 || test_per_class < 0 || unlabeled_pool_size < 0)
    throw ConfigError("clip counts must be >= 0");
  if (geometry.t < 1 || geometry.h < 4 || geometry.w < 4) throw ConfigError("frame geometry too small");
  if (fps < 1 || sample_rate < 1000) throw ConfigError("fps / sample_rate out of range");
  if (!(t > 0.0)) throw ConfigError("threshold t must be > 0");
  if (!(dark_y_min > 0 && dark_y_min < dark_y_max && dark_y_max <= t))
    throw ConfigError("dark illuminance range must satisfy 0 < min < max <= t");
  if (!(day_y_min > t && day_y_min < day_y_max)) throw ConfigError("day illuminance range must lie above t");
  if (audio_groups < 0 || audio_groups > n_classes) throw ConfigError("audio_groups must be in [0, n_classes]");
  if (noise_sigma < 0 || dark_noise_sigma < 0) throw ConfigError("noise sigmas must be >= 0");
}

int audio_group(const BenchConfig& config, int class_id) {
  return config.audio_groups == 0 ? class_id : class_id % config.audio_groups;
}

Clip generate_clip(const BenchConfig& config, int class_id, double illuminance_target, std::uint64_t seed) {
  if (class_id < 0 || class_id >= config.n_classes)
    throw InvalidInput("class_id " + std::to_string(class_id) + " outside [0, " + std::to_string(config.n_classes) + ")");
  check_target(illuminance_target);
  Rng rng(seed);
  Scene scene = background(config.geometry, rng);
  draw(scene, class_object(config, class_id, rng));
  Clip clip;
  clip.id = "clip_" + hex64(seed);
  clip.seed = seed;
  clip.label = class_id;
  clip.sample_rate = config.sample_rate;
  clip.audio.assign(audio_samples(config), 0.0f);
  Rng arng(derive_seed(seed, "audio"));
  add_tone_group(clip.audio, config, audio_group(config, class_id), arng);
  add_noise(clip.audio, 0.05, arng);
  Rng erng(derive_seed(seed, "exposure"));
  expose(config, scene, illuminance_target, erng, clip);
  return clip;
}

Clip generate_multilabel_clip(const BenchConfig& config, const std::vector<int>& active,
                              double illuminance_target, std::uint64_t seed) {
  if (active.empty()) throw InvalidInput("multi-label clip needs at least one active class");
  check_target(illuminance_target);
  Rng rng(seed);
  Scene scene = background(config.geometry, rng);
  Clip clip;
  clip.labels.assign(static_cast<std::size_t>(config.n_classes), 0);
  clip.audio.assign(audio_samples(config), 0.0f);
  Rng arng(derive_seed(seed, "audio"));
  for (int c : active) {
    if (c < 0 || c >= config.n_classes) throw InvalidInput("active class out of range");
    draw(scene, class_object(config, c, rng));
    clip.labels[static_cast<std::size_t>(c)] = 1;
    add_tone_group(clip.audio, config, audio_group(config, c), arng);
  }
  add_noise(clip.audio, 0.05, arng);
  clip.id = "clip_" + hex64(seed);
  clip.seed = seed;
  clip.sample_rate = config.sample_rate;
  Rng erng(derive_seed(seed, "exposure"));
  expose(config, scene, illuminance_target, erng, clip);
  return clip;
}

Clip generate_distractor_clip(const BenchConfig& config, double illuminance_target, std::uint64_t seed) {
  check_target(illuminance_target);
  Rng rng(seed);
  Scene scene = background(config.geometry, rng);
  const int objects = 1 + static_cast<int>(rng.index(2));
  for (int i = 0; i < objects; ++i) draw(scene, distractor_object(config, rng));
  Clip clip;
  clip.id = "clip_" + hex64(seed);
  clip.seed = seed;
  clip.sample_rate = config.sample_rate;
  clip.audio.assign(audio_samples(config), 0.0f);
  Rng arng(derive_seed(seed, "audio"));
  add_distractor_audio(clip.audio, config, arng);
  add_noise(clip.audio, 0.05, arng);
  Rng erng(derive_seed(seed, "exposure"));
  expose(config, scene, illuminance_target, erng, clip);
  return clip;
}

Clip darken(const Clip& clip, double factor, double noise_sigma, std::uint64_t seed) {
  if (!(factor > 0.0 && factor <= 1.0)) throw InvalidInput("darken: factor must lie in (0, 1]");
  if (noise_sigma < 0.0) throw InvalidInput("darken: noise_sigma must be >= 0");
  Clip out = clip;
  Rng rng(seed);
  for (auto& v : out.frames) {
    double x = static_cast<double>(v) * factor;
    if (noise_sigma > 0.0) x += rng.normal(0.0, noise_sigma);
    v = static_cast<float>(std::clamp(x, 0.0, 255.0));
  }
  out.clip_y = illuminance::clip_illuminance(out).clip_y;
  return out;
}

namespace {

std::vector<Clip> labeled_split(const BenchConfig& cfg, const std::string& split, int per_class,
                                double dark_fraction) {
  const int total = per_class * cfg.n_classes;
  const int n_dark = static_cast<int>(std::lround(dark_fraction * total));
  if (dark_fraction > 0.0 && n_dark == 0 && total > 0)
    throw ConfigError(split + ": " + std::to_string(total) + " clips cannot hold dark fraction " +
                      std::to_string(dark_fraction));
  std::vector<Clip> clips;
  clips.reserve(static_cast<std::size_t>(total));
  // Slot k = i * n_classes + c; the first n_dark slots are dark, which spreads
  // dark clips evenly over classes.
  for (int k = 0; k < total; ++k) {
    const int c = k % cfg.n_classes;
    const std::uint64_t seed = derive_seed(derive_seed(cfg.seed, split), static_cast<std::uint64_t>(k));
    Rng rng(derive_seed(seed, "target"));
    const bool dark = k < n_dark;
    const double target =
        dark ? rng.uniform(cfg.dark_y_min, cfg.dark_y_max) : rng.uniform(cfg.day_y_min, cfg.day_y_max);
    Clip clip;
    if (cfg.multi_label) {
      std::vector<int> active{c};
      const int extra = static_cast<int>(rng.index(3));
      while (static_cast<int>(active.size()) < std::min(1 + extra, cfg.n_classes)) {
        const int o = static_cast<int>(rng.index(static_cast<std::size_t>(cfg.n_classes)));
        if (std::find(active.begin(), active.end(), o) == active.end()) active.push_back(o);
      }
      clip = generate_multilabel_clip(cfg, active, target, seed);
    } else {
      clip = generate_clip(cfg, c, target, seed);
    }
    clip.id = clip_name(split, k);
    clips.push_back(std::move(clip));
  }
  return clips;
}

}  // namespace

DatasetSplit generate_dataset(const BenchConfig& config) {
  config.validate();
  DatasetSplit d;
  d.config = config;
  d.train = labeled_split(config, "train", config.clips_per_class, config.dark_fraction_train);
  d.val = labeled_split(config, "val", config.val_per_class, config.dark_fraction_train);
  d.test = labeled_split(config, "test", config.test_per_class, config.dark_fraction_test);
  const int relevant = static_cast<int>(std::lround(config.relevant_fraction * config.unlabeled_pool_size));
  for (int j = 0; j < config.unlabeled_pool_size; ++j) {
    const std::uint64_t seed = derive_seed(derive_seed(config.seed, "pool"), static_cast<std::uint64_t>(j));
    Rng rng(derive_seed(seed, "target"));
    const double target = rng.uniform(config.dark_y_min, config.dark_y_max);
    Clip clip;
    if (j < relevant) {
      clip = generate_clip(config, static_cast<int>(rng.index(static_cast<std::size_t>(config.n_classes))), target, seed);
      clip.label = -1;
    } else {
      clip = generate_distractor_clip(config, target, seed);
    }
    clip.id = clip_name("pool", j);
    d.pool.push_back(std::move(clip));
  }
  return d;
}

std::vector<int> class_counts(const std::vector<Clip>& clips, int n_classes) {
  std::vector<int> counts(static_cast<std::size_t>(n_classes), 0);
  for (const auto& c : clips) {
    if (c.label >= 0 && c.label < n_classes) ++counts[static_cast<std::size_t>(c.label)];
    for (std::size_t k = 0; k < c.labels.size() && k < counts.size(); ++k) counts[k] += c.labels[k];
  }
  return counts;
}

// --- persistence ------------------------------------------------------------

void write_clip(const Clip& clip, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io::write_npy_f32(dir / "frames.npy",
                    {static_cast<std::size_t>(clip.frames_t), static_cast<std::size_t>(clip.height),
                     static_cast<std::size_t>(clip.width), 3},
                    clip.frames);
  io::write_f32_raw(dir / "audio.raw", clip.audio);
  io::KeyValues kv;
  kv["clip_id"] = clip.id;
  kv["label"] = std::to_string(clip.label);
  if (clip.multi_label()) {
    std::string s;
    for (auto b : clip.labels) s += b ? '1' : '0';
    kv["labels"] = s;
  }
  kv["clip_Y"] = io::format_double(clip.clip_y);
  kv["seed"] = std::to_string(clip.seed);
  kv["sample_rate"] = std::to_string(clip.sample_rate);
  kv["audio_format"] = "f32le mono";
  kv["audio_samples"] = std::to_string(clip.audio.size());
  io::write_key_values(dir / "meta", kv);
}

Clip read_clip(const std::filesystem::path& dir) {
  const auto kv = io::read_key_values(dir / "meta");
  auto get = [&](const std::string& k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw LoadError((dir / "meta").string() + ": missing key " + k);
    return it->second;
  };
  Clip clip;
  clip.id = get("clip_id");
  clip.label = std::stoi(get("label"));
  if (auto it = kv.find("labels"); it != kv.end())
    for (char ch : it->second) clip.labels.push_back(ch == '1' ? 1 : 0);
  clip.clip_y = std::stod(get("clip_Y"));
  clip.seed = std::stoull(get("seed"));
  clip.sample_rate = std::stoi(get("sample_rate"));
  auto arr = io::read_npy(dir / "frames.npy");
  if (arr.shape.size() != 4 || arr.shape[3] != 3)
    throw LoadError((dir / "frames.npy").string() + ": expected shape (T, H, W, 3)");
  clip.frames_t = static_cast<int>(arr.shape[0]);
  clip.height = static_cast<int>(arr.shape[1]);
  clip.width = static_cast<int>(arr.shape[2]);
  clip.frames = std::move(arr.data);
  clip.audio = io::read_f32_raw(dir / "audio.raw");
  return clip;
}

namespace {

nlohmann::json to_json(const BenchConfig& c) {
  return {{"n_classes", c.n_classes},
          {"clips_per_class", c.clips_per_class},
          {"val_per_class", c.val_per_class},
          {"test_per_class", c.test_per_class},
          {"dark_fraction_train", c.dark_fraction_train},
          {"dark_fraction_test", c.dark_fraction_test},
          {"unlabeled_pool_size", c.unlabeled_pool_size},
          {"relevant_fraction", c.relevant_fraction},
          {"frame_geometry", {c.geometry.t, c.geometry.h, c.geometry.w}},
          {"fps", c.fps},
          {"sample_rate", c.sample_rate},
          {"seed", c.seed},
          {"t", c.t},
          {"audio_groups", c.audio_groups},
          {"multi_label", c.multi_label},
          {"day_y_range", {c.day_y_min, c.day_y_max}},
          {"dark_y_range", {c.dark_y_min, c.dark_y_max}},
          {"noise_sigma", c.noise_sigma},
          {"dark_noise_sigma", c.dark_noise_sigma},
          {"dark_desaturation", c.dark_desaturation},
          {"lamp_probability", c.lamp_probability}};
}

BenchConfig from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{
      "n_classes",   "clips_per_class", "val_per_class", "test_per_class",  "dark_fraction_train",
      "dark_fraction_test", "unlabeled_pool_size", "relevant_fraction", "frame_geometry", "fps",
      "sample_rate", "seed", "t", "audio_groups", "multi_label", "day_y_range", "dark_y_range", "noise_sigma",
      "dark_noise_sigma", "dark_desaturation", "lamp_probability"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ConfigError("unknown bench config key '" + key + "'");
  BenchConfig c;
  auto opt = [&](const char* k, auto& dst) {
    if (j.contains(k)) dst = j.at(k).get<std::decay_t<decltype(dst)>>();
  };
  opt("n_classes", c.n_classes);
  opt("clips_per_class", c.clips_per_class);
  opt("val_per_class", c.val_per_class);
  opt("test_per_class", c.test_per_class);
  opt("dark_fraction_train", c.dark_fraction_train);
  opt("dark_fraction_test", c.dark_fraction_test);
  opt("unlabeled_pool_size", c.unlabeled_pool_size);
  opt("relevant_fraction", c.relevant_fraction);
  if (j.contains("frame_geometry")) {
    const auto& g = j.at("frame_geometry");
    c.geometry = {g.at(0).get<int>(), g.at(1).get<int>(), g.at(2).get<int>()};
  }
  opt("fps", c.fps);
  opt("sample_rate", c.sample_rate);
  opt("seed", c.seed);
  opt("t", c.t);
  opt("audio_groups", c.audio_groups);
  opt("multi_label", c.multi_label);
  if (j.contains("day_y_range")) {
    c.day_y_min = j.at("day_y_range").at(0).get<double>();
    c.day_y_max = j.at("day_y_range").at(1).get<double>();
  }
  if (j.contains("dark_y_range")) {
    c.dark_y_min = j.at("dark_y_range").at(0).get<double>();
    c.dark_y_max = j.at("dark_y_range").at(1).get<double>();
  }
  opt("noise_sigma", c.noise_sigma);
  opt("dark_noise_sigma", c.dark_noise_sigma);
  opt("dark_desaturation", c.dark_desaturation);
  opt("lamp_probability", c.lamp_probability);
  return c;
}

}  // namespace

BenchConfig load_bench_config(const std::filesystem::path& file) {
  try {
    auto j = nlohmann::json::parse(io::read_text(file));
    if (j.contains("bench")) j = j.at("bench");
    auto c = from_json(j);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
}

void save_bench_config(const BenchConfig& config, const std::filesystem::path& file) {
  io::write_text(file, to_json(config).dump(2) + "\n");
}

void write_dataset(const DatasetSplit& data, const std::filesystem::path& root) {
  std::filesystem::create_directories(root);
  std::ostringstream manifest;
  manifest << "# toybench manifest v1\n";
  const std::pair<const char*, const std::vector<Clip>*> splits[] = {
      {"train", &data.train}, {"val", &data.val}, {"test", &data.test}, {"pool", &data.pool}};
  for (const auto& [name, clips] : splits) {
    manifest << "split " << name << " " << clips->size() << "\n";
    for (const auto& c : *clips) {
      write_clip(c, root / name / c.id);
      manifest << c.id << "\n";
    }
  }
  save_bench_config(data.config, root / "bench.json");
  io::write_text(root / "manifest", manifest.str());
}

DatasetSplit read_dataset(const std::filesystem::path& root) {
  DatasetSplit d;
  if (std::filesystem::exists(root / "bench.json")) d.config = load_bench_config(root / "bench.json");
  std::istringstream in(io::read_text(root / "manifest"));
  std::string line;
  std::vector<Clip>* cur = nullptr;
  std::string split;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("split ", 0) == 0) {
      std::istringstream ls(line.substr(6));
      ls >> split;
      cur = split == "train" ? &d.train : split == "val" ? &d.val : split == "test" ? &d.test
          : split == "pool"  ? &d.pool  : nullptr;
      if (!cur) throw LoadError("manifest: unknown split " + split);
      continue;
    }
    if (!cur) throw LoadError("manifest: clip listed before any split header");
    cur->push_back(read_clip(root / split / line));
  }
  return d;
}

}  // namespace d2d::toybench
