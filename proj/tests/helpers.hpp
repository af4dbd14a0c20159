#pragma once

#include "d2d/autograd.hpp"
#include "d2d/clip.hpp"
#include "d2d/recognizer.hpp"
#include "d2d/util.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

namespace d2d::testing {

// Largest relative error between analytic and central-difference gradients
// of loss() with respect to p. Relative error uses max(|a|, |n|, floor).
inline double gradient_error(Parameter& p, const std::function<Var()>& loss, double h = 1e-6,
                             double floor = 1e-6) {
  p.zero_grad();
  Var l = loss();
  l.backward();
  Mat analytic = p.grad;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < p.value.size(); ++i) {
    double& x = p.value.data()[i];
    const double saved = x;
    double plus, minus;
    {
      NoGradGuard ng;
      x = saved + h;
      plus = loss().item();
      x = saved - h;
      minus = loss().item();
    }
    x = saved;
    const double numeric = (plus - minus) / (2 * h);
    const double a = analytic.data()[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

inline Mat random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

inline Clip random_clip(int t, int h, int w, Rng& rng, double lo = 0.0, double hi = 255.0) {
  Clip c;
  c.id = "rand";
  c.frames_t = t;
  c.height = h;
  c.width = w;
  c.frames.resize(static_cast<std::size_t>(t) * h * w * 3);
  for (auto& v : c.frames) v = static_cast<float>(std::floor(rng.uniform(lo, hi)));
  c.sample_rate = 8000;
  c.audio.resize(static_cast<std::size_t>(t) * 1000);
  for (auto& s : c.audio) s = static_cast<float>(rng.uniform(-0.5, 0.5));
  return c;
}

// Small recognizer that still exercises every component.
inline recognizer::RecognizerConfig tiny_config(int k = 2, int d_in = 8) {
  recognizer::RecognizerConfig c;
  c.n_classes = 3;
  c.visual.frames = 4;
  c.visual.height = 16;
  c.visual.width = 16;
  c.visual.patch_t = 2;
  c.visual.patch_h = 8;
  c.visual.patch_w = 8;
  c.visual.conv_channels = 4;
  c.visual.d_v = 6;
  c.audio.spectrogram.bands = 8;
  c.audio.band_groups = 2;
  c.audio.time_chunks = 2;
  c.audio.d_a = 5;
  c.d_in = d_in;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.probe_layers = 1;
  c.fusion_layers = 1;
  c.branches = k;
  c.prompt_tokens = 3;
  c.pseudo_dim = 4;
  c.init_seed = 7;
  return c;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("d2d_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace d2d::testing
