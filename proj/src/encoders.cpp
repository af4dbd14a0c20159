#include "d2d/encoders.hpp"

#include "d2d/util.hpp"

#include <fftw3.h>

#include <cmath>
#include <memory>
#include <mutex>

namespace d2d::encoders {

namespace {

// FFTW planning is not thread safe; plans are created under a lock and then
// executed on thread-local buffers with the new-array interface.
struct FftPlan {
  int n = 0;
  double* in = nullptr;
  fftw_complex* out = nullptr;
  fftw_plan plan = nullptr;
  ~FftPlan() {
    if (plan) fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);
  }
};

std::mutex g_plan_mutex;

FftPlan& plan_for(int n) {
  thread_local std::unique_ptr<FftPlan> cached;
  if (!cached || cached->n != n) {
    std::lock_guard lock(g_plan_mutex);
    cached = std::make_unique<FftPlan>();
    cached->n = n;
    cached->in = fftw_alloc_real(static_cast<std::size_t>(n));
    cached->out = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
    cached->plan = fftw_plan_dft_r2c_1d(n, cached->in, cached->out, FFTW_ESTIMATE);
  }
  return *cached;
}

int next_pow2(int v) {
  int n = 1;
  while (n < v) n <<= 1;
  return n;
}

}  // namespace

std::vector<double> band_centers(int sample_rate, const SpectrogramConfig& cfg) {
  std::vector<double> c(static_cast<std::size_t>(cfg.bands));
  const double nyq = 0.5 * sample_rate;
  for (int b = 0; b < cfg.bands; ++b) c[static_cast<std::size_t>(b)] = (b + 1) * nyq / (cfg.bands + 1);
  return c;
}

Mat log_spectrogram(std::span<const float> waveform, int sample_rate, const SpectrogramConfig& cfg) {
  if (sample_rate <= 0) throw InvalidInput("log_spectrogram: sample_rate must be > 0");
  const int win = static_cast<int>(std::lround(cfg.window_ms * 1e-3 * sample_rate));
  const int hop = std::max(1, static_cast<int>(std::lround(cfg.hop_ms * 1e-3 * sample_rate)));
  if (win < 2 || cfg.bands < 1) throw InvalidInput("log_spectrogram: window or band count too small");
  if (static_cast<int>(waveform.size()) < win)
    throw InvalidInput("log_spectrogram: waveform of " + std::to_string(waveform.size()) +
                       " samples is shorter than one " + std::to_string(win) + "-sample window");
  const int n_fft = next_pow2(win);
  const int n_bins = n_fft / 2 + 1;
  const int frames = 1 + (static_cast<int>(waveform.size()) - win) / hop;

  std::vector<double> hann(static_cast<std::size_t>(win));
  for (int i = 0; i < win; ++i) hann[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2 * M_PI * i / (win - 1));

  // Triangular filterbank over FFT bins.
  const auto centers = band_centers(sample_rate, cfg);
  const double nyq = 0.5 * sample_rate;
  const double spacing = nyq / (cfg.bands + 1);
  Mat fb = Mat::Zero(n_bins, cfg.bands);
  for (int k = 0; k < n_bins; ++k) {
    const double f = static_cast<double>(k) * sample_rate / n_fft;
    for (int b = 0; b < cfg.bands; ++b) {
      const double d = std::abs(f - centers[static_cast<std::size_t>(b)]) / spacing;
      if (d < 1.0) fb(k, b) = 1.0 - d;
    }
  }

  FftPlan& p = plan_for(n_fft);
  Mat power(frames, n_bins);
  for (int fr = 0; fr < frames; ++fr) {
    const std::size_t off = static_cast<std::size_t>(fr) * static_cast<std::size_t>(hop);
    for (int i = 0; i < n_fft; ++i)
      p.in[i] = i < win ? waveform[off + static_cast<std::size_t>(i)] * hann[static_cast<std::size_t>(i)] : 0.0;
    fftw_execute_dft_r2c(p.plan, p.in, p.out);
    for (int k = 0; k < n_bins; ++k) power(fr, k) = p.out[k][0] * p.out[k][0] + p.out[k][1] * p.out[k][1];
  }
  Mat bands = power * fb;
  const double fl = cfg.floor;
  return bands.unaryExpr([fl](double e) { return std::log(std::max(e, fl)); });
}

PatchLayout patch_layout(const VisualEncoderConfig& cfg) {
  auto fail = [&]() {
    throw ShapeError("visual geometry (" + std::to_string(cfg.frames) + "," + std::to_string(cfg.height) + "," +
                     std::to_string(cfg.width) + ") is not tiled by patch (" + std::to_string(cfg.patch_t) +
                     "," + std::to_string(cfg.patch_h) + "," + std::to_string(cfg.patch_w) + ")");
  };
  if (cfg.patch_t < 1 || cfg.patch_h < 2 || cfg.patch_w < 2 || cfg.patch_h % 2 || cfg.patch_w % 2) fail();
  if (cfg.frames % cfg.patch_t || cfg.height % cfg.patch_h || cfg.width % cfg.patch_w) fail();
  return {cfg.frames / cfg.patch_t, cfg.height / cfg.patch_h, cfg.width / cfg.patch_w};
}

ToyVisualEncoder::ToyVisualEncoder(ParamStore& store, const std::string& prefix, const VisualEncoderConfig& cfg,
                                   Rng& rng)
    : cfg_(cfg), layout_(patch_layout(cfg)) {
  const int k1 = (cfg.patch_h / 2) * (cfg.patch_w / 2) * 3;
  conv1_ = Linear::create(store, prefix + ".conv1", k1, cfg.conv_channels, rng);
  conv2_ = Linear::create(store, prefix + ".conv2", cfg.conv_channels * cfg.patch_t * 4, cfg.d_v, rng);
  embed_ = Linear::create(store, prefix + ".embed", cfg.d_v, cfg.d_v, rng);

  const int gh = cfg.height / (cfg.patch_h / 2), gw = cfg.width / (cfg.patch_w / 2);
  for (int t = 0; t < layout_.temporal; ++t)
    for (int y = 0; y < layout_.spatial_h; ++y)
      for (int x = 0; x < layout_.spatial_w; ++x)
        for (int dt = 0; dt < cfg.patch_t; ++dt)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              group_index_.push_back(((t * cfg.patch_t + dt) * gh + (2 * y + dy)) * gw + (2 * x + dx));
}

Mat ToyVisualEncoder::first_stage_patches(const Clip& clip) const {
  if (clip.frames_t != cfg_.frames || clip.height != cfg_.height || clip.width != cfg_.width)
    throw ShapeError("clip geometry (" + std::to_string(clip.frames_t) + "," + std::to_string(clip.height) + "," +
                     std::to_string(clip.width) + ") does not match encoder geometry (" +
                     std::to_string(cfg_.frames) + "," + std::to_string(cfg_.height) + "," +
                     std::to_string(cfg_.width) + ") with patch (" + std::to_string(cfg_.patch_t) + "," +
                     std::to_string(cfg_.patch_h) + "," + std::to_string(cfg_.patch_w) + ")");
  const int kh = cfg_.patch_h / 2, kw = cfg_.patch_w / 2;
  const int gh = cfg_.height / kh, gw = cfg_.width / kw;
  Mat p(cfg_.frames * gh * gw, kh * kw * 3);
  const float* src = clip.frames.data();
  for (int t = 0; t < cfg_.frames; ++t)
    for (int gy = 0; gy < gh; ++gy)
      for (int gx = 0; gx < gw; ++gx) {
        const int r = (t * gh + gy) * gw + gx;
        int c = 0;
        for (int dy = 0; dy < kh; ++dy)
          for (int dx = 0; dx < kw; ++dx) {
            const std::size_t base =
                ((static_cast<std::size_t>(t) * cfg_.height + gy * kh + dy) * cfg_.width + gx * kw + dx) * 3;
            for (int ch = 0; ch < 3; ++ch) p(r, c++) = src[base + static_cast<std::size_t>(ch)] / 255.0;
          }
      }
  return p;
}

VisualFeatures ToyVisualEncoder::encode(const Clip& clip) const {
  Var x = Var::constant(first_stage_patches(clip));
  Var h1 = ops::relu(conv1_(x));
  Var h2 = ops::relu(conv2_(ops::gather_rows(h1, group_index_, second_stage_group())));
  return {embed_(h2), layout_};
}

Mat audio_cells(std::span<const float> waveform, int sample_rate, const AudioEncoderConfig& cfg) {
  if (cfg.band_groups < 1 || cfg.time_chunks < 1 || cfg.spectrogram.bands % cfg.band_groups != 0)
    throw ShapeError("audio cells: " + std::to_string(cfg.spectrogram.bands) + " bands do not split into " +
                     std::to_string(cfg.band_groups) + " groups");
  Mat spec = log_spectrogram(waveform, sample_rate, cfg.spectrogram);
  if (spec.rows() < cfg.time_chunks)
    throw InvalidInput("audio cells: " + std::to_string(spec.rows()) + " frames cannot form " +
                       std::to_string(cfg.time_chunks) + " time chunks");
  const int per_group = cfg.spectrogram.bands / cfg.band_groups;
  Mat cells(cfg.band_groups * cfg.time_chunks, per_group);
  for (int g = 0; g < cfg.band_groups; ++g)
    for (int c = 0; c < cfg.time_chunks; ++c) {
      const Eigen::Index f0 = spec.rows() * c / cfg.time_chunks;
      const Eigen::Index f1 = spec.rows() * (c + 1) / cfg.time_chunks;
      cells.row(g * cfg.time_chunks + c) = spec.block(f0, g * per_group, f1 - f0, per_group).colwise().mean();
    }
  return cells;
}

ToyAudioEncoder::ToyAudioEncoder(ParamStore& store, const std::string& prefix, const AudioEncoderConfig& cfg,
                                 Rng& rng)
    : cfg_(cfg) {
  const int per_group = cfg.spectrogram.bands / std::max(1, cfg.band_groups);
  norm_ = LayerNorm::create(store, prefix + ".norm", per_group);
  fc1_ = Linear::create(store, prefix + ".fc1", per_group, cfg.d_a, rng);
  fc2_ = Linear::create(store, prefix + ".fc2", cfg.d_a, cfg.d_a, rng);
}

AudioFeatures ToyAudioEncoder::encode_cells(const Mat& cells) const {
  Var x = Var::constant(cells);
  return {fc2_(ops::relu(fc1_(norm_(x))))};
}

AudioFeatures ToyAudioEncoder::encode(std::span<const float> waveform, int sample_rate) const {
  return encode_cells(audio_cells(waveform, sample_rate, cfg_));
}

Var project_audio(const Var& audio_tokens, const Var& projection) {
  if (audio_tokens.cols() != projection.rows())
    throw ShapeError("project_audio: audio width " + std::to_string(audio_tokens.cols()) +
                     " does not match projection input " + std::to_string(projection.rows()));
  return ops::matmul(audio_tokens, projection);
}

}  // namespace d2d::encoders
