#include "d2d/supervision.hpp"

#include "d2d/illuminance.hpp"
#include "d2d/io.hpp"
#include "d2d/recognizer.hpp"
#include "d2d/util.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace d2d::supervision {

namespace {

void check_clip(const Clip& clip, const char* who) {
  if (clip.frames_t < 1 || clip.height < 1 || clip.width < 1 ||
      clip.frames.size() != static_cast<std::size_t>(clip.frames_t) * clip.frame_size())
    throw InvalidInput(std::string(who) + ": clip " + clip.id + " has inconsistent frame geometry");
}

// Per-clip standardisation of all pixel values.
std::vector<double> contrast_normalized(const Clip& clip) {
  const auto n = clip.frames.size();
  double mean = 0.0;
  for (float v : clip.frames) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (float v : clip.frames) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(n)) + 1e-3;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = (clip.frames[i] - mean) / sd;
  return out;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 1e-12 || sbb <= 1e-12) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

Var sum_all(const std::vector<Var>& terms) {
  Var acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = ops::add(acc, terms[i]);
  return acc;
}

}  // namespace

// --- teachers ---------------------------------------------------------------

EmbeddingTeacher::EmbeddingTeacher(std::uint64_t seed, int dim, int hidden)
    : seed_(seed), dim_(dim), hidden_(hidden) {
  if (dim < 1 || hidden < 1) throw ConfigError("EmbeddingTeacher: dims must be positive");
  Rng rng(derive_seed(seed, "embedding_teacher"));
  const int sub = patch_ / 2;
  const int vis_in = sub * sub * 3 * 2;  // subsampled patch plus its temporal difference
  const int cells = audio_cfg_.band_groups * audio_cfg_.time_chunks;
  const int aud_in = cells * (audio_cfg_.spectrogram.bands / audio_cfg_.band_groups);
  w_vis_ = init::xavier_uniform(vis_in, hidden, rng);
  b_vis_ = init::normal(1, hidden, 0.1, rng);
  w_aud_ = init::xavier_uniform(aud_in, hidden, rng);
  b_aud_ = init::normal(1, hidden, 0.1, rng);
  w_out_ = init::xavier_uniform(2 * hidden, dim, rng);
}

RowVec EmbeddingTeacher::predict(const Clip& clip) const {
  check_clip(clip, "EmbeddingTeacher");
  if (clip.height < patch_ || clip.width < patch_)
    throw InvalidInput("EmbeddingTeacher: frames smaller than one " + std::to_string(patch_) + "px patch");
  const auto x = contrast_normalized(clip);
  const int ph = clip.height / patch_, pw = clip.width / patch_;
  const int sub = patch_ / 2;
  auto px = [&](int t, int y, int xx, int c) {
    return x[((static_cast<std::size_t>(t) * clip.height + y) * clip.width + xx) * 3 + c];
  };
  Mat patches(clip.frames_t * ph * pw, w_vis_.rows());
  int r = 0;
  for (int t = 0; t < clip.frames_t; ++t) {
    const int tn = std::min(t + 1, clip.frames_t - 1);
    for (int gy = 0; gy < ph; ++gy)
      for (int gx = 0; gx < pw; ++gx, ++r) {
        int c = 0;
        for (int dy = 0; dy < sub; ++dy)
          for (int dx = 0; dx < sub; ++dx)
            for (int ch = 0; ch < 3; ++ch) {
              const int y = gy * patch_ + 2 * dy, xx = gx * patch_ + 2 * dx;
              const double v = px(t, y, xx, ch);
              patches(r, c) = v;
              patches(r, c + sub * sub * 3) = px(tn, y, xx, ch) - v;
              ++c;
            }
      }
  }
  const RowVec hv = ((patches * w_vis_).rowwise() + b_vis_).array().tanh().matrix().colwise().mean();

  Mat cells = encoders::audio_cells(clip.audio, clip.sample_rate, audio_cfg_);
  const double m = cells.mean();
  const double sd = std::sqrt((cells.array() - m).square().mean()) + 1e-6;
  const Mat flat = ((cells.array() - m) / sd).matrix().reshaped<Eigen::RowMajor>(1, cells.size());
  const RowVec ha = ((flat * w_aud_) + b_aud_).array().tanh().matrix();

  RowVec h(2 * hidden_);
  h << hv, ha;
  return (h * w_out_).array().tanh().matrix();
}

std::uint64_t EmbeddingTeacher::fingerprint() const {
  Fnv1a f;
  f.update(name());
  f.update_pod(seed_);
  f.update_pod(dim_);
  f.update_pod(hidden_);
  return f.digest();
}

RowVec LocalizationTeacher::predict(const Clip& clip) const {
  check_clip(clip, "LocalizationTeacher");
  if (clip.height < grid_ || clip.width < grid_) throw InvalidInput("LocalizationTeacher: frames smaller than grid");
  if (clip.audio.empty()) throw InvalidInput("LocalizationTeacher: clip has no audio");
  const int T = clip.frames_t;
  // Audio RMS per video frame.
  std::vector<double> energy(static_cast<std::size_t>(T));
  const std::size_t n = clip.audio.size();
  for (int t = 0; t < T; ++t) {
    const std::size_t a = n * static_cast<std::size_t>(t) / static_cast<std::size_t>(T);
    const std::size_t b = std::max(a + 1, n * static_cast<std::size_t>(t + 1) / static_cast<std::size_t>(T));
    double s = 0.0;
    for (std::size_t i = a; i < b && i < n; ++i) s += static_cast<double>(clip.audio[i]) * clip.audio[i];
    energy[static_cast<std::size_t>(t)] = std::sqrt(s / static_cast<double>(b - a));
  }
  const auto x = contrast_normalized(clip);
  RowVec map(grid_ * grid_);
  std::vector<double> bright(static_cast<std::size_t>(T));
  for (int gy = 0; gy < grid_; ++gy)
    for (int gx = 0; gx < grid_; ++gx) {
      const int y0 = gy * clip.height / grid_, y1 = (gy + 1) * clip.height / grid_;
      const int x0 = gx * clip.width / grid_, x1 = (gx + 1) * clip.width / grid_;
      for (int t = 0; t < T; ++t) {
        double s = 0.0;
        for (int y = y0; y < y1; ++y)
          for (int xx = x0; xx < x1; ++xx)
            for (int c = 0; c < 3; ++c) s += x[((static_cast<std::size_t>(t) * clip.height + y) * clip.width + xx) * 3 + c];
        bright[static_cast<std::size_t>(t)] = s / (3.0 * (y1 - y0) * (x1 - x0));
      }
      map(gy * grid_ + gx) = pearson(energy, bright);
    }
  return map;
}

std::uint64_t LocalizationTeacher::fingerprint() const {
  Fnv1a f;
  f.update(name());
  f.update_pod(grid_);
  return f.digest();
}

std::vector<std::shared_ptr<const Teacher>> default_teachers(std::uint64_t seed) {
  return {std::make_shared<EmbeddingTeacher>(seed), std::make_shared<LocalizationTeacher>()};
}

std::uint64_t teachers_fingerprint(const std::vector<std::shared_ptr<const Teacher>>& teachers) {
  Fnv1a f;
  for (const auto& t : teachers) f.update_pod(t->fingerprint());
  return f.digest();
}

std::vector<int> AuxiliaryPredictions::dims() const {
  std::vector<int> d;
  for (const auto& p : per_teacher) d.push_back(static_cast<int>(p.size()));
  return d;
}

RowVec AuxiliaryPredictions::concat() const {
  Eigen::Index total = 0;
  for (const auto& p : per_teacher) total += p.size();
  RowVec out(total);
  Eigen::Index at = 0;
  for (const auto& p : per_teacher) {
    out.segment(at, p.size()) = p;
    at += p.size();
  }
  return out;
}

AuxiliaryPredictions collect_auxiliary_predictions(const Clip& clip,
                                                   const std::vector<std::shared_ptr<const Teacher>>& teachers) {
  if (teachers.empty()) throw InvalidInput("collect_auxiliary_predictions: no teachers");
  AuxiliaryPredictions out;
  for (const auto& t : teachers) {
    RowVec p = t->predict(clip);
    if (p.size() != t->dim())
      throw ConsistencyError("teacher " + t->name() + " produced " + std::to_string(p.size()) +
                             " values, declared " + std::to_string(t->dim()));
    out.per_teacher.push_back(std::move(p));
  }
  return out;
}

Mat collect_pool_predictions(const std::vector<Clip>& pool,
                             const std::vector<std::shared_ptr<const Teacher>>& teachers) {
  if (pool.empty()) return Mat(0, 0);
  std::vector<int> dims;
  Mat out;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto aux = collect_auxiliary_predictions(pool[i], teachers);
    if (i == 0) {
      dims = aux.dims();
      out.resize(static_cast<Eigen::Index>(pool.size()), aux.concat().size());
    } else if (aux.dims() != dims) {
      throw ConsistencyError("teacher output dims changed at clip " + pool[i].id);
    }
    out.row(static_cast<Eigen::Index>(i)) = aux.concat();
  }
  return out;
}

// --- autoencoder ---------------------------------------------------------------

Autoencoder::Autoencoder(int input_dim, const AutoencoderConfig& cfg) : input_dim_(input_dim), cfg_(cfg) {
  if (input_dim < 1 || cfg.latent < 1) throw ConfigError("Autoencoder: dims must be positive");
  for (int h : cfg.hidden)
    if (h < 1) throw ConfigError("Autoencoder: hidden widths must be positive");
  Rng rng(derive_seed(cfg.seed, "autoencoder"));
  std::vector<int> widths{input_dim};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(cfg.latent);
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    enc_.push_back(Linear::create(store_, "enc" + std::to_string(i), widths[i], widths[i + 1], rng));
  for (std::size_t i = widths.size() - 1; i > 0; --i)
    dec_.push_back(Linear::create(store_, "dec" + std::to_string(dec_.size()), widths[i], widths[i - 1], rng));
  mean_ = RowVec::Zero(input_dim);
  scale_ = RowVec::Ones(input_dim);
}

void Autoencoder::set_normalization(RowVec mean, RowVec scale) {
  if (mean.size() != input_dim_ || scale.size() != input_dim_) throw ShapeError("Autoencoder: normalization dims");
  mean_ = std::move(mean);
  scale_ = std::move(scale);
}

Var Autoencoder::encode(const Mat& p) const {
  if (p.cols() != input_dim_)
    throw ShapeError("Autoencoder: input has " + std::to_string(p.cols()) + " dims, expected " +
                     std::to_string(input_dim_));
  Mat z = (p.rowwise() - mean_).array().rowwise() / scale_.array();
  Var h = Var::constant(std::move(z));
  for (std::size_t i = 0; i < enc_.size(); ++i) {
    h = enc_[i](h);
    if (i + 1 < enc_.size()) h = ops::relu(h);
  }
  return h;
}

Var Autoencoder::decode_standardized(const Var& q) const {
  Var h = q;
  for (std::size_t i = 0; i < dec_.size(); ++i) {
    h = dec_[i](h);
    if (i + 1 < dec_.size()) h = ops::relu(h);
  }
  return h;
}

Mat Autoencoder::reconstruct(const Mat& p) const {
  NoGradGuard guard;
  Mat z = decode_standardized(encode(p)).value();
  return (z.array().rowwise() * scale_.array()).matrix().rowwise() + mean_;
}

std::uint64_t Autoencoder::fingerprint() const {
  Fnv1a f;
  f.update_pod(store_.hash());
  f.update(mean_.data(), sizeof(double) * static_cast<std::size_t>(mean_.size()));
  f.update(scale_.data(), sizeof(double) * static_cast<std::size_t>(scale_.size()));
  return f.digest();
}

std::unique_ptr<Autoencoder> train_autoencoder(const Mat& pool, const AutoencoderConfig& cfg,
                                               AutoencoderReport* report) {
  if (pool.rows() == 0 || pool.cols() == 0) throw InvalidInput("train_autoencoder: empty prediction pool");
  if (cfg.epochs < 0 || cfg.batch_size < 1 || !(cfg.lr > 0)) throw ConfigError("train_autoencoder: bad schedule");
  auto ae = std::make_unique<Autoencoder>(static_cast<int>(pool.cols()), cfg);
  const RowVec mean = pool.colwise().mean();
  RowVec scale = ((pool.rowwise() - mean).array().square().colwise().mean()).sqrt().matrix();
  for (Eigen::Index i = 0; i < scale.size(); ++i) scale(i) = std::max(scale(i), 1e-6);
  ae->set_normalization(mean, scale);
  const Mat target = (pool.rowwise() - mean).array().rowwise() / scale.array();

  Adam opt(ae->params().all(), cfg.lr);
  Rng rng(derive_seed(cfg.seed, "autoencoder.order"));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(pool.rows()));
  std::iota(order.begin(), order.end(), 0);
  double lr = cfg.lr;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double total = 0.0;
    for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(order.size(), s + static_cast<std::size_t>(cfg.batch_size));
      Mat xb(static_cast<Eigen::Index>(e - s), pool.cols()), tb(xb.rows(), pool.cols());
      for (std::size_t i = s; i < e; ++i) {
        xb.row(static_cast<Eigen::Index>(i - s)) = pool.row(order[i]);
        tb.row(static_cast<Eigen::Index>(i - s)) = target.row(order[i]);
      }
      opt.zero_grad();
      Var recon = ae->decode_standardized(ae->encode(xb));
      Var loss = ops::scale(ops::l1_distance(recon, tb), 1.0 / static_cast<double>(tb.size()));
      loss.backward();
      opt.step();
      total += loss.item() * static_cast<double>(tb.rows());
    }
    if (report) report->epoch_loss.push_back(total / static_cast<double>(pool.rows()));
    lr *= cfg.lr_decay;
    opt.set_lr(lr);
  }
  return ae;
}

double reconstruction_l1(const Autoencoder& ae, const Mat& predictions) {
  if (predictions.size() == 0) throw InvalidInput("reconstruction_l1: empty input");
  return (ae.reconstruct(predictions) - predictions).cwiseAbs().mean();
}

double mean_predictor_l1(const Mat& predictions) {
  if (predictions.size() == 0) throw InvalidInput("mean_predictor_l1: empty input");
  const RowVec mean = predictions.colwise().mean();
  return (predictions.rowwise() - mean).cwiseAbs().mean();
}

RowVec pseudo_label(const Autoencoder& ae, const RowVec& p) {
  if (p.size() != ae.input_dim())
    throw ShapeError("pseudo_label: prediction has " + std::to_string(p.size()) + " dims, autoencoder expects " +
                     std::to_string(ae.input_dim()));
  NoGradGuard guard;
  return ae.encode(p).value();
}

// --- pseudo-targets ------------------------------------------------------------

PseudoTargets compute_pseudo_targets(const std::vector<Clip>& pool,
                                     const std::vector<std::shared_ptr<const Teacher>>& teachers,
                                     const Autoencoder* ae, TargetMode mode) {
  if (mode == TargetMode::kLatent && !ae) throw PreconditionError("latent pseudo-targets need a trained autoencoder");
  PseudoTargets out;
  out.mode = mode;
  out.teacher_fingerprint = teachers_fingerprint(teachers);
  out.autoencoder_fingerprint = mode == TargetMode::kLatent ? ae->fingerprint() : 0;
  const Mat preds = collect_pool_predictions(pool, teachers);
  out.dim = mode == TargetMode::kLatent ? ae->latent_dim() : static_cast<int>(preds.cols());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const RowVec p = preds.row(static_cast<Eigen::Index>(i));
    out.by_clip[pool[i].id] = mode == TargetMode::kLatent ? pseudo_label(*ae, p) : p;
  }
  return out;
}

namespace {
constexpr char kCacheMagic[8] = {'D', '2', 'D', 'P', 'S', 'L', '\0', '\0'};
constexpr std::uint32_t kCacheVersion = 1;
}  // namespace

void save_pseudo_targets(const PseudoTargets& targets, const std::filesystem::path& file) {
  io::BinaryWriter out(file);
  out.put_bytes(kCacheMagic, sizeof kCacheMagic);
  out.put(kCacheVersion);
  out.put(static_cast<std::uint8_t>(targets.mode == TargetMode::kLatent ? 0 : 1));
  out.put(targets.teacher_fingerprint);
  out.put(targets.autoencoder_fingerprint);
  out.put(static_cast<std::uint32_t>(targets.dim));
  out.put(static_cast<std::uint32_t>(targets.by_clip.size()));
  for (const auto& [id, q] : targets.by_clip) {
    if (q.size() != targets.dim) throw ConsistencyError("pseudo-target for " + id + " has wrong dimension");
    out.put_str(id);
    out.put_bytes(reinterpret_cast<const char*>(q.data()), sizeof(double) * static_cast<std::size_t>(q.size()));
  }
  out.finish();
}

PseudoTargets load_pseudo_targets(const std::filesystem::path& file) {
  io::BinaryReader in(file);
  char magic[8];
  in.read(magic, sizeof magic);
  if (std::memcmp(magic, kCacheMagic, sizeof magic) != 0) in.fail("not a pseudo-label cache");
  if (in.get<std::uint32_t>() != kCacheVersion) in.fail("unsupported cache version");
  PseudoTargets t;
  t.mode = in.get<std::uint8_t>() == 0 ? TargetMode::kLatent : TargetMode::kRaw;
  t.teacher_fingerprint = in.get<std::uint64_t>();
  t.autoencoder_fingerprint = in.get<std::uint64_t>();
  t.dim = static_cast<int>(in.get<std::uint32_t>());
  const auto n = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string id = in.get_str();
    RowVec q(t.dim);
    in.read(reinterpret_cast<char*>(q.data()), sizeof(double) * static_cast<std::size_t>(t.dim));
    t.by_clip.emplace(std::move(id), std::move(q));
  }
  return t;
}

bool cache_is_fresh(const std::filesystem::path& file, std::uint64_t teacher_fp, std::uint64_t ae_fp,
                    TargetMode mode, const std::vector<Clip>& pool) {
  if (!std::filesystem::exists(file)) return false;
  PseudoTargets t;
  try {
    t = load_pseudo_targets(file);
  } catch (const LoadError&) {
    return false;
  }
  if (t.mode != mode || t.teacher_fingerprint != teacher_fp) return false;
  if (mode == TargetMode::kLatent && t.autoencoder_fingerprint != ae_fp) return false;
  if (t.by_clip.size() != pool.size()) return false;
  for (const auto& c : pool)
    if (!t.by_clip.count(c.id)) return false;
  return true;
}

// --- losses -----------------------------------------------------------------

Var classification_loss(const LabeledOutput& out) {
  if (out.labels.size() > 0) return ops::bce_with_logits(out.logits, out.labels);
  if (out.label < 0) throw InvalidInput("classification loss requested for an unlabeled sample");
  if (out.label >= out.logits.cols())
    throw InvalidInput("label " + std::to_string(out.label) + " outside " + std::to_string(out.logits.cols()) +
                       " classes");
  return ops::cross_entropy(out.logits, out.label);
}

namespace {

// Mean classification loss over a batch; undefined Var for an empty batch.
Var mean_ce(const std::vector<LabeledOutput>& batch, double* value) {
  *value = 0.0;
  if (batch.empty()) return Var();
  std::vector<Var> terms;
  for (const auto& o : batch) terms.push_back(classification_loss(o));
  Var m = ops::scale(sum_all(terms), 1.0 / static_cast<double>(batch.size()));
  *value = m.item();
  return m;
}

}  // namespace

LossBreakdown loss_stage1(const std::vector<LabeledOutput>& labeled, const std::vector<UnlabeledOutput>& unlabeled,
                          double lambda) {
  if (!(lambda >= 0.0)) throw InvalidInput("lambda must be >= 0");
  LossBreakdown out;
  std::vector<Var> parts;
  if (Var ce = mean_ce(labeled, &out.ce); ce.defined()) parts.push_back(ce);
  if (!unlabeled.empty()) {
    std::vector<Var> l1;
    for (const auto& u : unlabeled) {
      if (u.pseudo.rows() != 1 || u.pseudo.cols() != u.target.size())
        throw InvalidInput("pseudo prediction has " + std::to_string(u.pseudo.cols()) + " dims, target has " +
                           std::to_string(u.target.size()));
      l1.push_back(ops::l1_distance(u.pseudo, u.target));
    }
    Var s = sum_all(l1);
    out.l1_sum = s.item();
    out.weighted_u = lambda * out.l1_sum;
    // Keep L exactly equal to L_CE when lambda is zero.
    if (lambda > 0.0) parts.push_back(ops::scale(s, lambda));
  }
  out.total = parts.empty() ? Var::constant(Mat::Zero(1, 1)) : sum_all(parts);
  return out;
}

LossBreakdown loss_end_to_end(const std::vector<LabeledOutput>& labeled,
                              const std::vector<UnlabeledOutput>& unlabeled, const std::vector<LabeledOutput>& mixed,
                              double lambda) {
  LossBreakdown out = loss_stage1(labeled, unlabeled, lambda);
  if (Var m = mean_ce(mixed, &out.mix); m.defined()) out.total = ops::add(out.total, m);
  return out;
}

// --- day2dark-mix -----------------------------------------------------------

AlphaSampler::AlphaSampler(std::uint64_t seed, double lo, double hi) : rng_(seed), lo_(lo), hi_(hi) {
  if (!(lo > 0.0 && lo < hi && hi <= 1.0)) throw ConfigError("alpha range must satisfy 0 < lo < hi <= 1");
}

double AlphaSampler::operator()() {
  double a = rng_.uniform(lo_, hi_);
  // Guard the half-open upper end against rounding.
  if (a >= hi_) a = std::nextafter(hi_, lo_);
  return a;
}

Clip resample_geometry(const Clip& clip, int frames, int height, int width) {
  check_clip(clip, "resample_geometry");
  if (frames < 1 || height < 1 || width < 1) throw InvalidInput("resample_geometry: target geometry must be positive");
  if (frames == clip.frames_t && height == clip.height && width == clip.width) return clip;
  Clip out = clip;
  out.frames_t = frames;
  out.height = height;
  out.width = width;
  out.frames.assign(static_cast<std::size_t>(frames) * height * width * 3, 0.0f);
  for (int t = 0; t < frames; ++t) {
    const int st = t * clip.frames_t / frames;
    for (int y = 0; y < height; ++y) {
      const int sy = y * clip.height / height;
      for (int x = 0; x < width; ++x) {
        const int sx = x * clip.width / width;
        for (int c = 0; c < 3; ++c)
          out.frames[((static_cast<std::size_t>(t) * height + y) * width + x) * 3 + c] =
              clip.frames[((static_cast<std::size_t>(st) * clip.height + sy) * clip.width + sx) * 3 + c];
      }
    }
  }
  out.clip_y = illuminance::clip_illuminance(out).clip_y;
  return out;
}

Clip day2dark_mix(const Clip& labeled, const Clip& dark, double alpha, bool mix_audio) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidInput("day2dark_mix: alpha must lie in (0, 1]");
  check_clip(labeled, "day2dark_mix");
  const Clip other = resample_geometry(dark, labeled.frames_t, labeled.height, labeled.width);
  if (other.frames.size() != labeled.frames.size()) throw InvalidInput("day2dark_mix: incompatible geometry");
  Clip out = labeled;
  out.id = labeled.id + "+" + dark.id;
  out.seed = derive_seed(labeled.seed, dark.seed);
  for (std::size_t i = 0; i < out.frames.size(); ++i)
    out.frames[i] = static_cast<float>(alpha * labeled.frames[i] + (1.0 - alpha) * other.frames[i]);
  if (mix_audio) {
    if (dark.sample_rate != labeled.sample_rate || dark.audio.empty())
      throw InvalidInput("day2dark_mix: audio mixing needs matching sample rates");
    for (std::size_t i = 0; i < out.audio.size(); ++i)
      out.audio[i] = static_cast<float>(alpha * labeled.audio[i] + (1.0 - alpha) * dark.audio[i % dark.audio.size()]);
  }
  out.clip_y = illuminance::clip_illuminance(out).clip_y;
  return out;
}

// --- pool filter -------------------------------------------------------------

std::vector<Clip> filter_unlabeled(const std::vector<Clip>& pool, const ConfidenceFn& confidence, double threshold) {
  std::vector<Clip> kept;
  for (const auto& c : pool)
    if (confidence(c) <= threshold) kept.push_back(c);
  return kept;
}

std::vector<Clip> filter_unlabeled(const std::vector<Clip>& pool, const recognizer::Recognizer& model,
                                   double threshold) {
  const bool ml = model.config().multi_label;
  return filter_unlabeled(
      pool,
      [&](const Clip& c) {
        NoGradGuard guard;
        return model.forward(c).probabilities(ml).maxCoeff();
      },
      threshold);
}

}  // namespace d2d::supervision
