#pragma once

// Supervision for clips without labels: frozen auxiliary teachers, the
// autoencoder that compresses their predictions into 64-dim pseudo-labels,
// the training losses, day2dark-mix, and the unlabeled-pool filter.

#include "d2d/autograd.hpp"
#include "d2d/clip.hpp"
#include "d2d/encoders.hpp"
#include "d2d/nn.hpp"
#include "d2d/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace d2d::recognizer {
class Recognizer;
}

namespace d2d::supervision {

// --- teachers ---------------------------------------------------------------

class Teacher {
 public:
  virtual ~Teacher() = default;
  virtual std::string name() const = 0;
  virtual int dim() const = 0;
  virtual RowVec predict(const Clip& clip) const = 0;
  virtual std::uint64_t fingerprint() const = 0;
};

// Frozen, randomly initialised audio-visual embedding network. Frames are
// contrast-normalised per clip before patch embedding, so the output depends
// on scene content more than on exposure.
class EmbeddingTeacher final : public Teacher {
 public:
  EmbeddingTeacher(std::uint64_t seed, int dim = 32, int hidden = 64);
  std::string name() const override { return "embedding"; }
  int dim() const override { return dim_; }
  RowVec predict(const Clip& clip) const override;
  std::uint64_t fingerprint() const override;

 private:
  std::uint64_t seed_;
  int dim_, hidden_;
  int patch_ = 8;
  encoders::AudioEncoderConfig audio_cfg_;
  Mat w_vis_, w_aud_, w_out_;
  RowVec b_vis_, b_aud_;
};

// Coarse sound-source "localisation": correlation between the audio energy
// envelope and the brightness change of each cell of a grid x grid map.
class LocalizationTeacher final : public Teacher {
 public:
  explicit LocalizationTeacher(int grid = 7) : grid_(grid) {}
  std::string name() const override { return "localization"; }
  int dim() const override { return grid_ * grid_; }
  RowVec predict(const Clip& clip) const override;
  std::uint64_t fingerprint() const override;

 private:
  int grid_;
};

// The two default teachers (32-dim embedding, 7x7 map).
std::vector<std::shared_ptr<const Teacher>> default_teachers(std::uint64_t seed);
std::uint64_t teachers_fingerprint(const std::vector<std::shared_ptr<const Teacher>>& teachers);

struct AuxiliaryPredictions {
  std::vector<RowVec> per_teacher;
  std::vector<int> dims() const;
  RowVec concat() const;
};

AuxiliaryPredictions collect_auxiliary_predictions(const Clip& clip,
                                                   const std::vector<std::shared_ptr<const Teacher>>& teachers);

// Predictions for a whole pool, one row per clip. Throws ConsistencyError if
// any teacher's output size changes between clips.
Mat collect_pool_predictions(const std::vector<Clip>& pool,
                             const std::vector<std::shared_ptr<const Teacher>>& teachers);

// --- autoencoder -----------------------------------------------------------

struct AutoencoderConfig {
  std::vector<int> hidden{128, 96};  // encoder widths; the decoder mirrors them
  int latent = 64;
  int epochs = 300;
  int batch_size = 32;
  double lr = 3e-3;
  double lr_decay = 0.99;  // per epoch
  std::uint64_t seed = 0;
};

class Autoencoder {
 public:
  Autoencoder(int input_dim, const AutoencoderConfig& cfg);
  Autoencoder(const Autoencoder&) = delete;
  Autoencoder& operator=(const Autoencoder&) = delete;

  int input_dim() const { return input_dim_; }
  int latent_dim() const { return cfg_.latent; }
  const AutoencoderConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  // Rows are samples. Inputs are standardised with the stored pool
  // statistics; reconstructions are returned in input units.
  Var encode(const Mat& p) const;
  Var decode_standardized(const Var& q) const;
  Mat reconstruct(const Mat& p) const;

  void set_normalization(RowVec mean, RowVec scale);
  const RowVec& mean() const { return mean_; }
  const RowVec& scale() const { return scale_; }
  // Layer stacks, exposed for independent recomputation.
  const std::vector<Linear>& encoder_layers() const { return enc_; }
  const std::vector<Linear>& decoder_layers() const { return dec_; }

  std::uint64_t fingerprint() const;

 private:
  int input_dim_;
  AutoencoderConfig cfg_;
  ParamStore store_;
  std::vector<Linear> enc_, dec_;
  RowVec mean_, scale_;
};

struct AutoencoderReport {
  std::vector<double> epoch_loss;  // mean per-dimension L1, standardised units
};

// Trains on the pool with an L1 reconstruction loss. Throws InvalidInput on
// an empty pool.
std::unique_ptr<Autoencoder> train_autoencoder(const Mat& pool_predictions, const AutoencoderConfig& cfg,
                                               AutoencoderReport* report = nullptr);

// Mean per-dimension L1 of reconstructions, in input units.
double reconstruction_l1(const Autoencoder& ae, const Mat& predictions);
// Same metric for the predictor that always outputs the pool mean.
double mean_predictor_l1(const Mat& predictions);

RowVec pseudo_label(const Autoencoder& ae, const RowVec& p);

// --- pseudo-targets and their cache ----------------------------------------

enum class TargetMode { kLatent, kRaw };

struct PseudoTargets {
  TargetMode mode = TargetMode::kLatent;
  int dim = 0;
  std::uint64_t teacher_fingerprint = 0;
  std::uint64_t autoencoder_fingerprint = 0;  // 0 in raw mode
  std::map<std::string, RowVec> by_clip;
};

// Precomputes targets for every pool clip.
PseudoTargets compute_pseudo_targets(const std::vector<Clip>& pool,
                                     const std::vector<std::shared_ptr<const Teacher>>& teachers,
                                     const Autoencoder* ae, TargetMode mode);

// Binary cache: "D2DPSL\0\0" | u32 version | u8 mode | u64 teacher fp |
// u64 autoencoder fp | u32 dim | u32 n | n x (str id, dim f64).
void save_pseudo_targets(const PseudoTargets& targets, const std::filesystem::path& file);
PseudoTargets load_pseudo_targets(const std::filesystem::path& file);
// True when the cache exists and its fingerprints and clip ids match.
bool cache_is_fresh(const std::filesystem::path& file, std::uint64_t teacher_fp, std::uint64_t ae_fp,
                    TargetMode mode, const std::vector<Clip>& pool);

// --- losses -----------------------------------------------------------------

struct LabeledOutput {
  Var logits;
  int label = -1;
  RowVec labels;  // non-empty for multi-label clips
};

struct UnlabeledOutput {
  Var pseudo;  // q_hat
  RowVec target;
};

struct LossBreakdown {
  Var total;
  double ce = 0.0;        // mean over the labeled batch
  double l1_sum = 0.0;    // sum over the unlabeled batch of per-clip L1
  double weighted_u = 0.0;  // lambda * l1_sum
  double mix = 0.0;       // mean over the mixed batch
  double value() const { return total.item(); }
};

// L_CE + lambda * L_U. Throws InvalidInput on label/target mismatch or
// lambda < 0.
LossBreakdown loss_stage1(const std::vector<LabeledOutput>& labeled, const std::vector<UnlabeledOutput>& unlabeled,
                          double lambda);
// Adds the classification loss over day2dark-mix samples.
LossBreakdown loss_end_to_end(const std::vector<LabeledOutput>& labeled,
                              const std::vector<UnlabeledOutput>& unlabeled, const std::vector<LabeledOutput>& mixed,
                              double lambda);
// Scalar form of the same combination.
inline double combine_losses(double ce, double l1_sum, double mix, double lambda) {
  return ce + lambda * l1_sum + mix;
}

// Softmax cross-entropy or summed binary cross-entropy, depending on the clip.
Var classification_loss(const LabeledOutput& out);

// --- day2dark-mix -----------------------------------------------------------

struct MixConfig {
  double alpha_lo = 0.4;
  double alpha_hi = 1.0;  // exclusive
  bool mix_audio = false;
};

class AlphaSampler {
 public:
  AlphaSampler(std::uint64_t seed, double lo = 0.4, double hi = 1.0);
  double operator()();

 private:
  Rng rng_;
  double lo_, hi_;
};

// Nearest-neighbour resampling to a new (frames, height, width) geometry.
Clip resample_geometry(const Clip& clip, int frames, int height, int width);

// alpha * labeled + (1 - alpha) * dark, pixelwise; the label (and, unless
// mix_audio is set, the audio) come from the labeled clip. Accepts any alpha
// in (0, 1].
Clip day2dark_mix(const Clip& labeled, const Clip& dark, double alpha, bool mix_audio = false);

// --- pool filter -------------------------------------------------------------

using ConfidenceFn = std::function<double(const Clip&)>;

// Keeps clips whose confidence is <= threshold.
std::vector<Clip> filter_unlabeled(const std::vector<Clip>& pool, const ConfidenceFn& confidence,
                                   double threshold = 0.5);
// Confidence = largest class probability of the model.
std::vector<Clip> filter_unlabeled(const std::vector<Clip>& pool, const recognizer::Recognizer& model,
                                   double threshold = 0.5);

}  // namespace d2d::supervision
