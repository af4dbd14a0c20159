#pragma once

// Darkness-adaptive audio-visual recognizer.
//
//   clip --visual encoder--> F --probe--> beta (K-way softmax)
//                            F --K projections, beta-weighted--> V
//   clip --audio encoder---> A' --E^a--> A
//   beta --K prompts, beta-weighted--> O
//   [V, A, O] --fusion transformer--> tokens
//   tokens[first prompt slot] --K classifiers, beta-weighted--> y
//   tokens[second prompt slot] --pseudo head--> q_hat
//
// Clips with clip_Y > t skip the probe and use a single day branch
// (one projection, one prompt, one classifier). Each adaptive component can
// be switched off, in which case the dark path reuses the day branch's
// version of it; with everything off the model is a plain multimodal
// transformer with learned readout tokens.

#include "d2d/autograd.hpp"
#include "d2d/clip.hpp"
#include "d2d/encoders.hpp"
#include "d2d/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace d2d::recognizer {

struct RecognizerConfig {
  int n_classes = 8;
  bool multi_label = false;
  encoders::VisualEncoderConfig visual;
  encoders::AudioEncoderConfig audio;
  bool use_audio = true;

  int d_in = 256;
  int heads = 8;
  int mlp_ratio = 4;
  int probe_layers = 3;
  int fusion_layers = 6;
  int branches = 5;        // K
  int prompt_tokens = 10;  // l
  int pseudo_dim = 64;

  bool adaptive_encoder = true;
  bool adaptive_prompts = true;
  bool adaptive_classifier = true;
  bool tie_day_branch = false;

  double t = 40.0;
  std::uint64_t init_seed = 0;

  bool any_adaptive() const { return adaptive_encoder || adaptive_prompts || adaptive_classifier; }
  void validate() const;
  std::string to_json() const;
  static RecognizerConfig from_json(const std::string& text);
  // Hash of the architecture-defining fields.
  std::uint64_t fingerprint() const;
};

enum class Path { kDay, kDark };

struct RecognizerOutput {
  Var logits;  // 1 x n
  Var pseudo;  // 1 x pseudo_dim
  Var beta;    // 1 x K
  Path path = Path::kDay;
  std::vector<Var> branch_logits;  // per-branch y_k when adaptive classification ran

  // Softmax (single-label) or elementwise sigmoid (multi-label) of logits.
  RowVec probabilities(bool multi_label) const;
};

enum class Route { kByIlluminance, kForceDay, kForceDark };

// Audio cells are a pure function of the waveform, so training loops keep
// them per clip instead of recomputing spectrograms every epoch.
struct FeatureCache {
  std::map<std::string, Mat> audio_cells;
};

class Recognizer {
 public:
  explicit Recognizer(const RecognizerConfig& cfg);
  Recognizer(const Recognizer&) = delete;
  Recognizer& operator=(const Recognizer&) = delete;

  const RecognizerConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  int visual_tokens() const { return n_v_; }
  int audio_tokens() const { return n_a_; }
  int sequence_length() const { return n_v_ + n_a_ + cfg_.prompt_tokens; }
  int prediction_slot() const { return n_v_ + n_a_; }
  int pseudo_slot() const { return n_v_ + n_a_ + 1; }

  // Encoders.
  const encoders::VisualEncoder& visual_encoder() const { return *visual_; }
  encoders::VisualFeatures encode_visual(const Clip& clip) const;
  Var encode_audio(const Clip& clip) const;  // A (projected), n_a x d_in
  Var encode_audio_cells(const Mat& cells) const;

  // Adaptive components.
  Var darkness_probe(const Var& visual_tokens) const;
  Var adaptive_encode(const Var& visual_tokens, const Var& beta) const;
  Var generate_prompt(const Var& beta) const;
  Var fuse(const Var& v, const Var& a, const Var& o) const;
  Var classify(const Var& fused, const Var& beta, std::vector<Var>* branch_logits = nullptr) const;
  Var pseudo_predict(const Var& fused) const;

  RecognizerOutput forward(const Clip& clip, Route route = Route::kByIlluminance) const;
  // Same, reading/filling the audio cells of `audio_key` in the cache.
  RecognizerOutput forward(const Clip& clip, Route route, FeatureCache& cache, const std::string& audio_key) const;
  // Forward from already-encoded features; audio may be undefined when
  // use_audio is off.
  RecognizerOutput forward_features(const Var& visual_tokens, const Var& audio, double clip_y,
                                    Route route = Route::kByIlluminance) const;

  bool is_day(double clip_y) const { return clip_y > cfg_.t; }

  // Names of the parameters that darkness-adaptive finetuning updates.
  std::vector<std::string> dark_path_parameters(bool include_classifiers) const;

 private:
  Var day_projection(const Var& f) const;
  Var day_prompt() const;
  Var day_classify(const Var& token) const;

  RecognizerConfig cfg_;
  ParamStore store_;
  std::unique_ptr<encoders::ToyVisualEncoder> visual_;
  std::unique_ptr<encoders::ToyAudioEncoder> audio_;
  int n_v_ = 0;
  int n_a_ = 0;

  Parameter* audio_proj_ = nullptr;

  // probe
  Linear probe_in_;
  Parameter* probe_pos_ = nullptr;
  Transformer probe_;
  Linear probe_head_;

  std::vector<Parameter*> dark_proj_;
  std::vector<Parameter*> dark_prompt_;
  std::vector<Linear> dark_cls_;
  Parameter* day_proj_ = nullptr;
  Parameter* day_prompt_ = nullptr;
  Linear day_cls_;

  Parameter* fusion_pos_ = nullptr;
  Parameter* fusion_seg_ = nullptr;
  Transformer fusion_;
  Linear pseudo_head_;
  std::vector<int> segment_index_;
};

// --- checkpoints ----------------------------------------------------------
//
// Binary container, little-endian:
//   "D2DCKPT\0" | u32 version | u64 fingerprint | str stage | i32 epoch |
//   str model_config_json | u32 n | n x tensor | u32 m | m x tensor (optimizer)
// where str = u32 length + bytes and tensor = str name | i64 rows | i64 cols |
// rows*cols f64 values (row-major).
struct Checkpoint {
  std::uint64_t fingerprint = 0;
  std::string stage;
  int epoch = 0;
  std::string model_config;
  std::map<std::string, Mat> params;
  std::map<std::string, Mat> optimizer;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

Checkpoint snapshot(const Recognizer& model, const std::string& stage, int epoch,
                    const std::map<std::string, Mat>& optimizer_state = {});
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& file);
// Throws LoadError on malformed files or when expected_fingerprint is given
// and differs from the stored one.
Checkpoint load_checkpoint(const std::filesystem::path& file,
                           std::optional<std::uint64_t> expected_fingerprint = std::nullopt);
// Copies checkpoint tensors into the model; fingerprints must match.
void restore(Recognizer& model, const Checkpoint& ckpt);
std::unique_ptr<Recognizer> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace d2d::recognizer
