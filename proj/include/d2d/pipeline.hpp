#pragma once

// Training orchestration: pseudo-supervised stage 1, darkness-adaptive
// finetuning (stage 2), and the single-stage end-to-end variant.

#include "d2d/recognizer.hpp"
#include "d2d/supervision.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace d2d::pipeline {

enum class Mode { kTwoStage, kEndToEnd };

struct TrainConfig {
  recognizer::RecognizerConfig model;
  double momentum = 0.9;
  int batch_size = 32;
  double lr_stage1 = 0.01;
  double lr_stage2 = 0.3;
  double lambda = 0.01;
  int epochs_stage1 = 10;
  int epochs_stage2 = 5;
  std::uint64_t seed = 0;
  Mode mode = Mode::kTwoStage;
  // Whether stage 2 also updates the classifier heads used by the dark path.
  bool finetune_classifiers = true;
  supervision::MixConfig mix;
  supervision::TargetMode targets = supervision::TargetMode::kLatent;
  supervision::AutoencoderConfig autoencoder;
  double filter_threshold = 0.5;
  bool filter_pool = true;
  // Unlabeled batches interleaved per labeled batch in stage 1.
  int unlabeled_per_labeled = 1;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  static TrainConfig load(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;
};

struct EpochLog {
  std::string stage;
  int epoch = 0;  // 1-based
  int steps = 0;
  double total = 0.0;  // mean over steps
  double ce = 0.0;
  double weighted_u = 0.0;
  double mix = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  recognizer::Checkpoint checkpoint;
  std::vector<EpochLog> log;
};

struct RunOptions {
  // When set, checkpoints (<stage>.ckpt, rewritten every epoch) and
  // <stage>_log.csv are written here.
  std::filesystem::path out_dir;
  // Continue from a checkpoint of the same stage; its epoch count is skipped.
  std::optional<recognizer::Checkpoint> resume;
  // Stop after this many total epochs (for partial runs); -1 = config value.
  int stop_after = -1;
};

// The model config actually trained: pseudo_dim follows the target
// dimension and init_seed follows the run seed.
recognizer::RecognizerConfig effective_model_config(const TrainConfig& cfg, int target_dim);

// Stage 1: L_CE on labeled clips plus lambda * L_U on pool clips. Throws
// PreconditionError naming clip ids when pool clips lack targets.
TrainResult train_stage1(const TrainConfig& cfg, const std::vector<Clip>& labeled, const std::vector<Clip>& pool,
                         const supervision::PseudoTargets& targets, const RunOptions& options = {});

// Stage 2: fusion transformer frozen; only the darkness-adaptive set is
// updated, on day2dark-mix samples routed through the dark path.
TrainResult train_stage2(const TrainConfig& cfg, const std::vector<Clip>& labeled, const std::vector<Clip>& pool,
                         const recognizer::Checkpoint& stage1, const RunOptions& options = {});

// Single stage optimising L_CE + lambda L_U + L_mix.
TrainResult train_end_to_end(const TrainConfig& cfg, const std::vector<Clip>& labeled, const std::vector<Clip>& pool,
                             const supervision::PseudoTargets& targets, const RunOptions& options = {});

// Tensors that stage 2 may change for this configuration.
std::vector<std::string> stage2_trainable(const recognizer::Recognizer& model, const TrainConfig& cfg);

// Builds teachers, trains the autoencoder on the pool and precomputes
// targets, reusing `cache_file` when its fingerprints are current.
supervision::PseudoTargets prepare_targets(const TrainConfig& cfg, const std::vector<Clip>& pool,
                                           const std::filesystem::path& cache_file = {},
                                           supervision::AutoencoderReport* report = nullptr);

struct PipelineResult {
  recognizer::Checkpoint final_checkpoint;
  std::vector<EpochLog> log;
  std::size_t pool_after_filter = 0;
};

// Targets, stage 1, pool filtering with the stage-1 model, stage 2 (or the
// end-to-end variant when cfg.mode says so).
PipelineResult run(const TrainConfig& cfg, const std::vector<Clip>& labeled, const std::vector<Clip>& pool,
                   const std::filesystem::path& out_dir = {});

void write_log_csv(const std::vector<EpochLog>& log, const std::filesystem::path& file);

}  // namespace d2d::pipeline
