#include "d2d/pipeline.hpp"

#include "d2d/io.hpp"
#include "d2d/optim.hpp"
#include "d2d/util.hpp"

#include <json.hpp>

#include <algorithm>
#include <numeric>
#include <set>

namespace d2d::pipeline {

using nlohmann::json;
using recognizer::Checkpoint;
using recognizer::Recognizer;
using recognizer::Route;

// --- config -----------------------------------------------------------------

void TrainConfig::validate() const {
  model.validate();
  if (!(lr_stage1 > 0) || !(lr_stage2 > 0)) throw ConfigError("learning rates must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lambda >= 0)) throw ConfigError("lambda must be >= 0");
  if (epochs_stage1 < 0 || epochs_stage2 < 0) throw ConfigError("epoch counts must be >= 0");
  if (unlabeled_per_labeled < 0) throw ConfigError("unlabeled_per_labeled must be >= 0");
  if (!(mix.alpha_lo > 0 && mix.alpha_lo < mix.alpha_hi && mix.alpha_hi <= 1))
    throw ConfigError("mix alpha range must satisfy 0 < lo < hi <= 1");
  if (!(filter_threshold > 0 && filter_threshold <= 1)) throw ConfigError("filter_threshold must lie in (0, 1]");
}

std::string TrainConfig::to_json() const {
  json j = {
      {"model", json::parse(model.to_json())},
      {"momentum", momentum},
      {"batch_size", batch_size},
      {"lr_stage1", lr_stage1},
      {"lr_stage2", lr_stage2},
      {"lambda", lambda},
      {"epochs_stage1", epochs_stage1},
      {"epochs_stage2", epochs_stage2},
      {"seed", seed},
      {"mode", mode == Mode::kTwoStage ? "two-stage" : "end-to-end"},
      {"finetune_classifiers", finetune_classifiers},
      {"mix", {{"alpha_lo", mix.alpha_lo}, {"alpha_hi", mix.alpha_hi}, {"mix_audio", mix.mix_audio}}},
      {"targets", targets == supervision::TargetMode::kLatent ? "latent" : "raw"},
      {"autoencoder",
       {{"hidden", autoencoder.hidden},
        {"latent", autoencoder.latent},
        {"epochs", autoencoder.epochs},
        {"batch_size", autoencoder.batch_size},
        {"lr", autoencoder.lr},
        {"lr_decay", autoencoder.lr_decay},
        {"seed", autoencoder.seed}}},
      {"filter_threshold", filter_threshold},
      {"filter_pool", filter_pool},
      {"unlabeled_per_labeled", unlabeled_per_labeled},
  };
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  TrainConfig c;
  try {
    const json j = json::parse(text);
    static const std::set<std::string> known{
        "model",  "momentum", "batch_size", "lr_stage1", "lr_stage2",   "lambda",      "epochs_stage1",
        "epochs_stage2", "seed", "mode", "finetune_classifiers", "mix", "targets", "autoencoder",
        "filter_threshold", "filter_pool", "unlabeled_per_labeled"};
    for (const auto& [key, value] : j.items())
      if (!known.count(key)) throw ConfigError("unknown train config key '" + key + "'");
    auto opt = [](const json& o, const char* k, auto& dst) {
      if (o.contains(k)) dst = o.at(k).get<std::decay_t<decltype(dst)>>();
    };
    if (j.contains("model")) c.model = recognizer::RecognizerConfig::from_json(j.at("model").dump());
    opt(j, "momentum", c.momentum);
    opt(j, "batch_size", c.batch_size);
    opt(j, "lr_stage1", c.lr_stage1);
    opt(j, "lr_stage2", c.lr_stage2);
    opt(j, "lambda", c.lambda);
    opt(j, "epochs_stage1", c.epochs_stage1);
    opt(j, "epochs_stage2", c.epochs_stage2);
    opt(j, "seed", c.seed);
    if (j.contains("mode")) {
      const auto m = j.at("mode").get<std::string>();
      if (m == "two-stage")
        c.mode = Mode::kTwoStage;
      else if (m == "end-to-end")
        c.mode = Mode::kEndToEnd;
      else
        throw ConfigError("mode must be two-stage or end-to-end, got " + m);
    }
    opt(j, "finetune_classifiers", c.finetune_classifiers);
    if (j.contains("mix")) {
      opt(j.at("mix"), "alpha_lo", c.mix.alpha_lo);
      opt(j.at("mix"), "alpha_hi", c.mix.alpha_hi);
      opt(j.at("mix"), "mix_audio", c.mix.mix_audio);
    }
    if (j.contains("targets")) {
      const auto t = j.at("targets").get<std::string>();
      if (t == "latent")
        c.targets = supervision::TargetMode::kLatent;
      else if (t == "raw")
        c.targets = supervision::TargetMode::kRaw;
      else
        throw ConfigError("targets must be latent or raw, got " + t);
    }
    if (j.contains("autoencoder")) {
      const auto& a = j.at("autoencoder");
      opt(a, "hidden", c.autoencoder.hidden);
      opt(a, "latent", c.autoencoder.latent);
      opt(a, "epochs", c.autoencoder.epochs);
      opt(a, "batch_size", c.autoencoder.batch_size);
      opt(a, "lr", c.autoencoder.lr);
      opt(a, "lr_decay", c.autoencoder.lr_decay);
      opt(a, "seed", c.autoencoder.seed);
    }
    opt(j, "filter_threshold", c.filter_threshold);
    opt(j, "filter_pool", c.filter_pool);
    opt(j, "unlabeled_per_labeled", c.unlabeled_per_labeled);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& file) { return from_json(io::read_text(file)); }

void TrainConfig::save(const std::filesystem::path& file) const { io::write_text(file, to_json() + "\n"); }

recognizer::RecognizerConfig effective_model_config(const TrainConfig& cfg, int target_dim) {
  auto m = cfg.model;
  if (target_dim > 0) m.pseudo_dim = target_dim;
  m.init_seed = derive_seed(cfg.seed, "init");
  return m;
}

void write_log_csv(const std::vector<EpochLog>& log, const std::filesystem::path& file) {
  std::string text = "stage,epoch,steps,total,ce,lambda_lu,mix,lr\n";
  for (const auto& e : log)
    text += e.stage + "," + std::to_string(e.epoch) + "," + std::to_string(e.steps) + "," + io::format_double(e.total) +
            "," + io::format_double(e.ce) + "," + io::format_double(e.weighted_u) + "," + io::format_double(e.mix) +
            "," + io::format_double(e.lr) + "\n";
  io::write_text(file, text);
}

// --- shared training machinery ------------------------------------------------

namespace {

struct Accumulator {
  int steps = 0;
  double total = 0, ce = 0, u = 0, mix = 0;
  void add(const supervision::LossBreakdown& l) {
    ++steps;
    total += l.value();
    ce += l.ce;
    u += l.weighted_u;
    mix += l.mix;
  }
  EpochLog finish(const std::string& stage, int epoch, double lr) const {
    const double n = std::max(1, steps);
    return {stage, epoch, steps, total / n, ce / n, u / n, mix / n, lr};
  }
};

supervision::LabeledOutput labeled_output(const recognizer::RecognizerOutput& out, const Clip& clip) {
  supervision::LabeledOutput o;
  o.logits = out.logits;
  o.label = clip.label;
  if (clip.multi_label()) {
    o.labels.resize(static_cast<Eigen::Index>(clip.labels.size()));
    for (std::size_t i = 0; i < clip.labels.size(); ++i) o.labels(static_cast<Eigen::Index>(i)) = clip.labels[i];
  }
  return o;
}

void require_labeled(const std::vector<Clip>& labeled) {
  for (const auto& c : labeled)
    if (!c.has_label()) throw PreconditionError("labeled split contains unlabeled clip " + c.id);
}

void require_targets(const std::vector<Clip>& pool, const supervision::PseudoTargets& targets, int model_dim) {
  std::vector<std::string> missing;
  for (const auto& c : pool)
    if (!targets.by_clip.count(c.id)) missing.push_back(c.id);
  if (!missing.empty()) {
    std::string ids;
    for (std::size_t i = 0; i < missing.size() && i < 10; ++i) ids += (i ? ", " : "") + missing[i];
    if (missing.size() > 10) ids += ", ... (" + std::to_string(missing.size()) + " total)";
    throw PreconditionError("pseudo-targets missing for pool clips: " + ids);
  }
  if (!pool.empty() && targets.dim != model_dim)
    throw PreconditionError("pseudo-target dim " + std::to_string(targets.dim) + " differs from model pseudo_dim " +
                            std::to_string(model_dim));
}

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

void maybe_save(const RunOptions& options, const Checkpoint& ckpt, const std::vector<EpochLog>& log) {
  if (options.out_dir.empty()) return;
  recognizer::save_checkpoint(ckpt, options.out_dir / (ckpt.stage + ".ckpt"));
  write_log_csv(log, options.out_dir / (ckpt.stage + "_log.csv"));
}

int resume_epoch(const RunOptions& options, const std::string& stage, Recognizer& model, Sgd& opt) {
  if (!options.resume) return 0;
  const Checkpoint& c = *options.resume;
  if (c.stage != stage) throw LoadError("cannot resume " + stage + " from a " + c.stage + " checkpoint");
  recognizer::restore(model, c);
  opt.load_state(c.optimizer);
  return c.epoch;
}

std::vector<Parameter*> lookup(ParamStore& store, const std::vector<std::string>& names) {
  std::vector<Parameter*> out;
  for (const auto& n : names) out.push_back(&store.get(n));
  return out;
}

std::vector<std::size_t> day_indices(const std::vector<Clip>& labeled, double t) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < labeled.size(); ++i)
    if (labeled[i].clip_y > t) idx.push_back(i);
  return idx;
}

// Labeled (+ optional unlabeled and mixed) training shared by stage 1 and
// the end-to-end variant.
TrainResult train_joint(const TrainConfig& cfg, const std::vector<Clip>& labeled, const std::vector<Clip>& pool,
                        const supervision::PseudoTargets& targets, const RunOptions& options, bool with_mix) {
  cfg.validate();
  require_labeled(labeled);
  const std::string stage = with_mix ? "e2e" : "stage1";
  const bool use_pool = cfg.lambda > 0.0 && cfg.unlabeled_per_labeled > 0 && !pool.empty();
  const int target_dim = pool.empty() ? 0 : targets.dim;
  Recognizer model(effective_model_config(cfg, use_pool || with_mix ? target_dim : 0));
  if (use_pool) require_targets(pool, targets, model.config().pseudo_dim);

  Sgd opt(model.params().all(), cfg.lr_stage1, cfg.momentum);
  TrainResult result;
  const int start = resume_epoch(options, stage, model, opt);
  const int end = options.stop_after >= 0 ? std::min(options.stop_after, cfg.epochs_stage1) : cfg.epochs_stage1;

  recognizer::FeatureCache cache;
  const std::size_t B = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t UB = B * static_cast<std::size_t>(cfg.unlabeled_per_labeled);
  const auto day = day_indices(labeled, cfg.model.t);
  const bool mixing = with_mix && !pool.empty() && !day.empty();

  for (int epoch = start + 1; epoch <= end; ++epoch) {
    const std::uint64_t es = derive_seed(derive_seed(cfg.seed, stage), static_cast<std::uint64_t>(epoch));
    Rng order_rng(derive_seed(es, "labeled"));
    Rng pool_rng(derive_seed(es, "pool"));
    Rng mix_rng(derive_seed(es, "mix"));
    supervision::AlphaSampler alpha(derive_seed(es, "alpha"), cfg.mix.alpha_lo, cfg.mix.alpha_hi);
    auto order = iota_n(labeled.size());
    order_rng.shuffle(order.begin(), order.end());
    auto pool_order = iota_n(pool.size());
    if (use_pool) pool_rng.shuffle(pool_order.begin(), pool_order.end());
    std::size_t pool_cursor = 0;

    Accumulator acc;
    for (std::size_t s = 0; s < order.size(); s += B) {
      const std::size_t e = std::min(order.size(), s + B);
      std::vector<supervision::LabeledOutput> lab, mixed;
      std::vector<supervision::UnlabeledOutput> unl;
      for (std::size_t i = s; i < e; ++i) {
        const Clip& c = labeled[order[i]];
        lab.push_back(labeled_output(model.forward(c, Route::kByIlluminance, cache, c.id), c));
      }
      if (use_pool) {
        for (std::size_t k = 0; k < UB; ++k) {
          const Clip& c = pool[pool_order[pool_cursor++ % pool.size()]];
          unl.push_back({model.forward(c, Route::kByIlluminance, cache, c.id).pseudo, targets.by_clip.at(c.id)});
        }
      }
      if (mixing) {
        for (std::size_t i = s; i < e; ++i) {
          const Clip& c = labeled[order[i]];
          if (!(c.clip_y > cfg.model.t)) continue;
          const Clip& d = pool[mix_rng.index(pool.size())];
          const Clip m = supervision::day2dark_mix(c, d, alpha(), cfg.mix.mix_audio);
          auto out = cfg.mix.mix_audio ? model.forward(m, Route::kForceDark)
                                       : model.forward(m, Route::kForceDark, cache, c.id);
          mixed.push_back(labeled_output(out, m));
        }
      }
      auto loss = with_mix ? supervision::loss_end_to_end(lab, unl, mixed, cfg.lambda)
                           : supervision::loss_stage1(lab, unl, cfg.lambda);
      opt.zero_grad();
      loss.total.backward();
      opt.step();
      acc.add(loss);
    }
    result.log.push_back(acc.finish(stage, epoch, opt.lr()));
    result.checkpoint = recognizer::snapshot(model, stage, epoch, opt.state());
    maybe_save(options, result.checkpoint, result.log);
  }
  if (end <= start) result.checkpoint = recognizer::snapshot(model, stage, start, opt.state());
  return result;
}

}  // namespace

TrainResult train_stage1(const TrainConfig& cfg, const std::vector<Clip>& labeled, const std::vector<Clip>& pool,
                         const supervision::PseudoTargets& targets, const RunOptions& options) {
  return train_joint(cfg, labeled, pool, targets, options, false);
}

TrainResult train_end_to_end(const TrainConfig& cfg, const std::vector<Clip>& labeled, const std::vector<Clip>& pool,
                             const supervision::PseudoTargets& targets, const RunOptions& options) {
  return train_joint(cfg, labeled, pool, targets, options, true);
}

std::vector<std::string> stage2_trainable(const Recognizer& model, const TrainConfig& cfg) {
  return model.dark_path_parameters(cfg.finetune_classifiers);
}

TrainResult train_stage2(const TrainConfig& cfg, const std::vector<Clip>& labeled, const std::vector<Clip>& pool,
                         const Checkpoint& stage1, const RunOptions& options) {
  cfg.validate();
  require_labeled(labeled);
  const auto stored = recognizer::RecognizerConfig::from_json(stage1.model_config);
  const auto expected = effective_model_config(cfg, stored.pseudo_dim);
  if (stage1.fingerprint != expected.fingerprint())
    throw LoadError("stage-1 checkpoint fingerprint " + hex64(stage1.fingerprint) +
                    " does not match the configured model " + hex64(expected.fingerprint()));
  Recognizer model(expected);
  recognizer::restore(model, stage1);

  const auto names = stage2_trainable(model, cfg);
  Sgd opt(lookup(model.params(), names), cfg.lr_stage2, cfg.momentum);
  TrainResult result;
  const int start = resume_epoch(options, "stage2", model, opt);
  const int end = options.stop_after >= 0 ? std::min(options.stop_after, cfg.epochs_stage2) : cfg.epochs_stage2;
  const auto day = day_indices(labeled, cfg.model.t);
  if (end > start && (pool.empty() || day.empty()))
    throw PreconditionError("stage 2 needs day-lit labeled clips and a non-empty unlabeled pool");

  recognizer::FeatureCache cache;
  const std::size_t B = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = start + 1; epoch <= end; ++epoch) {
    const std::uint64_t es = derive_seed(derive_seed(cfg.seed, "stage2"), static_cast<std::uint64_t>(epoch));
    Rng order_rng(derive_seed(es, "labeled"));
    Rng mix_rng(derive_seed(es, "mix"));
    supervision::AlphaSampler alpha(derive_seed(es, "alpha"), cfg.mix.alpha_lo, cfg.mix.alpha_hi);
    auto order = day;
    order_rng.shuffle(order.begin(), order.end());
    Accumulator acc;
    for (std::size_t s = 0; s < order.size(); s += B) {
      const std::size_t e = std::min(order.size(), s + B);
      std::vector<supervision::LabeledOutput> mixed;
      for (std::size_t i = s; i < e; ++i) {
        const Clip& c = labeled[order[i]];
        const Clip& d = pool[mix_rng.index(pool.size())];
        const Clip m = supervision::day2dark_mix(c, d, alpha(), cfg.mix.mix_audio);
        auto out = cfg.mix.mix_audio ? model.forward(m, Route::kForceDark)
                                     : model.forward(m, Route::kForceDark, cache, c.id);
        mixed.push_back(labeled_output(out, m));
      }
      auto loss = supervision::loss_end_to_end({}, {}, mixed, 0.0);
      opt.zero_grad();
      loss.total.backward();
      opt.step();
      acc.add(loss);
    }
    result.log.push_back(acc.finish("stage2", epoch, opt.lr()));
    result.checkpoint = recognizer::snapshot(model, "stage2", epoch, opt.state());
    maybe_save(options, result.checkpoint, result.log);
  }
  if (end <= start) result.checkpoint = recognizer::snapshot(model, "stage2", start, opt.state());
  return result;
}

// --- orchestration ----------------------------------------------------------

supervision::PseudoTargets prepare_targets(const TrainConfig& cfg, const std::vector<Clip>& pool,
                                           const std::filesystem::path& cache_file,
                                           supervision::AutoencoderReport* report) {
  using namespace supervision;
  const auto teachers = default_teachers(derive_seed(cfg.seed, "teachers"));
  const auto tfp = teachers_fingerprint(teachers);
  if (pool.empty()) {
    PseudoTargets empty;
    empty.mode = cfg.targets;
    empty.teacher_fingerprint = tfp;
    return empty;
  }
  std::unique_ptr<Autoencoder> ae;
  if (cfg.targets == TargetMode::kLatent) {
    auto ae_cfg = cfg.autoencoder;
    ae_cfg.seed = derive_seed(cfg.seed, ae_cfg.seed);
    ae = train_autoencoder(collect_pool_predictions(pool, teachers), ae_cfg, report);
  }
  const std::uint64_t afp = ae ? ae->fingerprint() : 0;
  if (!cache_file.empty() && cache_is_fresh(cache_file, tfp, afp, cfg.targets, pool))
    return load_pseudo_targets(cache_file);
  auto targets = compute_pseudo_targets(pool, teachers, ae.get(), cfg.targets);
  if (!cache_file.empty()) save_pseudo_targets(targets, cache_file);
  return targets;
}

PipelineResult run(const TrainConfig& cfg, const std::vector<Clip>& labeled, const std::vector<Clip>& pool,
                   const std::filesystem::path& out_dir) {
  cfg.validate();
  PipelineResult out;
  const bool need_targets = cfg.lambda > 0.0 && !pool.empty();
  supervision::PseudoTargets targets;
  if (need_targets)
    targets = prepare_targets(cfg, pool, out_dir.empty() ? std::filesystem::path{} : out_dir / "pseudo_targets.bin");
  RunOptions opts;
  opts.out_dir = out_dir;

  if (cfg.mode == Mode::kEndToEnd) {
    auto r = train_end_to_end(cfg, labeled, pool, targets, opts);
    out.final_checkpoint = std::move(r.checkpoint);
    out.log = std::move(r.log);
    out.pool_after_filter = pool.size();
  } else {
    auto s1 = train_stage1(cfg, labeled, pool, targets, opts);
    out.log = s1.log;
    std::vector<Clip> mix_pool = pool;
    if (cfg.filter_pool && !pool.empty()) {
      auto model = recognizer::model_from_checkpoint(s1.checkpoint);
      mix_pool = supervision::filter_unlabeled(pool, *model, cfg.filter_threshold);
      // An empty filtered pool would leave nothing to mix with.
      if (mix_pool.empty()) mix_pool = pool;
    }
    out.pool_after_filter = mix_pool.size();
    auto s2 = train_stage2(cfg, labeled, mix_pool, s1.checkpoint, opts);
    out.final_checkpoint = std::move(s2.checkpoint);
    out.log.insert(out.log.end(), s2.log.begin(), s2.log.end());
  }
  if (!out_dir.empty()) {
    recognizer::save_checkpoint(out.final_checkpoint, out_dir / "final.ckpt");
    write_log_csv(out.log, out_dir / "train_log.csv");
  }
  return out;
}

}  // namespace d2d::pipeline
