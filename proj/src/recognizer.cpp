#include "d2d/recognizer.hpp"

#include "d2d/io.hpp"
#include "d2d/util.hpp"

#include <json.hpp>

#include <cstring>

namespace d2d::recognizer {

using nlohmann::json;

// --- config -----------------------------------------------------------------

void RecognizerConfig::validate() const {
  if (n_classes < 1) throw ConfigError("n_classes must be >= 1");
  if (branches < 1) throw ConfigError("branch count K must be >= 1");
  if (prompt_tokens < 2) throw ConfigError("prompt length l must be >= 2 (prediction and pseudo-label slots)");
  if (d_in < 1 || heads < 1 || d_in % heads != 0)
    throw ConfigError("d_in " + std::to_string(d_in) + " must be divisible by " + std::to_string(heads) + " heads");
  if (mlp_ratio < 1) throw ConfigError("mlp_ratio must be >= 1");
  if (probe_layers < 0 || fusion_layers < 1) throw ConfigError("layer counts out of range");
  if (pseudo_dim < 1) throw ConfigError("pseudo_dim must be >= 1");
  if (!(t > 0.0)) throw ConfigError("threshold t must be > 0");
  if (any_adaptive() && probe_layers < 1) throw ConfigError("adaptive components need a probe with >= 1 layer");
  encoders::patch_layout(visual);
}

namespace {

json config_json(const RecognizerConfig& c, bool with_seed) {
  json j = {
      {"n_classes", c.n_classes},
      {"multi_label", c.multi_label},
      {"visual",
       {{"frames", c.visual.frames},
        {"height", c.visual.height},
        {"width", c.visual.width},
        {"patch", {c.visual.patch_t, c.visual.patch_h, c.visual.patch_w}},
        {"conv_channels", c.visual.conv_channels},
        {"d_v", c.visual.d_v}}},
      {"audio",
       {{"window_ms", c.audio.spectrogram.window_ms},
        {"hop_ms", c.audio.spectrogram.hop_ms},
        {"bands", c.audio.spectrogram.bands},
        {"floor", c.audio.spectrogram.floor},
        {"band_groups", c.audio.band_groups},
        {"time_chunks", c.audio.time_chunks},
        {"d_a", c.audio.d_a}}},
      {"use_audio", c.use_audio},
      {"d_in", c.d_in},
      {"heads", c.heads},
      {"mlp_ratio", c.mlp_ratio},
      {"probe_layers", c.probe_layers},
      {"fusion_layers", c.fusion_layers},
      {"branches", c.branches},
      {"prompt_tokens", c.prompt_tokens},
      {"pseudo_dim", c.pseudo_dim},
      {"adaptive_encoder", c.adaptive_encoder},
      {"adaptive_prompts", c.adaptive_prompts},
      {"adaptive_classifier", c.adaptive_classifier},
      {"tie_day_branch", c.tie_day_branch},
      {"t", c.t},
  };
  if (with_seed) j["init_seed"] = c.init_seed;
  return j;
}

}  // namespace

std::string RecognizerConfig::to_json() const { return config_json(*this, true).dump(); }

RecognizerConfig RecognizerConfig::from_json(const std::string& text) {
  RecognizerConfig c;
  try {
    const json j = json::parse(text);
    auto opt = [&](const json& o, const char* k, auto& dst) {
      if (o.contains(k)) dst = o.at(k).get<std::decay_t<decltype(dst)>>();
    };
    opt(j, "n_classes", c.n_classes);
    opt(j, "multi_label", c.multi_label);
    if (j.contains("visual")) {
      const auto& v = j.at("visual");
      opt(v, "frames", c.visual.frames);
      opt(v, "height", c.visual.height);
      opt(v, "width", c.visual.width);
      if (v.contains("patch")) {
        c.visual.patch_t = v.at("patch").at(0).get<int>();
        c.visual.patch_h = v.at("patch").at(1).get<int>();
        c.visual.patch_w = v.at("patch").at(2).get<int>();
      }
      opt(v, "conv_channels", c.visual.conv_channels);
      opt(v, "d_v", c.visual.d_v);
    }
    if (j.contains("audio")) {
      const auto& a = j.at("audio");
      opt(a, "window_ms", c.audio.spectrogram.window_ms);
      opt(a, "hop_ms", c.audio.spectrogram.hop_ms);
      opt(a, "bands", c.audio.spectrogram.bands);
      opt(a, "floor", c.audio.spectrogram.floor);
      opt(a, "band_groups", c.audio.band_groups);
      opt(a, "time_chunks", c.audio.time_chunks);
      opt(a, "d_a", c.audio.d_a);
    }
    opt(j, "use_audio", c.use_audio);
    opt(j, "d_in", c.d_in);
    opt(j, "heads", c.heads);
    opt(j, "mlp_ratio", c.mlp_ratio);
    opt(j, "probe_layers", c.probe_layers);
    opt(j, "fusion_layers", c.fusion_layers);
    opt(j, "branches", c.branches);
    opt(j, "prompt_tokens", c.prompt_tokens);
    opt(j, "pseudo_dim", c.pseudo_dim);
    opt(j, "adaptive_encoder", c.adaptive_encoder);
    opt(j, "adaptive_prompts", c.adaptive_prompts);
    opt(j, "adaptive_classifier", c.adaptive_classifier);
    opt(j, "tie_day_branch", c.tie_day_branch);
    opt(j, "t", c.t);
    opt(j, "init_seed", c.init_seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("recognizer config: ") + e.what());
  }
  return c;
}

std::uint64_t RecognizerConfig::fingerprint() const {
  Fnv1a h;
  h.update(config_json(*this, false).dump());
  return h.digest();
}

RowVec RecognizerOutput::probabilities(bool multi_label) const {
  const Mat& z = logits.value();
  RowVec p(z.cols());
  if (multi_label) {
    for (Eigen::Index c = 0; c < z.cols(); ++c) p(c) = 1.0 / (1.0 + std::exp(-z(0, c)));
  } else {
    const double m = z.maxCoeff();
    for (Eigen::Index c = 0; c < z.cols(); ++c) p(c) = std::exp(z(0, c) - m);
    p /= p.sum();
  }
  return p;
}

// --- model ------------------------------------------------------------------

namespace {

constexpr double kEmbedInitSd = 0.02;

Var one_hot_beta(int k) {
  Mat b = Mat::Zero(1, k);
  b(0, 0) = 1.0;
  return Var::constant(std::move(b));
}

}  // namespace

Recognizer::Recognizer(const RecognizerConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  auto rng_for = [&](const std::string& name) { return Rng(derive_seed(cfg_.init_seed, name)); };
  const int d = cfg_.d_in;
  const int mlp = d * cfg_.mlp_ratio;
  const int K = cfg_.branches;
  const int l = cfg_.prompt_tokens;

  {
    Rng r = rng_for("visual");
    visual_ = std::make_unique<encoders::ToyVisualEncoder>(store_, "visual", cfg_.visual, r);
  }
  n_v_ = visual_->feature_dims().tokens;
  const int d_v = cfg_.visual.d_v;
  if (cfg_.use_audio) {
    Rng r = rng_for("audio");
    audio_ = std::make_unique<encoders::ToyAudioEncoder>(store_, "audio", cfg_.audio, r);
    n_a_ = audio_->feature_dims().tokens;
    Rng rp = rng_for("audio_proj");
    audio_proj_ = &store_.add("audio_proj", init::xavier_uniform(cfg_.audio.d_a, d, rp));
  }

  if (cfg_.any_adaptive()) {
    Rng r = rng_for("probe");
    probe_in_ = Linear::create(store_, "probe.in", d_v, d, r);
    probe_pos_ = &store_.add("probe.pos", init::normal(n_v_, d, kEmbedInitSd, r));
    probe_ = Transformer::create(store_, "probe", cfg_.probe_layers, d, cfg_.heads, mlp, r);
    // Zero head: equal logits, so beta starts uniform.
    probe_head_.w = &store_.add("probe.head.w", Mat::Zero(d, K));
    probe_head_.b = &store_.add("probe.head.b", Mat::Zero(1, K));
  }

  for (int k = 0; k < K; ++k) {
    const std::string s = std::to_string(k);
    if (cfg_.adaptive_encoder) {
      Rng r = rng_for("dark.proj." + s);
      dark_proj_.push_back(&store_.add("dark.proj." + s, init::xavier_uniform(d_v, d, r)));
    }
    if (cfg_.adaptive_prompts) {
      Rng r = rng_for("dark.prompt." + s);
      dark_prompt_.push_back(&store_.add("dark.prompt." + s, init::normal(l, d, kEmbedInitSd, r)));
    }
    if (cfg_.adaptive_classifier) {
      Rng r = rng_for("dark.cls." + s);
      dark_cls_.push_back(Linear::create(store_, "dark.cls." + s, d, cfg_.n_classes, r));
    }
  }
  const bool tie = cfg_.tie_day_branch;
  if (!(tie && cfg_.adaptive_encoder)) {
    Rng r = rng_for("day.proj");
    day_proj_ = &store_.add("day.proj", init::xavier_uniform(d_v, d, r));
  }
  if (!(tie && cfg_.adaptive_prompts)) {
    Rng r = rng_for("day.prompt");
    day_prompt_ = &store_.add("day.prompt", init::normal(l, d, kEmbedInitSd, r));
  }
  if (!(tie && cfg_.adaptive_classifier)) {
    Rng r = rng_for("day.cls");
    day_cls_ = Linear::create(store_, "day.cls", d, cfg_.n_classes, r);
  }

  {
    Rng r = rng_for("fusion");
    fusion_pos_ = &store_.add("fusion.pos", init::normal(sequence_length(), d, kEmbedInitSd, r));
    fusion_seg_ = &store_.add("fusion.segment", init::normal(3, d, kEmbedInitSd, r));
    fusion_ = Transformer::create(store_, "fusion", cfg_.fusion_layers, d, cfg_.heads, mlp, r);
  }
  {
    Rng r = rng_for("pseudo_head");
    pseudo_head_ = Linear::create(store_, "pseudo_head", d, cfg_.pseudo_dim, r);
  }
  segment_index_.assign(static_cast<std::size_t>(n_v_), 0);
  segment_index_.insert(segment_index_.end(), static_cast<std::size_t>(n_a_), 1);
  segment_index_.insert(segment_index_.end(), static_cast<std::size_t>(l), 2);
}

encoders::VisualFeatures Recognizer::encode_visual(const Clip& clip) const { return visual_->encode(clip); }

Var Recognizer::encode_audio(const Clip& clip) const {
  if (!audio_) return Var();
  return encoders::project_audio(audio_->encode(clip.audio, clip.sample_rate).tokens, Var::param(*audio_proj_));
}

Var Recognizer::encode_audio_cells(const Mat& cells) const {
  if (!audio_) return Var();
  return encoders::project_audio(audio_->encode_cells(cells).tokens, Var::param(*audio_proj_));
}

Var Recognizer::darkness_probe(const Var& f) const {
  if (!cfg_.any_adaptive()) throw ConfigError("darkness_probe: model has no adaptive components");
  if (f.rows() != n_v_ || f.cols() != cfg_.visual.d_v)
    throw ShapeError("darkness_probe: expected " + std::to_string(n_v_) + "x" + std::to_string(cfg_.visual.d_v) +
                     " visual tokens");
  Var h = ops::add(probe_in_(f), Var::param(*probe_pos_));
  Var pooled = ops::mean_rows(probe_(h));
  Var logits = probe_head_(pooled);
  if (logits.cols() != cfg_.branches) throw ConfigError("darkness_probe: head width does not match K");
  return ops::softmax_rows(logits);
}

Var Recognizer::adaptive_encode(const Var& f, const Var& beta) const {
  if (!cfg_.adaptive_encoder) throw ConfigError("adaptive_encode: adaptive encoder disabled");
  std::vector<Var> branches;
  for (auto* e : dark_proj_) branches.push_back(ops::matmul(f, Var::param(*e)));
  return ops::weighted_sum(branches, beta);
}

Var Recognizer::generate_prompt(const Var& beta) const {
  if (!cfg_.adaptive_prompts) throw ConfigError("generate_prompt: adaptive prompts disabled");
  std::vector<Var> prompts;
  for (auto* o : dark_prompt_) prompts.push_back(Var::param(*o));
  return ops::weighted_sum(prompts, beta);
}

Var Recognizer::fuse(const Var& v, const Var& a, const Var& o) const {
  const int d = cfg_.d_in;
  auto check = [&](const Var& x, int rows, const char* what) {
    if (x.cols() != d)
      throw ShapeError(std::string("fuse: ") + what + " width " + std::to_string(x.cols()) + " != d_in " +
                       std::to_string(d));
    if (x.rows() != rows)
      throw ShapeError(std::string("fuse: ") + what + " has " + std::to_string(x.rows()) + " tokens, expected " +
                       std::to_string(rows));
  };
  check(v, n_v_, "V");
  check(o, cfg_.prompt_tokens, "O");
  std::vector<Var> parts{v};
  if (cfg_.use_audio) {
    if (!a.defined()) throw ShapeError("fuse: audio tokens missing");
    check(a, n_a_, "A");
    parts.push_back(a);
  }
  parts.push_back(o);
  Var x = ops::concat_rows(parts);
  x = ops::add(x, Var::param(*fusion_pos_));
  x = ops::add(x, ops::gather_rows(Var::param(*fusion_seg_), segment_index_, 1));
  return fusion_(x);
}

Var Recognizer::classify(const Var& fused, const Var& beta, std::vector<Var>* branch_logits) const {
  if (!cfg_.adaptive_classifier) throw ConfigError("classify: adaptive classification disabled");
  Var tok = ops::row(fused, prediction_slot());
  std::vector<Var> ys;
  for (const auto& g : dark_cls_) ys.push_back(g(tok));
  if (branch_logits) *branch_logits = ys;
  return ops::weighted_sum(ys, beta);
}

Var Recognizer::pseudo_predict(const Var& fused) const { return pseudo_head_(ops::row(fused, pseudo_slot())); }

Var Recognizer::day_projection(const Var& f) const {
  return ops::matmul(f, Var::param(day_proj_ ? *day_proj_ : *dark_proj_[0]));
}

Var Recognizer::day_prompt() const { return Var::param(day_prompt_ ? *day_prompt_ : *dark_prompt_[0]); }

Var Recognizer::day_classify(const Var& token) const { return day_cls_.w ? day_cls_(token) : dark_cls_[0](token); }

RecognizerOutput Recognizer::forward_features(const Var& f, const Var& a, double clip_y, Route route) const {
  RecognizerOutput out;
  const bool day = route == Route::kForceDay || (route == Route::kByIlluminance && is_day(clip_y));
  out.path = day ? Path::kDay : Path::kDark;
  Var fused;
  if (day) {
    out.beta = one_hot_beta(cfg_.branches);
    fused = fuse(day_projection(f), a, day_prompt());
    out.logits = day_classify(ops::row(fused, prediction_slot()));
  } else {
    out.beta = cfg_.any_adaptive() ? darkness_probe(f) : one_hot_beta(cfg_.branches);
    Var v = cfg_.adaptive_encoder ? adaptive_encode(f, out.beta) : day_projection(f);
    Var o = cfg_.adaptive_prompts ? generate_prompt(out.beta) : day_prompt();
    fused = fuse(v, a, o);
    out.logits = cfg_.adaptive_classifier ? classify(fused, out.beta, &out.branch_logits)
                                          : day_classify(ops::row(fused, prediction_slot()));
  }
  out.pseudo = pseudo_predict(fused);
  return out;
}

RecognizerOutput Recognizer::forward(const Clip& clip, Route route) const {
  return forward_features(encode_visual(clip).tokens, encode_audio(clip), clip.clip_y, route);
}

RecognizerOutput Recognizer::forward(const Clip& clip, Route route, FeatureCache& cache,
                                     const std::string& audio_key) const {
  Var a;
  if (audio_) {
    auto it = cache.audio_cells.find(audio_key);
    if (it == cache.audio_cells.end())
      it = cache.audio_cells.emplace(audio_key, encoders::audio_cells(clip.audio, clip.sample_rate, cfg_.audio)).first;
    a = encode_audio_cells(it->second);
  }
  return forward_features(encode_visual(clip).tokens, a, clip.clip_y, route);
}

std::vector<std::string> Recognizer::dark_path_parameters(bool include_classifiers) const {
  std::vector<std::string> names;
  auto add_prefix = [&](const std::string& prefix) {
    for (const auto* p : store_.all())
      if (p->name.compare(0, prefix.size(), prefix) == 0) names.push_back(p->name);
  };
  if (cfg_.any_adaptive()) add_prefix("probe.");
  if (cfg_.adaptive_encoder)
    add_prefix("dark.proj.");
  else
    names.push_back(day_proj_->name);
  if (cfg_.adaptive_prompts)
    add_prefix("dark.prompt.");
  else
    names.push_back(day_prompt_->name);
  if (include_classifiers) {
    if (cfg_.adaptive_classifier)
      add_prefix("dark.cls.");
    else
      add_prefix("day.cls.");
  }
  return names;
}

// --- checkpoints ------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'D', '2', 'D', 'C', 'K', 'P', 'T', '\0'};

void put_tensors(io::BinaryWriter& out, const std::map<std::string, Mat>& m) {
  out.put(static_cast<std::uint32_t>(m.size()));
  for (const auto& [name, t] : m) {
    out.put_str(name);
    out.put_mat(t);
  }
}

std::map<std::string, Mat> get_tensors(io::BinaryReader& in) {
  std::map<std::string, Mat> m;
  const auto n = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = in.get_str();
    m.emplace(std::move(name), in.get_mat());
  }
  return m;
}

}  // namespace

Checkpoint snapshot(const Recognizer& model, const std::string& stage, int epoch,
                    const std::map<std::string, Mat>& optimizer_state) {
  Checkpoint c;
  c.fingerprint = model.config().fingerprint();
  c.stage = stage;
  c.epoch = epoch;
  c.model_config = model.config().to_json();
  for (const auto* p : model.params().all()) c.params[p->name] = p->value;
  c.optimizer = optimizer_state;
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& file) {
  io::BinaryWriter out(file);
  out.put_bytes(kMagic, sizeof kMagic);
  out.put(kCheckpointVersion);
  out.put(ckpt.fingerprint);
  out.put_str(ckpt.stage);
  out.put(static_cast<std::int32_t>(ckpt.epoch));
  out.put_str(ckpt.model_config);
  put_tensors(out, ckpt.params);
  put_tensors(out, ckpt.optimizer);
  out.finish();
}

Checkpoint load_checkpoint(const std::filesystem::path& file, std::optional<std::uint64_t> expected_fingerprint) {
  io::BinaryReader in(file);
  char magic[8];
  in.read(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) in.fail("not a checkpoint");
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) in.fail("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.fingerprint = in.get<std::uint64_t>();
  if (expected_fingerprint && *expected_fingerprint != c.fingerprint)
    in.fail("config fingerprint " + hex64(c.fingerprint) + " does not match expected " + hex64(*expected_fingerprint));
  c.stage = in.get_str();
  c.epoch = in.get<std::int32_t>();
  c.model_config = in.get_str();
  c.params = get_tensors(in);
  c.optimizer = get_tensors(in);
  return c;
}

void restore(Recognizer& model, const Checkpoint& ckpt) {
  if (ckpt.fingerprint != model.config().fingerprint())
    throw LoadError("checkpoint fingerprint " + hex64(ckpt.fingerprint) + " does not match model " +
                    hex64(model.config().fingerprint()));
  for (auto* p : model.params().all()) {
    auto it = ckpt.params.find(p->name);
    if (it == ckpt.params.end()) throw LoadError("checkpoint lacks tensor " + p->name);
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
      throw LoadError("checkpoint tensor " + p->name + " has wrong shape");
    p->value = it->second;
  }
}

std::unique_ptr<Recognizer> model_from_checkpoint(const Checkpoint& ckpt) {
  auto model = std::make_unique<Recognizer>(RecognizerConfig::from_json(ckpt.model_config));
  restore(*model, ckpt);
  return model;
}

}  // namespace d2d::recognizer
