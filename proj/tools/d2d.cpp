// Command-line front end: audit, gen-data, train, eval, plot.

#include "d2d/evalkit.hpp"
#include "d2d/illuminance.hpp"
#include "d2d/io.hpp"
#include "d2d/pipeline.hpp"
#include "d2d/toybench.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace d2d;

namespace {

std::vector<double> parse_edges(const std::string& text) {
  if (text.empty()) return illuminance::default_bin_edges();
  std::vector<double> edges;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      edges.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw InvalidInput("bad bin edge '" + tok + "'");
    }
  }
  illuminance::validate_edges(edges);
  return edges;
}

const std::vector<Clip>& split_of(const toybench::DatasetSplit& d, const std::string& name) {
  if (name == "train") return d.train;
  if (name == "val") return d.val;
  if (name == "test") return d.test;
  if (name == "pool") return d.pool;
  throw InvalidInput("unknown split " + name);
}

void print_log(const std::vector<pipeline::EpochLog>& log) {
  for (const auto& e : log)
    std::printf("%s epoch %d: steps=%d total=%.5f ce=%.5f lambda_lu=%.5f mix=%.5f lr=%g\n", e.stage.c_str(), e.epoch,
                e.steps, e.total, e.ce, e.weighted_u, e.mix, e.lr);
}

// --- audit --------------------------------------------------------------------

int cmd_audit(const fs::path& root, double t, const std::string& bins, const fs::path& out) {
  const auto data = toybench::read_dataset(root);
  const auto edges = parse_edges(bins);
  std::vector<illuminance::ClipLuma> records;
  std::vector<std::string> subset;
  for (const char* name : {"train", "val", "test", "pool"})
    for (const auto& c : split_of(data, name)) {
      records.push_back({c.id, illuminance::clip_illuminance(c).clip_y});
      subset.push_back(name);
    }
  const auto part = illuminance::partition(records, t);
  const auto hist = illuminance::illuminance_histogram(records, edges);

  std::ostringstream rep;
  rep << "# illuminance audit\n";
  rep << "root = " << root.string() << "\n";
  rep << "t = " << io::format_double(t) << "\n";
  rep << "clips = " << records.size() << "\n";
  rep << "day = " << part.day.size() << "\n";
  rep << "dark = " << part.dark.size() << "\n";
  rep << "dark_fraction = " << (records.empty() ? 0.0 : double(part.dark.size()) / double(records.size())) << "\n";
  rep << "\n[per_clip]\n";
  for (std::size_t i = 0; i < records.size(); ++i)
    rep << records[i].id << " " << subset[i] << " " << io::format_double(records[i].y) << "\n";
  rep << "\n[dark_ids]\n";
  for (const auto& id : part.dark) rep << id << "\n";
  rep << "\n[day_ids]\n";
  for (const auto& id : part.day) rep << id << "\n";
  rep << "\n[histogram]\n# lo hi count fraction\n";
  for (std::size_t b = 0; b < hist.counts.size(); ++b)
    rep << io::format_double(hist.edges[b]) << " " << io::format_double(hist.edges[b + 1]) << " " << hist.counts[b]
        << " " << io::format_double(hist.fractions[b]) << "\n";
  rep << "below_range = " << hist.below << "\n";
  rep << "above_range = " << hist.above << "\n";

  std::string csv = "clip_id,clip_Y,split\n";
  for (const auto& r : records)
    csv += r.id + "," + io::format_double(r.y) + "," + (illuminance::is_dark(r.y, t) ? "dark" : "day") + "\n";

  if (out.empty()) {
    std::cout << rep.str();
  } else {
    fs::create_directories(out);
    io::write_text(out / "audit.txt", rep.str());
    io::write_text(out / "audit.csv", csv);
    std::printf("audited %zu clips: %zu day, %zu dark; wrote %s\n", records.size(), part.day.size(),
                part.dark.size(), out.string().c_str());
  }
  return 0;
}

// --- gen-data -----------------------------------------------------------------

int cmd_gen(const fs::path& config, const fs::path& out, std::optional<std::uint64_t> seed) {
  auto cfg = config.empty() ? toybench::BenchConfig{} : toybench::load_bench_config(config);
  if (seed) cfg.seed = *seed;
  const auto data = toybench::generate_dataset(cfg);
  toybench::write_dataset(data, out);
  std::printf("wrote %zu train, %zu val, %zu test, %zu pool clips to %s\n", data.train.size(), data.val.size(),
              data.test.size(), data.pool.size(), out.string().c_str());
  return 0;
}

// --- train --------------------------------------------------------------------

int cmd_train(const std::string& stage, const fs::path& config, const fs::path& root, const fs::path& out,
              const fs::path& resume, const fs::path& from) {
  auto cfg = config.empty() ? pipeline::TrainConfig{} : pipeline::TrainConfig::load(config);
  const auto data = toybench::read_dataset(root);
  fs::create_directories(out);
  cfg.save(out / "train_config.json");
  pipeline::RunOptions opts;
  opts.out_dir = out;
  if (!resume.empty()) opts.resume = recognizer::load_checkpoint(resume);

  pipeline::TrainResult r;
  if (stage == "1" || stage == "e2e") {
    const bool need = cfg.lambda > 0.0 && !data.pool.empty();
    supervision::PseudoTargets targets;
    if (need) {
      supervision::AutoencoderReport rep;
      targets = pipeline::prepare_targets(cfg, data.pool, out / "pseudo_targets.bin", &rep);
      if (!rep.epoch_loss.empty())
        std::printf("autoencoder: %zu epochs, final L1 %.5f\n", rep.epoch_loss.size(), rep.epoch_loss.back());
    }
    r = stage == "1" ? pipeline::train_stage1(cfg, data.train, data.pool, targets, opts)
                     : pipeline::train_end_to_end(cfg, data.train, data.pool, targets, opts);
  } else if (stage == "2") {
    const fs::path s1_file = from.empty() ? out / "stage1.ckpt" : from;
    const auto s1 = recognizer::load_checkpoint(s1_file);
    std::vector<Clip> pool = data.pool;
    if (cfg.filter_pool && !pool.empty()) {
      auto model = recognizer::model_from_checkpoint(s1);
      pool = supervision::filter_unlabeled(pool, *model, cfg.filter_threshold);
      std::printf("pool filter kept %zu of %zu clips\n", pool.size(), data.pool.size());
      if (pool.empty()) pool = data.pool;
    }
    r = pipeline::train_stage2(cfg, data.train, pool, s1, opts);
  } else {
    throw InvalidInput("--stage must be 1, 2 or e2e");
  }
  print_log(r.log);
  recognizer::save_checkpoint(r.checkpoint, out / "final.ckpt");
  std::printf("checkpoint: %s\n", (out / "final.ckpt").string().c_str());
  return 0;
}

// --- eval / plot --------------------------------------------------------------

int cmd_eval(const fs::path& ckpt, const fs::path& root, const std::string& bins, const fs::path& out,
             const std::string& split, int channels, std::uint64_t seed) {
  auto model = recognizer::model_from_checkpoint(recognizer::load_checkpoint(ckpt));
  const auto data = toybench::read_dataset(root);
  auto report = evalkit::evaluate(*model, split_of(data, split), parse_edges(bins),
                                  channels > 0 ? std::optional<int>(channels) : std::nullopt, seed);
  report.split = split;
  evalkit::emit_report(report, out);
  std::printf("%s %s = %.4f (day %.4f over %zu, dark %.4f over %zu, gap %.4f); report in %s\n", split.c_str(),
              report.metric_name.c_str(), report.overall, report.gap.day, report.gap.day_count, report.gap.dark,
              report.gap.dark_count, report.gap.gap, out.string().c_str());
  return 0;
}

int cmd_plot(const fs::path& dir) {
  for (const auto& p : evalkit::render_plots(dir)) std::printf("%s\n", p.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"day2dark toolkit"};
  app.require_subcommand(1);

  auto* audit = app.add_subcommand("audit", "Illuminance statistics of a dataset");
  std::string a_root, a_bins, a_out;
  double a_t = illuminance::kDefaultThreshold;
  audit->add_option("root,--data", a_root, "Dataset root")->required();
  audit->add_option("--t", a_t, "Darkness threshold")->capture_default_str();
  audit->add_option("--bins", a_bins, "Comma-separated histogram edges");
  audit->add_option("--out", a_out, "Directory for audit.txt and audit.csv (default: print)");

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic benchmark");
  std::string g_cfg, g_out;
  std::optional<std::uint64_t> g_seed;
  gen->add_option("--config", g_cfg, "Benchmark config (JSON)");
  gen->add_option("--out", g_out, "Output root")->required();
  gen->add_option("--seed", g_seed, "Override the config seed");

  auto* train = app.add_subcommand("train", "Train a recognizer");
  std::string t_stage, t_cfg, t_data, t_out, t_resume, t_from;
  train->add_option("--stage", t_stage, "1, 2 or e2e")->required()->check(CLI::IsMember({"1", "2", "e2e"}));
  train->add_option("--config", t_cfg, "Training config (JSON)");
  train->add_option("--data", t_data, "Dataset root")->required();
  train->add_option("--out", t_out, "Checkpoint directory")->required();
  train->add_option("--resume", t_resume, "Resume from a checkpoint of the same stage");
  train->add_option("--from", t_from, "Stage-1 checkpoint for stage 2 (default: <out>/stage1.ckpt)");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string e_ckpt, e_data, e_bins, e_out, e_split = "test";
  int e_channels = 0;
  std::uint64_t e_seed = 0;
  ev->add_option("--ckpt", e_ckpt, "Checkpoint file")->required();
  ev->add_option("--data", e_data, "Dataset root")->required();
  ev->add_option("--bins", e_bins, "Comma-separated illuminance edges");
  ev->add_option("--out", e_out, "Report directory")->required();
  ev->add_option("--split", e_split, "Split to evaluate")->capture_default_str();
  ev->add_option("--profile-channels", e_channels, "Channels per class for activation profiles (0 = off)");
  ev->add_option("--profile-seed", e_seed, "Seed for channel sampling");

  auto* plot = app.add_subcommand("plot", "Render plots from a report directory");
  std::string p_dir;
  plot->add_option("--report", p_dir, "Report directory")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*audit) return cmd_audit(a_root, a_t, a_bins, a_out);
    if (*gen) return cmd_gen(g_cfg, g_out, g_seed);
    if (*train) return cmd_train(t_stage, t_cfg, t_data, t_out, t_resume, t_from);
    if (*ev) return cmd_eval(e_ckpt, e_data, e_bins, e_out, e_split, e_channels, e_seed);
    if (*plot) return cmd_plot(p_dir);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
