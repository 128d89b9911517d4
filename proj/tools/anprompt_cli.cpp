// anprompt: train / eval / ablate / noise-bench / synth-data / plot.
//
// Exit codes: 0 success, 2 usage error, 3 configuration error, 4 file error,
// 1 anything else.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "anprompt/ablation.hpp"
#include "anprompt/config.hpp"
#include "anprompt/dataset.hpp"
#include "anprompt/errors.hpp"
#include "anprompt/noise_bench.hpp"
#include "anprompt/plot.hpp"
#include "anprompt/records.hpp"
#include "anprompt/trainer.hpp"
#include "anprompt/workspace.hpp"

namespace fs = std::filesystem;
using namespace anprompt;

namespace {

struct Globals {
  std::string config;
  std::int64_t seed = -1;
  std::string out = "runs";
  int threads = 0;
};

struct UsageError : Error {
  using Error::Error;
};

RunConfig load_config(const Globals& g, const fs::path& fallback = {}) {
  RunConfig cfg;
  if (!g.config.empty()) {
    cfg = RunConfig::load(g.config);
  } else if (!fallback.empty() && fs::exists(fallback)) {
    cfg = RunConfig::load(fallback);
  }
  if (g.seed >= 0) cfg.seeds = {static_cast<std::uint64_t>(g.seed)};
  if (g.threads > 0) cfg.threads = g.threads;
  cfg.validate();
  return cfg;
}

fs::path seed_dir(const Globals& g, std::uint64_t seed) { return fs::path(g.out) / ("seed_" + std::to_string(seed)); }

void print_eval(const EvalReport& r) {
  std::printf("seed %llu  base %.2f  novel %.2f  hm %.2f  (n_base %d, n_novel %d)\n",
              static_cast<unsigned long long>(r.seed), r.base_acc, r.novel_acc, r.hm, r.n_base, r.n_novel);
}

void cmd_train(const Globals& g) {
  const RunConfig cfg = load_config(g);
  const auto ws = Workspace::create(cfg);
  for (auto seed : cfg.seeds) {
    const fs::path dir = seed_dir(g, seed);
    fs::create_directories(dir);
    fs::remove(dir / "train_log.jsonl");
    fs::remove(dir / "metrics.jsonl");
    TrainResult res = train(*ws, cfg, seed, {dir, true});
    const EvalReport rep = evaluate(*res.model, *ws, cfg, seed);
    append_line(dir / "metrics.jsonl", to_json_line(rep));
    print_eval(rep);
  }
}

void cmd_eval(const Globals& g, const std::string& checkpoint) {
  const RunConfig probe = load_config(g);
  std::shared_ptr<Workspace> ws;
  for (auto seed : probe.seeds) {
    const fs::path dir = seed_dir(g, seed);
    const RunConfig cfg = load_config(g, dir / "config.json");
    const fs::path ckpt = checkpoint.empty() ? dir / "checkpoint" : fs::path(checkpoint);
    if (!fs::exists(ckpt / "manifest.json")) throw FileError("missing checkpoint: " + ckpt.string());
    if (!ws) ws = Workspace::create(cfg);
    ws->check_compatible(cfg);
    AnPromptModel model(ws->backbone_ptr(), cfg, seed);
    model.load(ckpt);
    const EvalReport rep = evaluate(model, *ws, cfg, seed);
    fs::create_directories(dir);
    append_line(dir / "metrics.jsonl", to_json_line(rep));
    print_eval(rep);
  }
}

void cmd_ablate(const Globals& g, const std::string& study) {
  const auto& known = ablation_studies();
  if (std::find(known.begin(), known.end(), study) == known.end()) {
    std::string list;
    for (const auto& s : known) list += (list.empty() ? "" : ", ") + s;
    throw UsageError("unknown study '" + study + "' (expected one of: " + list + ")");
  }
  const RunConfig cfg = load_config(g);
  const auto ws = Workspace::create(cfg);
  const auto results = run_ablation(*ws, cfg, study, [](const std::string& row, std::uint64_t seed, const EvalReport& r) {
    std::fprintf(stderr, "  %-24s seed %llu  hm %.2f\n", row.c_str(), static_cast<unsigned long long>(seed), r.hm);
  });
  fs::create_directories(g.out);
  const fs::path jsonl = fs::path(g.out) / ("ablation_" + study + ".jsonl");
  fs::remove(jsonl);
  for (const auto& r : results) append_line(jsonl, to_json_line(r));
  const std::string table = format_ablation_table(results);
  write_text(fs::path(g.out) / ("ablation_" + study + ".md"), table);
  std::cout << table;
}

void cmd_noise_bench(const Globals& g, std::vector<std::string> perturbations, bool frozen_only,
                     const std::string& checkpoint) {
  const RunConfig cfg = load_config(g);
  if (perturbations.empty()) perturbations = cfg.noise_bench.perturbations;
  if (perturbations.empty()) throw UsageError("noise-bench needs at least one perturbation");
  const auto ws = Workspace::create(cfg);
  const std::uint64_t seed = cfg.seeds.front();

  std::unique_ptr<AnPromptModel> model;
  fs::path dir = g.out;
  if (!frozen_only) {
    dir = seed_dir(g, seed);
    const fs::path ckpt = checkpoint.empty() ? dir / "checkpoint" : fs::path(checkpoint);
    if (!fs::exists(ckpt / "manifest.json")) throw FileError("missing checkpoint: " + ckpt.string());
    model = std::make_unique<AnPromptModel>(ws->backbone_ptr(), cfg, seed);
    model->load(ckpt);
  }
  const auto reports = run_noise_bench(*ws, cfg, model.get(), perturbations, seed);
  fs::create_directories(dir);
  write_text(dir / "noise_bench.csv", noise_reports_csv(reports));
  const fs::path jsonl = dir / "noise_bench.jsonl";
  fs::remove(jsonl);
  for (const auto& r : reports) {
    append_line(jsonl, to_json_line(r));
    if (model) append_line(dir / "metrics.jsonl", to_json_line(r));
  }
  plot_noise_panels(reports).save(dir / "noise_bench.ppm");
  std::cout << noise_reports_csv(reports);
}

void cmd_synth(const Globals& g) {
  const RunConfig cfg = load_config(g);
  const Backbone backbone(cfg.encoder);
  const DatasetBundle data = generate_synthetic(cfg.dataset.synthetic, cfg.dataset.synthetic.seed, backbone);
  save_dataset(g.out, data);
  std::printf("wrote %zu train / %zu test images for %zu classes to %s\n", data.train_images.size(),
              data.test_images.size(), data.class_names.size(), g.out.c_str());
}

void cmd_plot(const Globals& g, const std::vector<std::string>& inputs) {
  if (inputs.empty()) throw UsageError("plot needs at least one records file");
  std::vector<fs::path> paths(inputs.begin(), inputs.end());
  for (const auto& p : paths)
    if (!fs::exists(p)) throw FileError("no such file: " + p.string());
  for (const auto& written : render_plots(paths, g.out)) std::cout << written.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anti-noise prompt tuning on a miniature dual encoder"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Run configuration (JSON)");
  app.add_option("--seed", g.seed, "Override the configured seed list with one seed");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (ANPROMPT_DETERMINISTIC=1 forces 1)");

  auto* train_cmd = app.add_subcommand("train", "Train one run per seed, then evaluate");
  std::string checkpoint;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate saved checkpoints on base and novel classes");
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint directory (default <out>/seed_<s>/checkpoint)");

  std::string study;
  auto* ablate_cmd = app.add_subcommand("ablate", "Run an ablation study");
  ablate_cmd->add_option("--study", study, "Study name")->required();

  std::vector<std::string> perturbations;
  bool frozen_only = false;
  std::string nb_checkpoint;
  auto* noise_cmd = app.add_subcommand("noise-bench", "Text-shift / logit-preservation / accuracy-shift per perturbation");
  noise_cmd->add_option("--perturbations", perturbations, "e.g. weak_fusion:0.01 drop:0.25 mask:0.25 shuffle identity")
      ->delimiter(',');
  noise_cmd->add_flag("--frozen-only", frozen_only, "Use the plain frozen encoders; no checkpoint needed");
  noise_cmd->add_option("--checkpoint", nb_checkpoint, "Checkpoint directory (model mode)");

  auto* synth_cmd = app.add_subcommand("synth-data", "Write the synthetic dataset as an image folder");

  std::vector<std::string> inputs;
  auto* plot_cmd = app.add_subcommand("plot", "Render records files to PPM charts");
  plot_cmd->add_option("inputs", inputs, "JSONL records files");

  for (auto* sub : {train_cmd, eval_cmd, ablate_cmd, noise_cmd, synth_cmd, plot_cmd}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*train_cmd) cmd_train(g);
    if (*eval_cmd) cmd_eval(g, checkpoint);
    if (*ablate_cmd) cmd_ablate(g, study);
    if (*noise_cmd) cmd_noise_bench(g, perturbations, frozen_only, nb_checkpoint);
    if (*synth_cmd) cmd_synth(g);
    if (*plot_cmd) cmd_plot(g, inputs);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 3;
  } catch (const FileError& e) {
    std::cerr << "file error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
