#include "anprompt/ablation.hpp"

#include <cstdio>
#include <future>

#include "anprompt/errors.hpp"
#include "anprompt/rng.hpp"
#include "anprompt/trainer.hpp"

namespace anprompt {

const std::vector<std::string>& ablation_studies() {
  static const std::vector<std::string> names{"components", "token_length", "alpha_weight", "wa_distance",
                                              "theta_sweep", "gamma_mode",  "noise_kind",   "injection_layers"};
  return names;
}

namespace {

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

}  // namespace

std::vector<AblationRow> ablation_rows(const RunConfig& base, const std::string& study) {
  std::vector<AblationRow> rows;
  auto add = [&](std::string label, auto&& edit) {
    RunConfig c = base;
    edit(c);
    rows.push_back({std::move(label), std::move(c)});
  };
  if (study == "components") {
    struct Toggle {
      const char* label;
      bool tn, wa, ap;
    };
    const Toggle grid[] = {{"baseline", false, false, false},
                           {"WALoss", false, true, false},
                           {"Anti-Prompt", false, false, true},
                           {"TextNoise", true, false, false},
                           {"TextNoise+WALoss", true, true, false},
                           {"WALoss+Anti-Prompt", false, true, true},
                           {"TextNoise+Anti-Prompt", true, false, true},
                           {"full", true, true, true}};
    for (const auto& t : grid) {
      add(t.label, [&](RunConfig& c) { c.components = {t.tn, t.wa, t.ap}; });
    }
  } else if (study == "token_length") {
    for (int t = 1; t <= 6; ++t) {
      add("T=" + std::to_string(t), [&](RunConfig& c) {
        c.prompts.K = t;
        c.injection.prompt_count = t;
      });
    }
  } else if (study == "alpha_weight") {
    for (double a : {0.001, 0.01, 0.1, 1.0}) {
      add(fmt("alpha=%g", a), [&](RunConfig& c) { c.weak_noise.alpha = a; });
    }
  } else if (study == "wa_distance") {
    for (auto d : {WaDistance::l1, WaDistance::mse, WaDistance::cosine, WaDistance::kl}) {
      add(to_string(d), [&](RunConfig& c) { c.losses.wa_distance = d; });
    }
  } else if (study == "theta_sweep") {
    for (int i = 1; i <= 10; ++i) {
      add(fmt("theta=%.1f", i / 10.0), [&](RunConfig& c) { c.losses.theta = i / 10.0; });
    }
  } else if (study == "gamma_mode") {
    for (auto m : {GammaMode::log, GammaMode::mean, GammaMode::softmax_entropy, GammaMode::variance_adaptive}) {
      add(to_string(m), [&](RunConfig& c) { c.losses.gamma_mode = m; });
    }
  } else if (study == "noise_kind") {
    for (const char* k : {"synonym_replace:0.25", "mask:0.25", "shuffle", "drop:0.25", "weak_fusion"}) {
      add(k, [&](RunConfig& c) { c.noise_kind = k; });
    }
  } else if (study == "injection_layers") {
    const std::pair<int, int> ranges[] = {{1, 3}, {1, 6}, {1, 9}, {1, 12}, {3, 6},
                                          {3, 9}, {3, 12}, {6, 9}, {6, 12}, {9, 12}};
    for (auto [a, b] : ranges) {
      add(std::to_string(a) + "-" + std::to_string(b), [&](RunConfig& c) {
        c.injection.layer_start = a;
        c.injection.layer_end = b;
      });
    }
  } else {
    std::string known;
    for (const auto& s : ablation_studies()) known += (known.empty() ? "" : ", ") + s;
    throw ConfigError("unknown ablation study '" + study + "' (expected one of: " + known + ")");
  }
  for (auto& r : rows) r.config.validate();
  return rows;
}

std::vector<AblationResult> run_ablation(const Workspace& ws, const RunConfig& base, const std::string& study,
                                         const AblationProgress& progress) {
  const auto rows = ablation_rows(base, study);
  const size_t n_seeds = base.seeds.size();
  std::vector<EvalReport> reports(rows.size() * n_seeds);

  auto run_one = [&](size_t job) {
    const auto& row = rows[job / n_seeds];
    const std::uint64_t seed = base.seeds[job % n_seeds];
    RunConfig cfg = row.config;
    cfg.threads = 1;
    const auto trained = train(ws, cfg, seed);
    reports[job] = evaluate(*trained.model, ws, cfg, seed);
  };

  const size_t jobs = reports.size();
  const int threads = deterministic_mode() ? 1 : base.threads;
  if (threads <= 1) {
    for (size_t j = 0; j < jobs; ++j) {
      run_one(j);
      if (progress) progress(rows[j / n_seeds].label, base.seeds[j % n_seeds], reports[j]);
    }
  } else {
    std::vector<std::future<void>> pool;
    for (int t = 0; t < threads; ++t) {
      pool.push_back(std::async(std::launch::async, [&, t] {
        for (size_t j = static_cast<size_t>(t); j < jobs; j += static_cast<size_t>(threads)) run_one(j);
      }));
    }
    for (auto& f : pool) f.get();
    if (progress) {
      for (size_t j = 0; j < jobs; ++j) progress(rows[j / n_seeds].label, base.seeds[j % n_seeds], reports[j]);
    }
  }

  std::vector<AblationResult> out;
  for (size_t r = 0; r < rows.size(); ++r) {
    AblationResult res;
    res.study = study;
    res.row = rows[r].label;
    for (size_t s = 0; s < n_seeds; ++s) {
      const auto& e = reports[r * n_seeds + s];
      res.per_seed.push_back(e);
      res.base += e.base_acc;
      res.novel += e.novel_acc;
      res.hm += e.hm;
    }
    res.base /= static_cast<double>(n_seeds);
    res.novel /= static_cast<double>(n_seeds);
    res.hm /= static_cast<double>(n_seeds);
    out.push_back(std::move(res));
  }
  return out;
}

std::string format_ablation_table(const std::vector<AblationResult>& results) {
  std::string s = "| " + (results.empty() ? std::string("row") : results.front().study) +
                  " | Base | Novel | HM |\n|---|---:|---:|---:|\n";
  for (const auto& r : results) {
    s += "| " + r.row + " | " + fmt("%.2f", r.base) + " | " + fmt("%.2f", r.novel) + " | " + fmt("%.2f", r.hm) +
         " |\n";
  }
  return s;
}

}  // namespace anprompt
