#include "anprompt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numbers>

#include "anprompt/errors.hpp"
#include "anprompt/kmeans.hpp"
#include "anprompt/metrics.hpp"
#include "anprompt/optim.hpp"
#include "anprompt/rng.hpp"

namespace anprompt {

namespace fs = std::filesystem;

Mat noise_feature_bank(const Workspace& ws, const RunConfig& cfg, const CaptionCache& cache, std::uint64_t seed,
                       std::uint64_t stream, int draws_per_class) {
  const PerturbationKind kind = ws.perturbation(cfg.noise_kind);
  WeakNoiseConfig wcfg = cfg.weak_noise;
  wcfg.seed = seed;
  if (!cfg.components.text_noise) wcfg.alpha = 0.0;
  if (kind.kind == PerturbationKind::Kind::weak_fusion || !cfg.components.text_noise) {
    return build_weak_feature_bank(cache, ws.frozen(), wcfg, stream, draws_per_class, cfg.threads);
  }
  return build_strong_feature_bank(cache, ws.frozen(), kind, seed, stream, draws_per_class, cfg.threads);
}

Mat first_draws(const Mat& bank, int draws_per_class) {
  const Eigen::Index classes = bank.rows() / draws_per_class;
  Mat out(classes, bank.cols());
  for (Eigen::Index c = 0; c < classes; ++c) out.row(c) = bank.row(c * draws_per_class);
  return out;
}

LossWeights effective_weights(const RunConfig& cfg) {
  LossWeights w = cfg.losses;
  if (!cfg.components.wa_loss) {
    w.gamma_mode = GammaMode::fixed;
    w.gamma_fixed = 0.0;
  }
  return w;
}

namespace {

double learning_rate(const OptimConfig& o, long step, long total) {
  if (o.schedule == "cosine" && total > 0) {
    return o.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
  }
  return o.learning_rate;
}

std::vector<const Mat*> pick_prefixes(const std::vector<Mat>& all, std::span<const size_t> index) {
  std::vector<const Mat*> out;
  out.reserve(index.size());
  for (size_t i : index) out.push_back(&all[i]);
  return out;
}

std::vector<const Mat*> pick_classes(const std::vector<Mat>& all, const std::vector<int>& classes) {
  std::vector<const Mat*> out;
  out.reserve(classes.size());
  for (int c : classes) out.push_back(&all[static_cast<size_t>(c)]);
  return out;
}

}  // namespace

TrainResult train(const Workspace& ws, const RunConfig& cfg, std::uint64_t seed, const TrainOptions& options) {
  cfg.validate();
  ws.check_compatible(cfg);
  TrainResult result;
  result.model = std::make_unique<AnPromptModel>(ws.backbone_ptr(), cfg, seed);
  AnPromptModel& model = *result.model;
  const InjectionSpec spec = cfg.injection_spec();

  const auto& base = ws.split().base;
  const CaptionCache base_cache = ws.captions().subset(base);
  const auto train_index = select_images(ws.data().train_labels, base, cfg.dataset.split.shots_per_class);
  if (train_index.empty()) throw InputError("no training images for the base classes");
  std::vector<int> local_label(ws.data().class_names.size(), -1);
  for (size_t i = 0; i < base.size(); ++i) local_label[static_cast<size_t>(base[i])] = static_cast<int>(i);

  const auto& image_prefix = ws.train_prefixes(spec.layer_start);
  const auto class_prefix = pick_classes(ws.class_prefixes(spec.layer_start, spec.prompt_count), base);
  const LossWeights weights = effective_weights(cfg);
  const int draws = cfg.prompts.cluster_draws_per_class;

  fs::path log_path;
  if (!options.out_dir.empty()) {
    fs::create_directories(options.out_dir);
    cfg.save(options.out_dir / "config.json");
    log_path = options.out_dir / "train_log.jsonl";
    write_text(log_path, "");
    if (options.save_checkpoints) model.save(options.out_dir / "checkpoint_init");
  }

  Adam opt(model.trainable_parameters(), cfg.optim.beta1, cfg.optim.beta2, cfg.optim.adam_eps);
  const long batches = static_cast<long>((train_index.size() + static_cast<size_t>(cfg.optim.batch_size) - 1) /
                                         static_cast<size_t>(cfg.optim.batch_size));
  const long total_steps = batches * cfg.optim.epochs;
  long step = 0;

  for (int epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
    const Mat bank = noise_feature_bank(ws, cfg, base_cache, seed, static_cast<std::uint64_t>(epoch), draws);
    const Mat f_w = first_draws(bank, draws);
    if (model.epsilon() > 0.0) {
      KMeansOptions ko;
      ko.max_iter = cfg.prompts.kmeans_max_iter;
      ko.tol = cfg.prompts.kmeans_tol;
      ko.seed = derive_rng(seed, {0x6b6d65616e73ULL, static_cast<std::uint64_t>(epoch)})();
      model.set_noise_prompts(kmeans_cluster(bank, spec.prompt_count, ko).centers);
    }

    std::vector<size_t> order = train_index;
    auto shuffle_rng = derive_rng(seed, {0x73687566ULL, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.optim.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.optim.batch_size));
      const std::span<const size_t> batch(order.data() + start, end - start);
      std::vector<int> labels;
      labels.reserve(batch.size());
      for (size_t i : batch) labels.push_back(local_label[static_cast<size_t>(ws.data().train_labels[i])]);

      const double lr = learning_rate(cfg.optim, step, total_steps);
      ag::Tape tape;
      const auto prompts = model.prompt_vars(tape);
      const auto prefixes = pick_prefixes(image_prefix, batch);
      const FeatureBundle fb = model.encode(tape, prompts, prefixes, class_prefix, f_w);
      const LossReport rep = total_loss(fb, labels, weights, model.temperature());

      StepRecord rec{static_cast<int>(step), epoch, rep.ce, rep.sim, rep.wa, rep.gamma, rep.total, lr};
      if (!std::isfinite(rep.total)) {
        if (!log_path.empty()) {
          append_line(log_path, R"({"kind":"diverged","step":)" + std::to_string(step) +
                                    R"(,"epoch":)" + std::to_string(epoch) + "}");
        }
        throw NumericError("training diverged at step " + std::to_string(step) + " (epoch " +
                           std::to_string(epoch) + "): non-finite loss");
      }
      opt.zero_grad();
      tape.backward(rep.total_var);
      opt.step(lr);
      result.log.push_back(rec);
      if (!log_path.empty()) append_line(log_path, to_json_line(rec));
      ++step;
    }
  }
  if (!options.out_dir.empty() && options.save_checkpoints) model.save(options.out_dir / "checkpoint");
  return result;
}

Mat image_features(const AnPromptModel& model, const Workspace& ws, std::span<const size_t> test_index, int threads) {
  const auto& prefixes = ws.test_prefixes(model.injection().layer_start);
  const int c = model.backbone().config.embed_dim;
  Mat out(static_cast<Eigen::Index>(test_index.size()), c);
  auto run = [&](size_t from, size_t to) {
    ag::Tape tape;
    const auto prompts = model.prompt_vars(tape);
    for (size_t i = from; i < to; ++i) {
      const auto enc = model.backbone().vision.encode_from_prefix(tape, prefixes[test_index[i]], prompts.image_layers,
                                                                  model.injection());
      out.row(static_cast<Eigen::Index>(i)) = enc.feature.value();
    }
  };
  const size_t n = test_index.size();
  if (threads <= 1 || deterministic_mode() || n < 2) {
    run(0, n);
  } else {
    std::vector<std::future<void>> jobs;
    const size_t chunk = (n + static_cast<size_t>(threads) - 1) / static_cast<size_t>(threads);
    for (size_t from = 0; from < n; from += chunk) {
      jobs.push_back(std::async(std::launch::async, run, from, std::min(n, from + chunk)));
    }
    for (auto& j : jobs) j.get();
  }
  return out;
}

Mat class_text_features(const AnPromptModel& model, const Workspace& ws, const std::vector<int>& classes) {
  const auto& all = ws.class_prefixes(model.injection().layer_start, model.injection().prompt_count);
  ag::Tape tape;
  const auto prompts = model.prompt_vars(tape);
  Mat out(static_cast<Eigen::Index>(classes.size()), model.backbone().config.embed_dim);
  for (size_t i = 0; i < classes.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) =
        model.backbone()
            .text.encode_from_prefix(tape, all[static_cast<size_t>(classes[i])], prompts.text_layers, model.injection())
            .feature.value();
  }
  return out;
}

ScoreSet score_test_images(const AnPromptModel& model, const Workspace& ws, const RunConfig& cfg, std::uint64_t seed,
                           std::span<const size_t> test_index, const std::vector<int>& classes) {
  const Mat f_v = image_features(model, ws, test_index, cfg.threads);
  const Mat f_t = class_text_features(model, ws, classes);
  const Mat f_w = noise_feature_bank(ws, cfg, ws.captions().subset(classes), seed, kEvalStream, 1);
  ScoreSet s;
  s.l_a = f_v * f_t.transpose();
  s.l_r = f_v * f_w.transpose();
  const double theta = cfg.losses.theta;
  s.l_final = theta * s.l_a + (1.0 - theta) * s.l_r;
  return s;
}

double evaluate_accuracy(const AnPromptModel& model, const Workspace& ws, const RunConfig& cfg, std::uint64_t seed,
                         const std::vector<int>& classes) {
  if (classes.empty()) throw InputError("evaluate_accuracy: empty class set");
  const auto index = select_images(ws.data().test_labels, classes);
  if (index.empty()) throw InputError("evaluate_accuracy: no test images for these classes");
  const ScoreSet s = score_test_images(model, ws, cfg, seed, index, classes);
  const auto pred = argmax_rows(s.l_final);
  std::vector<int> labels;
  std::vector<int> local(ws.data().class_names.size(), -1);
  for (size_t i = 0; i < classes.size(); ++i) local[static_cast<size_t>(classes[i])] = static_cast<int>(i);
  for (size_t i : index) labels.push_back(local[static_cast<size_t>(ws.data().test_labels[i])]);
  return accuracy_percent(pred, labels);
}

EvalReport evaluate(const AnPromptModel& model, const Workspace& ws, const RunConfig& cfg, std::uint64_t seed) {
  EvalReport r;
  r.seed = seed;
  r.base_acc = evaluate_accuracy(model, ws, cfg, seed, ws.split().base);
  r.novel_acc = evaluate_accuracy(model, ws, cfg, seed, ws.split().novel);
  r.hm = r.base_acc > 0.0 && r.novel_acc > 0.0 ? harmonic_mean(r.base_acc, r.novel_acc) : 0.0;
  r.n_base = static_cast<int>(select_images(ws.data().test_labels, ws.split().base).size());
  r.n_novel = static_cast<int>(select_images(ws.data().test_labels, ws.split().novel).size());
  return r;
}

}  // namespace anprompt
