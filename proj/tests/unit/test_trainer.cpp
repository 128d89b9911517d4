#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "../common/gradcheck.hpp"
#include "anprompt/checkpoint.hpp"
#include "anprompt/dataset.hpp"
#include "anprompt/errors.hpp"
#include "anprompt/noise_bench.hpp"
#include "anprompt/rng.hpp"
#include "anprompt/trainer.hpp"
#include "helpers.hpp"

using namespace anprompt;
namespace fs = std::filesystem;

namespace {

std::shared_ptr<Workspace> tiny_workspace() {
  static const auto ws = Workspace::create(testutil::tiny_config());
  return ws;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Plain CE prompt tuning written out by hand: P_c through the two heads plus
// per-layer offsets, logits f_v f_t^T / tau, and a textbook Adam.
std::vector<double> hand_wired_ce(const Workspace& ws, const RunConfig& cfg, std::uint64_t seed) {
  AnPromptModel init(ws.backbone_ptr(), cfg, seed);
  std::map<std::string, Mat> value, m, v;
  std::vector<std::string> names;
  for (const Parameter* p : std::as_const(init).trainable_parameters()) {
    names.push_back(p->name);
    value[p->name] = p->value;
    m[p->name] = Mat::Zero(p->value.rows(), p->value.cols());
    v[p->name] = Mat::Zero(p->value.rows(), p->value.cols());
  }
  const InjectionSpec spec = cfg.injection_spec();
  const auto& base = ws.split().base;
  const auto index = select_images(ws.data().train_labels, base, cfg.dataset.split.shots_per_class);
  std::vector<double> losses;
  int t = 0;
  for (int epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
    std::vector<size_t> order = index;
    auto rng = derive_rng(seed, {0x73687566ULL, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.optim.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.optim.batch_size));
      ag::Tape tape;
      std::map<std::string, ag::Var> var;
      for (const auto& n : names) var[n] = tape.leaf(value[n]);
      const ag::Var pc = var["prompts.learnable"];
      const ag::Var img_view = ag::affine(pc, var["heads.to_image.weight"], var["heads.to_image.bias"]);
      const ag::Var txt_view = ag::affine(pc, var["heads.to_text.weight"], var["heads.to_text.bias"]);
      std::vector<ag::Var> img_layers, txt_layers;
      for (int l = spec.layer_start; l <= spec.layer_end; ++l) {
        img_layers.push_back(ag::add(img_view, var["prompts.image.layer" + std::to_string(l)]));
        txt_layers.push_back(ag::add(txt_view, var["prompts.text.layer" + std::to_string(l)]));
      }
      std::vector<ag::Var> fv, ft;
      std::vector<int> labels;
      for (size_t i = start; i < end; ++i) {
        fv.push_back(ws.backbone().vision.encode(tape, ws.data().train_images[order[i]], img_layers, spec).feature);
        const int global = ws.data().train_labels[order[i]];
        labels.push_back(static_cast<int>(std::find(base.begin(), base.end(), global) - base.begin()));
      }
      for (int c : base) ft.push_back(ws.backbone().text.encode(tape, ws.class_prompt_ids(c), txt_layers, spec).feature);
      const ag::Var logits = ag::matmul_nt(ag::concat_rows(fv), ag::concat_rows(ft));
      const ag::Var loss = ce_loss(logits, labels, cfg.encoder.temperature);
      losses.push_back(loss.value()(0, 0));
      tape.backward(loss);
      ++t;
      const double b1 = cfg.optim.beta1, b2 = cfg.optim.beta2, lr = cfg.optim.learning_rate;
      for (const auto& n : names) {
        const Mat g = tape.grad(var[n]);
        m[n] = b1 * m[n] + (1 - b1) * g;
        v[n] = b2 * v[n] + (1 - b2) * g.cwiseProduct(g);
        const Mat mh = m[n] / (1 - std::pow(b1, t));
        const Mat vh = v[n] / (1 - std::pow(b2, t));
        value[n].array() -= lr * mh.array() / (vh.array().sqrt() + cfg.optim.adam_eps);
      }
    }
  }
  return losses;
}

}  // namespace

TEST_CASE("total loss gradient matches finite differences for every trainable tensor") {
  const auto r = gradcheck::run();
  CAPTURE(r.worst_param);
  CHECK(r.params_checked == 9);
  CHECK(r.worst_rel_err < 1e-4);
}

TEST_CASE("CE-only configuration reproduces a hand-wired prompt tuner") {
  RunConfig cfg = testutil::tiny_config();
  cfg.losses.theta = 1.0;
  cfg.losses.lambda_sim = 0.0;
  cfg.losses.gamma_mode = GammaMode::fixed;
  cfg.losses.gamma_fixed = 0.0;
  cfg.prompts.epsilon = 0.0;
  const auto ws = tiny_workspace();
  const auto trained = train(*ws, cfg, 4);
  const auto oracle = hand_wired_ce(*ws, cfg, 4);
  REQUIRE(trained.log.size() == oracle.size());
  for (size_t i = 0; i < oracle.size(); ++i) {
    CHECK(std::abs(trained.log[i].ce - oracle[i]) < 1e-6);
    CHECK(trained.log[i].total == trained.log[i].ce);
  }
}

TEST_CASE("training is reproducible and touches only the prompt-side tensors") {
  const auto ws = tiny_workspace();
  const RunConfig cfg = testutil::tiny_config();
  const auto dir = testutil::temp_dir("train");
  (void)train(*ws, cfg, 7, {dir / "a", true});
  (void)train(*ws, cfg, 7, {dir / "b", true});
  CHECK(slurp(dir / "a" / "train_log.jsonl") == slurp(dir / "b" / "train_log.jsonl"));
  CHECK(slurp(dir / "a" / "checkpoint" / "params.bin") == slurp(dir / "b" / "checkpoint" / "params.bin"));
  CHECK(fs::exists(dir / "a" / "config.json"));

  const auto before = load_checkpoint(dir / "a" / "checkpoint_init");
  const auto after = load_checkpoint(dir / "a" / "checkpoint");
  REQUIRE(before.size() == after.size());
  int changed_trainable = 0, trainable = 0;
  for (size_t i = 0; i < before.size(); ++i) {
    REQUIRE(before[i].name == after[i].name);
    if (before[i].tag == TensorTag::frozen) CHECK(before[i].value == after[i].value);
    if (before[i].tag == TensorTag::trainable) ++trainable;
    if (before[i].tag == TensorTag::trainable && before[i].value != after[i].value) ++changed_trainable;
  }
  // P_c, four head tensors, one offset per injected layer and modality
  CHECK(trainable == 5 + 2 * cfg.injection.num_injected_layers());
  CHECK(changed_trainable == trainable);
  for (const Parameter* p : ws->backbone().parameters()) CHECK(p->grad.size() == 0);

  RunConfig other = cfg;
  other.optim.epochs = 0;
  (void)train(*ws, other, 7, {dir / "zero", true});
  CHECK(slurp(dir / "zero" / "checkpoint" / "params.bin") == slurp(dir / "zero" / "checkpoint_init" / "params.bin"));
}

TEST_CASE("theta = 1 evaluation scores are the alignment logits") {
  RunConfig cfg = testutil::tiny_config();
  cfg.losses.theta = 1.0;
  const auto ws = tiny_workspace();
  const auto res = train(*ws, cfg, 2);
  const auto idx = select_images(ws->data().test_labels, ws->split().base);
  const auto s = score_test_images(*res.model, *ws, cfg, 2, idx, ws->split().base);
  CHECK((s.l_final - s.l_a).cwiseAbs().maxCoeff() <= 1e-12);
  const auto rep = evaluate(*res.model, *ws, cfg, 2);
  CHECK(rep.n_base == static_cast<int>(idx.size()));
  CHECK(rep.base_acc >= 0.0);
}

TEST_CASE("epsilon zero collapses the anti-noise pipeline to plain prompt tuning") {
  RunConfig cfg = testutil::tiny_config();
  cfg.prompts.epsilon = 0.0;
  const auto ws = tiny_workspace();
  AnPromptModel a(ws->backbone_ptr(), cfg, 3);
  std::mt19937_64 rng(5);
  a.set_noise_prompts(testutil::random_mat(rng, 2, 16));
  AnPromptModel b(ws->backbone_ptr(), cfg, 3);
  const auto idx = select_images(ws->data().test_labels, ws->split().base);
  const auto sa = score_test_images(a, *ws, cfg, 1, idx, ws->split().base);
  const auto sb = score_test_images(b, *ws, cfg, 1, idx, ws->split().base);
  CHECK(sa.l_final == sb.l_final);
}

TEST_CASE("thread count does not change evaluation") {
  RunConfig cfg = testutil::tiny_config();
  const auto ws = tiny_workspace();
  AnPromptModel m(ws->backbone_ptr(), cfg, 1);
  const auto idx = select_images(ws->data().test_labels, ws->split().novel);
  CHECK(image_features(m, *ws, idx, 1) == image_features(m, *ws, idx, 3));
}

TEST_CASE("noise bench") {
  const RunConfig cfg = testutil::tiny_config();
  const auto ws = tiny_workspace();
  const auto id = run_noise_bench(*ws, cfg, nullptr, {"identity"}, 1);
  REQUIRE(id.size() == 1);
  CHECK(id[0].ts == 0.0);
  CHECK(id[0].lpr == 1.0);
  CHECK(id[0].as_ == 0.0);
  CHECK_THROWS_AS((void)run_noise_bench(*ws, cfg, nullptr, {}, 1), InputError);
  const auto all = run_noise_bench(*ws, cfg, nullptr, cfg.noise_bench.perturbations, 1);
  CHECK(all.size() == 5);
  CHECK(noise_reports_csv(all).rfind("perturbation,ts,lpr,as,n_samples\n", 0) == 0);
}

TEST_CASE("mismatched workspace is rejected") {
  RunConfig cfg = testutil::tiny_config();
  cfg.encoder.init_seed += 1;
  CHECK_THROWS_AS((void)train(*tiny_workspace(), cfg, 1), ConfigError);
}

TEST_CASE("larger fixed gamma does not raise the converged weak-alignment loss") {
  const auto ws = tiny_workspace();
  std::vector<double> mean_wa;
  for (double g : {0.0, 0.1, 1.0, 10.0}) {
    double acc = 0.0;
    for (std::uint64_t seed : {1, 2, 3}) {
      RunConfig cfg = testutil::tiny_config();
      cfg.optim.epochs = 6;
      cfg.optim.learning_rate = 0.01;
      cfg.losses.gamma_mode = GammaMode::fixed;
      cfg.losses.gamma_fixed = g;
      const auto res = train(*ws, cfg, seed);
      // last epoch's mean
      const int last = res.log.back().epoch;
      double s = 0.0;
      int n = 0;
      for (const auto& r : res.log)
        if (r.epoch == last) {
          s += r.wa;
          ++n;
        }
      acc += s / n;
    }
    mean_wa.push_back(acc / 3.0);
  }
  MESSAGE("mean final wa for gamma 0, 0.1, 1, 10: ", mean_wa[0], " ", mean_wa[1], " ", mean_wa[2], " ", mean_wa[3]);
  for (size_t i = 1; i < mean_wa.size(); ++i) CHECK(mean_wa[i] <= mean_wa[i - 1]);
}
