#pragma once

// Finite-difference check of d(total loss)/d(every trainable parameter) on a
// 2-class, C=8, 2-layer instance built directly from the model pieces.

#include <algorithm>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "anprompt/model.hpp"

namespace gradcheck {

using namespace anprompt;

struct Result {
  std::string worst_param;
  double worst_rel_err = 0.0;
  int params_checked = 0;
  int entries_checked = 0;
};

inline RunConfig toy_config() {
  RunConfig cfg;
  cfg.encoder.embed_dim = 8;
  cfg.encoder.num_layers = 2;
  cfg.encoder.num_heads = 2;
  cfg.encoder.image_size = 8;
  cfg.encoder.vocab_size = 32;
  cfg.encoder.max_text_len = 12;
  cfg.encoder.temperature = 0.5;
  cfg.injection = {1, 2, 2};
  cfg.prompts.K = 2;
  cfg.prompts.epsilon = 0.3;
  cfg.losses.lambda_sim = 0.7;
  return cfg;
}

inline Result run(std::uint64_t seed = 1) {
  const RunConfig cfg = toy_config();
  const InjectionSpec spec = cfg.injection_spec();
  auto backbone = std::make_shared<const Backbone>(cfg.encoder);
  AnPromptModel model(backbone, cfg, seed);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  auto randomise = [&](Mat& m, double sd) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += sd * n(rng);
  };
  // Move every trainable tensor off its (identity / zero) initialisation.
  for (Parameter* p : model.trainable_parameters()) randomise(p->value, 0.3);
  Mat noise = Mat::Zero(spec.prompt_count, cfg.encoder.embed_dim);
  randomise(noise, 1.0);
  model.set_noise_prompts(noise);

  std::vector<Mat> image_prefix, class_prefix;
  for (int b = 0; b < 3; ++b) {
    Image img{8, 8, 3, {}};
    for (int i = 0; i < 8 * 8 * 3; ++i) img.pixels.push_back(n(rng));
    image_prefix.push_back(backbone->vision.prefix(img, spec));
  }
  const std::vector<std::vector<int>> class_ids{{TextEncoder::kStart, 7, 8, 9, TextEncoder::kEnd},
                                                {TextEncoder::kStart, 7, 8, 10, TextEncoder::kEnd}};
  for (const auto& ids : class_ids) class_prefix.push_back(backbone->text.prefix(ids, spec));
  Mat f_w = Mat::Zero(2, cfg.encoder.embed_dim);
  randomise(f_w, 1.0);
  for (Eigen::Index i = 0; i < 2; ++i) f_w.row(i).normalize();
  const std::vector<int> labels{0, 1, 1};

  std::vector<const Mat*> ip, cp;
  for (const auto& m : image_prefix) ip.push_back(&m);
  for (const auto& m : class_prefix) cp.push_back(&m);

  // gamma is a stop-gradient coefficient; pin it so both sides see the same constant.
  double pinned = 0.0;
  {
    ag::Tape t;
    const auto pv = std::as_const(model).prompt_vars(t);
    pinned = total_loss(model.encode(t, pv, ip, cp, f_w), labels, cfg.losses, model.temperature()).gamma;
  }
  auto loss_value = [&]() {
    ag::Tape t;
    const auto pv = std::as_const(model).prompt_vars(t);
    return total_loss(model.encode(t, pv, ip, cp, f_w), labels, cfg.losses, model.temperature(), pinned).total;
  };

  for (Parameter* p : model.trainable_parameters()) p->zero_grad();
  {
    ag::Tape t;
    const auto pv = model.prompt_vars(t);
    const auto rep = total_loss(model.encode(t, pv, ip, cp, f_w), labels, cfg.losses, model.temperature(), pinned);
    t.backward(rep.total_var);
  }

  Result r;
  const double h = 1e-6;
  for (Parameter* p : model.trainable_parameters()) {
    Mat numeric(p->value.rows(), p->value.cols());
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double v = p->value.data()[i];
      p->value.data()[i] = v + h;
      const double up = loss_value();
      p->value.data()[i] = v - h;
      const double down = loss_value();
      p->value.data()[i] = v;
      numeric.data()[i] = (up - down) / (2 * h);
      ++r.entries_checked;
    }
    const double scale = std::max({numeric.norm(), p->grad.norm(), 1e-7});
    const double err = (numeric - p->grad).norm() / scale;
    if (err >= r.worst_rel_err) {
      r.worst_rel_err = err;
      r.worst_param = p->name;
    }
    ++r.params_checked;
  }
  return r;
}

}  // namespace gradcheck
