#pragma once

#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "anprompt/autograd.hpp"
#include "anprompt/config.hpp"

namespace testutil {

using anprompt::Mat;

inline Mat random_mat(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

/// Central differences of a scalar function of one matrix.
inline Mat numeric_grad(const std::function<double(const Mat&)>& f, const Mat& x, double h = 1e-6) {
  Mat g(x.rows(), x.cols());
  Mat probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = probe.data()[i];
    probe.data()[i] = v + h;
    const double up = f(probe);
    probe.data()[i] = v - h;
    const double down = f(probe);
    probe.data()[i] = v;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double rel_err(const Mat& a, const Mat& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-8});
  return (a - b).norm() / scale;
}

/// A miniature run: 16-dim, 4 layers, 4 classes, few images.
inline anprompt::RunConfig tiny_config() {
  anprompt::RunConfig cfg;
  cfg.encoder.embed_dim = 16;
  cfg.encoder.num_layers = 4;
  cfg.encoder.num_heads = 2;
  cfg.encoder.image_size = 8;
  cfg.encoder.max_text_len = 24;
  cfg.injection.layer_start = 2;
  cfg.injection.layer_end = 4;
  cfg.injection.prompt_count = 2;
  cfg.prompts.K = 2;
  cfg.prompts.cluster_draws_per_class = 2;
  cfg.optim.epochs = 2;
  cfg.optim.batch_size = 4;
  cfg.dataset.synthetic.num_classes = 4;
  cfg.dataset.synthetic.train_per_class = 4;
  cfg.dataset.synthetic.test_per_class = 4;
  cfg.dataset.synthetic.captions_per_class = 3;
  cfg.dataset.synthetic.align_steps = 10;
  cfg.dataset.split.shots_per_class = 4;
  cfg.seeds = {1};
  return cfg;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("anprompt_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testutil
