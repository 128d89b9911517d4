#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "anprompt/encoder.hpp"
#include "anprompt/losses.hpp"
#include "anprompt/weak_noise.hpp"

namespace anprompt {

struct PromptConfig {
  /// Number of learnable prompt tokens (T); also the number of noise prompts.
  int K = 5;
  double epsilon = 0.001;
  double init_scale = 0.02;
  /// Weak-noise draws per class pooled for clustering each epoch. The first
  /// draw of each class doubles as that class's f_w row.
  int cluster_draws_per_class = 4;
  int kmeans_max_iter = 100;
  double kmeans_tol = 1e-6;
};

struct OptimConfig {
  double learning_rate = 0.001;
  int epochs = 10;
  int batch_size = 4;
  std::string optimizer = "adam";
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// "constant" or "cosine".
  std::string schedule = "constant";
};

/// Switches for the three components studied in the component ablation.
struct ComponentToggles {
  /// Off: f_w is the main sentence alone (no fused noise sentence).
  bool text_noise = true;
  /// Off: the weak alignment term is weighted by zero.
  bool wa_loss = true;
  /// Off: P_a = P_c (noise prompts are not added).
  bool anti_prompt = true;
};

struct SplitSpec {
  /// Class names; both empty means the alphabetical-halves default.
  std::vector<std::string> base_classes;
  std::vector<std::string> novel_classes;
  int shots_per_class = 16;
};

struct SyntheticSpec {
  int num_classes = 8;
  /// Data seed, independent of the training seeds so every run sees one dataset.
  std::uint64_t seed = 7;
  int train_per_class = 16;
  int test_per_class = 64;
  double pixel_noise = 1.0;
  int captions_per_class = 6;
  /// Gradient steps used to align each class prototype with its class text
  /// under the frozen backbone; 0 leaves prototypes as raw Gaussian draws.
  int align_steps = 60;
  double align_lr = 0.05;
};

struct DatasetConfig {
  /// Folder dataset; empty means generate the synthetic task.
  std::string path;
  SyntheticSpec synthetic;
  SplitSpec split;
};

struct NoiseBenchConfig {
  std::vector<std::string> perturbations{"weak_fusion:0.01", "drop:0.25", "mask:0.25", "shuffle", "synonym_replace:0.25"};
};

struct RunConfig {
  EncoderConfig encoder;
  InjectionSpec injection;
  WeakNoiseConfig weak_noise;
  /// Text-noise generator used during training: weak_fusion (default, uses
  /// weak_noise.alpha) or a strong perturbation for the noise-kind study.
  std::string noise_kind = "weak_fusion";
  PromptConfig prompts;
  LossWeights losses;
  OptimConfig optim;
  ComponentToggles components;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  DatasetConfig dataset;
  NoiseBenchConfig noise_bench;
  int threads = 1;

  /// Cross-field checks; throws ConfigError naming the field.
  void validate() const;
  /// Injection spec with prompt_count synchronised to prompts.K.
  [[nodiscard]] InjectionSpec injection_spec() const;

  /// Strict parse: unknown keys and wrong types throw ConfigError naming
  /// the dotted field path. Missing keys keep their defaults.
  [[nodiscard]] static RunConfig from_json_text(const std::string& text);
  [[nodiscard]] static RunConfig load(const std::filesystem::path& path);
  [[nodiscard]] std::string to_json_text() const;
  void save(const std::filesystem::path& path) const;
};

}  // namespace anprompt
