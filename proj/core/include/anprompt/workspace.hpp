#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <utility>
#include <vector>

#include "anprompt/config.hpp"
#include "anprompt/dataset.hpp"
#include "anprompt/encoder.hpp"
#include "anprompt/vocabulary.hpp"
#include "anprompt/weak_noise.hpp"

namespace anprompt {

/// Everything a run reads but never writes: the frozen backbone and its
/// text cache, the dataset, its vocabulary and caption cache, and frozen
/// prefix states for every image and class prompt. Shared across seeds and
/// ablation rows.
class Workspace {
 public:
  /// Builds the backbone and either loads cfg.dataset.path or generates the
  /// synthetic task.
  [[nodiscard]] static std::shared_ptr<Workspace> create(const RunConfig& cfg);
  [[nodiscard]] static std::shared_ptr<Workspace> create(const RunConfig& cfg, DatasetBundle data);

  [[nodiscard]] const Backbone& backbone() const { return *backbone_; }
  [[nodiscard]] std::shared_ptr<const Backbone> backbone_ptr() const { return backbone_; }
  [[nodiscard]] const FrozenTextEncoder& frozen() const { return *frozen_; }
  [[nodiscard]] const DatasetBundle& data() const { return data_; }
  [[nodiscard]] const Vocabulary& vocab() const { return vocab_; }
  [[nodiscard]] const CaptionCache& captions() const { return captions_; }
  [[nodiscard]] const ResolvedSplit& split() const { return split_; }
  [[nodiscard]] const std::vector<int>& class_prompt_ids(int class_id) const {
    return class_ids_[static_cast<size_t>(class_id)];
  }

  /// Perturbation with the dataset's synonym table attached.
  [[nodiscard]] PerturbationKind perturbation(const std::string& spec) const;

  /// Hidden states entering `layer_start`, one per image / class, computed
  /// once per layer_start and then shared.
  [[nodiscard]] const std::vector<Mat>& train_prefixes(int layer_start) const;
  [[nodiscard]] const std::vector<Mat>& test_prefixes(int layer_start) const;
  /// Also checks that prompts of length `prompt_count` fit max_text_len.
  [[nodiscard]] const std::vector<Mat>& class_prefixes(int layer_start, int prompt_count) const;

  /// Throws ConfigError when `cfg` needs a different backbone or split.
  void check_compatible(const RunConfig& cfg) const;

 private:
  Workspace(const RunConfig& cfg, DatasetBundle data, std::shared_ptr<const Backbone> backbone);

  RunConfig cfg_;
  std::shared_ptr<const Backbone> backbone_;
  std::unique_ptr<FrozenTextEncoder> frozen_;
  DatasetBundle data_;
  Vocabulary vocab_;
  CaptionCache captions_;
  ResolvedSplit split_;
  std::shared_ptr<const SynonymTable> synonyms_;
  std::vector<std::vector<int>> class_ids_;

  mutable std::mutex mutex_;
  mutable std::map<int, std::vector<Mat>> train_prefix_;
  mutable std::map<int, std::vector<Mat>> test_prefix_;
  mutable std::map<std::pair<int, int>, std::vector<Mat>> class_prefix_;
};

}  // namespace anprompt
