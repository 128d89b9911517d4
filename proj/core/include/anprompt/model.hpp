#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "anprompt/checkpoint.hpp"
#include "anprompt/config.hpp"
#include "anprompt/encoder.hpp"
#include "anprompt/losses.hpp"
#include "anprompt/prompts.hpp"

namespace anprompt {

/// Prompt-side state of one run on top of a shared frozen backbone:
/// P_c, the projection heads, per-layer offsets and the paired noise prompts.
class AnPromptModel {
 public:
  AnPromptModel(std::shared_ptr<const Backbone> backbone, const RunConfig& cfg, std::uint64_t seed);

  struct PromptVars {
    AntiNoisePrompts anti;
    std::vector<ag::Var> image_layers;
    std::vector<ag::Var> text_layers;
  };

  /// Binds the trainable parameters to the tape (gradients flow).
  [[nodiscard]] PromptVars prompt_vars(ag::Tape& tape);
  /// Same values as constants, for evaluation.
  [[nodiscard]] PromptVars prompt_vars(ag::Tape& tape) const;

  /// Stage 3: prompted image features, NRVPP and prompted class text features.
  /// Each prefix is the frozen hidden state entering injection.layer_start.
  [[nodiscard]] FeatureBundle encode(ag::Tape& tape, const PromptVars& prompts,
                                     std::span<const Mat* const> image_prefixes,
                                     std::span<const Mat* const> class_prefixes, const Mat& weak_features) const;

  [[nodiscard]] std::vector<Parameter*> trainable_parameters();
  [[nodiscard]] std::vector<const Parameter*> trainable_parameters() const;

  /// Replaces the noise prompts with `centers` reordered by minimum-cost
  /// pairing against the current P_c.
  void set_noise_prompts(const Mat& centers);
  [[nodiscard]] const Mat& noise_prompts() const { return noise_prompts_; }

  [[nodiscard]] const Backbone& backbone() const { return *backbone_; }
  [[nodiscard]] const InjectionSpec& injection() const { return spec_; }
  [[nodiscard]] double epsilon() const { return epsilon_; }
  [[nodiscard]] double temperature() const { return backbone_->config.temperature; }
  [[nodiscard]] const LearnablePrompts& learnable() const { return prompts_; }

  /// Trainable tensors, the noise-prompt buffer and every frozen backbone tensor.
  [[nodiscard]] std::vector<CheckpointEntry> checkpoint_entries() const;
  void save(const std::filesystem::path& dir) const;
  /// Restores trainable tensors and the buffer. Frozen tensors must match
  /// this backbone (at 32-bit precision), otherwise FileError.
  void load(const std::filesystem::path& dir);

 private:
  std::shared_ptr<const Backbone> backbone_;
  InjectionSpec spec_;
  double epsilon_;
  LearnablePrompts prompts_;
  ProjectionHeads heads_;
  DeepPromptOffsets offsets_;
  Mat noise_prompts_;
};

}  // namespace anprompt
