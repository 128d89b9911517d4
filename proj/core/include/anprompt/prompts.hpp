#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "anprompt/autograd.hpp"
#include "anprompt/encoder.hpp"

namespace anprompt {

/// Learnable prompt tokens P_c, shape (K, C).
struct LearnablePrompts {
  Parameter tokens;
  double init_scale = 0.02;

  [[nodiscard]] static LearnablePrompts init(int k, int embed_dim, double init_scale, std::mt19937_64& rng);
  [[nodiscard]] int count() const { return static_cast<int>(tokens.value.rows()); }
};

/// Modality-specific affine maps applied to the combined prompts.
/// Weights are stored (in, out) so a row vector maps as x * W + b.
struct ProjectionHeads {
  Parameter image_w, image_b, text_w, text_b;

  [[nodiscard]] static ProjectionHeads identity(int embed_dim);
  [[nodiscard]] std::vector<Parameter*> parameters() { return {&image_w, &image_b, &text_w, &text_b}; }
};

/// Per-layer learned offsets added to the projected prompts at each injected
/// layer, zero-initialised. The offset of the first injected layer doubles as
/// the prompt slots' positional embedding.
struct DeepPromptOffsets {
  std::vector<Parameter> image;
  std::vector<Parameter> text;

  [[nodiscard]] static DeepPromptOffsets zeros(const InjectionSpec& spec, int embed_dim);
};

/// P_a = P_c + eps * P_w and its two projected views. P_w enters the tape as
/// a constant, so gradients reach P_c only.
struct AntiNoisePrompts {
  ag::Var combined;
  double epsilon = 0.0;
  ag::Var image_view;
  ag::Var text_view;
};

/// Throws DimensionError when shapes disagree.
[[nodiscard]] AntiNoisePrompts build_anti_noise_prompts(ag::Var learnable, const Mat& noise_prompts, double epsilon);

/// Fills image_view / text_view row-wise.
void project_prompts(ag::Tape& tape, AntiNoisePrompts& prompts, ProjectionHeads& heads);
void project_prompts(ag::Tape& tape, AntiNoisePrompts& prompts, const ProjectionHeads& heads);

/// One (K, C) prompt block per injected layer: view + that layer's offset.
[[nodiscard]] std::vector<ag::Var> layer_prompts(ag::Tape& tape, ag::Var view, std::vector<Parameter>& offsets);
[[nodiscard]] std::vector<ag::Var> layer_prompts(ag::Tape& tape, ag::Var view, const std::vector<Parameter>& offsets);

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method).
/// Returns match[row] = column.
[[nodiscard]] std::vector<int> min_cost_assignment(const Mat& cost);

/// Pairing of noise-prompt rows to learnable-prompt rows minimising the sum
/// of Euclidean distances: result[i] is the P_w row paired with P_c row i.
[[nodiscard]] std::vector<int> pair_rows(const Mat& learnable, const Mat& noise_prompts);

/// Reorders P_w so row i is the one paired with P_c row i.
[[nodiscard]] Mat apply_pairing(const Mat& noise_prompts, const std::vector<int>& pairing);

}  // namespace anprompt
