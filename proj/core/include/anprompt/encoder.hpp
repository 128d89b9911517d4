#pragma once

// Miniature dual encoder: a ViT-style image tower and a text tower sharing the
// same block design (pre-LN transformer, bidirectional attention). Both
// towers are frozen; only the prompt vectors handed to them carry gradients.

#include <atomic>
#include <cstdint>
#include <functional>
#include <random>
#include <shared_mutex>
#include <span>
#include <unordered_map>
#include <vector>

#include "anprompt/autograd.hpp"

namespace anprompt {

struct EncoderConfig {
  int embed_dim = 64;
  int num_layers = 12;
  int num_heads = 4;
  int patch_rows = 4;
  int patch_cols = 4;
  int image_size = 16;
  int channels = 3;
  int vocab_size = 512;
  int max_text_len = 32;
  double temperature = 0.01;
  int mlp_ratio = 4;
  /// Seed of the (stand-in for pretrained) backbone weights. Independent of
  /// the per-run training seed so every run shares one backbone.
  std::uint64_t init_seed = 20240601;

  void validate() const;
  [[nodiscard]] int num_patches() const { return patch_rows * patch_cols; }
  [[nodiscard]] int patch_dim() const {
    return (image_size / patch_rows) * (image_size / patch_cols) * channels;
  }
};

/// Layers are 1-based and inclusive. Prompt slots are inserted at
/// layer_start and their contents replaced at every later layer up to
/// layer_end; after layer_end the slots simply flow through.
struct InjectionSpec {
  int layer_start = 6;
  int layer_end = 12;
  int prompt_count = 5;

  void validate(int num_layers) const;
  [[nodiscard]] int num_injected_layers() const { return layer_end - layer_start + 1; }
};

enum class TokenRole { start, prompt, class_name, content, patch, class_token, end };

struct TokenSequence {
  Mat tokens;
  std::vector<TokenRole> role_tags;
};

/// Row-major HWC image with real-valued pixels.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> pixels;

  [[nodiscard]] double at(int y, int x, int c) const {
    return pixels[static_cast<size_t>((y * width + x) * channels + c)];
  }
};

struct PromptedOutput {
  /// (1, C) unit-norm feature: class token (image) or end token (text).
  ag::Var feature;
  /// (K, C) prompt-slot outputs passed through the output head, before any
  /// normalisation. Only the image tower's are consumed downstream.
  ag::Var prompt_tokens;
};

class TransformerStack {
 public:
  TransformerStack(const EncoderConfig& cfg, const std::string& prefix, std::mt19937_64& rng);

  /// Runs one block (1-based layer index).
  [[nodiscard]] ag::Var block(ag::Tape& tape, int layer, ag::Var x) const;
  [[nodiscard]] int depth() const { return static_cast<int>(blocks_.size()); }

  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;

 private:
  struct Block {
    Parameter ln1_g, ln1_b, w_qkv, b_qkv, w_out, b_out;
    Parameter ln2_g, ln2_b, w_fc1, b_fc1, w_fc2, b_fc2;
  };
  std::vector<Block> blocks_;
  int heads_;
};

/// Output head shared by both towers: final layer norm then a C x C projection.
struct OutputHead {
  Parameter ln_g, ln_b, proj;
  [[nodiscard]] ag::Var apply(ag::Tape& tape, ag::Var rows) const;
};

class VisionEncoder {
 public:
  VisionEncoder(const EncoderConfig& cfg, std::mt19937_64& rng);

  /// {e_cls, e_1..e_M} with positional embeddings; throws DimensionError if
  /// the image does not match the configured grid.
  [[nodiscard]] TokenSequence embed(const Image& image) const;

  /// (M, patch_dim) patch matrix in grid row-major order.
  [[nodiscard]] Mat patches(const Image& image) const;
  [[nodiscard]] Image image_from_patches(const Mat& patches) const;
  /// Differentiable {e_cls, e_1..e_M} from a patch matrix.
  [[nodiscard]] ag::Var embed_patches(ag::Tape& tape, ag::Var patches) const;
  /// Prompt-free forward returning the (1, C) unit class-token feature.
  [[nodiscard]] ag::Var encode_plain(ag::Tape& tape, ag::Var patches) const;

  /// Hidden states after layers [1, spec.layer_start); no prompts involved.
  [[nodiscard]] Mat prefix(const Image& image, const InjectionSpec& spec) const;

  [[nodiscard]] PromptedOutput encode_from_prefix(ag::Tape& tape, const Mat& prefix,
                                                  std::span<const ag::Var> layer_prompts,
                                                  const InjectionSpec& spec) const;

  /// encode_image_prompted: one (K, C) prompt Var per injected layer.
  [[nodiscard]] PromptedOutput encode(ag::Tape& tape, const Image& image,
                                      std::span<const ag::Var> layer_prompts,
                                      const InjectionSpec& spec) const;

  /// Role layout of the sequence entering layer_start.
  [[nodiscard]] std::vector<TokenRole> injected_layout(int prompt_count) const;

  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;
  [[nodiscard]] const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  Parameter patch_w_, patch_b_, cls_, pos_;
  TransformerStack stack_;
  OutputHead head_;
};

class TextEncoder {
 public:
  static constexpr int kPad = 0;
  static constexpr int kStart = 1;
  static constexpr int kEnd = 2;
  static constexpr int kMask = 3;
  static constexpr int kUnknown = 4;
  static constexpr int kFirstWord = 5;

  TextEncoder(const EncoderConfig& cfg, std::mt19937_64& rng);

  /// ids must be {start, ..., end}.
  [[nodiscard]] TokenSequence embed(std::span<const int> ids) const;
  [[nodiscard]] Mat prefix(std::span<const int> ids, const InjectionSpec& spec) const;
  [[nodiscard]] PromptedOutput encode_from_prefix(ag::Tape& tape, const Mat& prefix,
                                                  std::span<const ag::Var> layer_prompts,
                                                  const InjectionSpec& spec) const;
  /// encode_text_prompted.
  [[nodiscard]] PromptedOutput encode(ag::Tape& tape, std::span<const int> ids,
                                      std::span<const ag::Var> layer_prompts,
                                      const InjectionSpec& spec) const;
  /// Prompt-free pass through every layer; this is the frozen text encoder.
  [[nodiscard]] RowVec encode_plain(std::span<const int> ids) const;

  [[nodiscard]] std::vector<TokenRole> injected_layout(std::span<const int> ids, int prompt_count,
                                                       int class_name_tokens) const;

  void check_length(std::span<const int> ids, int prompt_count) const;

  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;
  [[nodiscard]] const EncoderConfig& config() const { return cfg_; }

 private:
  void check_ids(std::span<const int> ids) const;

  EncoderConfig cfg_;
  Parameter tok_, pos_;
  TransformerStack stack_;
  OutputHead head_;
};

/// Both towers, built deterministically from EncoderConfig::init_seed.
struct Backbone {
  explicit Backbone(const EncoderConfig& cfg);

  EncoderConfig config;
  VisionEncoder vision;
  TextEncoder text;

  [[nodiscard]] std::vector<Parameter*> parameters();
  [[nodiscard]] std::vector<const Parameter*> parameters() const;
};

struct TokenIdsHash {
  size_t operator()(const std::vector<int>& ids) const noexcept;
};

/// encode_text_frozen with a cache keyed by exact token ids. Concurrent
/// readers share the lock; inserts take it exclusively.
class FrozenTextEncoder {
 public:
  explicit FrozenTextEncoder(const TextEncoder& text) : text_(&text) {}

  /// Throws InputError when the sentence has no content tokens.
  [[nodiscard]] RowVec encode(std::span<const int> ids) const;
  [[nodiscard]] Mat encode_many(std::span<const std::vector<int>> sentences) const;

  [[nodiscard]] size_t cache_size() const;
  [[nodiscard]] size_t hits() const { return hits_; }

 private:
  const TextEncoder* text_;
  mutable std::shared_mutex mutex_;
  mutable std::unordered_map<std::vector<int>, RowVec, TokenIdsHash> cache_;
  mutable std::atomic<size_t> hits_{0};
};

/// Softmax over cosine similarities divided by tau. Rows of class_features
/// and the image feature are renormalised; zero-norm input throws NumericError.
[[nodiscard]] RowVec zero_shot_classify(const RowVec& image_feature, const Mat& class_features,
                                        double temperature);

}  // namespace anprompt
