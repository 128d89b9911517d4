#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "anprompt/config.hpp"
#include "anprompt/model.hpp"
#include "anprompt/records.hpp"
#include "anprompt/workspace.hpp"

namespace anprompt {

/// Stream tag of the weak-noise bank used at evaluation time.
inline constexpr std::uint64_t kEvalStream = 1'000'000;

/// The weak-noise (or, for a strong noise_kind, perturbed) frozen text bank
/// of `cache` for one stream: draws_per_class rows per class, class-major.
/// components.text_noise off keeps the main sentence unperturbed.
[[nodiscard]] Mat noise_feature_bank(const Workspace& ws, const RunConfig& cfg, const CaptionCache& cache,
                                     std::uint64_t seed, std::uint64_t stream, int draws_per_class);

/// Every draws_per_class-th row: the first draw of each class.
[[nodiscard]] Mat first_draws(const Mat& bank, int draws_per_class);

/// cfg.losses adjusted for the component toggles.
[[nodiscard]] LossWeights effective_weights(const RunConfig& cfg);

struct TrainOptions {
  /// Run directory for config snapshot, log and checkpoints; empty writes nothing.
  std::filesystem::path out_dir;
  bool save_checkpoints = true;
};

struct TrainResult {
  std::unique_ptr<AnPromptModel> model;
  std::vector<StepRecord> log;
};

/// Base-class prompt tuning. Per epoch: rebuild the noise bank, re-cluster
/// and pair the noise prompts, then one pass over shuffled batches. Only
/// P_c, the projection heads and the per-layer offsets are updated. A
/// non-finite loss writes a "diverged" record and throws NumericError.
[[nodiscard]] TrainResult train(const Workspace& ws, const RunConfig& cfg, std::uint64_t seed,
                                const TrainOptions& options = {});

struct ScoreSet {
  Mat l_a;
  Mat l_r;
  Mat l_final;
};

/// Prompted image features of test images (parallel over images when
/// threads > 1; the result does not depend on the thread count).
[[nodiscard]] Mat image_features(const AnPromptModel& model, const Workspace& ws, std::span<const size_t> test_index,
                                 int threads = 1);
/// Prompted text features for the given classes.
[[nodiscard]] Mat class_text_features(const AnPromptModel& model, const Workspace& ws, const std::vector<int>& classes);

/// Logits of test images against `classes`, with f_w from the evaluation stream.
[[nodiscard]] ScoreSet score_test_images(const AnPromptModel& model, const Workspace& ws, const RunConfig& cfg,
                                         std::uint64_t seed, std::span<const size_t> test_index,
                                         const std::vector<int>& classes);

/// Top-1 accuracy (percent) on the test images of `classes`, predicting with
/// l_final among those classes only. Throws InputError on an empty split.
[[nodiscard]] double evaluate_accuracy(const AnPromptModel& model, const Workspace& ws, const RunConfig& cfg,
                                       std::uint64_t seed, const std::vector<int>& classes);

/// Base and novel accuracy plus their harmonic mean.
[[nodiscard]] EvalReport evaluate(const AnPromptModel& model, const Workspace& ws, const RunConfig& cfg,
                                  std::uint64_t seed);

}  // namespace anprompt
