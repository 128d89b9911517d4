#pragma once

#include <span>
#include <string>
#include <vector>

#include "anprompt/autograd.hpp"
#include "anprompt/encoder.hpp"
#include "anprompt/weak_noise.hpp"

namespace anprompt {

/// 2ab / (a + b). Throws DomainError unless both lie in (0, 100].
[[nodiscard]] double harmonic_mean(double base_acc, double novel_acc);

/// Top-1 accuracy in percent. Throws InputError on empty or mismatched input.
[[nodiscard]] double accuracy_percent(std::span<const int> predictions, std::span<const int> labels);

/// Row-wise argmax; ties go to the lowest index.
[[nodiscard]] std::vector<int> argmax_rows(const Mat& scores);

/// Clean sentences plus their perturbed counterparts, one pair per entry.
struct PerturbedCorpus {
  std::vector<std::vector<int>> clean;
  std::vector<std::vector<int>> perturbed;
};

/// Applies `p` to every sentence of the cache. Each class draws from its own
/// generator derived from `seed`. weak_fusion leaves the tokens untouched; its
/// effect is feature-level (see perturbed_features).
[[nodiscard]] PerturbedCorpus perturb_corpus(const CaptionCache& cache, const PerturbationKind& p,
                                             std::uint64_t seed);

/// Frozen features of the perturbed side. For weak_fusion each sentence is
/// fused with another sentence of the same class at weight p.rate.
[[nodiscard]] Mat perturbed_features(const CaptionCache& cache, const FrozenTextEncoder& encoder,
                                     const PerturbationKind& p, std::uint64_t seed);

/// Mean squared L2 distance between matching unit rows.
[[nodiscard]] double text_shift(const Mat& clean, const Mat& perturbed);

/// Fraction of rows whose argmax agrees.
[[nodiscard]] double logit_preservation_rate(const Mat& clean_scores, const Mat& perturbed_scores);

/// |accuracy(clean) - accuracy(perturbed)| in percentage points.
[[nodiscard]] double accuracy_shift(const Mat& clean_scores, const Mat& perturbed_scores,
                                    std::span<const int> labels);

struct NoiseMetricReport {
  std::string perturbation;
  double ts = 0.0;
  double lpr = 1.0;
  double as_ = 0.0;
  int n_samples = 0;
};

}  // namespace anprompt
