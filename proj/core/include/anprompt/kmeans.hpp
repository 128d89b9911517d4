#pragma once

#include <cstdint>
#include <vector>

#include "anprompt/autograd.hpp"

namespace anprompt {

struct KMeansOptions {
  int max_iter = 100;
  double tol = 1e-6;
  std::uint64_t seed = 0;
};

/// K cluster centres over weak-noise features; these become the noise prompts.
struct NoisePromptBank {
  Mat centers;
  std::vector<int> assignment;
  double inertia = 0.0;
  /// Inertia after each assignment step, first to last. Non-increasing.
  std::vector<double> inertia_trace;
  int iterations = 0;
  bool converged = false;
};

/// Lloyd's algorithm with k-means++ seeding. Stops once no centre moves by
/// tol or more, or after max_iter rounds. A cluster that empties out is
/// reseeded at the point farthest from its current centre, which keeps K
/// centres alive even when duplicates leave fewer than K distinct points.
/// Throws InstanceError when rows < k or k < 1.
[[nodiscard]] NoisePromptBank kmeans_cluster(const Mat& features, int k, const KMeansOptions& options = {});

/// Sum of squared distances from each row to its assigned centre.
[[nodiscard]] double kmeans_inertia(const Mat& features, const Mat& centers, const std::vector<int>& assignment);

}  // namespace anprompt
