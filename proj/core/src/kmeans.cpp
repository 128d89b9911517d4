#include "anprompt/kmeans.hpp"

#include <limits>
#include <random>

#include "anprompt/errors.hpp"
#include "anprompt/rng.hpp"

namespace anprompt {

namespace {

double assign(const Mat& x, const Mat& centers, std::vector<int>& assignment, std::vector<double>& dist2) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centers.rows(); ++c) {
      const double d = (x.row(i) - centers.row(c)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    assignment[static_cast<size_t>(i)] = best;
    dist2[static_cast<size_t>(i)] = best_d;
    total += best_d;
  }
  return total;
}

Mat seed_plus_plus(const Mat& x, int k, std::mt19937_64& rng) {
  const Eigen::Index n = x.rows();
  Mat centers(k, x.cols());
  std::vector<bool> taken(static_cast<size_t>(n), false);
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  Eigen::Index pick = first(rng);
  centers.row(0) = x.row(pick);
  taken[static_cast<size_t>(pick)] = true;
  std::vector<double> d2(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<size_t>(i)] = (x.row(i) - centers.row(0)).squaredNorm();
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng);
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        r -= d2[static_cast<size_t>(i)];
        if (r < 0.0 && d2[static_cast<size_t>(i)] > 0.0) {
          pick = i;
          break;
        }
      }
      // Guard against landing on a zero-weight tail through rounding.
      while (d2[static_cast<size_t>(pick)] == 0.0 && pick > 0) --pick;
    } else {
      // Every point coincides with a centre: fall back to an untaken index.
      std::vector<Eigen::Index> free;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!taken[static_cast<size_t>(i)]) free.push_back(i);
      }
      std::uniform_int_distribution<size_t> d(0, free.size() - 1);
      pick = free[d(rng)];
    }
    centers.row(c) = x.row(pick);
    taken[static_cast<size_t>(pick)] = true;
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[static_cast<size_t>(i)] = std::min(d2[static_cast<size_t>(i)], (x.row(i) - centers.row(c)).squaredNorm());
    }
  }
  return centers;
}

}  // namespace

double kmeans_inertia(const Mat& features, const Mat& centers, const std::vector<int>& assignment) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    total += (features.row(i) - centers.row(assignment[static_cast<size_t>(i)])).squaredNorm();
  }
  return total;
}

NoisePromptBank kmeans_cluster(const Mat& features, int k, const KMeansOptions& options) {
  if (k < 1) throw InstanceError("kmeans: k must be at least 1");
  if (features.rows() < k) {
    throw InstanceError("kmeans: " + std::to_string(features.rows()) + " points cannot form " + std::to_string(k) +
                        " clusters");
  }
  if (!features.allFinite()) throw NumericError("kmeans: non-finite features");
  if (options.max_iter < 1) throw ConfigError("kmeans: max_iter must be positive");

  auto rng = derive_rng(options.seed, {0x6b6d65616e73ULL});
  const Eigen::Index n = features.rows();
  NoisePromptBank bank;
  bank.centers = seed_plus_plus(features, k, rng);
  bank.assignment.assign(static_cast<size_t>(n), 0);
  std::vector<double> dist2(static_cast<size_t>(n));

  for (int it = 0; it < options.max_iter; ++it) {
    bank.inertia_trace.push_back(assign(features, bank.centers, bank.assignment, dist2));
    Mat next = Mat::Zero(k, features.cols());
    std::vector<int> counts(static_cast<size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int c = bank.assignment[static_cast<size_t>(i)];
      next.row(c) += features.row(i);
      ++counts[static_cast<size_t>(c)];
    }
    std::vector<bool> used(static_cast<size_t>(n), false);
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<size_t>(c)] > 0) {
        next.row(c) /= counts[static_cast<size_t>(c)];
        continue;
      }
      Eigen::Index far = 0;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!used[static_cast<size_t>(i)] && dist2[static_cast<size_t>(i)] > far_d) {
          far_d = dist2[static_cast<size_t>(i)];
          far = i;
        }
      }
      used[static_cast<size_t>(far)] = true;
      next.row(c) = features.row(far);
    }
    double shift = 0.0;
    for (int c = 0; c < k; ++c) shift = std::max(shift, (next.row(c) - bank.centers.row(c)).norm());
    bank.centers = std::move(next);
    bank.iterations = it + 1;
    if (shift < options.tol) {
      bank.converged = true;
      break;
    }
  }
  bank.inertia = assign(features, bank.centers, bank.assignment, dist2);
  bank.inertia_trace.push_back(bank.inertia);
  return bank;
}

}  // namespace anprompt
