#include <doctest.h>

#include <limits>

#include "anprompt/errors.hpp"
#include "anprompt/kmeans.hpp"
#include "helpers.hpp"

using namespace anprompt;

namespace {

// Optimal 2-means inertia by enumerating every bipartition.
double brute_force_two_means(const Mat& x) {
  const int n = static_cast<int>(x.rows());
  double best = std::numeric_limits<double>::infinity();
  for (int mask = 1; mask < (1 << (n - 1)); ++mask) {
    double total = 0.0;
    for (int side = 0; side < 2; ++side) {
      RowVec mean = RowVec::Zero(x.cols());
      int count = 0;
      for (int i = 0; i < n; ++i) {
        if (((mask >> i) & 1) == side) {
          mean += x.row(i);
          ++count;
        }
      }
      mean /= count;
      for (int i = 0; i < n; ++i)
        if (((mask >> i) & 1) == side) total += (x.row(i) - mean).squaredNorm();
    }
    best = std::min(best, total);
  }
  return best;
}

// Lloyd fixed point: every centre is the mean of its members and every point
// sits at its nearest centre.
bool is_lloyd_fixed_point(const Mat& x, const NoisePromptBank& b) {
  for (Eigen::Index c = 0; c < b.centers.rows(); ++c) {
    RowVec mean = RowVec::Zero(x.cols());
    int n = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      if (b.assignment[static_cast<size_t>(i)] == c) {
        mean += x.row(i);
        ++n;
      }
    if (n == 0 || (mean / n - b.centers.row(c)).norm() > 1e-9) return false;
  }
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double own = (x.row(i) - b.centers.row(b.assignment[static_cast<size_t>(i)])).squaredNorm();
    for (Eigen::Index c = 0; c < b.centers.rows(); ++c)
      if ((x.row(i) - b.centers.row(c)).squaredNorm() < own - 1e-12) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("k-means matches brute force on small instances") {
  std::mt19937_64 rng(21);
  int optimal = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Mat x = testutil::random_mat(rng, 6, 3);
    KMeansOptions opt;
    opt.seed = static_cast<std::uint64_t>(trial);
    const auto bank = kmeans_cluster(x, 2, opt);
    const double best = brute_force_two_means(x);
    CHECK(bank.inertia >= best - 1e-9);
    if (bank.inertia <= best + 1e-9) {
      ++optimal;
    } else {
      CHECK(is_lloyd_fixed_point(x, bank));
    }
    for (size_t i = 1; i < bank.inertia_trace.size(); ++i)
      CHECK(bank.inertia_trace[i] <= bank.inertia_trace[i - 1] + 1e-12);
    CHECK(std::abs(kmeans_inertia(x, bank.centers, bank.assignment) - bank.inertia) < 1e-12);
  }
  MESSAGE("global optimum on ", optimal, " / 50; the rest are Lloyd fixed points");
  CHECK(optimal > 0);
}

TEST_CASE("k-means edge cases") {
  std::mt19937_64 rng(22);
  const Mat pts = testutil::random_mat(rng, 4, 5);
  const auto exact = kmeans_cluster(pts, 4);
  CHECK(exact.inertia == 0.0);
  for (int i = 0; i < 4; ++i) CHECK(pts.row(i) == exact.centers.row(exact.assignment[static_cast<size_t>(i)]));

  Mat pairs(4, 2);
  pairs << 0, 0, 0, 1, 10, 10, 10, 11;
  const auto two = kmeans_cluster(pairs, 2);
  CHECK(two.assignment[0] == two.assignment[1]);
  CHECK(two.assignment[2] == two.assignment[3]);
  CHECK(two.inertia == doctest::Approx(1.0));

  Mat dup = Mat::Zero(5, 3);
  dup.row(4).setOnes();
  const auto d = kmeans_cluster(dup, 3);
  CHECK(d.centers.rows() == 3);
  CHECK(d.centers.allFinite());

  CHECK_THROWS_AS((void)kmeans_cluster(pts, 5), InstanceError);
  CHECK_THROWS_AS((void)kmeans_cluster(pts, 0), InstanceError);

  KMeansOptions opt;
  opt.seed = 3;
  const Mat many = testutil::random_mat(rng, 40, 4);
  const auto a = kmeans_cluster(many, 5, opt), b = kmeans_cluster(many, 5, opt);
  CHECK(a.centers == b.centers);
  if (a.converged) {
    for (int k = 0; k < 5; ++k) {
      RowVec mean = RowVec::Zero(4);
      int n = 0;
      for (int i = 0; i < 40; ++i)
        if (a.assignment[static_cast<size_t>(i)] == k) {
          mean += many.row(i);
          ++n;
        }
      if (n > 0) CHECK((mean / n - a.centers.row(k)).norm() < 1e-6);
    }
  }
}
