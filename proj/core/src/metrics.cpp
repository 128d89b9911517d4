#include "anprompt/metrics.hpp"

#include <cmath>

#include "anprompt/errors.hpp"
#include "anprompt/rng.hpp"

namespace anprompt {

double harmonic_mean(double base_acc, double novel_acc) {
  auto ok = [](double v) { return std::isfinite(v) && v > 0.0 && v <= 100.0; };
  if (!ok(base_acc) || !ok(novel_acc)) {
    throw DomainError("harmonic_mean needs both accuracies in (0, 100], got " + std::to_string(base_acc) + " and " +
                      std::to_string(novel_acc));
  }
  return 2.0 * base_acc * novel_acc / (base_acc + novel_acc);
}

double accuracy_percent(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.empty()) throw InputError("accuracy of an empty split");
  if (predictions.size() != labels.size()) throw InputError("prediction and label counts differ");
  size_t hits = 0;
  for (size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i] ? 1 : 0;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::vector<int> argmax_rows(const Mat& scores) {
  std::vector<int> out(static_cast<size_t>(scores.rows()));
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < scores.cols(); ++c) {
      if (scores(r, c) > scores(r, best)) best = c;
    }
    out[static_cast<size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

PerturbedCorpus perturb_corpus(const CaptionCache& cache, const PerturbationKind& p, std::uint64_t seed) {
  PerturbedCorpus out;
  for (int c = 0; c < cache.num_classes(); ++c) {
    auto rng = derive_rng(seed, {0x7065ULL, static_cast<std::uint64_t>(c)});
    for (const auto& s : cache.entries[static_cast<size_t>(c)]) {
      out.clean.push_back(s.ids);
      if (p.kind == PerturbationKind::Kind::weak_fusion) {
        out.perturbed.push_back(s.ids);
      } else {
        out.perturbed.push_back(perturb_strong(s.ids, p, rng));
      }
    }
  }
  return out;
}

Mat perturbed_features(const CaptionCache& cache, const FrozenTextEncoder& encoder, const PerturbationKind& p,
                       std::uint64_t seed) {
  if (p.kind != PerturbationKind::Kind::weak_fusion) {
    const auto corpus = perturb_corpus(cache, p, seed);
    return encoder.encode_many(corpus.perturbed);
  }
  WeakNoiseConfig wcfg;
  wcfg.alpha = p.rate;
  wcfg.renormalize = true;
  std::vector<RowVec> rows;
  for (int c = 0; c < cache.num_classes(); ++c) {
    auto rng = derive_rng(seed, {0x7065ULL, static_cast<std::uint64_t>(c)});
    const auto& pool = cache.entries[static_cast<size_t>(c)];
    if (pool.size() < 2) throw CacheError("class '" + cache.class_names[static_cast<size_t>(c)] + "' has fewer than 2 sentences");
    std::uniform_int_distribution<size_t> pick(0, pool.size() - 2);
    for (size_t i = 0; i < pool.size(); ++i) {
      size_t j = pick(rng);
      if (j >= i) ++j;
      rows.push_back(fuse_weak_noise(encoder.encode(pool[i].ids), encoder.encode(pool[j].ids), wcfg));
    }
  }
  Mat out(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : rows.front().cols());
  for (size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = rows[i];
  return out;
}

double text_shift(const Mat& clean, const Mat& perturbed) {
  if (clean.rows() != perturbed.rows() || clean.cols() != perturbed.cols()) {
    throw DimensionError("text_shift: clean and perturbed features differ in shape");
  }
  if (clean.rows() == 0) throw InputError("text_shift of an empty corpus");
  double total = 0.0;
  for (Eigen::Index r = 0; r < clean.rows(); ++r) {
    const double na = clean.row(r).norm();
    const double nb = perturbed.row(r).norm();
    if (na == 0.0 || nb == 0.0) throw NumericError("text_shift: zero-norm feature row");
    total += (clean.row(r) / na - perturbed.row(r) / nb).squaredNorm();
  }
  return total / static_cast<double>(clean.rows());
}

double logit_preservation_rate(const Mat& clean_scores, const Mat& perturbed_scores) {
  if (clean_scores.rows() != perturbed_scores.rows()) throw DimensionError("score row counts differ");
  if (clean_scores.rows() == 0) throw InputError("logit_preservation_rate of an empty split");
  const auto a = argmax_rows(clean_scores);
  const auto b = argmax_rows(perturbed_scores);
  size_t same = 0;
  for (size_t i = 0; i < a.size(); ++i) same += a[i] == b[i] ? 1 : 0;
  return static_cast<double>(same) / static_cast<double>(a.size());
}

double accuracy_shift(const Mat& clean_scores, const Mat& perturbed_scores, std::span<const int> labels) {
  const auto a = argmax_rows(clean_scores);
  const auto b = argmax_rows(perturbed_scores);
  return std::abs(accuracy_percent(a, labels) - accuracy_percent(b, labels));
}

}  // namespace anprompt
