#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "anprompt/autograd.hpp"
#include "anprompt/encoder.hpp"
#include "anprompt/vocabulary.hpp"

namespace anprompt {

struct Sentence {
  std::string text;
  std::vector<int> ids;
};

/// Per-class description pools. Class ids are the positions in class_names.
struct CaptionCache {
  std::vector<std::string> class_names;
  std::vector<std::vector<Sentence>> entries;
  int min_per_class = 2;

  /// Throws CacheError if any class has fewer than min_per_class sentences
  /// or the class list and entries disagree.
  void validate() const;
  [[nodiscard]] int num_classes() const { return static_cast<int>(entries.size()); }
  /// Cache restricted to `class_ids`, renumbered 0..n-1 in the given order.
  [[nodiscard]] CaptionCache subset(std::span<const int> class_ids) const;
  [[nodiscard]] std::vector<std::string> all_texts() const;

  [[nodiscard]] static CaptionCache from_raw(const std::map<std::string, std::vector<std::string>>& raw,
                                             std::span<const std::string> class_names, const Vocabulary& vocab,
                                             int min_per_class = 2);
};

/// JSON object {"class name": ["sentence", ...], ...}.
[[nodiscard]] std::map<std::string, std::vector<std::string>> load_caption_file(const std::filesystem::path& path);
void save_caption_file(const std::filesystem::path& path,
                       const std::map<std::string, std::vector<std::string>>& captions);

using SynonymTable = std::map<int, std::vector<int>>;

/// JSON object {"word": ["synonym", ...], ...}; words outside the vocabulary
/// are dropped.
[[nodiscard]] SynonymTable load_synonym_file(const std::filesystem::path& path, const Vocabulary& vocab);
[[nodiscard]] SynonymTable synonyms_from_raw(const std::map<std::string, std::vector<std::string>>& raw,
                                             const Vocabulary& vocab);

struct WeakNoiseConfig {
  double alpha = 0.001;
  std::uint64_t seed = 0;
  bool renormalize = true;
};

struct PerturbationKind {
  enum class Kind { drop, mask, shuffle, synonym_replace, weak_fusion, identity };

  Kind kind = Kind::identity;
  /// Fraction of content tokens affected; for weak_fusion, the fusion weight.
  double rate = 0.0;
  std::shared_ptr<const SynonymTable> synonym_table;

  [[nodiscard]] std::string name() const;
  /// "drop:0.25", "weak_fusion:0.01", "identity", ...
  [[nodiscard]] static PerturbationKind parse(const std::string& spec);
};

struct SentencePair {
  size_t main = 0;
  size_t noise = 0;
};

/// Two distinct sentence indices drawn uniformly without replacement.
[[nodiscard]] SentencePair sample_pair(const CaptionCache& cache, int class_id, std::mt19937_64& rng);

/// f_m + alpha * f_n, optionally renormalised.
[[nodiscard]] RowVec fuse_weak_noise(const RowVec& main, const RowVec& noise, const WeakNoiseConfig& cfg);

/// Token-level strong perturbation of {start, content..., end}. Start/end
/// markers are never touched. Drop removes ceil(rate * n) content tokens but
/// always keeps at least one.
[[nodiscard]] std::vector<int> perturb_strong(std::span<const int> ids, const PerturbationKind& p,
                                              std::mt19937_64& rng);

/// One weak-noise feature per (class, draw). Rows are class-major: class 0's
/// draws first. Each class uses its own generator derived from
/// (cfg.seed, stream, class), so `threads` does not change the result.
[[nodiscard]] Mat build_weak_feature_bank(const CaptionCache& cache, const FrozenTextEncoder& encoder,
                                          const WeakNoiseConfig& cfg, std::uint64_t stream = 0,
                                          int draws_per_class = 1, int threads = 1);

/// Same layout as build_weak_feature_bank, but each row is the frozen feature
/// of the sampled main sentence after a token-level perturbation `p`.
[[nodiscard]] Mat build_strong_feature_bank(const CaptionCache& cache, const FrozenTextEncoder& encoder,
                                            const PerturbationKind& p, std::uint64_t seed, std::uint64_t stream = 0,
                                            int draws_per_class = 1, int threads = 1);

}  // namespace anprompt
