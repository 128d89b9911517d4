#include "anprompt/weak_noise.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <future>
#include <numeric>

#include <json.hpp>

#include "anprompt/errors.hpp"
#include "anprompt/rng.hpp"

namespace anprompt {

using nlohmann::json;

void CaptionCache::validate() const {
  if (class_names.size() != entries.size()) {
    throw CacheError("caption cache has " + std::to_string(entries.size()) + " classes but " +
                     std::to_string(class_names.size()) + " class names");
  }
  if (min_per_class < 2) throw CacheError("caption cache min_per_class must be at least 2");
  for (size_t c = 0; c < entries.size(); ++c) {
    if (static_cast<int>(entries[c].size()) < min_per_class) {
      throw CacheError("class '" + class_names[c] + "' has " + std::to_string(entries[c].size()) +
                       " sentences, need at least " + std::to_string(min_per_class));
    }
  }
}

CaptionCache CaptionCache::subset(std::span<const int> class_ids) const {
  CaptionCache out;
  out.min_per_class = min_per_class;
  for (int id : class_ids) {
    if (id < 0 || id >= num_classes()) throw CacheError("class id " + std::to_string(id) + " not in caption cache");
    out.class_names.push_back(class_names[static_cast<size_t>(id)]);
    out.entries.push_back(entries[static_cast<size_t>(id)]);
  }
  return out;
}

std::vector<std::string> CaptionCache::all_texts() const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    for (const auto& s : e) out.push_back(s.text);
  }
  return out;
}

CaptionCache CaptionCache::from_raw(const std::map<std::string, std::vector<std::string>>& raw,
                                    std::span<const std::string> class_names, const Vocabulary& vocab,
                                    int min_per_class) {
  CaptionCache cache;
  cache.min_per_class = min_per_class;
  for (const auto& name : class_names) {
    auto it = raw.find(name);
    if (it == raw.end()) throw CacheError("caption file has no entry for class '" + name + "'");
    std::vector<Sentence> sentences;
    for (const auto& text : it->second) sentences.push_back({text, vocab.encode(text)});
    cache.class_names.push_back(name);
    cache.entries.push_back(std::move(sentences));
  }
  cache.validate();
  return cache;
}

namespace {

std::map<std::string, std::vector<std::string>> load_string_lists(const std::filesystem::path& path,
                                                                  const char* what) {
  std::ifstream in(path);
  if (!in) throw FileError(std::string("cannot open ") + what + " file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ParseError(path.string() + ": expected an object mapping names to string lists");
  std::map<std::string, std::vector<std::string>> out;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_array()) throw ParseError(path.string() + ": entry '" + it.key() + "' is not a list");
    std::vector<std::string> items;
    for (const auto& s : it.value()) {
      if (!s.is_string()) throw ParseError(path.string() + ": entry '" + it.key() + "' holds a non-string");
      items.push_back(s.get<std::string>());
    }
    out.emplace(it.key(), std::move(items));
  }
  return out;
}

size_t affected_count(double rate, size_t n) {
  if (rate < 0.0 || rate > 1.0) throw ConfigError("perturbation rate must lie in [0, 1]");
  return static_cast<size_t>(std::ceil(rate * static_cast<double>(n) - 1e-12));
}

/// k distinct indices from [0, n), uniformly.
std::vector<size_t> choose(size_t n, size_t k, std::mt19937_64& rng) {
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  for (size_t i = 0; i < k && i < n; ++i) {
    std::uniform_int_distribution<size_t> d(i, n - 1);
    std::swap(idx[i], idx[d(rng)]);
  }
  idx.resize(std::min(k, n));
  return idx;
}

}  // namespace

std::map<std::string, std::vector<std::string>> load_caption_file(const std::filesystem::path& path) {
  return load_string_lists(path, "caption");
}

void save_caption_file(const std::filesystem::path& path,
                       const std::map<std::string, std::vector<std::string>>& captions) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write " + path.string());
  out << json(captions).dump(2) << "\n";
}

SynonymTable synonyms_from_raw(const std::map<std::string, std::vector<std::string>>& raw, const Vocabulary& vocab) {
  SynonymTable table;
  for (const auto& [word, syns] : raw) {
    const int id = vocab.id(word);
    if (id < TextEncoder::kFirstWord) continue;
    std::vector<int> ids;
    for (const auto& s : syns) {
      const int sid = vocab.id(s);
      if (sid >= TextEncoder::kFirstWord && sid != id) ids.push_back(sid);
    }
    if (!ids.empty()) table.emplace(id, std::move(ids));
  }
  return table;
}

SynonymTable load_synonym_file(const std::filesystem::path& path, const Vocabulary& vocab) {
  return synonyms_from_raw(load_string_lists(path, "synonym"), vocab);
}

std::string PerturbationKind::name() const {
  switch (kind) {
    case Kind::drop: return "drop";
    case Kind::mask: return "mask";
    case Kind::shuffle: return "shuffle";
    case Kind::synonym_replace: return "synonym_replace";
    case Kind::weak_fusion: return "weak_fusion";
    case Kind::identity: return "identity";
  }
  return "unknown";
}

PerturbationKind PerturbationKind::parse(const std::string& spec) {
  const auto colon = spec.find(':');
  const std::string head = spec.substr(0, colon);
  PerturbationKind p;
  if (head == "drop") {
    p.kind = Kind::drop;
    p.rate = 0.25;
  } else if (head == "mask") {
    p.kind = Kind::mask;
    p.rate = 0.25;
  } else if (head == "shuffle") {
    p.kind = Kind::shuffle;
    p.rate = 1.0;
  } else if (head == "synonym_replace") {
    p.kind = Kind::synonym_replace;
    p.rate = 0.25;
  } else if (head == "weak_fusion") {
    p.kind = Kind::weak_fusion;
    p.rate = 0.01;
  } else if (head == "identity") {
    p.kind = Kind::identity;
  } else {
    throw ConfigError("unknown perturbation '" + head + "'");
  }
  if (colon != std::string::npos) {
    try {
      size_t used = 0;
      p.rate = std::stod(spec.substr(colon + 1), &used);
      if (used != spec.size() - colon - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError("perturbation '" + spec + "': rate is not a number");
    }
    if (p.rate < 0.0 || p.rate > 1.0) throw ConfigError("perturbation '" + spec + "': rate must lie in [0, 1]");
  }
  return p;
}

SentencePair sample_pair(const CaptionCache& cache, int class_id, std::mt19937_64& rng) {
  if (class_id < 0 || class_id >= cache.num_classes()) {
    throw CacheError("class id " + std::to_string(class_id) + " not in caption cache");
  }
  const size_t n = cache.entries[static_cast<size_t>(class_id)].size();
  if (n < 2) throw CacheError("class " + std::to_string(class_id) + " has fewer than two sentences");
  std::uniform_int_distribution<size_t> first(0, n - 1);
  std::uniform_int_distribution<size_t> second(0, n - 2);
  SentencePair p;
  p.main = first(rng);
  p.noise = second(rng);
  if (p.noise >= p.main) ++p.noise;
  return p;
}

RowVec fuse_weak_noise(const RowVec& main, const RowVec& noise, const WeakNoiseConfig& cfg) {
  if (main.size() != noise.size()) throw DimensionError("fuse_weak_noise: feature lengths differ");
  RowVec out = main + cfg.alpha * noise;
  if (cfg.renormalize) {
    const double n = out.norm();
    if (!(n > 0.0)) throw NumericError("fuse_weak_noise: fused feature has zero norm");
    out /= n;
  }
  return out;
}

std::vector<int> perturb_strong(std::span<const int> ids, const PerturbationKind& p, std::mt19937_64& rng) {
  if (ids.size() < 3) throw InputError("perturb_strong: sentence has no content tokens");
  std::vector<int> out(ids.begin(), ids.end());
  const size_t n = ids.size() - 2;
  using Kind = PerturbationKind::Kind;
  switch (p.kind) {
    case Kind::identity:
      return out;
    case Kind::weak_fusion:
      throw ConfigError("weak_fusion acts on features; it has no token-level form");
    case Kind::drop: {
      const size_t k = std::min(affected_count(p.rate, n), n - 1);
      std::vector<size_t> gone = choose(n, k, rng);
      std::vector<bool> drop(n, false);
      for (size_t i : gone) drop[i] = true;
      std::vector<int> kept{ids.front()};
      for (size_t i = 0; i < n; ++i) {
        if (!drop[i]) kept.push_back(ids[i + 1]);
      }
      kept.push_back(ids.back());
      return kept;
    }
    case Kind::mask: {
      for (size_t i : choose(n, affected_count(p.rate, n), rng)) out[i + 1] = TextEncoder::kMask;
      return out;
    }
    case Kind::shuffle: {
      for (size_t i = n - 1; i > 0; --i) {
        std::uniform_int_distribution<size_t> d(0, i);
        std::swap(out[i + 1], out[d(rng) + 1]);
      }
      return out;
    }
    case Kind::synonym_replace: {
      if (!p.synonym_table || p.synonym_table->empty()) {
        throw ConfigError("synonym_replace needs a non-empty synonym table");
      }
      std::vector<size_t> candidates;
      for (size_t i = 0; i < n; ++i) {
        auto it = p.synonym_table->find(ids[i + 1]);
        if (it != p.synonym_table->end() && !it->second.empty()) candidates.push_back(i);
      }
      const size_t k = std::min(affected_count(p.rate, n), candidates.size());
      for (size_t c : choose(candidates.size(), k, rng)) {
        const size_t pos = candidates[c];
        const auto& syns = p.synonym_table->at(ids[pos + 1]);
        std::uniform_int_distribution<size_t> d(0, syns.size() - 1);
        out[pos + 1] = syns[d(rng)];
      }
      return out;
    }
  }
  return out;
}

namespace {

using RowMaker = std::function<RowVec(const std::vector<Sentence>& pool, const SentencePair& pair, std::mt19937_64& rng)>;

Mat build_bank(const CaptionCache& cache, std::uint64_t seed, std::uint64_t stream, int draws_per_class, int threads,
               const RowMaker& make_row) {
  cache.validate();
  if (draws_per_class < 1) throw ConfigError("draws_per_class must be positive");
  const int classes = cache.num_classes();
  if (classes == 0) throw CacheError("caption cache is empty");
  std::vector<Mat> per_class(static_cast<size_t>(classes));
  auto build_class = [&](int c) {
    auto rng = derive_rng(seed, {stream, static_cast<std::uint64_t>(c)});
    const auto& pool = cache.entries[static_cast<size_t>(c)];
    Mat rows;
    for (int d = 0; d < draws_per_class; ++d) {
      const SentencePair pair = sample_pair(cache, c, rng);
      const RowVec fw = make_row(pool, pair, rng);
      if (rows.size() == 0) rows.resize(draws_per_class, fw.size());
      rows.row(d) = fw;
    }
    per_class[static_cast<size_t>(c)] = std::move(rows);
  };
  if (threads <= 1 || deterministic_mode()) {
    for (int c = 0; c < classes; ++c) build_class(c);
  } else {
    std::vector<std::future<void>> jobs;
    for (int t = 0; t < threads; ++t) {
      jobs.push_back(std::async(std::launch::async, [&, t] {
        for (int c = t; c < classes; c += threads) build_class(c);
      }));
    }
    for (auto& j : jobs) j.get();
  }
  const Eigen::Index width = per_class.front().cols();
  Mat bank(static_cast<Eigen::Index>(classes) * draws_per_class, width);
  for (int c = 0; c < classes; ++c) {
    bank.middleRows(static_cast<Eigen::Index>(c) * draws_per_class, draws_per_class) = per_class[static_cast<size_t>(c)];
  }
  return bank;
}

}  // namespace

Mat build_weak_feature_bank(const CaptionCache& cache, const FrozenTextEncoder& encoder, const WeakNoiseConfig& cfg,
                            std::uint64_t stream, int draws_per_class, int threads) {
  return build_bank(cache, cfg.seed, stream, draws_per_class, threads,
                    [&](const std::vector<Sentence>& pool, const SentencePair& pair, std::mt19937_64&) {
                      return fuse_weak_noise(encoder.encode(pool[pair.main].ids), encoder.encode(pool[pair.noise].ids),
                                             cfg);
                    });
}

Mat build_strong_feature_bank(const CaptionCache& cache, const FrozenTextEncoder& encoder, const PerturbationKind& p,
                              std::uint64_t seed, std::uint64_t stream, int draws_per_class, int threads) {
  if (p.kind == PerturbationKind::Kind::weak_fusion) {
    throw ConfigError("build_strong_feature_bank: weak_fusion is handled by build_weak_feature_bank");
  }
  return build_bank(cache, seed, stream, draws_per_class, threads,
                    [&](const std::vector<Sentence>& pool, const SentencePair& pair, std::mt19937_64& rng) {
                      return encoder.encode(perturb_strong(pool[pair.main].ids, p, rng));
                    });
}

}  // namespace anprompt
