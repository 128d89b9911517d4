#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace anprompt {

/// Lower-cases and splits on anything that is not a letter, digit or '-'.
[[nodiscard]] std::vector<std::string> split_words(std::string_view text);

/// Word-level vocabulary. Ids below TextEncoder::kFirstWord are reserved
/// (pad, start, end, mask, unknown); words are numbered in sorted order so
/// the mapping depends only on the set of words.
class Vocabulary {
 public:
  Vocabulary() = default;

  [[nodiscard]] static Vocabulary build(std::span<const std::string> texts);

  /// {start, words..., end}; unknown words map to the unknown id.
  [[nodiscard]] std::vector<int> encode(std::string_view sentence) const;
  [[nodiscard]] std::string decode(std::span<const int> ids) const;
  [[nodiscard]] int id(std::string_view word) const;
  /// Total id range including reserved ids.
  [[nodiscard]] int size() const;
  [[nodiscard]] const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace anprompt
