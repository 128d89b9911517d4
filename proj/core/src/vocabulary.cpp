#include "anprompt/vocabulary.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "anprompt/encoder.hpp"

namespace anprompt {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u) || ch == '-') {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocabulary Vocabulary::build(std::span<const std::string> texts) {
  std::set<std::string> unique;
  for (const auto& t : texts) {
    for (auto& w : split_words(t)) unique.insert(std::move(w));
  }
  Vocabulary v;
  v.words_.assign(unique.begin(), unique.end());
  for (size_t i = 0; i < v.words_.size(); ++i) {
    v.index_.emplace(v.words_[i], TextEncoder::kFirstWord + static_cast<int>(i));
  }
  return v;
}

int Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? TextEncoder::kUnknown : it->second;
}

int Vocabulary::size() const { return TextEncoder::kFirstWord + static_cast<int>(words_.size()); }

std::vector<int> Vocabulary::encode(std::string_view sentence) const {
  std::vector<int> ids{TextEncoder::kStart};
  for (const auto& w : split_words(sentence)) ids.push_back(id(w));
  ids.push_back(TextEncoder::kEnd);
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    std::string w;
    if (id == TextEncoder::kStart || id == TextEncoder::kEnd || id == TextEncoder::kPad) continue;
    if (id == TextEncoder::kMask) {
      w = "[mask]";
    } else if (id >= TextEncoder::kFirstWord && id - TextEncoder::kFirstWord < static_cast<int>(words_.size())) {
      w = words_[static_cast<size_t>(id - TextEncoder::kFirstWord)];
    } else {
      w = "[unk]";
    }
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

}  // namespace anprompt
