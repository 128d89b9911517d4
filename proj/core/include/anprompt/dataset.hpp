#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "anprompt/config.hpp"
#include "anprompt/encoder.hpp"
#include "anprompt/vocabulary.hpp"
#include "anprompt/weak_noise.hpp"

namespace anprompt {

using RawCaptions = std::map<std::string, std::vector<std::string>>;

struct DatasetBundle {
  /// Alphabetical; class id = position.
  std::vector<std::string> class_names;
  std::vector<Image> train_images;
  std::vector<int> train_labels;
  std::vector<Image> test_images;
  std::vector<int> test_labels;
  RawCaptions captions;
  RawCaptions synonyms;
  std::optional<SyntheticSpec> synthetic_spec;

  /// Throws InputError when labels and class names disagree.
  void validate() const;
};

/// "a photo of a <name>"
[[nodiscard]] std::string class_prompt_text(const std::string& class_name);

/// Vocabulary over captions, synonyms and class prompts.
[[nodiscard]] Vocabulary build_vocabulary(const DatasetBundle& data);

/// Per class: a prototype plus Gaussian pixel noise per sample, and captions
/// drawn from templates filled with class-specific attribute words. With a
/// backbone and spec.align_steps > 0 the prototypes are first optimised so the
/// frozen image tower maps each one near its class's frozen text features,
/// standing in for a pretrained model that already relates pictures to names.
/// Throws CacheError when captions_per_class < 2.
[[nodiscard]] DatasetBundle generate_synthetic(const SyntheticSpec& spec, int image_size, int channels,
                                               std::uint64_t seed, const Backbone* backbone = nullptr,
                                               int patch_rows = 4, int patch_cols = 4);

/// Convenience overload taking sizes from the backbone.
[[nodiscard]] DatasetBundle generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed, const Backbone& backbone);

struct ResolvedSplit {
  std::vector<int> base;
  std::vector<int> novel;
};

/// Maps names to ids; defaults to the first half of the alphabetical class
/// list as base. Throws ConfigError on overlap, gaps or unknown names.
[[nodiscard]] ResolvedSplit resolve_split(const std::vector<std::string>& class_names, const SplitSpec& split);

/// Indices of the images whose label is in `classes`, keeping at most
/// `per_class` per class (negative keeps all), in dataset order.
[[nodiscard]] std::vector<size_t> select_images(const std::vector<int>& labels, const std::vector<int>& classes,
                                                int per_class = -1);

// Folder layout:
//   train/<class>/*.pfm|*.ppm   test/<class>/*.pfm|*.ppm
//   captions.json               synonyms.json (optional)
void save_dataset(const std::filesystem::path& dir, const DatasetBundle& data);
[[nodiscard]] DatasetBundle load_dataset(const std::filesystem::path& dir);

/// Portable float map (PFM): lossless for real-valued pixels.
void write_pfm(const std::filesystem::path& path, const Image& image);
[[nodiscard]] Image read_pfm(const std::filesystem::path& path);
/// Binary PPM (P6). Reading maps bytes to [0, 1]; writing clamps to [0, 1].
void write_ppm(const std::filesystem::path& path, const Image& image);
[[nodiscard]] Image read_ppm(const std::filesystem::path& path);
[[nodiscard]] Image read_image(const std::filesystem::path& path);

}  // namespace anprompt
