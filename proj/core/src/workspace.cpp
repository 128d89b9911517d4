#include "anprompt/workspace.hpp"

#include "anprompt/errors.hpp"

namespace anprompt {

std::shared_ptr<Workspace> Workspace::create(const RunConfig& cfg) {
  cfg.validate();
  auto backbone = std::make_shared<const Backbone>(cfg.encoder);
  DatasetBundle data = cfg.dataset.path.empty()
                           ? generate_synthetic(cfg.dataset.synthetic, cfg.dataset.synthetic.seed, *backbone)
                           : load_dataset(cfg.dataset.path);
  return std::shared_ptr<Workspace>(new Workspace(cfg, std::move(data), std::move(backbone)));
}

std::shared_ptr<Workspace> Workspace::create(const RunConfig& cfg, DatasetBundle data) {
  cfg.validate();
  auto backbone = std::make_shared<const Backbone>(cfg.encoder);
  return std::shared_ptr<Workspace>(new Workspace(cfg, std::move(data), std::move(backbone)));
}

Workspace::Workspace(const RunConfig& cfg, DatasetBundle data, std::shared_ptr<const Backbone> backbone)
    : cfg_(cfg), backbone_(std::move(backbone)), data_(std::move(data)) {
  data_.validate();
  frozen_ = std::make_unique<FrozenTextEncoder>(backbone_->text);
  vocab_ = build_vocabulary(data_);
  if (vocab_.size() > cfg.encoder.vocab_size) {
    throw ConfigError("field 'encoder.vocab_size' is " + std::to_string(cfg.encoder.vocab_size) +
                      " but the dataset needs " + std::to_string(vocab_.size()) + " token ids");
  }
  captions_ = CaptionCache::from_raw(data_.captions, data_.class_names, vocab_);
  split_ = resolve_split(data_.class_names, cfg.dataset.split);
  synonyms_ = std::make_shared<const SynonymTable>(synonyms_from_raw(data_.synonyms, vocab_));
  for (const auto& name : data_.class_names) class_ids_.push_back(vocab_.encode(class_prompt_text(name)));
  for (const auto& img : data_.train_images) (void)backbone_->vision.patches(img);
  for (const auto& img : data_.test_images) (void)backbone_->vision.patches(img);
}

PerturbationKind Workspace::perturbation(const std::string& spec) const {
  PerturbationKind p = PerturbationKind::parse(spec);
  p.synonym_table = synonyms_;
  return p;
}

const std::vector<Mat>& Workspace::train_prefixes(int layer_start) const {
  std::lock_guard lock(mutex_);
  auto it = train_prefix_.find(layer_start);
  if (it != train_prefix_.end()) return it->second;
  InjectionSpec spec{layer_start, layer_start, 1};
  std::vector<Mat> out;
  out.reserve(data_.train_images.size());
  for (const auto& img : data_.train_images) out.push_back(backbone_->vision.prefix(img, spec));
  return train_prefix_.emplace(layer_start, std::move(out)).first->second;
}

const std::vector<Mat>& Workspace::test_prefixes(int layer_start) const {
  std::lock_guard lock(mutex_);
  auto it = test_prefix_.find(layer_start);
  if (it != test_prefix_.end()) return it->second;
  InjectionSpec spec{layer_start, layer_start, 1};
  std::vector<Mat> out;
  out.reserve(data_.test_images.size());
  for (const auto& img : data_.test_images) out.push_back(backbone_->vision.prefix(img, spec));
  return test_prefix_.emplace(layer_start, std::move(out)).first->second;
}

const std::vector<Mat>& Workspace::class_prefixes(int layer_start, int prompt_count) const {
  std::lock_guard lock(mutex_);
  const auto key = std::make_pair(layer_start, prompt_count);
  auto it = class_prefix_.find(key);
  if (it != class_prefix_.end()) return it->second;
  InjectionSpec spec{layer_start, layer_start, prompt_count};
  std::vector<Mat> out;
  out.reserve(class_ids_.size());
  for (const auto& ids : class_ids_) out.push_back(backbone_->text.prefix(ids, spec));
  return class_prefix_.emplace(key, std::move(out)).first->second;
}

void Workspace::check_compatible(const RunConfig& cfg) const {
  const auto& a = cfg.encoder;
  const auto& b = cfg_.encoder;
  if (a.embed_dim != b.embed_dim || a.num_layers != b.num_layers || a.num_heads != b.num_heads ||
      a.patch_rows != b.patch_rows || a.patch_cols != b.patch_cols || a.image_size != b.image_size ||
      a.channels != b.channels || a.vocab_size != b.vocab_size || a.max_text_len != b.max_text_len ||
      a.mlp_ratio != b.mlp_ratio || a.init_seed != b.init_seed || a.temperature != b.temperature) {
    throw ConfigError("field 'encoder' differs from the workspace backbone");
  }
  if (cfg.dataset.path != cfg_.dataset.path || cfg.dataset.split.base_classes != cfg_.dataset.split.base_classes ||
      cfg.dataset.split.novel_classes != cfg_.dataset.split.novel_classes) {
    throw ConfigError("field 'dataset' differs from the workspace dataset");
  }
}

}  // namespace anprompt
