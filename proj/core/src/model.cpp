#include "anprompt/model.hpp"

#include <map>

#include "anprompt/errors.hpp"
#include "anprompt/rng.hpp"

namespace anprompt {

AnPromptModel::AnPromptModel(std::shared_ptr<const Backbone> backbone, const RunConfig& cfg, std::uint64_t seed)
    : backbone_(std::move(backbone)), spec_(cfg.injection_spec()), epsilon_(cfg.components.anti_prompt ? cfg.prompts.epsilon : 0.0) {
  if (!backbone_) throw InputError("model needs a backbone");
  spec_.validate(backbone_->config.num_layers);
  const int c = backbone_->config.embed_dim;
  auto rng = derive_rng(seed, {0x70726f6dULL});
  prompts_ = LearnablePrompts::init(spec_.prompt_count, c, cfg.prompts.init_scale, rng);
  heads_ = ProjectionHeads::identity(c);
  offsets_ = DeepPromptOffsets::zeros(spec_, c);
  noise_prompts_ = Mat::Zero(spec_.prompt_count, c);
}

AnPromptModel::PromptVars AnPromptModel::prompt_vars(ag::Tape& tape) {
  PromptVars out;
  out.anti = build_anti_noise_prompts(tape.param(prompts_.tokens), noise_prompts_, epsilon_);
  project_prompts(tape, out.anti, heads_);
  out.image_layers = layer_prompts(tape, out.anti.image_view, offsets_.image);
  out.text_layers = layer_prompts(tape, out.anti.text_view, offsets_.text);
  return out;
}

AnPromptModel::PromptVars AnPromptModel::prompt_vars(ag::Tape& tape) const {
  PromptVars out;
  out.anti = build_anti_noise_prompts(tape.param(static_cast<const Parameter&>(prompts_.tokens)), noise_prompts_,
                                      epsilon_);
  project_prompts(tape, out.anti, heads_);
  out.image_layers = layer_prompts(tape, out.anti.image_view, offsets_.image);
  out.text_layers = layer_prompts(tape, out.anti.text_view, offsets_.text);
  return out;
}

FeatureBundle AnPromptModel::encode(ag::Tape& tape, const PromptVars& prompts,
                                    std::span<const Mat* const> image_prefixes,
                                    std::span<const Mat* const> class_prefixes, const Mat& weak_features) const {
  if (image_prefixes.empty()) throw InputError("encode: empty image batch");
  if (class_prefixes.empty()) throw InputError("encode: no classes");
  if (weak_features.rows() != static_cast<Eigen::Index>(class_prefixes.size())) {
    throw DimensionError("encode: weak-noise features must have one row per class");
  }
  std::vector<ag::Var> fv, tokens, ft;
  fv.reserve(image_prefixes.size());
  tokens.reserve(image_prefixes.size());
  for (const Mat* p : image_prefixes) {
    auto out = backbone_->vision.encode_from_prefix(tape, *p, prompts.image_layers, spec_);
    fv.push_back(out.feature);
    tokens.push_back(out.prompt_tokens);
  }
  ft.reserve(class_prefixes.size());
  for (const Mat* p : class_prefixes) {
    ft.push_back(backbone_->text.encode_from_prefix(tape, *p, prompts.text_layers, spec_).feature);
  }
  FeatureBundle fb;
  fb.f_v = ag::concat_rows(fv);
  fb.f_n = compute_nrvpp(tokens);
  fb.f_t = ag::concat_rows(ft);
  fb.f_w = tape.constant(weak_features);
  return fb;
}

std::vector<Parameter*> AnPromptModel::trainable_parameters() {
  std::vector<Parameter*> out{&prompts_.tokens};
  for (auto* p : heads_.parameters()) out.push_back(p);
  for (auto& p : offsets_.image) out.push_back(&p);
  for (auto& p : offsets_.text) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> AnPromptModel::trainable_parameters() const {
  auto* self = const_cast<AnPromptModel*>(this);
  std::vector<const Parameter*> out;
  for (auto* p : self->trainable_parameters()) out.push_back(p);
  return out;
}

void AnPromptModel::set_noise_prompts(const Mat& centers) {
  if (centers.rows() != noise_prompts_.rows() || centers.cols() != noise_prompts_.cols()) {
    throw DimensionError("noise prompts must be (K, C)");
  }
  noise_prompts_ = apply_pairing(centers, pair_rows(prompts_.tokens.value, centers));
}

std::vector<CheckpointEntry> AnPromptModel::checkpoint_entries() const {
  std::vector<CheckpointEntry> out;
  for (const auto* p : trainable_parameters()) out.push_back({p->name, TensorTag::trainable, p->value});
  out.push_back({"prompts.noise", TensorTag::buffer, noise_prompts_});
  for (const auto* p : backbone_->parameters()) out.push_back({p->name, TensorTag::frozen, p->value});
  return out;
}

void AnPromptModel::save(const std::filesystem::path& dir) const { save_checkpoint(dir, checkpoint_entries()); }

void AnPromptModel::load(const std::filesystem::path& dir) {
  const auto entries = load_checkpoint(dir);
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  auto fetch = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols) -> const Mat& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FileError("checkpoint lacks tensor '" + name + "'");
    if (it->second->value.rows() != rows || it->second->value.cols() != cols) {
      throw FileError("checkpoint tensor '" + name + "' has the wrong shape");
    }
    return it->second->value;
  };
  for (auto* p : trainable_parameters()) p->value = fetch(p->name, p->value.rows(), p->value.cols());
  noise_prompts_ = fetch("prompts.noise", noise_prompts_.rows(), noise_prompts_.cols());
  for (const auto* p : backbone_->parameters()) {
    const Mat& stored = fetch(p->name, p->value.rows(), p->value.cols());
    if (stored != round_to_f32(p->value)) {
      throw FileError("checkpoint backbone tensor '" + p->name + "' does not match encoder.init_seed");
    }
  }
}

}  // namespace anprompt
