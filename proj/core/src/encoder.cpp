#include "anprompt/encoder.hpp"

#include <cmath>
#include <mutex>
#include <string>

#include "anprompt/errors.hpp"

namespace anprompt {

namespace {

Mat gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Parameter frozen(const std::string& name, Mat value) { return Parameter(name, std::move(value), false); }

void check_layer_prompts(std::span<const ag::Var> prompts, const InjectionSpec& spec, int embed_dim) {
  if (static_cast<int>(prompts.size()) != spec.num_injected_layers()) {
    throw DimensionError("expected " + std::to_string(spec.num_injected_layers()) +
                         " per-layer prompt blocks, got " + std::to_string(prompts.size()));
  }
  for (const auto& p : prompts) {
    if (p.cols() != embed_dim) {
      throw DimensionError("prompt width " + std::to_string(p.cols()) + " does not match embed_dim " +
                           std::to_string(embed_dim));
    }
    if (p.rows() != spec.prompt_count) {
      throw DimensionError("prompt block has " + std::to_string(p.rows()) + " rows, expected prompt_count " +
                           std::to_string(spec.prompt_count));
    }
  }
}

/// Layers [from, num_layers] with slot insertion at `slot` (sequence index).
ag::Var run_layers(ag::Tape& tape, const TransformerStack& stack, ag::Var x, int from,
                   std::span<const ag::Var> prompts, const InjectionSpec& spec, Eigen::Index slot) {
  const Eigen::Index k = spec.prompt_count;
  for (int layer = from; layer <= stack.depth(); ++layer) {
    if (layer >= spec.layer_start && layer <= spec.layer_end) {
      const ag::Var& p = prompts[static_cast<size_t>(layer - spec.layer_start)];
      const Eigen::Index skip = layer == spec.layer_start ? 0 : k;
      std::vector<ag::Var> parts;
      if (slot > 0) parts.push_back(ag::slice_rows(x, 0, slot));
      parts.push_back(p);
      const Eigen::Index rest = x.rows() - slot - skip;
      if (rest > 0) parts.push_back(ag::slice_rows(x, slot + skip, rest));
      x = ag::concat_rows(parts);
    }
    x = stack.block(tape, layer, x);
  }
  return x;
}

}  // namespace

void EncoderConfig::validate() const {
  auto positive = [](int v, const char* field) {
    if (v <= 0) throw ConfigError(std::string("encoder.") + field + " must be positive");
  };
  positive(embed_dim, "embed_dim");
  positive(num_layers, "num_layers");
  positive(num_heads, "num_heads");
  positive(patch_rows, "patch_rows");
  positive(patch_cols, "patch_cols");
  positive(image_size, "image_size");
  positive(channels, "channels");
  positive(vocab_size, "vocab_size");
  positive(mlp_ratio, "mlp_ratio");
  if (embed_dim % num_heads != 0) throw ConfigError("encoder.embed_dim must be divisible by encoder.num_heads");
  if (max_text_len < 3) throw ConfigError("encoder.max_text_len must be at least 3");
  if (!(temperature > 0.0)) throw ConfigError("encoder.temperature must be > 0");
  if (image_size % patch_rows != 0 || image_size % patch_cols != 0) {
    throw ConfigError("encoder.image_size must be divisible by the patch grid");
  }
  if (vocab_size <= TextEncoder::kFirstWord) throw ConfigError("encoder.vocab_size too small for reserved ids");
}

void InjectionSpec::validate(int num_layers) const {
  if (layer_start < 1 || layer_start > num_layers) {
    throw ConfigError("injection.layer_start must lie in [1, " + std::to_string(num_layers) + "]");
  }
  if (layer_end < layer_start || layer_end > num_layers) {
    throw ConfigError("injection.layer_end must lie in [layer_start, " + std::to_string(num_layers) + "]");
  }
  if (prompt_count <= 0) throw ConfigError("injection.prompt_count must be positive");
}

TransformerStack::TransformerStack(const EncoderConfig& cfg, const std::string& prefix, std::mt19937_64& rng)
    : heads_(cfg.num_heads) {
  const Eigen::Index c = cfg.embed_dim;
  const Eigen::Index hidden = c * cfg.mlp_ratio;
  const double sc = 1.0 / std::sqrt(static_cast<double>(c));
  const double sh = 1.0 / std::sqrt(static_cast<double>(hidden));
  blocks_.reserve(static_cast<size_t>(cfg.num_layers));
  for (int l = 1; l <= cfg.num_layers; ++l) {
    const std::string p = prefix + ".layer" + std::to_string(l) + ".";
    Block b;
    b.ln1_g = frozen(p + "ln1.gain", Mat::Ones(1, c));
    b.ln1_b = frozen(p + "ln1.bias", Mat::Zero(1, c));
    b.w_qkv = frozen(p + "attn.w_qkv", gaussian(rng, c, 3 * c, sc));
    b.b_qkv = frozen(p + "attn.b_qkv", Mat::Zero(1, 3 * c));
    b.w_out = frozen(p + "attn.w_out", gaussian(rng, c, c, sc));
    b.b_out = frozen(p + "attn.b_out", Mat::Zero(1, c));
    b.ln2_g = frozen(p + "ln2.gain", Mat::Ones(1, c));
    b.ln2_b = frozen(p + "ln2.bias", Mat::Zero(1, c));
    b.w_fc1 = frozen(p + "mlp.w_fc1", gaussian(rng, c, hidden, sc));
    b.b_fc1 = frozen(p + "mlp.b_fc1", Mat::Zero(1, hidden));
    b.w_fc2 = frozen(p + "mlp.w_fc2", gaussian(rng, hidden, c, sh));
    b.b_fc2 = frozen(p + "mlp.b_fc2", Mat::Zero(1, c));
    blocks_.push_back(std::move(b));
  }
}

ag::Var TransformerStack::block(ag::Tape& tape, int layer, ag::Var x) const {
  const Block& b = blocks_.at(static_cast<size_t>(layer - 1));
  auto p = [&tape](const Parameter& w) { return tape.param(w); };
  ag::Var h = ag::layer_norm(x, p(b.ln1_g), p(b.ln1_b));
  h = ag::affine(h, p(b.w_qkv), p(b.b_qkv));
  h = ag::attention(h, heads_);
  h = ag::affine(h, p(b.w_out), p(b.b_out));
  x = ag::add(x, h);
  ag::Var m = ag::layer_norm(x, p(b.ln2_g), p(b.ln2_b));
  m = ag::gelu(ag::affine(m, p(b.w_fc1), p(b.b_fc1)));
  m = ag::affine(m, p(b.w_fc2), p(b.b_fc2));
  return ag::add(x, m);
}

void TransformerStack::collect(std::vector<Parameter*>& out) {
  for (auto& b : blocks_) {
    for (Parameter* q : {&b.ln1_g, &b.ln1_b, &b.w_qkv, &b.b_qkv, &b.w_out, &b.b_out, &b.ln2_g, &b.ln2_b,
                         &b.w_fc1, &b.b_fc1, &b.w_fc2, &b.b_fc2}) {
      out.push_back(q);
    }
  }
}

void TransformerStack::collect(std::vector<const Parameter*>& out) const {
  std::vector<Parameter*> tmp;
  const_cast<TransformerStack*>(this)->collect(tmp);
  out.insert(out.end(), tmp.begin(), tmp.end());
}

ag::Var OutputHead::apply(ag::Tape& tape, ag::Var rows) const {
  ag::Var h = ag::layer_norm(rows, tape.param(ln_g), tape.param(ln_b));
  return ag::matmul(h, tape.param(proj));
}

namespace {

OutputHead make_head(const std::string& prefix, Eigen::Index c, std::mt19937_64& rng) {
  OutputHead h;
  h.ln_g = frozen(prefix + ".ln_post.gain", Mat::Ones(1, c));
  h.ln_b = frozen(prefix + ".ln_post.bias", Mat::Zero(1, c));
  h.proj = frozen(prefix + ".proj", gaussian(rng, c, c, 1.0 / std::sqrt(static_cast<double>(c))));
  return h;
}

}  // namespace

VisionEncoder::VisionEncoder(const EncoderConfig& cfg, std::mt19937_64& rng)
    : cfg_(cfg),
      patch_w_(frozen("vision.patch.w", gaussian(rng, cfg.patch_dim(), cfg.embed_dim,
                                                 1.0 / std::sqrt(static_cast<double>(cfg.patch_dim()))))),
      patch_b_(frozen("vision.patch.b", Mat::Zero(1, cfg.embed_dim))),
      cls_(frozen("vision.cls", gaussian(rng, 1, cfg.embed_dim, 1.0))),
      pos_(frozen("vision.pos", gaussian(rng, cfg.num_patches() + 1, cfg.embed_dim, 0.1))),
      stack_(cfg, "vision", rng),
      head_(make_head("vision", cfg.embed_dim, rng)) {}

Mat VisionEncoder::patches(const Image& image) const {
  if (image.height != cfg_.image_size || image.width != cfg_.image_size || image.channels != cfg_.channels) {
    throw DimensionError("image is " + std::to_string(image.height) + "x" + std::to_string(image.width) + "x" +
                         std::to_string(image.channels) + ", encoder expects " + std::to_string(cfg_.image_size) +
                         "x" + std::to_string(cfg_.image_size) + "x" + std::to_string(cfg_.channels));
  }
  if (image.pixels.size() != static_cast<size_t>(image.height * image.width * image.channels)) {
    throw DimensionError("image pixel buffer size does not match its dimensions");
  }
  const int ph = cfg_.image_size / cfg_.patch_rows;
  const int pw = cfg_.image_size / cfg_.patch_cols;
  Mat out(cfg_.num_patches(), cfg_.patch_dim());
  for (int gr = 0; gr < cfg_.patch_rows; ++gr) {
    for (int gc = 0; gc < cfg_.patch_cols; ++gc) {
      const int row = gr * cfg_.patch_cols + gc;
      int k = 0;
      for (int y = 0; y < ph; ++y) {
        for (int x = 0; x < pw; ++x) {
          for (int c = 0; c < cfg_.channels; ++c) out(row, k++) = image.at(gr * ph + y, gc * pw + x, c);
        }
      }
    }
  }
  return out;
}

Image VisionEncoder::image_from_patches(const Mat& patches) const {
  if (patches.rows() != cfg_.num_patches() || patches.cols() != cfg_.patch_dim()) {
    throw DimensionError("patch matrix has the wrong shape");
  }
  Image img;
  img.height = img.width = cfg_.image_size;
  img.channels = cfg_.channels;
  img.pixels.resize(static_cast<size_t>(img.height * img.width * img.channels));
  const int ph = cfg_.image_size / cfg_.patch_rows;
  const int pw = cfg_.image_size / cfg_.patch_cols;
  for (int gr = 0; gr < cfg_.patch_rows; ++gr) {
    for (int gc = 0; gc < cfg_.patch_cols; ++gc) {
      const int row = gr * cfg_.patch_cols + gc;
      int k = 0;
      for (int y = 0; y < ph; ++y) {
        for (int x = 0; x < pw; ++x) {
          for (int c = 0; c < cfg_.channels; ++c) {
            img.pixels[static_cast<size_t>(((gr * ph + y) * img.width + gc * pw + x) * img.channels + c)] =
                patches(row, k++);
          }
        }
      }
    }
  }
  return img;
}

ag::Var VisionEncoder::embed_patches(ag::Tape& tape, ag::Var patches) const {
  if (patches.rows() != cfg_.num_patches() || patches.cols() != cfg_.patch_dim()) {
    throw DimensionError("patch matrix has the wrong shape");
  }
  ag::Var e = ag::affine(patches, tape.param(patch_w_), tape.param(patch_b_));
  const std::vector<ag::Var> parts{tape.param(cls_), e};
  return ag::add(ag::concat_rows(parts), tape.param(pos_));
}

ag::Var VisionEncoder::encode_plain(ag::Tape& tape, ag::Var patches) const {
  ag::Var x = embed_patches(tape, patches);
  for (int l = 1; l <= stack_.depth(); ++l) x = stack_.block(tape, l, x);
  return ag::l2_normalize_rows(head_.apply(tape, ag::slice_rows(x, 0, 1)));
}

TokenSequence VisionEncoder::embed(const Image& image) const {
  ag::Tape tape;
  TokenSequence seq;
  seq.tokens = embed_patches(tape, tape.constant(patches(image))).value();
  seq.role_tags.assign(static_cast<size_t>(cfg_.num_patches() + 1), TokenRole::patch);
  seq.role_tags[0] = TokenRole::class_token;
  return seq;
}

Mat VisionEncoder::prefix(const Image& image, const InjectionSpec& spec) const {
  spec.validate(cfg_.num_layers);
  ag::Tape tape;
  ag::Var x = tape.constant(embed(image).tokens);
  for (int l = 1; l < spec.layer_start; ++l) x = stack_.block(tape, l, x);
  return x.value();
}

PromptedOutput VisionEncoder::encode_from_prefix(ag::Tape& tape, const Mat& prefix,
                                                 std::span<const ag::Var> layer_prompts,
                                                 const InjectionSpec& spec) const {
  spec.validate(cfg_.num_layers);
  check_layer_prompts(layer_prompts, spec, cfg_.embed_dim);
  if (prefix.rows() != cfg_.num_patches() + 1 || prefix.cols() != cfg_.embed_dim) {
    throw DimensionError("vision prefix has the wrong shape");
  }
  ag::Var x = run_layers(tape, stack_, tape.constant(prefix), spec.layer_start, layer_prompts, spec, 0);
  const Eigen::Index k = spec.prompt_count;
  PromptedOutput out;
  out.feature = ag::l2_normalize_rows(head_.apply(tape, ag::slice_rows(x, k, 1)));
  out.prompt_tokens = head_.apply(tape, ag::slice_rows(x, 0, k));
  return out;
}

PromptedOutput VisionEncoder::encode(ag::Tape& tape, const Image& image, std::span<const ag::Var> layer_prompts,
                                     const InjectionSpec& spec) const {
  return encode_from_prefix(tape, prefix(image, spec), layer_prompts, spec);
}

std::vector<TokenRole> VisionEncoder::injected_layout(int prompt_count) const {
  std::vector<TokenRole> roles(static_cast<size_t>(prompt_count), TokenRole::prompt);
  roles.push_back(TokenRole::class_token);
  roles.insert(roles.end(), static_cast<size_t>(cfg_.num_patches()), TokenRole::patch);
  return roles;
}

void VisionEncoder::collect(std::vector<Parameter*>& out) {
  out.push_back(&patch_w_);
  out.push_back(&patch_b_);
  out.push_back(&cls_);
  out.push_back(&pos_);
  stack_.collect(out);
  out.push_back(&head_.ln_g);
  out.push_back(&head_.ln_b);
  out.push_back(&head_.proj);
}

void VisionEncoder::collect(std::vector<const Parameter*>& out) const {
  std::vector<Parameter*> tmp;
  const_cast<VisionEncoder*>(this)->collect(tmp);
  out.insert(out.end(), tmp.begin(), tmp.end());
}

TextEncoder::TextEncoder(const EncoderConfig& cfg, std::mt19937_64& rng)
    : cfg_(cfg),
      tok_(frozen("text.token_embedding", gaussian(rng, cfg.vocab_size, cfg.embed_dim, 1.0))),
      pos_(frozen("text.pos", gaussian(rng, cfg.max_text_len, cfg.embed_dim, 0.1))),
      stack_(cfg, "text", rng),
      head_(make_head("text", cfg.embed_dim, rng)) {}

void TextEncoder::check_ids(std::span<const int> ids) const {
  if (ids.size() < 2 || ids.front() != kStart || ids.back() != kEnd) {
    throw InputError("token ids must be framed by start and end markers");
  }
  for (int id : ids) {
    if (id < 0 || id >= cfg_.vocab_size) throw InputError("token id " + std::to_string(id) + " outside vocabulary");
  }
}

void TextEncoder::check_length(std::span<const int> ids, int prompt_count) const {
  const size_t total = ids.size() + static_cast<size_t>(prompt_count);
  if (total > static_cast<size_t>(cfg_.max_text_len)) {
    throw TruncationError("sequence of " + std::to_string(ids.size()) + " tokens plus " +
                          std::to_string(prompt_count) + " prompts exceeds max_text_len " +
                          std::to_string(cfg_.max_text_len));
  }
}

TokenSequence TextEncoder::embed(std::span<const int> ids) const {
  check_ids(ids);
  check_length(ids, 0);
  TokenSequence seq;
  seq.tokens.resize(static_cast<Eigen::Index>(ids.size()), cfg_.embed_dim);
  seq.role_tags.resize(ids.size(), TokenRole::content);
  for (size_t i = 0; i < ids.size(); ++i) {
    seq.tokens.row(static_cast<Eigen::Index>(i)) =
        tok_.value.row(ids[i]) + pos_.value.row(static_cast<Eigen::Index>(i));
  }
  seq.role_tags.front() = TokenRole::start;
  seq.role_tags.back() = TokenRole::end;
  return seq;
}

Mat TextEncoder::prefix(std::span<const int> ids, const InjectionSpec& spec) const {
  spec.validate(cfg_.num_layers);
  check_length(ids, spec.prompt_count);
  ag::Tape tape;
  ag::Var x = tape.constant(embed(ids).tokens);
  for (int l = 1; l < spec.layer_start; ++l) x = stack_.block(tape, l, x);
  return x.value();
}

PromptedOutput TextEncoder::encode_from_prefix(ag::Tape& tape, const Mat& prefix,
                                               std::span<const ag::Var> layer_prompts,
                                               const InjectionSpec& spec) const {
  spec.validate(cfg_.num_layers);
  check_layer_prompts(layer_prompts, spec, cfg_.embed_dim);
  if (prefix.cols() != cfg_.embed_dim || prefix.rows() < 2) throw DimensionError("text prefix has the wrong shape");
  if (prefix.rows() + spec.prompt_count > cfg_.max_text_len) {
    throw TruncationError("prompted text sequence exceeds max_text_len");
  }
  ag::Var x = run_layers(tape, stack_, tape.constant(prefix), spec.layer_start, layer_prompts, spec, 1);
  PromptedOutput out;
  out.feature = ag::l2_normalize_rows(head_.apply(tape, ag::slice_rows(x, x.rows() - 1, 1)));
  out.prompt_tokens = head_.apply(tape, ag::slice_rows(x, 1, spec.prompt_count));
  return out;
}

PromptedOutput TextEncoder::encode(ag::Tape& tape, std::span<const int> ids, std::span<const ag::Var> layer_prompts,
                                   const InjectionSpec& spec) const {
  return encode_from_prefix(tape, prefix(ids, spec), layer_prompts, spec);
}

RowVec TextEncoder::encode_plain(std::span<const int> ids) const {
  ag::Tape tape;
  ag::Var x = tape.constant(embed(ids).tokens);
  for (int l = 1; l <= stack_.depth(); ++l) x = stack_.block(tape, l, x);
  ag::Var f = ag::l2_normalize_rows(head_.apply(tape, ag::slice_rows(x, x.rows() - 1, 1)));
  return f.value().row(0);
}

std::vector<TokenRole> TextEncoder::injected_layout(std::span<const int> ids, int prompt_count,
                                                    int class_name_tokens) const {
  check_ids(ids);
  const int content = static_cast<int>(ids.size()) - 2;
  if (class_name_tokens < 0 || class_name_tokens > content) throw InputError("class name longer than sentence");
  std::vector<TokenRole> roles{TokenRole::start};
  roles.insert(roles.end(), static_cast<size_t>(prompt_count), TokenRole::prompt);
  roles.insert(roles.end(), static_cast<size_t>(content - class_name_tokens), TokenRole::content);
  roles.insert(roles.end(), static_cast<size_t>(class_name_tokens), TokenRole::class_name);
  roles.push_back(TokenRole::end);
  return roles;
}

void TextEncoder::collect(std::vector<Parameter*>& out) {
  out.push_back(&tok_);
  out.push_back(&pos_);
  stack_.collect(out);
  out.push_back(&head_.ln_g);
  out.push_back(&head_.ln_b);
  out.push_back(&head_.proj);
}

void TextEncoder::collect(std::vector<const Parameter*>& out) const {
  std::vector<Parameter*> tmp;
  const_cast<TextEncoder*>(this)->collect(tmp);
  out.insert(out.end(), tmp.begin(), tmp.end());
}

namespace {

std::mt19937_64 tower_rng(std::uint64_t seed, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag)};
  return std::mt19937_64(seq);
}

VisionEncoder make_vision(const EncoderConfig& cfg) {
  cfg.validate();
  auto rng = tower_rng(cfg.init_seed, 1);
  return VisionEncoder(cfg, rng);
}

TextEncoder make_text(const EncoderConfig& cfg) {
  auto rng = tower_rng(cfg.init_seed, 2);
  return TextEncoder(cfg, rng);
}

}  // namespace

Backbone::Backbone(const EncoderConfig& cfg) : config(cfg), vision(make_vision(cfg)), text(make_text(cfg)) {}

std::vector<Parameter*> Backbone::parameters() {
  std::vector<Parameter*> out;
  vision.collect(out);
  text.collect(out);
  return out;
}

std::vector<const Parameter*> Backbone::parameters() const {
  std::vector<const Parameter*> out;
  vision.collect(out);
  text.collect(out);
  return out;
}

size_t TokenIdsHash::operator()(const std::vector<int>& ids) const noexcept {
  std::uint64_t h = 1469598103934665603ULL;
  for (int id : ids) {
    h ^= static_cast<std::uint32_t>(id);
    h *= 1099511628211ULL;
  }
  return static_cast<size_t>(h);
}

RowVec FrozenTextEncoder::encode(std::span<const int> ids) const {
  if (ids.size() <= 2) throw InputError("encode_text_frozen: sentence has no content tokens");
  std::vector<int> key(ids.begin(), ids.end());
  {
    std::shared_lock lock(mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) {
      ++hits_;
      return it->second;
    }
  }
  RowVec f = text_->encode_plain(ids);
  std::unique_lock lock(mutex_);
  auto [it, inserted] = cache_.emplace(std::move(key), std::move(f));
  return it->second;
}

Mat FrozenTextEncoder::encode_many(std::span<const std::vector<int>> sentences) const {
  Mat out(static_cast<Eigen::Index>(sentences.size()), text_->config().embed_dim);
  for (size_t i = 0; i < sentences.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = encode(sentences[i]);
  return out;
}

size_t FrozenTextEncoder::cache_size() const {
  std::shared_lock lock(mutex_);
  return cache_.size();
}

RowVec zero_shot_classify(const RowVec& image_feature, const Mat& class_features, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (class_features.rows() == 0) throw InputError("zero_shot_classify: no classes");
  if (class_features.cols() != image_feature.cols()) throw DimensionError("zero_shot_classify: width mismatch");
  const double fn = image_feature.norm();
  if (!(fn > 0.0)) throw NumericError("zero_shot_classify: image feature has zero norm");
  RowVec logits(class_features.rows());
  for (Eigen::Index c = 0; c < class_features.rows(); ++c) {
    const double wn = class_features.row(c).norm();
    if (!(wn > 0.0)) throw NumericError("zero_shot_classify: class " + std::to_string(c) + " feature has zero norm");
    logits(c) = image_feature.dot(class_features.row(c)) / (fn * wn) / temperature;
  }
  const double m = logits.maxCoeff();
  RowVec p = (logits.array() - m).exp();
  return p / p.sum();
}

}  // namespace anprompt
