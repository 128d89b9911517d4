#include "anprompt/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "anprompt/errors.hpp"

namespace anprompt {

using nlohmann::json;

namespace {

// Walks one JSON object, remembering which keys were consumed so leftovers
// can be reported as unknown fields.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("field '" + label() + "' must be an object");
  }

  [[nodiscard]] std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError("field '" + field(key) + "' must be a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw ConfigError("field '" + field(key) + "' must be an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (it->is_number_integer() && !it->is_number_unsigned() && it->template get<long long>() < 0) {
            throw ConfigError("field '" + field(key) + "' must be non-negative");
          }
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError("field '" + field(key) + "' must be a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw ConfigError("field '" + field(key) + "' must be a string");
      }
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError("field '" + field(key) + "' has the wrong type");
    }
  }

  void get_strings(const std::string& key, std::vector<std::string>& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_array()) throw ConfigError("field '" + field(key) + "' must be a list of strings");
    out.clear();
    for (const auto& v : *it) {
      if (!v.is_string()) throw ConfigError("field '" + field(key) + "' must be a list of strings");
      out.push_back(v.get<std::string>());
    }
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown field '" + field(it.key()) + "'");
    }
  }

 private:
  [[nodiscard]] std::string label() const { return path_.empty() ? "<root>" : path_; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_encoder(const json& j, EncoderConfig& e) {
  Reader r(j, "encoder");
  r.get("embed_dim", e.embed_dim);
  r.get("num_layers", e.num_layers);
  r.get("num_heads", e.num_heads);
  if (const json* g = r.child("patch_grid")) {
    if (!g->is_array() || g->size() != 2 || !(*g)[0].is_number_integer() || !(*g)[1].is_number_integer()) {
      throw ConfigError("field 'encoder.patch_grid' must be a pair of integers");
    }
    e.patch_rows = (*g)[0].get<int>();
    e.patch_cols = (*g)[1].get<int>();
  }
  r.get("image_size", e.image_size);
  r.get("channels", e.channels);
  r.get("vocab_size", e.vocab_size);
  r.get("max_text_len", e.max_text_len);
  r.get("temperature", e.temperature);
  r.get("mlp_ratio", e.mlp_ratio);
  r.get("init_seed", e.init_seed);
  r.finish();
}

void read_losses(const json& j, LossWeights& w) {
  Reader r(j, "losses");
  r.get("lambda_sim", w.lambda_sim);
  r.get("theta", w.theta);
  r.get("eps0", w.eps0);
  r.get("gamma_fixed", w.gamma_fixed);
  std::string s;
  if (r.child("gamma_mode")) {
    r.get("gamma_mode", s);
    try {
      w.gamma_mode = parse_gamma_mode(s);
    } catch (const Error&) {
      throw ConfigError("field 'losses.gamma_mode' has unknown value '" + s + "'");
    }
  }
  if (r.child("wa_distance")) {
    r.get("wa_distance", s);
    try {
      w.wa_distance = parse_wa_distance(s);
    } catch (const Error&) {
      throw ConfigError("field 'losses.wa_distance' has unknown value '" + s + "'");
    }
  }
  if (r.child("std_scope")) {
    r.get("std_scope", s);
    if (s == "global") {
      w.std_scope = StdScope::global;
    } else if (s == "per_row") {
      w.std_scope = StdScope::per_row;
    } else {
      throw ConfigError("field 'losses.std_scope' has unknown value '" + s + "'");
    }
  }
  r.finish();
}

RunConfig parse(const json& root) {
  RunConfig c;
  Reader r(root, "");
  if (const json* j = r.child("encoder")) read_encoder(*j, c.encoder);
  if (const json* j = r.child("injection")) {
    Reader s(*j, "injection");
    s.get("layer_start", c.injection.layer_start);
    s.get("layer_end", c.injection.layer_end);
    int count = -1;
    s.get("prompt_count", count);
    s.finish();
    c.injection.prompt_count = count;
  }
  if (const json* j = r.child("weak_noise")) {
    Reader s(*j, "weak_noise");
    s.get("alpha", c.weak_noise.alpha);
    s.get("renormalize", c.weak_noise.renormalize);
    s.finish();
  }
  r.get("noise_kind", c.noise_kind);
  if (const json* j = r.child("prompts")) {
    Reader s(*j, "prompts");
    s.get("K", c.prompts.K);
    s.get("epsilon", c.prompts.epsilon);
    s.get("init_scale", c.prompts.init_scale);
    s.get("cluster_draws_per_class", c.prompts.cluster_draws_per_class);
    s.get("kmeans_max_iter", c.prompts.kmeans_max_iter);
    s.get("kmeans_tol", c.prompts.kmeans_tol);
    s.finish();
  }
  if (c.injection.prompt_count == -1) {
    c.injection.prompt_count = c.prompts.K;
  } else if (c.injection.prompt_count != c.prompts.K) {
    throw ConfigError("field 'injection.prompt_count' must equal prompts.K (" + std::to_string(c.prompts.K) + ")");
  }
  if (const json* j = r.child("losses")) read_losses(*j, c.losses);
  if (const json* j = r.child("optim")) {
    Reader s(*j, "optim");
    s.get("learning_rate", c.optim.learning_rate);
    s.get("epochs", c.optim.epochs);
    s.get("batch_size", c.optim.batch_size);
    s.get("optimizer", c.optim.optimizer);
    s.get("beta1", c.optim.beta1);
    s.get("beta2", c.optim.beta2);
    s.get("adam_eps", c.optim.adam_eps);
    s.get("schedule", c.optim.schedule);
    s.finish();
  }
  if (const json* j = r.child("components")) {
    Reader s(*j, "components");
    s.get("text_noise", c.components.text_noise);
    s.get("wa_loss", c.components.wa_loss);
    s.get("anti_prompt", c.components.anti_prompt);
    s.finish();
  }
  if (const json* j = r.child("seeds")) {
    if (!j->is_array()) throw ConfigError("field 'seeds' must be a list of non-negative integers");
    c.seeds.clear();
    for (const auto& v : *j) {
      if (!v.is_number_unsigned()) throw ConfigError("field 'seeds' must be a list of non-negative integers");
      c.seeds.push_back(v.get<std::uint64_t>());
    }
  }
  if (const json* j = r.child("dataset")) {
    Reader s(*j, "dataset");
    s.get("path", c.dataset.path);
    if (const json* k = s.child("synthetic")) {
      Reader t(*k, "dataset.synthetic");
      auto& y = c.dataset.synthetic;
      t.get("num_classes", y.num_classes);
      t.get("seed", y.seed);
      t.get("train_per_class", y.train_per_class);
      t.get("test_per_class", y.test_per_class);
      t.get("pixel_noise", y.pixel_noise);
      t.get("captions_per_class", y.captions_per_class);
      t.get("align_steps", y.align_steps);
      t.get("align_lr", y.align_lr);
      t.finish();
    }
    if (const json* k = s.child("split")) {
      Reader t(*k, "dataset.split");
      t.get_strings("base_classes", c.dataset.split.base_classes);
      t.get_strings("novel_classes", c.dataset.split.novel_classes);
      t.get("shots_per_class", c.dataset.split.shots_per_class);
      t.finish();
    }
    s.finish();
  }
  if (const json* j = r.child("noise_bench")) {
    Reader s(*j, "noise_bench");
    s.get_strings("perturbations", c.noise_bench.perturbations);
    s.finish();
  }
  r.get("threads", c.threads);
  r.finish();
  c.validate();
  return c;
}

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError("field '" + field + "' " + what);
}

}  // namespace

void RunConfig::validate() const {
  const auto& e = encoder;
  require(e.embed_dim > 0, "encoder.embed_dim", "must be positive");
  require(e.num_layers > 0, "encoder.num_layers", "must be positive");
  require(e.num_heads > 0, "encoder.num_heads", "must be positive");
  require(e.embed_dim % std::max(e.num_heads, 1) == 0, "encoder.num_heads", "must divide encoder.embed_dim");
  require(e.patch_rows > 0 && e.patch_cols > 0, "encoder.patch_grid", "must be positive");
  require(e.image_size > 0 && e.image_size % e.patch_rows == 0 && e.image_size % e.patch_cols == 0,
          "encoder.image_size", "must be a positive multiple of the patch grid");
  require(e.channels > 0, "encoder.channels", "must be positive");
  require(e.vocab_size > TextEncoder::kFirstWord, "encoder.vocab_size", "is too small");
  require(e.max_text_len >= 3, "encoder.max_text_len", "must be at least 3");
  require(e.temperature > 0.0, "encoder.temperature", "must be positive");
  require(e.mlp_ratio > 0, "encoder.mlp_ratio", "must be positive");

  require(injection.layer_start >= 1 && injection.layer_start <= e.num_layers, "injection.layer_start",
          "must lie in [1, encoder.num_layers]");
  require(injection.layer_end >= injection.layer_start && injection.layer_end <= e.num_layers, "injection.layer_end",
          "must lie in [injection.layer_start, encoder.num_layers]");
  require(injection.prompt_count == prompts.K, "injection.prompt_count", "must equal prompts.K");

  require(weak_noise.alpha >= 0.0, "weak_noise.alpha", "must be non-negative");
  try {
    (void)PerturbationKind::parse(noise_kind);
  } catch (const Error&) {
    throw ConfigError("field 'noise_kind' has unknown value '" + noise_kind + "'");
  }
  require(prompts.K >= 1, "prompts.K", "must be at least 1");
  require(prompts.epsilon >= 0.0, "prompts.epsilon", "must be non-negative");
  require(prompts.init_scale >= 0.0, "prompts.init_scale", "must be non-negative");
  require(prompts.cluster_draws_per_class >= 1, "prompts.cluster_draws_per_class", "must be at least 1");
  require(prompts.kmeans_max_iter >= 1, "prompts.kmeans_max_iter", "must be at least 1");
  require(prompts.kmeans_tol >= 0.0, "prompts.kmeans_tol", "must be non-negative");

  losses.validate();

  require(optim.learning_rate > 0.0, "optim.learning_rate", "must be positive");
  require(optim.epochs >= 0, "optim.epochs", "must be non-negative");
  require(optim.batch_size >= 1, "optim.batch_size", "must be at least 1");
  require(optim.optimizer == "adam", "optim.optimizer", "must be \"adam\"");
  require(optim.beta1 >= 0.0 && optim.beta1 < 1.0, "optim.beta1", "must lie in [0, 1)");
  require(optim.beta2 >= 0.0 && optim.beta2 < 1.0, "optim.beta2", "must lie in [0, 1)");
  require(optim.adam_eps > 0.0, "optim.adam_eps", "must be positive");
  require(optim.schedule == "constant" || optim.schedule == "cosine", "optim.schedule",
          "must be \"constant\" or \"cosine\"");

  require(!seeds.empty(), "seeds", "must not be empty");
  const auto& y = dataset.synthetic;
  require(y.num_classes >= 2, "dataset.synthetic.num_classes", "must be at least 2");
  require(y.train_per_class >= 1, "dataset.synthetic.train_per_class", "must be at least 1");
  require(y.test_per_class >= 1, "dataset.synthetic.test_per_class", "must be at least 1");
  require(y.pixel_noise >= 0.0, "dataset.synthetic.pixel_noise", "must be non-negative");
  require(y.captions_per_class >= 2, "dataset.synthetic.captions_per_class", "must be at least 2");
  require(y.align_steps >= 0, "dataset.synthetic.align_steps", "must be non-negative");
  require(y.align_lr > 0.0, "dataset.synthetic.align_lr", "must be positive");
  require(dataset.split.shots_per_class >= 1, "dataset.split.shots_per_class", "must be at least 1");
  require(dataset.split.base_classes.empty() == dataset.split.novel_classes.empty(), "dataset.split",
          "must list both base_classes and novel_classes or neither");
  for (const auto& p : noise_bench.perturbations) {
    try {
      (void)PerturbationKind::parse(p);
    } catch (const Error&) {
      throw ConfigError("field 'noise_bench.perturbations' has unknown entry '" + p + "'");
    }
  }
  require(threads >= 1, "threads", "must be at least 1");
}

InjectionSpec RunConfig::injection_spec() const {
  InjectionSpec s = injection;
  s.prompt_count = prompts.K;
  return s;
}

RunConfig RunConfig::from_json_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse(root);
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string RunConfig::to_json_text() const {
  json j;
  j["encoder"] = {{"embed_dim", encoder.embed_dim},
                  {"num_layers", encoder.num_layers},
                  {"num_heads", encoder.num_heads},
                  {"patch_grid", {encoder.patch_rows, encoder.patch_cols}},
                  {"image_size", encoder.image_size},
                  {"channels", encoder.channels},
                  {"vocab_size", encoder.vocab_size},
                  {"max_text_len", encoder.max_text_len},
                  {"temperature", encoder.temperature},
                  {"mlp_ratio", encoder.mlp_ratio},
                  {"init_seed", encoder.init_seed}};
  j["injection"] = {{"layer_start", injection.layer_start},
                    {"layer_end", injection.layer_end},
                    {"prompt_count", prompts.K}};
  j["weak_noise"] = {{"alpha", weak_noise.alpha}, {"renormalize", weak_noise.renormalize}};
  j["noise_kind"] = noise_kind;
  j["prompts"] = {{"K", prompts.K},
                  {"epsilon", prompts.epsilon},
                  {"init_scale", prompts.init_scale},
                  {"cluster_draws_per_class", prompts.cluster_draws_per_class},
                  {"kmeans_max_iter", prompts.kmeans_max_iter},
                  {"kmeans_tol", prompts.kmeans_tol}};
  j["losses"] = {{"lambda_sim", losses.lambda_sim},
                 {"theta", losses.theta},
                 {"eps0", losses.eps0},
                 {"gamma_mode", to_string(losses.gamma_mode)},
                 {"wa_distance", to_string(losses.wa_distance)},
                 {"gamma_fixed", losses.gamma_fixed},
                 {"std_scope", losses.std_scope == StdScope::global ? "global" : "per_row"}};
  j["optim"] = {{"learning_rate", optim.learning_rate}, {"epochs", optim.epochs},
                {"batch_size", optim.batch_size},       {"optimizer", optim.optimizer},
                {"beta1", optim.beta1},                 {"beta2", optim.beta2},
                {"adam_eps", optim.adam_eps},           {"schedule", optim.schedule}};
  j["components"] = {{"text_noise", components.text_noise},
                     {"wa_loss", components.wa_loss},
                     {"anti_prompt", components.anti_prompt}};
  j["seeds"] = seeds;
  const auto& y = dataset.synthetic;
  j["dataset"] = {{"path", dataset.path},
                  {"synthetic",
                   {{"num_classes", y.num_classes},
                    {"seed", y.seed},
                    {"train_per_class", y.train_per_class},
                    {"test_per_class", y.test_per_class},
                    {"pixel_noise", y.pixel_noise},
                    {"captions_per_class", y.captions_per_class},
                    {"align_steps", y.align_steps},
                    {"align_lr", y.align_lr}}},
                  {"split",
                   {{"base_classes", dataset.split.base_classes},
                    {"novel_classes", dataset.split.novel_classes},
                    {"shots_per_class", dataset.split.shots_per_class}}}};
  j["noise_bench"] = {{"perturbations", noise_bench.perturbations}};
  j["threads"] = threads;
  return j.dump(2) + "\n";
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write config " + path.string());
  out << to_json_text();
}

}  // namespace anprompt
