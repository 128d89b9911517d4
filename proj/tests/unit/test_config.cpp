#include <doctest.h>

#include <string>

#include "anprompt/config.hpp"
#include "anprompt/errors.hpp"
#include "helpers.hpp"

using namespace anprompt;

namespace {

std::string config_error(const std::string& text) {
  try {
    (void)RunConfig::from_json_text(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("defaults follow the reported training setup") {
  const RunConfig c;
  CHECK(c.optim.learning_rate == 0.001);
  CHECK(c.optim.epochs == 10);
  CHECK(c.optim.batch_size == 4);
  CHECK(c.optim.optimizer == "adam");
  CHECK(c.losses.theta == 0.7);
  CHECK(c.weak_noise.alpha == 0.001);
  CHECK(c.injection.layer_start == 6);
  CHECK(c.injection.layer_end == 12);
  CHECK(c.prompts.K == 5);
  CHECK(c.injection.prompt_count == 5);
  CHECK(c.seeds.size() == 3);
  CHECK(c.encoder.embed_dim == 64);
  CHECK(c.encoder.num_layers == 12);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("json round trip") {
  RunConfig c = testutil::tiny_config();
  c.losses.gamma_mode = GammaMode::softmax_entropy;
  c.losses.wa_distance = WaDistance::cosine;
  c.components.wa_loss = false;
  c.dataset.split.base_classes = {"a", "b"};
  c.dataset.split.novel_classes = {"c"};
  c.noise_bench.perturbations = {"identity"};
  const RunConfig back = RunConfig::from_json_text(c.to_json_text());
  CHECK(back.to_json_text() == c.to_json_text());
  CHECK(back.losses.gamma_mode == GammaMode::softmax_entropy);
  CHECK(back.encoder.embed_dim == 16);
  CHECK(back.dataset.split.base_classes == std::vector<std::string>{"a", "b"});

  const auto dir = testutil::temp_dir("config");
  c.save(dir / "c.json");
  CHECK(RunConfig::load(dir / "c.json").to_json_text() == c.to_json_text());
  CHECK_THROWS_AS((void)RunConfig::load(dir / "missing.json"), FileError);
}

TEST_CASE("malformed configs name the field") {
  CHECK(config_error(R"({"optim": {"learning_rate": "fast"}})").find("optim.learning_rate") != std::string::npos);
  CHECK(config_error(R"({"optim": {"lr": 0.1}})").find("optim.lr") != std::string::npos);
  CHECK(config_error(R"({"losses": {"theta": 1.5}})").find("losses.theta") != std::string::npos);
  CHECK(config_error(R"({"losses": {"gamma_mode": "median"}})").find("losses.gamma_mode") != std::string::npos);
  CHECK(config_error(R"({"encoder": {"num_heads": 5}})").find("encoder.num_heads") != std::string::npos);
  CHECK(config_error(R"({"injection": {"layer_start": 9, "layer_end": 3}})").find("injection.layer_end") !=
        std::string::npos);
  CHECK(config_error(R"({"injection": {"prompt_count": 4}, "prompts": {"K": 3}})").find("injection.prompt_count") != std::string::npos);
  CHECK(config_error(R"({"seeds": [1, -2]})").find("seeds") != std::string::npos);
  CHECK(config_error(R"({"noise_kind": "blur"})").find("noise_kind") != std::string::npos);
  CHECK(config_error(R"({"dataset": {"synthetic": {"num_classes": 1}}})").find("dataset.synthetic.num_classes") !=
        std::string::npos);
  CHECK(config_error(R"({"optim": {"epochs": 2.5}})").find("optim.epochs") != std::string::npos);
  CHECK(config_error("[1, 2]") != "");
  CHECK_THROWS_AS((void)RunConfig::from_json_text("{not json"), ConfigError);
}

TEST_CASE("enum names round trip") {
  for (auto m : {GammaMode::variance_adaptive, GammaMode::log, GammaMode::mean, GammaMode::softmax_entropy,
                 GammaMode::fixed})
    CHECK(parse_gamma_mode(to_string(m)) == m);
  for (auto d : {WaDistance::kl, WaDistance::l1, WaDistance::mse, WaDistance::cosine})
    CHECK(parse_wa_distance(to_string(d)) == d);
  CHECK_THROWS_AS((void)parse_wa_distance("hamming"), ConfigError);
}
