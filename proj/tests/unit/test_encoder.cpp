#include <doctest.h>

#include <cmath>

#include "anprompt/encoder.hpp"
#include "anprompt/errors.hpp"
#include "helpers.hpp"

using namespace anprompt;
using testutil::random_mat;

namespace {

EncoderConfig small_encoder() {
  EncoderConfig c;
  c.embed_dim = 16;
  c.num_layers = 4;
  c.num_heads = 2;
  c.image_size = 8;
  c.max_text_len = 12;
  c.vocab_size = 64;
  return c;
}

const Backbone& small_backbone() {
  static const Backbone b(small_encoder());
  return b;
}

Image random_image(std::mt19937_64& rng, int size = 8) {
  Image img{size, size, 3, {}};
  std::normal_distribution<double> n;
  for (int i = 0; i < size * size * 3; ++i) img.pixels.push_back(n(rng));
  return img;
}

std::vector<ag::Var> const_prompts(ag::Tape& t, const std::vector<Mat>& m) {
  std::vector<ag::Var> v;
  for (const auto& x : m) v.push_back(t.constant_ref(x));
  return v;
}

std::vector<Mat> prompt_blocks(std::mt19937_64& rng, const InjectionSpec& spec, double sd = 0.1) {
  std::vector<Mat> out;
  for (int l = 0; l < spec.num_injected_layers(); ++l) out.push_back(random_mat(rng, spec.prompt_count, 16, sd));
  return out;
}

}  // namespace

TEST_CASE("image encoding is deterministic and unit-norm") {
  const auto& b = small_backbone();
  const InjectionSpec spec{2, 4, 3};
  std::vector<Mat> zeros(3, Mat::Zero(3, 16));
  Image blank{8, 8, 3, std::vector<double>(8 * 8 * 3, 0.0)};
  ag::Tape t1, t2;
  const Mat a = b.vision.encode(t1, blank, const_prompts(t1, zeros), spec).feature.value();
  const Mat c = b.vision.encode(t2, blank, const_prompts(t2, zeros), spec).feature.value();
  CHECK(a == c);

  std::mt19937_64 rng(3);
  for (int i = 0; i < 5; ++i) {
    ag::Tape t;
    const auto blocks = prompt_blocks(rng, spec);
    const Mat f = b.vision.encode(t, random_image(rng), const_prompts(t, blocks), spec).feature.value();
    CHECK(std::abs(f.norm() - 1.0) < 1e-6);
  }
}

TEST_CASE("a rebuilt backbone is bitwise identical") {
  Backbone again(small_encoder());
  const auto p = small_backbone().parameters();
  const auto q = again.parameters();
  REQUIRE(p.size() == q.size());
  for (size_t i = 0; i < p.size(); ++i) CHECK(p[i]->value == q[i]->value);
}

TEST_CASE("injection range changes the image feature") {
  const auto& b = small_backbone();
  std::mt19937_64 rng(4);
  const Image img = random_image(rng);
  const InjectionSpec late{3, 4, 2}, early{1, 2, 2};
  const auto blocks = prompt_blocks(rng, late, 0.5);
  ag::Tape t;
  const Mat f1 = b.vision.encode(t, img, const_prompts(t, blocks), late).feature.value();
  const Mat f2 = b.vision.encode(t, img, const_prompts(t, blocks), early).feature.value();
  CHECK((f1 - f2).norm() > 0.0);
}

TEST_CASE("prefix plus encode_from_prefix equals a full pass") {
  const auto& b = small_backbone();
  std::mt19937_64 rng(5);
  const Image img = random_image(rng);
  const InjectionSpec spec{3, 4, 2};
  const auto blocks = prompt_blocks(rng, spec);
  ag::Tape t;
  const Mat full = b.vision.encode(t, img, const_prompts(t, blocks), spec).feature.value();
  const Mat pre = b.vision.prefix(img, spec);
  const Mat split = b.vision.encode_from_prefix(t, pre, const_prompts(t, blocks), spec).feature.value();
  CHECK((full - split).cwiseAbs().maxCoeff() < 1e-12);

  const std::vector<int> ids{TextEncoder::kStart, 7, 8, 9, TextEncoder::kEnd};
  const Mat tf = b.text.encode(t, ids, const_prompts(t, blocks), spec).feature.value();
  const Mat tp = b.text.encode_from_prefix(t, b.text.prefix(ids, spec), const_prompts(t, blocks), spec).feature.value();
  CHECK((tf - tp).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("image encoder rejects mismatched inputs") {
  const auto& b = small_backbone();
  std::mt19937_64 rng(6);
  const InjectionSpec spec{2, 4, 2};
  ag::Tape t;
  std::vector<Mat> narrow(3, Mat::Zero(2, 8));
  CHECK_THROWS_AS((void)b.vision.encode(t, random_image(rng), const_prompts(t, narrow), spec), DimensionError);
  const auto blocks = prompt_blocks(rng, spec);
  CHECK_THROWS_AS((void)b.vision.encode(t, random_image(rng, 12), const_prompts(t, blocks), spec), DimensionError);
  CHECK_THROWS_AS(InjectionSpec({3, 9, 2}).validate(4), ConfigError);
  CHECK_THROWS_AS(InjectionSpec({0, 2, 2}).validate(4), ConfigError);
}

TEST_CASE("text encoding: norms, distinct classes, truncation") {
  const auto& b = small_backbone();
  std::mt19937_64 rng(7);
  const InjectionSpec spec{2, 4, 3};
  const auto blocks = prompt_blocks(rng, spec);
  ag::Tape t;
  const std::vector<int> cat{TextEncoder::kStart, 10, 11, 12, TextEncoder::kEnd};
  const std::vector<int> dog{TextEncoder::kStart, 10, 11, 13, TextEncoder::kEnd};
  const Mat f1 = b.text.encode(t, cat, const_prompts(t, blocks), spec).feature.value();
  const Mat f1b = b.text.encode(t, cat, const_prompts(t, blocks), spec).feature.value();
  const Mat f2 = b.text.encode(t, dog, const_prompts(t, blocks), spec).feature.value();
  CHECK(f1 == f1b);
  CHECK(std::abs(f1.norm() - 1.0) < 1e-6);
  CHECK((f1 - f2).norm() > 1e-6);

  // 10 tokens + 3 prompts > max_text_len 12
  std::vector<int> long_ids{TextEncoder::kStart};
  for (int i = 0; i < 8; ++i) long_ids.push_back(20 + i);
  long_ids.push_back(TextEncoder::kEnd);
  CHECK_THROWS_AS((void)b.text.encode(t, long_ids, const_prompts(t, blocks), spec), TruncationError);
}

TEST_CASE("token layouts follow the documented order") {
  const auto& b = small_backbone();
  const auto v = b.vision.injected_layout(2);
  REQUIRE(v.size() == 2 + 1 + 16);
  CHECK(v[0] == TokenRole::prompt);
  CHECK(v[1] == TokenRole::prompt);
  CHECK(v[2] == TokenRole::class_token);
  CHECK(v[3] == TokenRole::patch);
  const std::vector<int> ids{TextEncoder::kStart, 10, 11, 12, TextEncoder::kEnd};
  const auto tl = b.text.injected_layout(ids, 2, 1);
  const std::vector<TokenRole> expect{TokenRole::start,   TokenRole::prompt,     TokenRole::prompt, TokenRole::content,
                                      TokenRole::content, TokenRole::class_name, TokenRole::end};
  CHECK(tl == expect);
}

TEST_CASE("frozen text encoder caches by exact ids") {
  const auto& b = small_backbone();
  FrozenTextEncoder frozen(b.text);
  std::vector<std::vector<int>> sentences;
  for (int i = 0; i < 10; ++i) sentences.push_back({TextEncoder::kStart, 10 + i, 30, TextEncoder::kEnd});
  const Mat all = frozen.encode_many(sentences);
  CHECK(frozen.cache_size() == 10);
  const RowVec again = frozen.encode(sentences[3]);
  CHECK(frozen.hits() == 1);
  CHECK(again == all.row(3));
  CHECK(again == b.text.encode_plain(sentences[3]));
  const std::vector<int> empty{TextEncoder::kStart, TextEncoder::kEnd};
  CHECK_THROWS_AS((void)frozen.encode(empty), InputError);
}

TEST_CASE("gradients reach prompts and never frozen weights") {
  Backbone b(small_encoder());
  std::mt19937_64 rng(8);
  const InjectionSpec spec{1, 2, 2};
  const auto blocks = prompt_blocks(rng, spec);
  ag::Tape t;
  std::vector<ag::Var> leaves;
  for (const auto& m : blocks) leaves.push_back(t.leaf(m));
  const auto out = b.vision.encode(t, random_image(rng), leaves, spec);
  t.backward(ag::sum(out.feature));
  CHECK(t.grad(leaves[0]).norm() > 0.0);
  for (const Parameter* p : std::as_const(b).parameters()) CHECK(p->grad.size() == 0);
}

TEST_CASE("prompted image feature gradient matches central differences") {
  EncoderConfig c = small_encoder();
  c.num_layers = 2;
  const Backbone b(c);
  std::mt19937_64 rng(9);
  const InjectionSpec spec{1, 2, 2};
  const Image img = random_image(rng);
  const Mat w = random_mat(rng, 1, 16);
  auto blocks = prompt_blocks(rng, spec, 0.3);
  for (size_t layer = 0; layer < blocks.size(); ++layer) {
    auto f = [&](const Mat& x) {
      auto probe = blocks;
      probe[layer] = x;
      ag::Tape t;
      return ag::sum(ag::mul(b.vision.encode(t, img, const_prompts(t, probe), spec).feature, t.constant(w)))
          .value()(0, 0);
    };
    ag::Tape t;
    std::vector<ag::Var> leaves;
    for (const auto& m : blocks) leaves.push_back(t.leaf(m));
    t.backward(ag::sum(ag::mul(b.vision.encode(t, img, leaves, spec).feature, t.constant(w))));
    CHECK(testutil::rel_err(t.grad(leaves[layer]), testutil::numeric_grad(f, blocks[layer])) < 1e-4);
  }
}

TEST_CASE("zero-shot classification") {
  std::mt19937_64 rng(10);
  const RowVec f = random_mat(rng, 1, 8).normalized();
  Mat same(4, 8);
  for (int i = 0; i < 4; ++i) same.row(i) = f;
  const RowVec p = zero_shot_classify(f, same, 0.1);
  for (int i = 0; i < 4; ++i) CHECK(p(i) == doctest::Approx(0.25));

  Mat pm(2, 8);
  pm.row(0) = f;
  pm.row(1) = -f;
  CHECK(zero_shot_classify(f, pm, 0.01)(0) > 1.0 - 1e-12);

  const Mat w = random_mat(rng, 5, 8);
  const RowVec q = zero_shot_classify(f, w, 0.07);
  double z = 0.0;
  std::vector<double> e(5);
  for (int k = 0; k < 5; ++k) {
    double dot = 0.0, nw = 0.0;
    for (int j = 0; j < 8; ++j) {
      dot += f(j) * w(k, j);
      nw += w(k, j) * w(k, j);
    }
    e[static_cast<size_t>(k)] = std::exp(dot / std::sqrt(nw) / 0.07);
    z += e[static_cast<size_t>(k)];
  }
  for (int k = 0; k < 5; ++k) CHECK(std::abs(q(k) - e[static_cast<size_t>(k)] / z) < 1e-6);
  CHECK(std::abs(q.sum() - 1.0) < 1e-6);
  CHECK_THROWS_AS((void)zero_shot_classify(RowVec::Zero(8), w, 0.1), NumericError);
}
