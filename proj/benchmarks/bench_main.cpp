#include <benchmark/benchmark.h>

#include <random>

#include "anprompt/encoder.hpp"
#include "anprompt/kmeans.hpp"

using namespace anprompt;

namespace {

const Backbone& backbone() {
  static const Backbone b{EncoderConfig{}};
  return b;
}

Image random_image(std::mt19937_64& rng) {
  const auto& c = backbone().config;
  Image img{c.image_size, c.image_size, c.channels, {}};
  std::normal_distribution<double> n;
  for (int i = 0; i < c.image_size * c.image_size * c.channels; ++i) img.pixels.push_back(n(rng));
  return img;
}

Mat random_prompts(std::mt19937_64& rng, int k) {
  std::normal_distribution<double> n(0.0, 0.02);
  Mat m(k, backbone().config.embed_dim);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

void BM_VisionForward(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const InjectionSpec spec{6, 12, 5};
  const Mat prefix = backbone().vision.prefix(random_image(rng), spec);
  std::vector<Mat> layers;
  for (int l = 0; l < spec.num_injected_layers(); ++l) layers.push_back(random_prompts(rng, 5));
  for (auto _ : state) {
    ag::Tape tape;
    std::vector<ag::Var> vars;
    for (auto& m : layers) vars.push_back(tape.constant_ref(m));
    auto out = backbone().vision.encode_from_prefix(tape, prefix, vars, spec);
    benchmark::DoNotOptimize(out.feature.value().data());
  }
}
BENCHMARK(BM_VisionForward);

void BM_VisionForwardBackward(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const InjectionSpec spec{6, 12, 5};
  const Mat prefix = backbone().vision.prefix(random_image(rng), spec);
  std::vector<Mat> layers;
  for (int l = 0; l < spec.num_injected_layers(); ++l) layers.push_back(random_prompts(rng, 5));
  for (auto _ : state) {
    ag::Tape tape;
    std::vector<ag::Var> vars;
    for (auto& m : layers) vars.push_back(tape.leaf(m));
    auto out = backbone().vision.encode_from_prefix(tape, prefix, vars, spec);
    tape.backward(ag::sum(out.feature));
    benchmark::DoNotOptimize(tape.grad(vars.front()).data());
  }
}
BENCHMARK(BM_VisionForwardBackward);

void BM_FrozenTextEncode(benchmark::State& state) {
  const std::vector<int> ids{TextEncoder::kStart, 10, 11, 12, 13, 14, 15, TextEncoder::kEnd};
  for (auto _ : state) benchmark::DoNotOptimize(backbone().text.encode_plain(ids).data());
}
BENCHMARK(BM_FrozenTextEncode);

void BM_KMeans(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  Mat x(state.range(0), 64);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  KMeansOptions opt;
  for (auto _ : state) {
    auto bank = kmeans_cluster(x, 5, opt);
    benchmark::DoNotOptimize(bank.centers.data());
  }
}
BENCHMARK(BM_KMeans)->Arg(32)->Arg(128)->Arg(512);

}  // namespace
BENCHMARK_MAIN();
