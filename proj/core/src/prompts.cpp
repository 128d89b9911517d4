#include "anprompt/prompts.hpp"

#include <limits>

#include "anprompt/errors.hpp"

namespace anprompt {

LearnablePrompts LearnablePrompts::init(int k, int embed_dim, double init_scale, std::mt19937_64& rng) {
  if (k <= 0 || embed_dim <= 0) throw ConfigError("prompts.K and embed_dim must be positive");
  std::normal_distribution<double> dist(0.0, init_scale);
  Mat v(k, embed_dim);
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = dist(rng);
  LearnablePrompts p;
  p.tokens = Parameter("prompts.learnable", std::move(v), true);
  p.init_scale = init_scale;
  return p;
}

ProjectionHeads ProjectionHeads::identity(int embed_dim) {
  ProjectionHeads h;
  h.image_w = Parameter("heads.to_image.weight", Mat::Identity(embed_dim, embed_dim), true);
  h.image_b = Parameter("heads.to_image.bias", Mat::Zero(1, embed_dim), true);
  h.text_w = Parameter("heads.to_text.weight", Mat::Identity(embed_dim, embed_dim), true);
  h.text_b = Parameter("heads.to_text.bias", Mat::Zero(1, embed_dim), true);
  return h;
}

DeepPromptOffsets DeepPromptOffsets::zeros(const InjectionSpec& spec, int embed_dim) {
  DeepPromptOffsets d;
  for (int l = spec.layer_start; l <= spec.layer_end; ++l) {
    d.image.emplace_back("prompts.image.layer" + std::to_string(l), Mat::Zero(spec.prompt_count, embed_dim), true);
    d.text.emplace_back("prompts.text.layer" + std::to_string(l), Mat::Zero(spec.prompt_count, embed_dim), true);
  }
  return d;
}

AntiNoisePrompts build_anti_noise_prompts(ag::Var learnable, const Mat& noise_prompts, double epsilon) {
  if (learnable.rows() != noise_prompts.rows() || learnable.cols() != noise_prompts.cols()) {
    throw DimensionError("anti-noise prompts: P_c is " + std::to_string(learnable.rows()) + "x" +
                         std::to_string(learnable.cols()) + " but P_w is " + std::to_string(noise_prompts.rows()) +
                         "x" + std::to_string(noise_prompts.cols()));
  }
  if (epsilon < 0.0) throw ConfigError("prompts.epsilon must be nonnegative");
  AntiNoisePrompts out;
  out.epsilon = epsilon;
  if (epsilon == 0.0) {
    out.combined = learnable;
  } else {
    out.combined = ag::add(learnable, learnable.tape()->constant(epsilon * noise_prompts));
  }
  return out;
}

namespace {

template <typename Heads>
void project_impl(ag::Tape& tape, AntiNoisePrompts& prompts, Heads& heads) {
  if (!prompts.combined.valid()) throw InputError("project_prompts: combined prompts missing");
  prompts.image_view = ag::affine(prompts.combined, tape.param(heads.image_w), tape.param(heads.image_b));
  prompts.text_view = ag::affine(prompts.combined, tape.param(heads.text_w), tape.param(heads.text_b));
}

template <typename Offsets>
std::vector<ag::Var> layer_prompts_impl(ag::Tape& tape, ag::Var view, Offsets& offsets) {
  std::vector<ag::Var> out;
  out.reserve(offsets.size());
  for (auto& p : offsets) out.push_back(ag::add(view, tape.param(p)));
  return out;
}

}  // namespace

void project_prompts(ag::Tape& tape, AntiNoisePrompts& prompts, ProjectionHeads& heads) {
  project_impl(tape, prompts, heads);
}

void project_prompts(ag::Tape& tape, AntiNoisePrompts& prompts, const ProjectionHeads& heads) {
  project_impl(tape, prompts, heads);
}

std::vector<ag::Var> layer_prompts(ag::Tape& tape, ag::Var view, std::vector<Parameter>& offsets) {
  return layer_prompts_impl(tape, view, offsets);
}

std::vector<ag::Var> layer_prompts(ag::Tape& tape, ag::Var view, const std::vector<Parameter>& offsets) {
  return layer_prompts_impl(tape, view, offsets);
}

std::vector<int> min_cost_assignment(const Mat& cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw DimensionError("min_cost_assignment: cost matrix must be square");
  if (n == 0) return {};
  // Potentials formulation, 1-based with a virtual column 0.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<size_t>(n + 1), 0.0), v(static_cast<size_t>(n + 1), 0.0);
  std::vector<int> p(static_cast<size_t>(n + 1), 0), way(static_cast<size_t>(n + 1), 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<size_t>(n + 1), inf);
    std::vector<bool> used(static_cast<size_t>(n + 1), false);
    do {
      used[static_cast<size_t>(j0)] = true;
      const int i0 = p[static_cast<size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> match(static_cast<size_t>(n), -1);
  for (int j = 1; j <= n; ++j) match[static_cast<size_t>(p[static_cast<size_t>(j)] - 1)] = j - 1;
  return match;
}

std::vector<int> pair_rows(const Mat& learnable, const Mat& noise_prompts) {
  if (learnable.rows() != noise_prompts.rows() || learnable.cols() != noise_prompts.cols()) {
    throw DimensionError("pair_rows: P_c and P_w shapes differ");
  }
  const Eigen::Index k = learnable.rows();
  Mat cost(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) cost(i, j) = (learnable.row(i) - noise_prompts.row(j)).norm();
  }
  return min_cost_assignment(cost);
}

Mat apply_pairing(const Mat& noise_prompts, const std::vector<int>& pairing) {
  if (static_cast<Eigen::Index>(pairing.size()) != noise_prompts.rows()) {
    throw DimensionError("apply_pairing: pairing length differs from row count");
  }
  Mat out(noise_prompts.rows(), noise_prompts.cols());
  for (size_t i = 0; i < pairing.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = noise_prompts.row(pairing[i]);
  return out;
}

}  // namespace anprompt
