#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "anprompt/autograd.hpp"

namespace anprompt {

enum class GammaMode { variance_adaptive, log, mean, softmax_entropy, fixed };
enum class WaDistance { kl, l1, mse, cosine };
/// How the dispersion of the robustness logits is measured.
enum class StdScope { global, per_row };

[[nodiscard]] std::string to_string(GammaMode m);
[[nodiscard]] std::string to_string(WaDistance d);
[[nodiscard]] GammaMode parse_gamma_mode(const std::string& s);
[[nodiscard]] WaDistance parse_wa_distance(const std::string& s);

struct LossWeights {
  double lambda_sim = 1.0;
  double theta = 0.7;
  double eps0 = 1e-8;
  GammaMode gamma_mode = GammaMode::variance_adaptive;
  WaDistance wa_distance = WaDistance::kl;
  /// Value used by GammaMode::fixed.
  double gamma_fixed = 1.0;
  StdScope std_scope = StdScope::global;

  void validate() const;
};

struct FeatureBundle {
  ag::Var f_v;  ///< (B, C) prompted image features
  ag::Var f_t;  ///< (classes, C) prompted text features
  ag::Var f_w;  ///< (classes, C) weak-noise frozen text features
  ag::Var f_n;  ///< (B, C) noise-resistant visual prompt prototypes
};

struct LogitBundle {
  ag::Var l_a;      ///< alignment
  ag::Var l_r;      ///< robustness
  ag::Var l_w;      ///< weak noise
  ag::Var l_final;  ///< anti-noise: theta * l_a + (1 - theta) * l_r
  double theta = 0.7;
};

struct GammaResult {
  double value = 1.0;
  /// Non-empty when a stability guard kicked in.
  std::string warning;
};

struct LossReport {
  double ce = 0.0;
  double sim = 0.0;
  double wa = 0.0;
  double gamma = 0.0;
  double total = 0.0;
  std::string warning;
  /// Differentiable total; gamma enters it as a constant.
  ag::Var total_var;
};

/// Mean of each image's visual prompt-token outputs, then unit-normalised.
/// `tokens[b]` is (N_tok, C). Throws InputError when N_tok is zero.
[[nodiscard]] ag::Var compute_nrvpp(std::span<const ag::Var> tokens);

[[nodiscard]] LogitBundle compute_logits(const FeatureBundle& features, double theta);

/// Weak alignment loss between row-softmaxes of l_a and l_w (temperature 1).
/// kl: mean over rows of KL(softmax(l_a) || softmax(l_w)).
/// l1 / mse: mean elementwise |p - q| / (p - q)^2.
/// cosine: mean over rows of 1 - cos(p, q).
[[nodiscard]] ag::Var waloss(ag::Var l_a, ag::Var l_w, WaDistance distance);

/// Loss weight for the weak alignment term, computed from values only.
[[nodiscard]] GammaResult gamma(const Mat& l_r, GammaMode mode, double eps0, double fixed_value = 1.0,
                                StdScope scope = StdScope::global);

/// Mean over rows of 1 - cos(f_v[b], f_t_assigned[b]).
[[nodiscard]] ag::Var sim_loss(ag::Var f_v, ag::Var f_t_assigned);

/// Mean negative log-softmax of l_a / tau at the label.
[[nodiscard]] ag::Var ce_loss(ag::Var l_a, std::span<const int> labels, double tau);

/// ce + lambda * sim + gamma * wa. sim pairs each image with its label's
/// text feature. `gamma_override` pins gamma (used to hold it fixed across
/// finite-difference probes).
[[nodiscard]] LossReport total_loss(const FeatureBundle& features, std::span<const int> labels,
                                    const LossWeights& weights, double tau,
                                    std::optional<double> gamma_override = std::nullopt);

}  // namespace anprompt
