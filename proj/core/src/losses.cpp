#include "anprompt/losses.hpp"

#include <cmath>

#include "anprompt/errors.hpp"

namespace anprompt {

std::string to_string(GammaMode m) {
  switch (m) {
    case GammaMode::variance_adaptive: return "variance_adaptive";
    case GammaMode::log: return "log";
    case GammaMode::mean: return "mean";
    case GammaMode::softmax_entropy: return "softmax_entropy";
    case GammaMode::fixed: return "fixed";
  }
  return "unknown";
}

std::string to_string(WaDistance d) {
  switch (d) {
    case WaDistance::kl: return "kl";
    case WaDistance::l1: return "l1";
    case WaDistance::mse: return "mse";
    case WaDistance::cosine: return "cosine";
  }
  return "unknown";
}

GammaMode parse_gamma_mode(const std::string& s) {
  if (s == "variance_adaptive") return GammaMode::variance_adaptive;
  if (s == "log") return GammaMode::log;
  if (s == "mean") return GammaMode::mean;
  if (s == "softmax_entropy") return GammaMode::softmax_entropy;
  if (s == "fixed") return GammaMode::fixed;
  throw ConfigError("unknown gamma_mode '" + s + "'");
}

WaDistance parse_wa_distance(const std::string& s) {
  if (s == "kl") return WaDistance::kl;
  if (s == "l1") return WaDistance::l1;
  if (s == "mse") return WaDistance::mse;
  if (s == "cosine") return WaDistance::cosine;
  throw ConfigError("unknown wa_distance '" + s + "'");
}

void LossWeights::validate() const {
  if (lambda_sim < 0.0) throw ConfigError("field 'losses.lambda_sim' must be nonnegative");
  if (theta < 0.0 || theta > 1.0) throw ConfigError("field 'losses.theta' must lie in [0, 1]");
  if (!(eps0 > 0.0)) throw ConfigError("field 'losses.eps0' must be positive");
  if (gamma_fixed < 0.0) throw ConfigError("field 'losses.gamma_fixed' must be nonnegative");
}

ag::Var compute_nrvpp(std::span<const ag::Var> tokens) {
  if (tokens.empty()) throw InputError("compute_nrvpp: empty batch");
  std::vector<ag::Var> pooled;
  pooled.reserve(tokens.size());
  for (const auto& t : tokens) {
    if (t.rows() == 0) throw InputError("compute_nrvpp: an image has no prompt tokens");
    pooled.push_back(ag::mean_rows(t));
  }
  return ag::l2_normalize_rows(ag::concat_rows(pooled));
}

LogitBundle compute_logits(const FeatureBundle& f, double theta) {
  if (theta < 0.0 || theta > 1.0) throw ConfigError("theta must lie in [0, 1]");
  const auto c = f.f_v.cols();
  if (f.f_t.cols() != c || f.f_w.cols() != c || f.f_n.cols() != c) {
    throw DimensionError("compute_logits: feature widths differ");
  }
  if (f.f_t.rows() != f.f_w.rows()) throw DimensionError("compute_logits: f_t and f_w class counts differ");
  if (f.f_n.rows() != f.f_v.rows()) throw DimensionError("compute_logits: f_n and f_v batch sizes differ");
  LogitBundle out;
  out.theta = theta;
  out.l_a = ag::matmul_nt(f.f_v, f.f_t);
  out.l_r = ag::matmul_nt(f.f_v, f.f_w);
  out.l_w = ag::matmul_nt(f.f_n, f.f_w);
  if (theta == 1.0) {
    out.l_final = out.l_a;
  } else {
    out.l_final = ag::add(ag::scale(out.l_a, theta), ag::scale(out.l_r, 1.0 - theta));
  }
  return out;
}

ag::Var waloss(ag::Var l_a, ag::Var l_w, WaDistance distance) {
  if (l_a.rows() != l_w.rows() || l_a.cols() != l_w.cols()) throw DimensionError("waloss: logit shapes differ");
  if (!l_a.value().allFinite() || !l_w.value().allFinite()) throw NumericError("waloss: non-finite logits");
  switch (distance) {
    case WaDistance::kl: {
      ag::Var p = ag::softmax_rows(l_a);
      ag::Var diff = ag::sub(ag::log_softmax_rows(l_a), ag::log_softmax_rows(l_w));
      return ag::scale(ag::sum(ag::mul(p, diff)), 1.0 / static_cast<double>(l_a.rows()));
    }
    case WaDistance::l1:
      return ag::mean(ag::abs(ag::sub(ag::softmax_rows(l_a), ag::softmax_rows(l_w))));
    case WaDistance::mse: {
      ag::Var d = ag::sub(ag::softmax_rows(l_a), ag::softmax_rows(l_w));
      return ag::mean(ag::mul(d, d));
    }
    case WaDistance::cosine: {
      ag::Var p = ag::l2_normalize_rows(ag::softmax_rows(l_a));
      ag::Var q = ag::l2_normalize_rows(ag::softmax_rows(l_w));
      ag::Var cos = ag::row_sum(ag::mul(p, q));
      return ag::add_scalar(ag::scale(ag::mean(cos), -1.0), 1.0);
    }
  }
  throw ConfigError("waloss: unknown distance");
}

namespace {

double population_std(const Mat& m) {
  // The rounded mean of identical values can differ from them in the last bit.
  if (m.maxCoeff() == m.minCoeff()) return 0.0;
  const double mu = m.mean();
  return std::sqrt((m.array() - mu).square().mean());
}

double dispersion(const Mat& m, StdScope scope) {
  if (scope == StdScope::global) return population_std(m);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) acc += population_std(m.row(i));
  return acc / static_cast<double>(m.rows());
}

}  // namespace

GammaResult gamma(const Mat& l_r, GammaMode mode, double eps0, double fixed_value, StdScope scope) {
  if (mode == GammaMode::fixed) return {fixed_value, {}};
  if (l_r.size() == 0) throw InputError("gamma: empty robustness logits");
  if (!l_r.allFinite()) throw NumericError("gamma: non-finite robustness logits");
  if (!(eps0 > 0.0)) throw ConfigError("gamma: eps0 must be positive");
  const double n = static_cast<double>(l_r.size());
  const double sd = dispersion(l_r, scope);
  GammaResult r;
  switch (mode) {
    case GammaMode::variance_adaptive:
      r.value = 1.0 / (sd * n + eps0);
      break;
    case GammaMode::log:
      r.value = 1.0 / (std::log(sd + 1.1) * n);
      break;
    case GammaMode::mean: {
      const double mu = l_r.mean();
      double denom = mu + eps0;
      if (std::abs(mu) < eps0 || std::abs(denom) < eps0) {
        r.warning = "gamma(mean): |mean(l_R)| below eps0, denominator guarded";
        denom = std::abs(denom) < eps0 ? eps0 : denom;
      }
      r.value = 1.0 / (std::abs(sd / denom) * n + eps0);
      break;
    }
    case GammaMode::softmax_entropy: {
      const double m = l_r.maxCoeff();
      const Eigen::ArrayXd e = (l_r.reshaped<Eigen::RowMajor>().array() - m).exp();
      const Eigen::ArrayXd p = e / e.sum();
      double h = 0.0;
      for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (p(i) > 0.0) h -= p(i) * std::log(p(i));
      }
      if (h < eps0) r.warning = "gamma(softmax_entropy): near one-hot softmax, denominator guarded";
      r.value = 1.0 / (h * n + eps0);
      break;
    }
    case GammaMode::fixed:
      break;
  }
  return r;
}

ag::Var sim_loss(ag::Var f_v, ag::Var f_t_assigned) {
  if (f_v.rows() != f_t_assigned.rows() || f_v.cols() != f_t_assigned.cols()) {
    throw DimensionError("sim_loss: shapes differ");
  }
  ag::Var cos = ag::row_sum(ag::mul(ag::l2_normalize_rows(f_v), ag::l2_normalize_rows(f_t_assigned)));
  return ag::add_scalar(ag::scale(ag::mean(cos), -1.0), 1.0);
}

ag::Var ce_loss(ag::Var l_a, std::span<const int> labels, double tau) {
  if (!(tau > 0.0)) throw ConfigError("ce_loss: tau must be positive");
  if (static_cast<Eigen::Index>(labels.size()) != l_a.rows()) throw DimensionError("ce_loss: one label per row");
  for (int y : labels) {
    if (y < 0 || y >= l_a.cols()) throw InputError("ce_loss: label " + std::to_string(y) + " out of range");
  }
  ag::Var logp = ag::log_softmax_rows(ag::scale(l_a, 1.0 / tau));
  return ag::scale(ag::sum(ag::pick(logp, labels)), -1.0 / static_cast<double>(labels.size()));
}

LossReport total_loss(const FeatureBundle& f, std::span<const int> labels, const LossWeights& w, double tau,
                      std::optional<double> gamma_override) {
  w.validate();
  const LogitBundle logits = compute_logits(f, w.theta);
  ag::Var ce = ce_loss(logits.l_a, labels, tau);
  ag::Var sim = sim_loss(f.f_v, ag::gather_rows(f.f_t, labels));
  ag::Var wa = waloss(logits.l_a, logits.l_w, w.wa_distance);
  LossReport r;
  if (gamma_override) {
    r.gamma = *gamma_override;
  } else {
    const GammaResult g = gamma(logits.l_r.value(), w.gamma_mode, w.eps0, w.gamma_fixed, w.std_scope);
    r.gamma = g.value;
    r.warning = g.warning;
  }
  r.ce = ce.value()(0, 0);
  r.sim = sim.value()(0, 0);
  r.wa = wa.value()(0, 0);
  r.total_var = ag::add(ag::add(ce, ag::scale(sim, w.lambda_sim)), ag::scale(wa, r.gamma));
  r.total = r.total_var.value()(0, 0);
  if (!std::isfinite(r.total)) throw NumericError("total loss is not finite");
  return r;
}

}  // namespace anprompt
