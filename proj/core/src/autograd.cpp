#include "anprompt/autograd.hpp"

#include <cmath>
#include <utility>

#include "anprompt/errors.hpp"

namespace anprompt::ag {

const Mat& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Mat value) { return push(std::move(value), false, nullptr); }

Var Tape::constant_ref(const Mat& value) {
  Node& n = nodes_.emplace_back();
  n.external = &value;
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::leaf(Mat value) { return push(std::move(value), true, nullptr); }

Var Tape::param(Parameter& p) {
  if (!p.trainable) return constant_ref(p.value);
  Node& n = nodes_.emplace_back();
  n.external = &p.value;
  n.requires_grad = true;
  n.param = &p;
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::push(Mat value, bool requires_grad, Backward backward) {
  Node& n = nodes_.emplace_back();
  n.owned = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Mat& Tape::value(int id) const {
  const Node& n = nodes_[static_cast<size_t>(id)];
  return n.external ? *n.external : n.owned;
}

void Tape::accumulate(int id, const Mat& g) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

Mat Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<size_t>(v.id())];
  if (n.grad.size() == 0) return Mat::Zero(value(v.id()).rows(), value(v.id()).cols());
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw InputError("backward: root belongs to another tape");
  const Mat& rv = value(root.id());
  if (rv.rows() != 1 || rv.cols() != 1) throw DimensionError("backward: root must be 1x1");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!requires_grad(root.id())) return;
  nodes_[static_cast<size_t>(root.id())].grad = Mat::Ones(1, 1);
  for (int i = root.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    // Callbacks only touch nodes with smaller ids, so n.grad stays put.
    if (n.backward) n.backward(*this, n.grad);
    if (n.param != nullptr) {
      if (n.param->grad.rows() != n.grad.rows() || n.param->grad.cols() != n.grad.cols()) {
        n.param->zero_grad();
      }
      n.param->grad += n.grad;
    }
  }
}

namespace {

Tape& same_tape(Var a, Var b, const char* op) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw InputError(std::string(op) + ": operands belong to different tapes");
  }
  return *a.tape();
}

void require_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
  }
}

bool any_grad(Var a) { return a.requires_grad(); }
bool any_grad(Var a, Var b) { return a.requires_grad() || b.requires_grad(); }

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b, "matmul");
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions differ");
  const int ia = a.id(), ib = b.id();
  Mat out = a.value() * b.value();
  return t.push(std::move(out), any_grad(a, b), [ia, ib](Tape& tp, const Mat& g) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
    if (tp.requires_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = same_tape(a, b, "matmul_nt");
  if (a.cols() != b.cols()) throw DimensionError("matmul_nt: column counts differ");
  const int ia = a.id(), ib = b.id();
  Mat out = a.value() * b.value().transpose();
  return t.push(std::move(out), any_grad(a, b), [ia, ib](Tape& tp, const Mat& g) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib));
    if (tp.requires_grad(ib)) tp.accumulate(ib, g.transpose() * tp.value(ia));
  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() + b.value(), any_grad(a, b), [ia, ib](Tape& tp, const Mat& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() - b.value(), any_grad(a, b), [ia, ib](Tape& tp, const Mat& g) {
    tp.accumulate(ia, g);
    if (tp.requires_grad(ib)) tp.accumulate(ib, -g);
  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b, "mul");
  require_same_shape(a.value(), b.value(), "mul");
  const int ia = a.id(), ib = b.id();
  Mat out = a.value().cwiseProduct(b.value());
  return t.push(std::move(out), any_grad(a, b), [ia, ib](Tape& tp, const Mat& g) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, g.cwiseProduct(tp.value(ib)));
    if (tp.requires_grad(ib)) tp.accumulate(ib, g.cwiseProduct(tp.value(ia)));
  });
}

Var scale(Var a, double s) {
  const int ia = a.id();
  return a.tape()->push(a.value() * s, any_grad(a),
                        [ia, s](Tape& tp, const Mat& g) { tp.accumulate(ia, g * s); });
}

Var add_scalar(Var a, double s) {
  const int ia = a.id();
  Mat out = a.value().array() + s;
  return a.tape()->push(std::move(out), any_grad(a),
                        [ia](Tape& tp, const Mat& g) { tp.accumulate(ia, g); });
}

Var add_row(Var a, Var row) {
  Tape& t = same_tape(a, row, "add_row");
  if (row.rows() != 1 || row.cols() != a.cols()) throw DimensionError("add_row: bias must be 1xC");
  const int ia = a.id(), ir = row.id();
  Mat out = a.value().rowwise() + row.value().row(0);
  return t.push(std::move(out), any_grad(a, row), [ia, ir](Tape& tp, const Mat& g) {
    tp.accumulate(ia, g);
    if (tp.requires_grad(ir)) tp.accumulate(ir, g.colwise().sum());
  });
}

Var affine(Var x, Var w, Var b) { return add_row(matmul(x, w), b); }

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw DimensionError("slice_rows: out of range");
  const int ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  Mat out = a.value().middleRows(start, count);
  return a.tape()->push(std::move(out), any_grad(a), [ia, start, count, rows, cols](Tape& tp, const Mat& g) {
    Mat full = Mat::Zero(rows, cols);
    full.middleRows(start, count) = g;
    tp.accumulate(ia, full);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw InputError("concat_rows: no parts");
  Tape* t = parts.front().tape();
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  bool rg = false;
  for (const Var& p : parts) {
    if (p.tape() != t) throw InputError("concat_rows: parts belong to different tapes");
    if (p.cols() != cols) throw DimensionError("concat_rows: column counts differ");
    rows += p.rows();
    rg = rg || p.requires_grad();
  }
  Mat out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> layout;
  layout.reserve(parts.size());
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    layout.emplace_back(p.id(), r);
    r += p.rows();
  }
  return t->push(std::move(out), rg, [layout](Tape& tp, const Mat& g) {
    for (const auto& [id, start] : layout) {
      if (tp.requires_grad(id)) tp.accumulate(id, g.middleRows(start, tp.value(id).rows()));
    }
  });
}

Var gather_rows(Var a, std::span<const int> index) {
  Mat out(static_cast<Eigen::Index>(index.size()), a.cols());
  for (size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= a.rows()) throw InputError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(index[i]);
  }
  const int ia = a.id();
  std::vector<int> idx(index.begin(), index.end());
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return a.tape()->push(std::move(out), any_grad(a), [ia, idx, rows, cols](Tape& tp, const Mat& g) {
    Mat full = Mat::Zero(rows, cols);
    for (size_t i = 0; i < idx.size(); ++i) full.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    tp.accumulate(ia, full);
  });
}

Var pick(Var a, std::span<const int> index) {
  if (static_cast<Eigen::Index>(index.size()) != a.rows()) throw DimensionError("pick: one index per row required");
  Mat out(a.rows(), 1);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const int j = index[static_cast<size_t>(i)];
    if (j < 0 || j >= a.cols()) throw InputError("pick: index out of range");
    out(i, 0) = a.value()(i, j);
  }
  const int ia = a.id();
  std::vector<int> idx(index.begin(), index.end());
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return a.tape()->push(std::move(out), any_grad(a), [ia, idx, rows, cols](Tape& tp, const Mat& g) {
    Mat full = Mat::Zero(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) full(i, idx[static_cast<size_t>(i)]) = g(i, 0);
    tp.accumulate(ia, full);
  });
}

Var gelu(Var x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  const Mat& v = x.value();
  Mat out(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double z = v.data()[i];
    out.data()[i] = 0.5 * z * (1.0 + std::tanh(k * (z + c * z * z * z)));
  }
  const int ix = x.id();
  return x.tape()->push(std::move(out), any_grad(x), [ix](Tape& tp, const Mat& g) {
    const Mat& v = tp.value(ix);
    Mat d(v.rows(), v.cols());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double z = v.data()[i];
      const double u = k * (z + c * z * z * z);
      const double th = std::tanh(u);
      const double du = k * (1.0 + 3.0 * c * z * z);
      d.data()[i] = g.data()[i] * (0.5 * (1.0 + th) + 0.5 * z * (1.0 - th * th) * du);
    }
    tp.accumulate(ix, d);
  });
}

Var abs(Var x) {
  const int ix = x.id();
  return x.tape()->push(x.value().cwiseAbs(), any_grad(x), [ix](Tape& tp, const Mat& g) {
    const Mat& v = tp.value(ix);
    Mat d = g.cwiseProduct(v.unaryExpr([](double z) { return z > 0.0 ? 1.0 : (z < 0.0 ? -1.0 : 0.0); }));
    tp.accumulate(ix, d);
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = same_tape(x, gain, "layer_norm");
  const Eigen::Index n = x.rows(), c = x.cols();
  if (gain.rows() != 1 || gain.cols() != c || bias.rows() != 1 || bias.cols() != c) {
    throw DimensionError("layer_norm: gain/bias must be 1xC");
  }
  const Mat& v = x.value();
  Mat xhat(n, c);
  Vec inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = v.row(i).mean();
    const double var = (v.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (v.row(i).array() - mu) * inv_std(i);
  }
  Mat out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
  const int ix = x.id(), ig = gain.id(), ib = bias.id();
  const bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  return t.push(std::move(out), rg, [ix, ig, ib, xhat, inv_std](Tape& tp, const Mat& g) {
    if (tp.requires_grad(ig)) tp.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
    if (tp.requires_grad(ib)) tp.accumulate(ib, g.colwise().sum());
    if (tp.requires_grad(ix)) {
      const Mat dxhat = g.array().rowwise() * tp.value(ig).row(0).array();
      const double inv_c = 1.0 / static_cast<double>(dxhat.cols());
      Mat dx(dxhat.rows(), dxhat.cols());
      for (Eigen::Index i = 0; i < dxhat.rows(); ++i) {
        const double m1 = dxhat.row(i).sum() * inv_c;
        const double m2 = dxhat.row(i).dot(xhat.row(i)) * inv_c;
        dx.row(i) = (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2) * inv_std(i);
      }
      tp.accumulate(ix, dx);
    }
  });
}

namespace {

Mat softmax_value(const Mat& v) {
  Mat out(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const double m = v.row(i).maxCoeff();
    out.row(i) = (v.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

}  // namespace

Var softmax_rows(Var x) {
  if (!x.value().allFinite()) throw NumericError("softmax_rows: non-finite input");
  Mat p = softmax_value(x.value());
  const int ix = x.id();
  return x.tape()->push(p, x.requires_grad(), [ix, p](Tape& tp, const Mat& g) {
    Mat dx(p.rows(), p.cols());
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      const double s = g.row(i).dot(p.row(i));
      dx.row(i) = p.row(i).array() * (g.row(i).array() - s);
    }
    tp.accumulate(ix, dx);
  });
}

Var log_softmax_rows(Var x) {
  if (!x.value().allFinite()) throw NumericError("log_softmax_rows: non-finite input");
  const Mat& v = x.value();
  Mat out(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const double m = v.row(i).maxCoeff();
    const double lse = m + std::log((v.row(i).array() - m).exp().sum());
    out.row(i) = v.row(i).array() - lse;
  }
  const int ix = x.id();
  return x.tape()->push(out, x.requires_grad(), [ix, out](Tape& tp, const Mat& g) {
    Mat dx(out.rows(), out.cols());
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const double s = g.row(i).sum();
      dx.row(i) = g.row(i).array() - out.row(i).array().exp() * s;
    }
    tp.accumulate(ix, dx);
  });
}

Var l2_normalize_rows(Var x) {
  const Mat& v = x.value();
  Vec norms(v.rows());
  Mat out(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    norms(i) = v.row(i).norm();
    if (!(norms(i) > 0.0) || !std::isfinite(norms(i))) {
      throw NumericError("l2_normalize_rows: row " + std::to_string(i) + " has zero or non-finite norm");
    }
    out.row(i) = v.row(i) / norms(i);
  }
  const int ix = x.id();
  return x.tape()->push(out, x.requires_grad(), [ix, out, norms](Tape& tp, const Mat& g) {
    Mat dx(out.rows(), out.cols());
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const double d = g.row(i).dot(out.row(i));
      dx.row(i) = (g.row(i) - out.row(i) * d) / norms(i);
    }
    tp.accumulate(ix, dx);
  });
}

Var attention(Var qkv, int num_heads) {
  const Eigen::Index n = qkv.rows();
  if (num_heads <= 0 || qkv.cols() % (3 * num_heads) != 0) {
    throw DimensionError("attention: packed width must be 3 * heads * head_dim");
  }
  const Eigen::Index c = qkv.cols() / 3;
  const Eigen::Index hd = c / num_heads;
  const double s = 1.0 / std::sqrt(static_cast<double>(hd));
  const Mat& v = qkv.value();
  std::vector<Mat> probs(static_cast<size_t>(num_heads));
  Mat out(n, c);
  for (int h = 0; h < num_heads; ++h) {
    const auto q = v.middleCols(h * hd, hd);
    const auto k = v.middleCols(c + h * hd, hd);
    const auto val = v.middleCols(2 * c + h * hd, hd);
    Mat scores = (q * k.transpose()) * s;
    Mat p = softmax_value(scores);
    out.middleCols(h * hd, hd) = p * val;
    probs[static_cast<size_t>(h)] = std::move(p);
  }
  const int iq = qkv.id();
  return qkv.tape()->push(std::move(out), qkv.requires_grad(),
                          [iq, probs = std::move(probs), num_heads, c, hd, s](Tape& tp, const Mat& g) {
    const Mat& v = tp.value(iq);
    Mat dqkv = Mat::Zero(v.rows(), v.cols());
    for (int h = 0; h < num_heads; ++h) {
      const Mat& p = probs[static_cast<size_t>(h)];
      const auto q = v.middleCols(h * hd, hd);
      const auto k = v.middleCols(c + h * hd, hd);
      const auto val = v.middleCols(2 * c + h * hd, hd);
      const auto go = g.middleCols(h * hd, hd);
      dqkv.middleCols(2 * c + h * hd, hd) = p.transpose() * go;
      const Mat dp = go * val.transpose();
      Mat ds(p.rows(), p.cols());
      for (Eigen::Index i = 0; i < p.rows(); ++i) {
        const double dot = dp.row(i).dot(p.row(i));
        ds.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
      }
      ds *= s;
      dqkv.middleCols(h * hd, hd) = ds * k;
      dqkv.middleCols(c + h * hd, hd) = ds.transpose() * q;
    }
    tp.accumulate(iq, dqkv);
  });
}

Var sum(Var a) {
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  const int ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape()->push(std::move(out), any_grad(a), [ia, r, c](Tape& tp, const Mat& g) {
    tp.accumulate(ia, Mat::Constant(r, c, g(0, 0)));
  });
}

Var mean(Var a) {
  if (a.value().size() == 0) throw InputError("mean: empty input");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var row_sum(Var a) {
  Mat out = a.value().rowwise().sum();
  const int ia = a.id();
  const Eigen::Index c = a.cols();
  return a.tape()->push(std::move(out), any_grad(a), [ia, c](Tape& tp, const Mat& g) {
    Mat full = g.replicate(1, c);
    tp.accumulate(ia, full);
  });
}

Var mean_rows(Var a) {
  if (a.rows() == 0) throw InputError("mean_rows: no rows");
  Mat out = a.value().colwise().mean();
  const int ia = a.id();
  const Eigen::Index r = a.rows();
  return a.tape()->push(std::move(out), any_grad(a), [ia, r](Tape& tp, const Mat& g) {
    Mat full = g.replicate(r, 1) / static_cast<double>(r);
    tp.accumulate(ia, full);
  });
}

}  // namespace ag
