#include <doctest.h>

#include "anprompt/autograd.hpp"
#include "anprompt/errors.hpp"
#include "helpers.hpp"

using namespace anprompt;
using testutil::numeric_grad;
using testutil::random_mat;
using testutil::rel_err;

namespace {

using UnaryOp = std::function<ag::Var(ag::Tape&, ag::Var)>;

// sum(op(x) * W) for a fixed random W, so every output entry matters.
void check_unary(const std::string& name, const UnaryOp& op, Mat x, std::mt19937_64& rng) {
  Mat w;
  {
    ag::Tape t;
    const ag::Var probe = op(t, t.constant(x));
    w = random_mat(rng, probe.rows(), probe.cols());
  }
  auto f = [&](const Mat& v) {
    ag::Tape t;
    return ag::sum(ag::mul(op(t, t.constant(v)), t.constant(w))).value()(0, 0);
  };
  ag::Tape t;
  ag::Var leaf = t.leaf(x);
  t.backward(ag::sum(ag::mul(op(t, leaf), t.constant(w))));
  CAPTURE(name);
  CHECK(rel_err(t.grad(leaf), numeric_grad(f, x)) < 1e-6);
}

}  // namespace

TEST_CASE("unary ops match central differences") {
  std::mt19937_64 rng(11);
  const Mat x = random_mat(rng, 3, 4);
  const Mat other = random_mat(rng, 3, 4);
  const Mat sq = random_mat(rng, 4, 5);
  const Mat row = random_mat(rng, 1, 4);
  const Mat bias4 = random_mat(rng, 1, 4);
  const Mat bias5 = random_mat(rng, 1, 5);

  check_unary("matmul", [&](ag::Tape& t, ag::Var v) { return ag::matmul(v, t.constant(sq)); }, x, rng);
  check_unary("matmul_nt", [&](ag::Tape& t, ag::Var v) { return ag::matmul_nt(v, t.constant(other)); }, x, rng);
  check_unary("matmul_nt self", [](ag::Tape&, ag::Var v) { return ag::matmul_nt(v, v); }, x, rng);
  check_unary("add/sub/mul", [&](ag::Tape& t, ag::Var v) {
    return ag::mul(ag::sub(ag::add(v, t.constant(other)), v), v);
  }, x, rng);
  check_unary("scale/add_scalar", [](ag::Tape&, ag::Var v) { return ag::add_scalar(ag::scale(v, -2.5), 0.3); }, x, rng);
  check_unary("add_row", [&](ag::Tape& t, ag::Var v) { return ag::add_row(t.constant(other), ag::slice_rows(v, 1, 1)); }, x, rng);
  check_unary("affine", [&](ag::Tape& t, ag::Var v) { return ag::affine(v, t.constant(sq), t.constant(bias5)); }, x, rng);
  check_unary("slice/concat", [](ag::Tape&, ag::Var v) {
    std::vector<ag::Var> parts{ag::slice_rows(v, 2, 1), ag::slice_rows(v, 0, 2), v};
    return ag::concat_rows(parts);
  }, x, rng);
  check_unary("gather", [](ag::Tape&, ag::Var v) {
    const std::vector<int> idx{2, 0, 2, 1};
    return ag::gather_rows(v, idx);
  }, x, rng);
  check_unary("pick", [](ag::Tape&, ag::Var v) {
    const std::vector<int> idx{3, 0, 1};
    return ag::pick(v, idx);
  }, x, rng);
  check_unary("gelu", [](ag::Tape&, ag::Var v) { return ag::gelu(v); }, x, rng);
  check_unary("abs", [](ag::Tape&, ag::Var v) { return ag::abs(v); }, x, rng);
  check_unary("layer_norm", [&](ag::Tape& t, ag::Var v) {
    return ag::layer_norm(v, t.constant(row), t.constant(bias4));
  }, x, rng);
  check_unary("layer_norm gain", [&](ag::Tape& t, ag::Var v) {
    return ag::layer_norm(t.constant(other), ag::slice_rows(v, 0, 1), ag::slice_rows(v, 1, 1));
  }, x, rng);
  check_unary("softmax", [](ag::Tape&, ag::Var v) { return ag::softmax_rows(v); }, x, rng);
  check_unary("log_softmax", [](ag::Tape&, ag::Var v) { return ag::log_softmax_rows(v); }, x, rng);
  check_unary("l2_normalize", [](ag::Tape&, ag::Var v) { return ag::l2_normalize_rows(v); }, x, rng);
  check_unary("mean", [](ag::Tape&, ag::Var v) { return ag::scale(ag::mean(v), 3.0); }, x, rng);
  check_unary("mean_rows", [](ag::Tape&, ag::Var v) { return ag::mean_rows(v); }, x, rng);
  check_unary("row_sum", [](ag::Tape&, ag::Var v) { return ag::matmul_nt(ag::row_sum(v), ag::row_sum(v)); }, x, rng);
}

TEST_CASE("attention gradient matches central differences") {
  std::mt19937_64 rng(12);
  const Mat qkv = random_mat(rng, 5, 12);
  check_unary("attention", [](ag::Tape&, ag::Var v) { return ag::attention(v, 2); }, qkv, rng);
}

TEST_CASE("attention rows are convex combinations of values") {
  // With identical keys every query attends uniformly, so each output row is the mean of V.
  Mat qkv = Mat::Zero(3, 6);
  qkv.block(0, 4, 3, 2) << 1, 2, 3, 4, 5, 6;
  ag::Tape t;
  const Mat out = ag::attention(t.constant(qkv), 1).value();
  for (int i = 0; i < 3; ++i) {
    CHECK(out(i, 0) == doctest::Approx(3.0));
    CHECK(out(i, 1) == doctest::Approx(4.0));
  }
}

TEST_CASE("trainable parameters accumulate, frozen ones do not") {
  Parameter trained("w", Mat::Constant(2, 2, 1.0), true);
  Parameter frozen("f", Mat::Constant(2, 2, 2.0), false);
  trained.zero_grad();
  ag::Tape t;
  ag::Var y = ag::sum(ag::mul(t.param(trained), t.param(frozen)));
  t.backward(y);
  CHECK(trained.grad.isApprox(Mat::Constant(2, 2, 2.0)));
  CHECK(frozen.grad.size() == 0);
}

TEST_CASE("l2 normalisation of a zero row is a numeric error") {
  ag::Tape t;
  CHECK_THROWS_AS((void)ag::l2_normalize_rows(t.constant(Mat::Zero(1, 3))), NumericError);
}

TEST_CASE("shape mismatches raise dimension errors") {
  ag::Tape t;
  auto a = t.constant(Mat::Zero(2, 3));
  auto b = t.constant(Mat::Zero(3, 2));
  CHECK_THROWS_AS((void)ag::add(a, b), DimensionError);
  CHECK_THROWS_AS((void)ag::matmul(a, a), DimensionError);
}
