#include <doctest.h>

#include "anprompt/errors.hpp"
#include "anprompt/metrics.hpp"

using namespace anprompt;

TEST_CASE("harmonic mean") {
  // 2ab / (a + b) written out; the table prints 81.70 for the first pair but
  // the formula on the printed inputs gives 81.7071.
  CHECK(harmonic_mean(86.15, 77.70) == doctest::Approx(2.0 * 86.15 * 77.70 / (86.15 + 77.70)).epsilon(1e-15));
  CHECK(std::abs(harmonic_mean(86.15, 77.70) - 81.7071) < 1e-4);
  CHECK(std::abs(harmonic_mean(82.69, 63.22) - 71.66) < 0.005);
  CHECK(harmonic_mean(50.0, 50.0) == 50.0);
  CHECK(harmonic_mean(100.0, 100.0) == 100.0);
  CHECK(harmonic_mean(40.0, 60.0) == doctest::Approx(48.0));
  CHECK_THROWS_AS((void)harmonic_mean(0.0, 50.0), DomainError);
  CHECK_THROWS_AS((void)harmonic_mean(50.0, 100.5), DomainError);
}

TEST_CASE("accuracy and argmax") {
  const std::vector<int> pred{0, 1, 2, 2}, lab{0, 1, 1, 2};
  CHECK(accuracy_percent(pred, lab) == 75.0);
  CHECK_THROWS_AS((void)accuracy_percent(std::vector<int>{}, std::vector<int>{}), InputError);
  CHECK_THROWS_AS((void)accuracy_percent(pred, std::vector<int>{0}), InputError);
  Mat s(2, 3);
  s << 1, 3, 3, 0, 0, 0;
  CHECK(argmax_rows(s) == std::vector<int>{1, 0});
}

TEST_CASE("noise metrics") {
  Mat clean(3, 2);
  clean << 1, 0, 0, 1, 0.6, 0.8;
  CHECK(text_shift(clean, clean) == 0.0);
  Mat moved = clean;
  moved.row(0) << 0, 1;
  CHECK(text_shift(clean, moved) == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS_AS((void)text_shift(clean, Mat::Zero(2, 2)), DimensionError);

  Mat a(4, 2), b(4, 2);
  a << 1, 0, 0, 1, 1, 0, 0, 1;
  b << 1, 0, 1, 0, 0, 1, 0, 1;
  CHECK(logit_preservation_rate(a, a) == 1.0);
  CHECK(logit_preservation_rate(a, b) == 0.5);
  const std::vector<int> y{0, 1, 0, 1};
  CHECK(accuracy_shift(a, a, y) == 0.0);
  CHECK(accuracy_shift(a, b, y) == 50.0);
}
