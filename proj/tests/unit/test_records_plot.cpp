#include <doctest.h>

#include <fstream>
#include <set>

#include "anprompt/dataset.hpp"
#include "anprompt/errors.hpp"
#include "anprompt/plot.hpp"
#include "anprompt/records.hpp"
#include "helpers.hpp"

using namespace anprompt;
namespace fs = std::filesystem;

namespace {

// Number of runs of non-white, non-black pixels along one row.
int coloured_runs(const Image& img, int y) {
  int runs = 0;
  bool inside = false;
  for (int x = 0; x < img.width; ++x) {
    const double r = img.at(y, x, 0), g = img.at(y, x, 1), b = img.at(y, x, 2);
    const bool colour = !(r == g && g == b);
    if (colour && !inside) ++runs;
    inside = colour;
  }
  return runs;
}

}  // namespace

TEST_CASE("records round trip through JSON lines") {
  const auto dir = testutil::temp_dir("records");
  const fs::path f = dir / "r.jsonl";
  StepRecord s{3, 1, 0.5, 0.25, 0.125, 0.7, 1.0 / 3.0, 0.001};
  EvalReport e{7, 80.0, 70.0, 74.66666666666667, 32, 32};
  NoiseMetricReport n{"drop", 0.2, 0.5, 18.75, 64};
  AblationResult a{"components", "full", 1, 2, 3, {e}};
  append_line(f, to_json_line(s));
  append_line(f, to_json_line(e));
  append_line(f, to_json_line(n));
  append_line(f, to_json_line(a));
  const auto back = read_records(f);
  REQUIRE(back.steps.size() == 1);
  CHECK(back.steps[0].total == s.total);
  CHECK(back.steps[0].gamma == s.gamma);
  CHECK(back.evals.at(0).hm == e.hm);
  CHECK(back.noise.at(0).as_ == 18.75);
  CHECK(back.ablations.at(0).row == "full");
  CHECK(back.ablations.at(0).per_seed.size() == 1);

  std::ofstream(f, std::ios::app) << "{\"kind\": \"step\", \"ce\": \n";
  try {
    (void)read_records(f);
    FAIL("expected a parse error");
  } catch (const ParseError& err) {
    CHECK(std::string(err.what()).find(":5:") != std::string::npos);
  }
  CHECK_THROWS_AS((void)read_records(dir / "none.jsonl"), FileError);
}

TEST_CASE("plots") {
  const auto dir = testutil::temp_dir("plots");
  CHECK_THROWS_AS((void)render_plots({}, dir / "out"), InputError);

  const fs::path log = dir / "train_log.jsonl";
  for (int i = 0; i < 20; ++i) append_line(log, to_json_line(StepRecord{i, i / 5, 2.0 / (i + 1), 0.5, 0.01, 1.0, 2.5 / (i + 1), 0.001}));
  const auto written = render_plots({log}, dir / "out");
  CHECK(written.size() == 1);
  CHECK(fs::exists(dir / "out" / "loss_curve.ppm"));

  const fs::path abl = dir / "ablation.jsonl";
  const std::vector<std::string> rows{"baseline", "a", "b", "c", "d", "e", "f", "full"};
  for (size_t i = 0; i < rows.size(); ++i) {
    append_line(abl, to_json_line(AblationResult{"components", rows[i], 80, 70, 74.0 + static_cast<double>(i) * 0.3, {}}));
  }
  const std::string before = [&] {
    std::ifstream in(abl);
    return std::string(std::istreambuf_iterator<char>(in), {});
  }();
  const auto charts = render_plots({abl}, dir / "abl");
  REQUIRE(charts.size() == 1);
  const Image img = read_ppm(charts[0]);
  CHECK(coloured_runs(img, img.height - 45) == 8);
  std::ifstream in(abl);
  CHECK(std::string(std::istreambuf_iterator<char>(in), {}) == before);

  const fs::path bad = dir / "bad.jsonl";
  std::ofstream(bad) << to_json_line(StepRecord{}) << "\nnot json\n";
  CHECK_THROWS_AS((void)render_plots({bad}, dir / "bad"), ParseError);
}
