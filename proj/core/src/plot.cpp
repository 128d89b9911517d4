#include "anprompt/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>

#include "anprompt/dataset.hpp"
#include "anprompt/errors.hpp"

namespace anprompt {

namespace fs = std::filesystem;

namespace {

// 3x5 glyphs, five rows of three bits, most significant bit on the left.
const std::map<char, std::array<unsigned char, 5>>& font() {
  static const std::map<char, std::array<unsigned char, 5>> f = {
      {'0', {7, 5, 5, 5, 7}}, {'1', {2, 6, 2, 2, 7}}, {'2', {7, 1, 7, 4, 7}}, {'3', {7, 1, 7, 1, 7}},
      {'4', {5, 5, 7, 1, 1}}, {'5', {7, 4, 7, 1, 7}}, {'6', {7, 4, 7, 5, 7}}, {'7', {7, 1, 1, 1, 1}},
      {'8', {7, 5, 7, 5, 7}}, {'9', {7, 5, 7, 1, 7}}, {'A', {2, 5, 7, 5, 5}}, {'B', {6, 5, 6, 5, 6}},
      {'C', {7, 4, 4, 4, 7}}, {'D', {6, 5, 5, 5, 6}}, {'E', {7, 4, 6, 4, 7}}, {'F', {7, 4, 6, 4, 4}},
      {'G', {7, 4, 5, 5, 7}}, {'H', {5, 5, 7, 5, 5}}, {'I', {7, 2, 2, 2, 7}}, {'J', {1, 1, 1, 5, 7}},
      {'K', {5, 5, 6, 5, 5}}, {'L', {4, 4, 4, 4, 7}}, {'M', {5, 7, 7, 5, 5}}, {'N', {6, 5, 5, 5, 5}},
      {'O', {7, 5, 5, 5, 7}}, {'P', {7, 5, 7, 4, 4}}, {'Q', {7, 5, 5, 7, 1}}, {'R', {6, 5, 6, 5, 5}},
      {'S', {7, 4, 7, 1, 7}}, {'T', {7, 2, 2, 2, 2}}, {'U', {5, 5, 5, 5, 7}}, {'V', {5, 5, 5, 5, 2}},
      {'W', {5, 5, 7, 7, 5}}, {'X', {5, 5, 2, 5, 5}}, {'Y', {5, 5, 2, 2, 2}}, {'Z', {7, 1, 2, 4, 7}},
      {'.', {0, 0, 0, 0, 2}}, {'-', {0, 0, 7, 0, 0}}, {'+', {0, 2, 7, 2, 0}}, {'=', {0, 7, 0, 7, 0}},
      {':', {0, 2, 0, 2, 0}}, {'_', {0, 0, 0, 0, 7}}, {'/', {1, 1, 2, 4, 4}}, {'(', {1, 2, 2, 2, 1}},
      {')', {4, 2, 2, 2, 4}}, {',', {0, 0, 0, 2, 4}}, {'%', {5, 1, 2, 4, 5}},
  };
  return f;
}

constexpr double kBlack[3] = {0.0, 0.0, 0.0};
constexpr double kGrey[3] = {0.8, 0.8, 0.8};
constexpr double kPalette[4][3] = {{0.12, 0.40, 0.75}, {0.85, 0.35, 0.10}, {0.20, 0.65, 0.25}, {0.60, 0.25, 0.65}};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), std::abs(v) >= 100 ? "%.0f" : (std::abs(v) >= 1 ? "%.2f" : "%.3f"), v);
  return buf;
}

struct Frame {
  int x0, y0, x1, y1;
  double lo, hi;
  [[nodiscard]] int y(double v) const {
    const double t = hi > lo ? (v - lo) / (hi - lo) : 0.5;
    return y1 - static_cast<int>(std::lround(t * (y1 - y0)));
  }
};

void axes(Canvas& c, const Frame& f) {
  c.line(f.x0, f.y0, f.x0, f.y1, kBlack);
  c.line(f.x0, f.y1, f.x1, f.y1, kBlack);
  c.text(f.x0 - 32, f.y0, fmt(f.hi), kBlack);
  c.text(f.x0 - 32, f.y1 - 5, fmt(f.lo), kBlack);
}

// Bars inside [x0, x1] of an existing canvas.
void draw_bars(Canvas& c, const std::string& title, const std::vector<Bar>& bars, int x0, int x1) {
  double hi = 0.0, lo = 0.0;
  for (const auto& b : bars) {
    hi = std::max(hi, b.value);
    lo = std::min(lo, b.value);
  }
  if (hi == lo) hi = lo + 1.0;
  const Frame f{x0 + 36, 24, x1 - 6, c.height() - 40, lo, hi};
  c.text(x0 + 34, 6, title, kBlack, 2);
  axes(c, f);
  const int n = static_cast<int>(bars.size());
  const int slot = std::max(1, (f.x1 - f.x0 - 4) / n);
  for (int i = 0; i < n; ++i) {
    const int bx = f.x0 + 4 + i * slot;
    const int zero = f.y(0.0);
    const int top = f.y(bars[static_cast<size_t>(i)].value);
    c.fill_rect(bx, std::min(top, zero), bx + std::max(1, slot - 4), std::max(top, zero), kPalette[i % 4]);
    c.text(bx, std::min(top, zero) - 7, fmt(bars[static_cast<size_t>(i)].value), kBlack);
    // Labels alternate between two rows so neighbours do not collide.
    c.text(bx, f.y1 + 4 + (i % 2) * 8, bars[static_cast<size_t>(i)].label, kBlack);
  }
}

}  // namespace

Canvas::Canvas(int width, int height) {
  if (width <= 0 || height <= 0) throw InputError("canvas size must be positive");
  img_.width = width;
  img_.height = height;
  img_.channels = 3;
  img_.pixels.assign(static_cast<size_t>(width) * static_cast<size_t>(height) * 3, 1.0);
}

void Canvas::put(int x, int y, const double (&rgb)[3]) {
  if (x < 0 || y < 0 || x >= img_.width || y >= img_.height) return;
  const size_t i = (static_cast<size_t>(y) * static_cast<size_t>(img_.width) + static_cast<size_t>(x)) * 3;
  for (int k = 0; k < 3; ++k) img_.pixels[i + static_cast<size_t>(k)] = rgb[k];
}

void Canvas::fill_rect(int x0, int y0, int x1, int y1, const double (&rgb)[3]) {
  for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
    for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) put(x, y, rgb);
}

void Canvas::line(int x0, int y0, int x1, int y1, const double (&rgb)[3]) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    put(x0, y0, rgb);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void Canvas::text(int x, int y, const std::string& s, const double (&rgb)[3], int scale) {
  for (char ch : s) {
    const auto it = font().find(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
    if (it != font().end()) {
      for (int r = 0; r < 5; ++r)
        for (int col = 0; col < 3; ++col)
          if (it->second[static_cast<size_t>(r)] & (4 >> col))
            fill_rect(x + col * scale, y + r * scale, x + col * scale + scale - 1, y + r * scale + scale - 1, rgb);
    }
    x += 4 * scale;
  }
}

void Canvas::save(const fs::path& path) const { write_ppm(path, img_); }

Canvas plot_loss_curve(const std::vector<StepRecord>& steps) {
  if (steps.empty()) throw InputError("loss curve needs at least one step record");
  Canvas c(640, 360);
  double lo = 0.0, hi = 0.0;
  for (const auto& s : steps) {
    for (double v : {s.total, s.ce, s.sim, s.wa}) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi == lo) hi = lo + 1.0;
  const Frame f{40, 24, 620, 320, lo, hi};
  axes(c, f);
  c.text(40, 6, "loss", kBlack, 2);
  const size_t n = steps.size();
  auto px = [&](size_t i) { return f.x0 + static_cast<int>(n > 1 ? (i * static_cast<size_t>(f.x1 - f.x0)) / (n - 1) : 0); };
  const char* names[4] = {"total", "ce", "sim", "wa"};
  for (int k = 0; k < 4; ++k) {
    auto val = [&](const StepRecord& s) { return k == 0 ? s.total : k == 1 ? s.ce : k == 2 ? s.sim : s.wa; };
    for (size_t i = 1; i < n; ++i) c.line(px(i - 1), f.y(val(steps[i - 1])), px(i), f.y(val(steps[i])), kPalette[k]);
    c.fill_rect(420 + k * 50, 8, 426 + k * 50, 14, kPalette[k]);
    c.text(430 + k * 50, 9, names[k], kBlack);
  }
  c.text(f.x0, f.y1 + 6, "step 0", kBlack);
  c.text(f.x1 - 40, f.y1 + 6, "step " + std::to_string(steps.back().step), kBlack);
  return c;
}

Canvas plot_bars(const std::string& title, const std::vector<Bar>& bars) {
  if (bars.empty()) throw InputError("bar chart needs at least one bar");
  Canvas c(std::max(320, 60 + 80 * static_cast<int>(bars.size())), 300);
  draw_bars(c, title, bars, 0, c.width());
  return c;
}

Canvas plot_noise_panels(const std::vector<NoiseMetricReport>& reports) {
  if (reports.empty()) throw InputError("noise chart needs at least one report");
  const int panel = std::max(240, 40 + 70 * static_cast<int>(reports.size()));
  Canvas c(panel * 3, 300);
  const char* titles[3] = {"ts", "lpr", "as"};
  for (int p = 0; p < 3; ++p) {
    std::vector<Bar> bars;
    for (const auto& r : reports) bars.push_back({r.perturbation, p == 0 ? r.ts : p == 1 ? r.lpr : r.as_});
    draw_bars(c, titles[p], bars, p * panel, (p + 1) * panel);
    if (p > 0) c.line(p * panel, 0, p * panel, c.height() - 1, kGrey);
  }
  return c;
}

std::vector<fs::path> render_plots(const std::vector<fs::path>& inputs, const fs::path& out_dir) {
  if (inputs.empty()) throw InputError("plot needs at least one input file");
  std::vector<StepRecord> steps;
  std::vector<NoiseMetricReport> noise;
  std::vector<EvalReport> evals;
  std::map<std::string, std::vector<Bar>> ablations;
  for (const auto& in : inputs) {
    RecordFile rf = read_records(in);
    steps.insert(steps.end(), rf.steps.begin(), rf.steps.end());
    noise.insert(noise.end(), rf.noise.begin(), rf.noise.end());
    evals.insert(evals.end(), rf.evals.begin(), rf.evals.end());
    for (const auto& a : rf.ablations) ablations[a.study].push_back({a.row, a.hm});
  }
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  if (!steps.empty()) {
    written.push_back(out_dir / "loss_curve.ppm");
    plot_loss_curve(steps).save(written.back());
  }
  for (const auto& [study, bars] : ablations) {
    written.push_back(out_dir / ("ablation_" + study + ".ppm"));
    plot_bars(study + " hm", bars).save(written.back());
  }
  if (!noise.empty()) {
    written.push_back(out_dir / "noise.ppm");
    plot_noise_panels(noise).save(written.back());
  }
  if (!evals.empty()) {
    std::vector<Bar> bars;
    for (const auto& e : evals) {
      const std::string s = "s" + std::to_string(e.seed);
      bars.push_back({s + " base", e.base_acc});
      bars.push_back({s + " novel", e.novel_acc});
      bars.push_back({s + " hm", e.hm});
    }
    written.push_back(out_dir / "eval.ppm");
    plot_bars("accuracy", bars).save(written.back());
  }
  if (written.empty()) throw InputError("no plottable records in the input files");
  return written;
}

}  // namespace anprompt
