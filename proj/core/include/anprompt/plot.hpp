#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "anprompt/encoder.hpp"
#include "anprompt/records.hpp"

namespace anprompt {

/// RGB raster in [0, 1] with a 3x5 bitmap font, written as binary PPM.
class Canvas {
 public:
  Canvas(int width, int height);

  void fill_rect(int x0, int y0, int x1, int y1, const double (&rgb)[3]);
  void line(int x0, int y0, int x1, int y1, const double (&rgb)[3]);
  /// Upper-cased; characters without a glyph render as blanks.
  void text(int x, int y, const std::string& s, const double (&rgb)[3], int scale = 1);

  [[nodiscard]] const Image& image() const { return img_; }
  [[nodiscard]] int width() const { return img_.width; }
  [[nodiscard]] int height() const { return img_.height; }
  void save(const std::filesystem::path& path) const;

 private:
  void put(int x, int y, const double (&rgb)[3]);
  Image img_;
};

struct Bar {
  std::string label;
  double value = 0.0;
};

/// Total / CE / sim / WA loss against step. Throws InputError when empty.
[[nodiscard]] Canvas plot_loss_curve(const std::vector<StepRecord>& steps);
/// One bar per entry, y axis from zero. Throws InputError when empty.
[[nodiscard]] Canvas plot_bars(const std::string& title, const std::vector<Bar>& bars);
/// Three side-by-side panels: TS, LPR, AS per perturbation.
[[nodiscard]] Canvas plot_noise_panels(const std::vector<NoiseMetricReport>& reports);

/// Reads every JSONL file and renders whatever record kinds are present into
/// out_dir (loss_curve.ppm, ablation_<study>.ppm, noise.ppm, eval.ppm).
/// Returns the written paths. Throws InputError on an empty input list or
/// when no plottable record is found; malformed lines raise ParseError.
std::vector<std::filesystem::path> render_plots(const std::vector<std::filesystem::path>& inputs,
                                                const std::filesystem::path& out_dir);

}  // namespace anprompt
