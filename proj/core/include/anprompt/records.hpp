#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "anprompt/metrics.hpp"

namespace anprompt {

/// One optimisation step of the training log.
struct StepRecord {
  int step = 0;
  int epoch = 0;
  double ce = 0.0;
  double sim = 0.0;
  double wa = 0.0;
  double gamma = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

struct EvalReport {
  std::uint64_t seed = 0;
  double base_acc = 0.0;
  double novel_acc = 0.0;
  /// Zero when either accuracy is zero.
  double hm = 0.0;
  int n_base = 0;
  int n_novel = 0;
};

struct AblationResult {
  std::string study;
  std::string row;
  double base = 0.0;
  double novel = 0.0;
  double hm = 0.0;
  std::vector<EvalReport> per_seed;
};

// Line-delimited JSON. Every record carries a "kind" field; doubles are
// written in shortest round-trip form so logs compare bitwise.
[[nodiscard]] std::string to_json_line(const StepRecord& r);
[[nodiscard]] std::string to_json_line(const EvalReport& r);
[[nodiscard]] std::string to_json_line(const NoiseMetricReport& r);
[[nodiscard]] std::string to_json_line(const AblationResult& r);

/// Parsed records of one JSONL file, grouped by kind. Malformed lines throw
/// ParseError naming the file and line number.
struct RecordFile {
  std::vector<StepRecord> steps;
  std::vector<EvalReport> evals;
  std::vector<NoiseMetricReport> noise;
  std::vector<AblationResult> ablations;
  /// Diagnostic records (e.g. divergence) that are not plotted.
  int other = 0;
};
[[nodiscard]] RecordFile read_records(const std::filesystem::path& path);

/// Appends `line` plus a newline; creates the file if needed.
void append_line(const std::filesystem::path& path, const std::string& line);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace anprompt
