#pragma once

#include <functional>
#include <string>
#include <vector>

#include "anprompt/config.hpp"
#include "anprompt/records.hpp"
#include "anprompt/workspace.hpp"

namespace anprompt {

struct AblationRow {
  std::string label;
  RunConfig config;
};

[[nodiscard]] const std::vector<std::string>& ablation_studies();

/// Rows of one study, each a copy of `base` with the studied knob set.
/// Throws ConfigError for an unknown study name.
[[nodiscard]] std::vector<AblationRow> ablation_rows(const RunConfig& base, const std::string& study);

/// Called after each finished (row, seed) run.
using AblationProgress = std::function<void(const std::string& row, std::uint64_t seed, const EvalReport&)>;

/// Trains and evaluates every row over base.seeds and averages per row.
/// With base.threads > 1 independent runs execute concurrently; results do
/// not depend on the thread count.
[[nodiscard]] std::vector<AblationResult> run_ablation(const Workspace& ws, const RunConfig& base,
                                                       const std::string& study,
                                                       const AblationProgress& progress = {});

/// Markdown table with Base / Novel / HM columns.
[[nodiscard]] std::string format_ablation_table(const std::vector<AblationResult>& results);

}  // namespace anprompt
