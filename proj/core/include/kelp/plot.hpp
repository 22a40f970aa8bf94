#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace kelp {

struct MetricsRow {
  std::size_t step = 0;
  std::string task;
  double loss = 0;
  double lr = 0;
  double grad_norm = 0;
};

// Parses a tab-separated metrics log (header line, then one row per step).
// Throws ParseError on malformed rows and ValidationError when no data rows
// are present.
std::vector<MetricsRow> load_metrics(const std::string& path);

// Minimal static line chart; fully determined by its inputs, so rewriting
// the same data yields byte-identical files.
std::string svg_line_chart(const std::string& title,
                           const std::vector<double>& xs,
                           const std::vector<double>& ys);

// One loss_<task>.svg per task appearing in the log plus lr.svg. Returns the
// written paths in sorted order.
std::vector<std::string> write_plots(const std::vector<MetricsRow>& rows,
                                     const std::string& out_dir);

}  // namespace kelp
