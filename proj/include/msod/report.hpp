#pragma once

// Run reports: SVG line charts for pool growth and losses, CSV AP tables.

#include <string>
#include <vector>

namespace msod {

struct ChartSeries {
  std::string name;
  std::vector<double> values;  // x = 1..n
};

std::string line_chart_svg(const std::string& title, const std::vector<ChartSeries>& series);

// Reads telemetry.json (and metrics.json when present) from run_dir and
// writes pool_growth.svg, losses.svg and ap_table.csv into out_dir.
void write_run_report(const std::string& run_dir, const std::string& out_dir);

}  // namespace msod
