#include "msod/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "msod/config_io.hpp"

namespace msod {

namespace {

constexpr int kWidth = 640, kHeight = 360;
constexpr int kMarginLeft = 60, kMarginRight = 130, kMarginTop = 40, kMarginBottom = 40;
const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::vector<ChartSeries>& series) {
  size_t n = 0;
  double lo = 0.0, hi = 1e-12;
  for (const auto& s : series) {
    n = std::max(n, s.values.size());
    for (double v : s.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  const double plot_w = kWidth - kMarginLeft - kMarginRight;
  const double plot_h = kHeight - kMarginTop - kMarginBottom;
  const auto x_of = [&](size_t i) {
    return kMarginLeft + (n > 1 ? plot_w * static_cast<double>(i) / (n - 1) : plot_w / 2);
  };
  const auto y_of = [&](double v) {
    return kMarginTop + plot_h * (1.0 - (v - lo) / (hi - lo));
  };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
      << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << kWidth / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\" "
         "font-family=\"sans-serif\">"
      << title << "</text>\n";
  // Axes.
  svg << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop << "\" x2=\"" << kMarginLeft
      << "\" y2=\"" << kMarginTop + plot_h << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop + plot_h << "\" x2=\""
      << kMarginLeft + plot_w << "\" y2=\"" << kMarginTop + plot_h << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << kMarginLeft - 6 << "\" y=\"" << kMarginTop + 4
      << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" << fmt(hi)
      << "</text>\n";
  svg << "<text x=\"" << kMarginLeft - 6 << "\" y=\"" << kMarginTop + plot_h + 4
      << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" << fmt(lo)
      << "</text>\n";
  svg << "<text x=\"" << kMarginLeft << "\" y=\"" << kHeight - 12
      << "\" font-size=\"11\" font-family=\"sans-serif\">1</text>\n";
  svg << "<text x=\"" << kMarginLeft + plot_w << "\" y=\"" << kHeight - 12
      << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" << n
      << "</text>\n";

  for (size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % (sizeof(kPalette) / sizeof(kPalette[0]))];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < series[s].values.size(); ++i)
      svg << x_of(i) << "," << y_of(series[s].values[i]) << " ";
    svg << "\"/>\n";
    const double ly = kMarginTop + 14.0 * s;
    svg << "<line x1=\"" << kMarginLeft + plot_w + 10 << "\" y1=\"" << ly << "\" x2=\""
        << kMarginLeft + plot_w + 30 << "\" y2=\"" << ly << "\" stroke=\"" << color
        << "\" stroke-width=\"1.5\"/>\n";
    svg << "<text x=\"" << kMarginLeft + plot_w + 34 << "\" y=\"" << ly + 4
        << "\" font-size=\"11\" font-family=\"sans-serif\">" << series[s].name << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void write_run_report(const std::string& run_dir, const std::string& out_dir) {
  namespace fs = std::filesystem;
  const fs::path run(run_dir), out(out_dir);
  fs::create_directories(out);

  const nlohmann::json tel = nlohmann::json::parse(read_text_file((run / "telemetry.json").string()));
  const auto& epochs = tel.at("epochs");

  ChartSeries pool_frac{"pool fraction", {}};
  ChartSeries accepted{"accept rate", {}};
  ChartSeries l1{"annotation branch", {}};
  ChartSeries l2{"supervised branch", {}};
  for (const auto& e : epochs) {
    pool_frac.values.push_back(e.at("pool_fraction").get<double>());
    const int att = e.at("pool_attempts").get<int>();
    accepted.values.push_back(att > 0 ? e.at("pool_accepted").get<double>() / att : 0.0);
    l1.values.push_back(e.at("loss_1b").get<double>());
    l2.values.push_back(e.at("loss_2b").get<double>());
  }
  write_text_file((out / "pool_growth.svg").string(),
                  line_chart_svg("semi-strong pool", {pool_frac, accepted}));
  write_text_file((out / "losses.svg").string(),
                  line_chart_svg("training losses", {l1, l2}));

  const fs::path metrics = run / "metrics.json";
  if (fs::exists(metrics)) {
    const nlohmann::json m = nlohmann::json::parse(read_text_file(metrics.string()));
    std::ostringstream csv;
    csv << "class,ap50,ap50_95,gt_count\n";
    for (const auto& row : m.at("per_class")) {
      csv << row.at("class").get<int>() << ",";
      if (row.at("ap50").is_null())
        csv << ",";
      else
        csv << row.at("ap50").get<double>() << "," << row.at("ap50_95").get<double>();
      csv << "," << row.at("gt_count").get<int>() << "\n";
    }
    csv << "mean," << m.at("map50").get<double>() << "," << m.at("map50_95").get<double>()
        << ",\n";
    write_text_file((out / "ap_table.csv").string(), csv.str());
  }
}

}  // namespace msod
