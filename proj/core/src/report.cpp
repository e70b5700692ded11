#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ucsd/pipeline.hpp"

namespace fs = std::filesystem;

namespace ucsd {

namespace {

struct RunData {
  std::string label;
  std::vector<double> f, e;  // consensus column
  double var_ambiguous = 0, var_unambiguous = 0;
  std::vector<std::string> report_lines;
};

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> row;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) row.push_back(cell);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IoError("'" + path.string() + "' is empty");
  return rows;
}

double number(const std::string& s, const fs::path& where) {
  try {
    return std::stod(s);
  } catch (const std::exception&) {
    throw IoError(where.string() + ": bad number '" + s + "'");
  }
}

std::vector<double> curve_column(const fs::path& path) {
  const auto rows = read_csv(path);
  if (rows.size() != kCurvePoints + 1 || rows.front().size() < 2 || rows.front()[1] != "consensus") {
    throw IoError(path.string() + ": expected 256 rows with a consensus column");
  }
  std::vector<double> out;
  for (std::size_t i = 1; i < rows.size(); ++i) out.push_back(number(rows[i].at(1), path));
  return out;
}

RunData read_run(const std::string& dir) {
  const fs::path p(dir);
  RunData r;
  r.label = p.filename().empty() ? p.parent_path().filename().string() : p.filename().string();
  r.f = curve_column(p / "f_curve.csv");
  r.e = curve_column(p / "e_curve.csv");
  const auto var = read_csv(p / "variance.csv");
  for (std::size_t i = 1; i < var.size(); ++i) {
    const double v = number(var[i].at(2), p / "variance.csv");
    if (var[i][0] == "ambiguous") r.var_ambiguous = v;
    if (var[i][0] == "unambiguous") r.var_unambiguous = v;
  }
  const auto rep = read_csv(p / "report.csv");
  for (std::size_t i = 1; i < rep.size(); ++i) {
    std::string line;
    for (const auto& cell : rep[i]) line += "," + cell;
    r.report_lines.push_back(line);
  }
  return r;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

constexpr double kW = 480, kH = 360, kLeft = 60, kRight = 20, kTop = 40, kBottom = 50;

void axes(std::ostream& svg, const std::string& title, const std::string& xlabel, const std::string& ylabel,
          double ymax) {
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << kW / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(title) << "</text>\n";
  svg << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = kTop + ph - ph * i / 4.0;
    svg << "<text x=\"" << kLeft - 6 << "\" y=\"" << fmt(y + 4) << "\" text-anchor=\"end\">" << fmt(ymax * i / 4.0)
        << "</text>\n";
  }
  svg << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">" << escape(xlabel)
      << "</text>\n";
  svg << "<text x=\"16\" y=\"" << kTop + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << kTop + ph / 2 << ")\">" << escape(ylabel) << "</text>\n";
}

void curve_plot(const fs::path& path, const std::string& title, const std::string& ylabel,
                const std::vector<RunData>& runs, std::vector<double> RunData::*series) {
  std::ofstream svg(path, std::ios::binary);
  axes(svg, title, "threshold", ylabel, 1.0);
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  for (int i = 0; i <= 4; ++i) {
    const double x = kLeft + pw * i / 4.0;
    svg << "<text x=\"" << fmt(x) << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\">" << i * 64
        << "</text>\n";
  }
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const auto& ys = runs[r].*series;
    svg << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << kPalette[r % 8] << "\" points=\"";
    for (std::size_t t = 0; t < ys.size(); ++t) {
      svg << (t ? " " : "") << fmt(kLeft + pw * t / 255.0) << ',' << fmt(kTop + ph - ph * std::clamp(ys[t], 0.0, 1.0));
    }
    svg << "\"/>\n";
    svg << "<text x=\"" << kLeft + 10 << "\" y=\"" << kTop + 16 + 14 * r << "\" fill=\"" << kPalette[r % 8] << "\">"
        << escape(runs[r].label) << "</text>\n";
  }
  svg << "</svg>\n";
  if (!svg) throw IoError("cannot write '" + path.string() + "'");
}

void variance_plot(const fs::path& path, const std::vector<RunData>& runs) {
  double ymax = 0;
  for (const auto& r : runs) ymax = std::max({ymax, r.var_ambiguous, r.var_unambiguous});
  ymax = ymax > 0 ? ymax * 1.1 : 1.0;
  std::ofstream svg(path, std::ios::binary);
  axes(svg, "Mean prediction variance", "run", "mean per-pixel variance", ymax);
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  const double group = pw / static_cast<double>(std::max<std::size_t>(runs.size(), 1));
  const char* colors[2] = {"#d62728", "#1f77b4"};
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const double vals[2] = {runs[r].var_ambiguous, runs[r].var_unambiguous};
    for (int k = 0; k < 2; ++k) {
      const double bw = group * 0.35, x = kLeft + group * r + group * 0.15 + k * bw;
      const double h = ph * vals[k] / ymax;
      svg << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(kTop + ph - h) << "\" width=\"" << fmt(bw) << "\" height=\""
          << fmt(h) << "\" fill=\"" << colors[k] << "\"/>\n";
    }
    svg << "<text x=\"" << fmt(kLeft + group * (r + 0.5)) << "\" y=\"" << kTop + ph + 16
        << "\" text-anchor=\"middle\">" << escape(runs[r].label) << "</text>\n";
  }
  svg << "<text x=\"" << kW - kRight - 90 << "\" y=\"" << kTop + 16 << "\" fill=\"" << colors[0] << "\">ambiguous</text>\n";
  svg << "<text x=\"" << kW - kRight - 90 << "\" y=\"" << kTop + 30 << "\" fill=\"" << colors[1]
      << "\">unambiguous</text>\n";
  svg << "</svg>\n";
  if (!svg) throw IoError("cannot write '" + path.string() + "'");
}

}  // namespace

void cmd_report(const std::vector<std::string>& runs, const std::string& out_dir, const LogFn& log) {
  if (runs.empty()) throw ValidationError("report: need at least one run directory");
  std::vector<RunData> data;
  for (const auto& r : runs) data.push_back(read_run(r));
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir)) throw IoError("cannot create report directory '" + out_dir + "'");
  const fs::path dir(out_dir);
  curve_plot(dir / "f_curves.svg", "F-measure (consensus)", "F-measure", data, &RunData::f);
  curve_plot(dir / "e_curves.svg", "E-measure (consensus)", "E-measure", data, &RunData::e);
  variance_plot(dir / "variance.svg", data);

  for (const auto& [name, series] : {std::pair{"f_curves.csv", &RunData::f}, std::pair{"e_curves.csv", &RunData::e}}) {
    std::ofstream c(dir / name, std::ios::binary);
    c << "threshold";
    for (const auto& r : data) c << ',' << r.label;
    c << '\n';
    for (std::size_t t = 0; t < kCurvePoints; ++t) {
      c << csv_number(static_cast<double>(t) / 255.0);
      for (const auto& r : data) c << ',' << csv_number((r.*series)[t]);
      c << '\n';
    }
  }
  std::ofstream v(dir / "variance.csv", std::ios::binary);
  v << "run,class,mean_variance\n";
  for (const auto& r : data) {
    v << r.label << ",ambiguous," << csv_number(r.var_ambiguous) << '\n';
    v << r.label << ",unambiguous," << csv_number(r.var_unambiguous) << '\n';
  }
  std::ofstream s(dir / "summary.csv", std::ios::binary);
  s << "run,split,estimator,S,meanF,meanE,MAE\n";
  for (const auto& r : data) {
    for (const auto& line : r.report_lines) s << r.label << line << '\n';
  }
  if (!s) throw IoError("cannot write report CSVs in '" + out_dir + "'");
  if (log) log("report for " + std::to_string(data.size()) + " runs written to " + out_dir);
}

}  // namespace ucsd
