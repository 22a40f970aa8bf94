#include "kelp/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "kelp/errors.hpp"

namespace kelp {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t at = 0;
  while (true) {
    const auto tab = line.find('\t', at);
    if (tab == std::string::npos) {
      out.push_back(line.substr(at));
      return out;
    }
    out.push_back(line.substr(at, tab - at));
    at = tab + 1;
  }
}

double parse_num(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(where + ": bad number '" + s + "'");
  }
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

std::vector<MetricsRow> load_metrics(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path + "' for reading");
  std::string line;
  std::size_t lineno = 0;
  std::vector<MetricsRow> rows;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (lineno == 1) {
      if (line.rfind("step\t", 0) != 0) {
        throw ParseError(path + ":1: expected a step/task/... header");
      }
      continue;
    }
    const auto parts = split_tabs(line);
    if (parts.size() != 5) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected 5 "
                       "tab-separated fields, got " +
                       std::to_string(parts.size()));
    }
    const auto where = path + ":" + std::to_string(lineno);
    MetricsRow r;
    r.step = static_cast<std::size_t>(parse_num(parts[0], where));
    r.task = parts[1];
    r.loss = parse_num(parts[2], where);
    r.lr = parse_num(parts[3], where);
    r.grad_norm = parse_num(parts[4], where);
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw ValidationError("metrics log '" + path + "' has no data rows");
  return rows;
}

std::string svg_line_chart(const std::string& title,
                           const std::vector<double>& xs,
                           const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.empty()) {
    throw DimensionError("chart needs matching non-empty x and y series");
  }
  const double width = 640, height = 400;
  const double left = 60, right = 20, top = 36, bottom = 40;
  double x0 = xs[0], x1 = xs[0], y0 = ys[0], y1 = ys[0];
  for (std::size_t i = 0; i < xs.size(); ++i) {
    x0 = std::min(x0, xs[i]);
    x1 = std::max(x1, xs[i]);
    y0 = std::min(y0, ys[i]);
    y1 = std::max(y1, ys[i]);
  }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const auto px = [&](double x) {
    return left + (x - x0) / (x1 - x0) * (width - left - right);
  };
  const auto py = [&](double y) {
    return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom);
  };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
     << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
     << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" "
        "font-family=\"monospace\" font-size=\"14\">"
     << title << "</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << py(y0) << "\" x2=\""
     << width - right << "\" y2=\"" << py(y0)
     << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << py(y0) << "\" x2=\"" << left
     << "\" y2=\"" << py(y1) << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  const char* label_fmt =
      "<text x=\"%s\" y=\"%s\" text-anchor=\"%s\" font-family=\"monospace\" "
      "font-size=\"11\">%s</text>\n";
  char buf[256];
  std::snprintf(buf, sizeof(buf), label_fmt, fmt(left).c_str(),
                fmt(height - bottom + 16).c_str(), "middle",
                fmt(x0).c_str());
  os << buf;
  std::snprintf(buf, sizeof(buf), label_fmt, fmt(width - right).c_str(),
                fmt(height - bottom + 16).c_str(), "middle",
                fmt(x1).c_str());
  os << buf;
  std::snprintf(buf, sizeof(buf), label_fmt, fmt(left - 6).c_str(),
                fmt(py(y0) + 4).c_str(), "end", fmt(y0).c_str());
  os << buf;
  std::snprintf(buf, sizeof(buf), label_fmt, fmt(left - 6).c_str(),
                fmt(py(y1) + 4).c_str(), "end", fmt(y1).c_str());
  os << buf;
  os << "<polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"1.5\" "
        "points=\"";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) os << ' ';
    os << fmt(px(xs[i])) << ',' << fmt(py(ys[i]));
  }
  os << "\"/>\n</svg>\n";
  return os.str();
}

std::vector<std::string> write_plots(const std::vector<MetricsRow>& rows,
                                     const std::string& out_dir) {
  if (rows.empty()) throw ValidationError("metrics log has no data rows");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>
      by_task;
  std::vector<double> lr_x, lr_y;
  for (const auto& r : rows) {
    auto& series = by_task[r.task];
    series.first.push_back(static_cast<double>(r.step));
    series.second.push_back(r.loss);
    lr_x.push_back(static_cast<double>(r.step));
    lr_y.push_back(r.lr);
  }

  std::vector<std::string> written;
  auto emit = [&](const std::string& name, const std::string& body) {
    const auto path = (fs::path(out_dir) / name).string();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open '" + path + "' for writing");
    os << body;
    written.push_back(path);
  };
  for (const auto& [task, series] : by_task) {
    emit("loss_" + task + ".svg",
         svg_line_chart("loss: " + task, series.first, series.second));
  }
  emit("lr.svg", svg_line_chart("learning rate", lr_x, lr_y));
  std::sort(written.begin(), written.end());
  return written;
}

}  // namespace kelp
