#include "msg/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace msg::svg {

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

}  // namespace

std::string palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                 "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  return colors[i % 8];
}

std::string render(const Chart& chart) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : chart.series) {
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  const double pad_x = 0.05 * (x1 - x0), pad_y = 0.05 * (y1 - y0);
  x0 -= pad_x, x1 += pad_x, y0 -= pad_y, y1 += pad_y;

  const double left = 60, right = 130, top = 30, bottom = 45;
  const double pw = chart.width - left - right, ph = chart.height - top - bottom;
  double sx = pw / (x1 - x0), sy = ph / (y1 - y0);
  if (chart.equal_aspect) sx = sy = std::min(sx, sy);
  auto px = [&](double x) { return left + (x - x0) * sx; };
  auto py = [&](double y) { return top + ph - (y - y0) * sy; };

  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << chart.width << "\" height=\"" << chart.height
    << "\" viewBox=\"0 0 " << chart.width << ' ' << chart.height << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << num(left) << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">" << escape(chart.title)
    << "</text>\n"
    << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
    << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    o << "<text x=\"" << num(left + pw * i / 4.0) << "\" y=\"" << num(top + ph + 14)
      << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">" << tick(xv) << "</text>\n";
    o << "<text x=\"" << num(left - 4) << "\" y=\"" << num(top + ph - ph * i / 4.0 + 3)
      << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">" << tick(yv) << "</text>\n";
  }
  o << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(chart.height - 8.0)
    << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" << escape(chart.x_label)
    << "</text>\n";
  o << "<text x=\"14\" y=\"" << num(top + ph / 2) << "\" font-family=\"sans-serif\" font-size=\"11\" "
    << "text-anchor=\"middle\" transform=\"rotate(-90 14 " << num(top + ph / 2) << ")\">" << escape(chart.y_label)
    << "</text>\n";

  for (std::size_t k = 0; k < chart.series.size(); ++k) {
    const Series& s = chart.series[k];
    if (s.line) {
      o << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
      for (const auto& [x, y] : s.points) {
        if (std::isfinite(x) && std::isfinite(y)) o << num(px(x)) << ',' << num(py(y)) << ' ';
      }
      o << "\"/>\n";
    } else {
      for (const auto& [x, y] : s.points) {
        if (!std::isfinite(x) || !std::isfinite(y)) continue;
        o << "<circle cx=\"" << num(px(x)) << "\" cy=\"" << num(py(y)) << "\" r=\"1.8\" fill=\"" << s.color
          << "\" fill-opacity=\"0.6\"/>\n";
      }
    }
    const double ly = top + 12 + 16.0 * static_cast<double>(k);
    o << "<rect x=\"" << num(left + pw + 10) << "\" y=\"" << num(ly - 8) << "\" width=\"10\" height=\"10\" fill=\""
      << s.color << "\"/>\n"
      << "<text x=\"" << num(left + pw + 25) << "\" y=\"" << num(ly) << "\" font-family=\"sans-serif\" "
      << "font-size=\"10\">" << escape(s.label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace msg::svg
