#pragma once

// Static SVG charts: scatter, polyline and step series on shared axes.

#include <string>
#include <utility>
#include <vector>

namespace msg::svg {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
  std::string color = "#1f77b4";
  bool line = false;  // polyline through the points instead of markers
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  int width = 480;
  int height = 360;
  bool equal_aspect = false;
};

// Well-formed standalone SVG document. Empty charts get a unit box.
std::string render(const Chart& chart);

// Distinct colors for series index i.
std::string palette(std::size_t i);

}  // namespace msg::svg
