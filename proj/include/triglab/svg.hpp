#pragma once

#include <string>
#include <vector>

namespace triglab::svg {

// Plots are fixed 720×420 canvases with a left y axis, a bottom x axis and
// a legend in the top-right corner. Numbers are printed with two decimals so
// the output is byte-stable.

struct Series {
  std::string name;
  std::vector<double> y;
  std::vector<double> err;  ///< optional ±band, same length as y
};

std::string line_chart(const std::string& title, const std::vector<std::string>& x_labels,
                       const std::vector<Series>& series, const std::string& y_label);

std::string bar_chart(const std::string& title, const std::vector<std::string>& labels, const std::vector<double>& values,
                      const std::vector<double>& err, const std::string& y_label);

/// values[row][col]; colour scale from min (blue) to max (red).
std::string heatmap(const std::string& title, const std::vector<std::string>& row_labels,
                    const std::vector<std::string>& col_labels, const std::vector<std::vector<double>>& values);

struct BoxGroup {
  std::string name;
  std::vector<double> values;
};

/// Box (quartiles, whiskers at min/max) with the raw points overlaid.
std::string box_plot(const std::string& title, const std::vector<BoxGroup>& groups, const std::string& y_label);

}  // namespace triglab::svg
