#include "triglab/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace triglab::svg {
namespace {

constexpr double kW = 720, kH = 420;
constexpr double kLeft = 70, kRight = 20, kTop = 40, kBottom = 70;
const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo, hi;
  double map(double v) const {  // data → pixel y
    return kTop + (hi - v) / (hi - lo) * (kH - kTop - kBottom);
  }
};

Range padded(double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) return {0, 1};
  if (hi - lo < 1e-12) {
    lo -= 1;
    hi += 1;
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

std::string open(const std::string& title) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kW) + "\" height=\"" + num(kH) +
         "\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
         "<text x=\"" + num(kW / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" + escape(title) +
         "</text>\n";
}

std::string axes(const Range& r, const std::string& y_label) {
  std::string s;
  const double x0 = kLeft, x1 = kW - kRight, yb = kH - kBottom;
  s += "<line x1=\"" + num(x0) + "\" y1=\"" + num(kTop) + "\" x2=\"" + num(x0) + "\" y2=\"" + num(yb) +
       "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + num(x0) + "\" y1=\"" + num(yb) + "\" x2=\"" + num(x1) + "\" y2=\"" + num(yb) +
       "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = r.lo + (r.hi - r.lo) * i / 4.0;
    const double y = r.map(v);
    s += "<line x1=\"" + num(x0 - 4) + "\" y1=\"" + num(y) + "\" x2=\"" + num(x1) + "\" y2=\"" + num(y) +
         "\" stroke=\"#ddd\"/>\n";
    s += "<text x=\"" + num(x0 - 6) + "\" y=\"" + num(y + 4) + "\" text-anchor=\"end\">" + num(v) + "</text>\n";
  }
  if (r.lo < 0 && r.hi > 0)
    s += "<line x1=\"" + num(x0) + "\" y1=\"" + num(r.map(0)) + "\" x2=\"" + num(x1) + "\" y2=\"" + num(r.map(0)) +
         "\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>\n";
  s += "<text x=\"16\" y=\"" + num((kTop + yb) / 2) + "\" transform=\"rotate(-90 16 " + num((kTop + yb) / 2) +
       ")\" text-anchor=\"middle\">" + escape(y_label) + "</text>\n";
  return s;
}

std::string x_label(double x, const std::string& text) {
  const double y = kH - kBottom + 14;
  return "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" text-anchor=\"end\" transform=\"rotate(-40 " + num(x) +
         " " + num(y) + ")\">" + escape(text) + "</text>\n";
}

std::string legend(const std::vector<std::string>& names) {
  std::string s;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double y = kTop + 14 * static_cast<double>(i);
    s += "<rect x=\"" + num(kW - 170) + "\" y=\"" + num(y) + "\" width=\"10\" height=\"10\" fill=\"" +
         kPalette[i % 6] + "\"/>\n";
    s += "<text x=\"" + num(kW - 155) + "\" y=\"" + num(y + 9) + "\">" + escape(names[i]) + "</text>\n";
  }
  return s;
}

double slot_x(std::size_t i, std::size_t n) {
  const double w = (kW - kLeft - kRight) / static_cast<double>(std::max<std::size_t>(n, 1));
  return kLeft + w * (static_cast<double>(i) + 0.5);
}

}  // namespace

std::string line_chart(const std::string& title, const std::vector<std::string>& x_labels,
                       const std::vector<Series>& series, const std::string& y_label) {
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      const double e = i < s.err.size() ? s.err[i] : 0.0;
      lo = std::min(lo, s.y[i] - e);
      hi = std::max(hi, s.y[i] + e);
    }
  const Range r = padded(lo, hi);
  std::string out = open(title) + axes(r, y_label);
  const std::size_t n = x_labels.size();
  for (std::size_t i = 0; i < n; ++i) out += x_label(slot_x(i, n), x_labels[i]);
  std::vector<std::string> names;
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    names.push_back(s.name);
    const char* col = kPalette[k % 6];
    if (!s.err.empty()) {
      std::string band;
      for (std::size_t i = 0; i < s.y.size(); ++i) band += num(slot_x(i, n)) + "," + num(r.map(s.y[i] + s.err[i])) + " ";
      for (std::size_t i = s.y.size(); i-- > 0;) band += num(slot_x(i, n)) + "," + num(r.map(s.y[i] - s.err[i])) + " ";
      out += "<polygon points=\"" + band + "\" fill=\"" + col + "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
    }
    std::string pts;
    for (std::size_t i = 0; i < s.y.size(); ++i) pts += num(slot_x(i, n)) + "," + num(r.map(s.y[i])) + " ";
    out += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + col + "\" stroke-width=\"2\"/>\n";
    for (std::size_t i = 0; i < s.y.size(); ++i)
      out += "<circle cx=\"" + num(slot_x(i, n)) + "\" cy=\"" + num(r.map(s.y[i])) + "\" r=\"3\" fill=\"" + col +
             "\"/>\n";
  }
  out += legend(names);
  return out + "</svg>\n";
}

std::string bar_chart(const std::string& title, const std::vector<std::string>& labels, const std::vector<double>& values,
                      const std::vector<double>& err, const std::string& y_label) {
  double lo = 0.0, hi = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double e = i < err.size() ? err[i] : 0.0;
    lo = std::min(lo, values[i] - e);
    hi = std::max(hi, values[i] + e);
  }
  const Range r = padded(lo, hi);
  std::string out = open(title) + axes(r, y_label);
  const std::size_t n = labels.size();
  const double bw = 0.7 * (kW - kLeft - kRight) / static_cast<double>(std::max<std::size_t>(n, 1));
  for (std::size_t i = 0; i < n && i < values.size(); ++i) {
    const double x = slot_x(i, n);
    const double y0 = r.map(0), y1 = r.map(values[i]);
    out += "<rect x=\"" + num(x - bw / 2) + "\" y=\"" + num(std::min(y0, y1)) + "\" width=\"" + num(bw) +
           "\" height=\"" + num(std::abs(y1 - y0)) + "\" fill=\"" + (values[i] >= 0 ? kPalette[0] : kPalette[1]) +
           "\"/>\n";
    if (i < err.size() && err[i] > 0)
      out += "<line x1=\"" + num(x) + "\" y1=\"" + num(r.map(values[i] - err[i])) + "\" x2=\"" + num(x) + "\" y2=\"" +
             num(r.map(values[i] + err[i])) + "\" stroke=\"black\"/>\n";
    out += x_label(x, labels[i]);
  }
  return out + "</svg>\n";
}

std::string heatmap(const std::string& title, const std::vector<std::string>& row_labels,
                    const std::vector<std::string>& col_labels, const std::vector<std::vector<double>>& values) {
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& row : values)
    for (double v : row) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (!(hi > lo)) hi = lo + 1.0;
  std::string out = open(title);
  const std::size_t nr = row_labels.size(), nc = col_labels.size();
  const double cw = (kW - kLeft - kRight) / static_cast<double>(std::max<std::size_t>(nc, 1));
  const double ch = (kH - kTop - kBottom) / static_cast<double>(std::max<std::size_t>(nr, 1));
  for (std::size_t i = 0; i < nr && i < values.size(); ++i) {
    for (std::size_t j = 0; j < nc && j < values[i].size(); ++j) {
      const double t = (values[i][j] - lo) / (hi - lo);
      const int red = static_cast<int>(std::lround(255 * t)), blue = static_cast<int>(std::lround(255 * (1 - t)));
      char fill[16];
      std::snprintf(fill, sizeof fill, "#%02x40%02x", red, blue);
      out += "<rect x=\"" + num(kLeft + cw * static_cast<double>(j)) + "\" y=\"" + num(kTop + ch * static_cast<double>(i)) +
             "\" width=\"" + num(cw) + "\" height=\"" + num(ch) + "\" fill=\"" + fill + "\"><title>" +
             escape(row_labels[i] + " / " + col_labels[j]) + ": " + num(values[i][j]) + "</title></rect>\n";
    }
    out += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(kTop + ch * (static_cast<double>(i) + 0.5) + 4) +
           "\" text-anchor=\"end\">" + escape(row_labels[i]) + "</text>\n";
  }
  for (std::size_t j = 0; j < nc; ++j) out += x_label(kLeft + cw * (static_cast<double>(j) + 0.5), col_labels[j]);
  out += "<text x=\"" + num(kW - kRight) + "\" y=\"" + num(kH - 8) + "\" text-anchor=\"end\">min " + num(lo) +
         " (blue) max " + num(hi) + " (red)</text>\n";
  return out + "</svg>\n";
}

std::string box_plot(const std::string& title, const std::vector<BoxGroup>& groups, const std::string& y_label) {
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& g : groups)
    for (double v : g.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  const Range r = padded(lo, hi);
  std::string out = open(title) + axes(r, y_label);
  const std::size_t n = groups.size();
  const double bw = 0.4 * (kW - kLeft - kRight) / static_cast<double>(std::max<std::size_t>(n, 1));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v = groups[i].values;
    const double x = slot_x(i, n);
    out += x_label(x, groups[i].name);
    if (v.empty()) continue;
    std::sort(v.begin(), v.end());
    auto q = [&](double p) {
      const double idx = p * static_cast<double>(v.size() - 1);
      const std::size_t a = static_cast<std::size_t>(std::floor(idx)), b = std::min(a + 1, v.size() - 1);
      return v[a] + (idx - static_cast<double>(a)) * (v[b] - v[a]);
    };
    const char* col = kPalette[i % 6];
    out += "<line x1=\"" + num(x) + "\" y1=\"" + num(r.map(v.front())) + "\" x2=\"" + num(x) + "\" y2=\"" +
           num(r.map(v.back())) + "\" stroke=\"black\"/>\n";
    out += "<rect x=\"" + num(x - bw / 2) + "\" y=\"" + num(r.map(q(0.75))) + "\" width=\"" + num(bw) + "\" height=\"" +
           num(r.map(q(0.25)) - r.map(q(0.75))) + "\" fill=\"" + col + "\" fill-opacity=\"0.3\" stroke=\"" + col +
           "\"/>\n";
    out += "<line x1=\"" + num(x - bw / 2) + "\" y1=\"" + num(r.map(q(0.5))) + "\" x2=\"" + num(x + bw / 2) +
           "\" y2=\"" + num(r.map(q(0.5))) + "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    for (std::size_t k = 0; k < v.size(); ++k) {
      const double jitter = bw * 0.8 * ((static_cast<double>(k % 7) / 6.0) - 0.5);
      out += "<circle cx=\"" + num(x + jitter) + "\" cy=\"" + num(r.map(v[k])) + "\" r=\"1.8\" fill=\"" + col +
             "\" fill-opacity=\"0.6\"/>\n";
    }
  }
  return out + "</svg>\n";
}

}  // namespace triglab::svg
