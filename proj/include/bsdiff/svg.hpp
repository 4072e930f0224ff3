#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

namespace bsdiff {

/// Minimal line/scatter chart written as standalone SVG.
class SvgPlot {
 public:
  SvgPlot(std::string title, std::string xlabel, std::string ylabel)
      : title_(std::move(title)), xlabel_(std::move(xlabel)), ylabel_(std::move(ylabel)) {}

  void line(std::vector<double> xs, std::vector<double> ys, std::string color, std::string label = {}) {
    series_.push_back({std::move(xs), std::move(ys), std::move(color), std::move(label), false});
  }
  void points(std::vector<double> xs, std::vector<double> ys, std::string color, std::string label = {}) {
    series_.push_back({std::move(xs), std::move(ys), std::move(color), std::move(label), true});
  }
  void hline(double y, std::string color) { hlines_.push_back({y, std::move(color)}); }

  std::string render(int width = 640, int height = 420) const {
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series_) {
      for (std::size_t i = 0; i < s.xs.size() && i < s.ys.size(); ++i) {
        if (!std::isfinite(s.xs[i]) || !std::isfinite(s.ys[i])) continue;
        x0 = std::min(x0, s.xs[i]);
        x1 = std::max(x1, s.xs[i]);
        y0 = std::min(y0, s.ys[i]);
        y1 = std::max(y1, s.ys[i]);
      }
    }
    for (const auto& h : hlines_) {
      y0 = std::min(y0, h.y);
      y1 = std::max(y1, h.y);
    }
    if (!(x0 <= x1)) x0 = 0, x1 = 1;
    if (!(y0 <= y1)) y0 = 0, y1 = 1;
    if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
    if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
    const double pad_y = 0.05 * (y1 - y0);
    y0 -= pad_y;
    y1 += pad_y;

    const double left = 70, right = 20, top = 40, bottom = 50;
    const double pw = width - left - right, ph = height - top - bottom;
    auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
    auto sy = [&](double y) { return top + (y1 - y) / (y1 - y0) * ph; };

    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
           std::to_string(height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out += "<text x=\"" + num(width / 2.0) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" + escape(title_) +
           "</text>\n";
    out += "<rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
           "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int i = 0; i <= 4; ++i) {
      const double xv = x0 + (x1 - x0) * i / 4.0;
      const double yv = y0 + (y1 - y0) * i / 4.0;
      out += "<text x=\"" + num(sx(xv)) + "\" y=\"" + num(top + ph + 16) + "\" text-anchor=\"middle\">" + tick(xv) +
             "</text>\n";
      out += "<text x=\"" + num(left - 6) + "\" y=\"" + num(sy(yv) + 4) + "\" text-anchor=\"end\">" + tick(yv) +
             "</text>\n";
    }
    out += "<text x=\"" + num(left + pw / 2) + "\" y=\"" + num(height - 10.0) + "\" text-anchor=\"middle\">" +
           escape(xlabel_) + "</text>\n";
    out += "<text x=\"16\" y=\"" + num(top + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
           num(top + ph / 2) + ")\">" + escape(ylabel_) + "</text>\n";
    for (const auto& h : hlines_) {
      out += "<line x1=\"" + num(left) + "\" x2=\"" + num(left + pw) + "\" y1=\"" + num(sy(h.y)) + "\" y2=\"" +
             num(sy(h.y)) + "\" stroke=\"" + h.color + "\" stroke-dasharray=\"5,4\"/>\n";
    }
    int legend_row = 0;
    for (const auto& s : series_) {
      if (s.scatter) {
        for (std::size_t i = 0; i < s.xs.size() && i < s.ys.size(); ++i) {
          if (!std::isfinite(s.xs[i]) || !std::isfinite(s.ys[i])) continue;
          out += "<circle cx=\"" + num(sx(s.xs[i])) + "\" cy=\"" + num(sy(s.ys[i])) + "\" r=\"2\" fill=\"" + s.color +
                 "\" fill-opacity=\"0.6\"/>\n";
        }
      } else {
        std::string pts;
        for (std::size_t i = 0; i < s.xs.size() && i < s.ys.size(); ++i) {
          if (!std::isfinite(s.xs[i]) || !std::isfinite(s.ys[i])) continue;
          pts += num(sx(s.xs[i])) + "," + num(sy(s.ys[i])) + " ";
        }
        out += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"1.2\" points=\"" + pts + "\"/>\n";
      }
      if (!s.label.empty()) {
        const double ly = top + 14 + 14 * legend_row++;
        out += "<rect x=\"" + num(left + pw - 130) + "\" y=\"" + num(ly - 8) + "\" width=\"10\" height=\"10\" fill=\"" +
               s.color + "\"/>\n";
        out += "<text x=\"" + num(left + pw - 115) + "\" y=\"" + num(ly + 1) + "\">" + escape(s.label) + "</text>\n";
      }
    }
    out += "</svg>\n";
    return out;
  }

 private:
  struct Series {
    std::vector<double> xs, ys;
    std::string color, label;
    bool scatter;
  };
  struct HLine {
    double y;
    std::string color;
  };

  static std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
  }
  static std::string tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", std::abs(v) < 1e-12 ? 0.0 : v);
    return buf;
  }
  static std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
      if (c == '<') out += "&lt;";
      else if (c == '>') out += "&gt;";
      else if (c == '&') out += "&amp;";
      else out += c;
    }
    return out;
  }

  std::string title_, xlabel_, ylabel_;
  std::vector<Series> series_;
  std::vector<HLine> hlines_;
};

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};
  return colors[i % 7];
}

}  // namespace bsdiff
