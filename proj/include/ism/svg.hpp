#pragma once

// Standalone SVG plots: scatter points, polylines and line segments in data
// coordinates, auto-fitted to the drawn extent.

#include "ism/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace ism {

class SvgPlot {
 public:
  explicit SvgPlot(std::string title = {}, int size_px = 640) : title_(std::move(title)), size_(size_px) {}

  void point(double x, double y, int color = 0, double radius = 1.6) {
    extend(x, y);
    items_.push_back({Kind::Point, {x, y, 0, 0}, {}, color, radius});
  }

  void segment(double x0, double y0, double x1, double y1, int color = 0) {
    extend(x0, y0);
    extend(x1, y1);
    items_.push_back({Kind::Segment, {x0, y0, x1, y1}, {}, color, 0});
  }

  void polyline(const std::vector<std::array<double, 2>>& pts, int color = 0) {
    for (const auto& p : pts) extend(p[0], p[1]);
    items_.push_back({Kind::Polyline, {}, pts, color, 0});
  }

  std::string render() const {
    double lox = lo_[0], loy = lo_[1], hix = hi_[0], hiy = hi_[1];
    if (!(lox <= hix)) lox = loy = -1, hix = hiy = 1;
    const double span = std::max({hix - lox, hiy - loy, 1e-9}) * 1.08;
    const double cx = 0.5 * (lox + hix), cy = 0.5 * (loy + hiy);
    const double scale = size_ / span;
    auto px = [&](double x) { return (x - cx) * scale + size_ / 2.0; };
    auto py = [&](double y) { return size_ / 2.0 - (y - cy) * scale; };

    std::ostringstream os;
    os.precision(5);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size_ << "\" height=\"" << size_
       << "\" viewBox=\"0 0 " << size_ << ' ' << size_ << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!title_.empty()) os << "<text x=\"8\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\">" << escape(title_) << "</text>\n";
    for (const auto& it : items_) {
      const char* col = color(it.color);
      switch (it.kind) {
        case Kind::Point:
          os << "<circle cx=\"" << px(it.a[0]) << "\" cy=\"" << py(it.a[1]) << "\" r=\"" << it.radius << "\" fill=\""
             << col << "\" fill-opacity=\"0.7\"/>\n";
          break;
        case Kind::Segment:
          os << "<line x1=\"" << px(it.a[0]) << "\" y1=\"" << py(it.a[1]) << "\" x2=\"" << px(it.a[2]) << "\" y2=\""
             << py(it.a[3]) << "\" stroke=\"" << col << "\" stroke-width=\"0.6\" stroke-opacity=\"0.6\"/>\n";
          break;
        case Kind::Polyline:
          os << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"0.7\" stroke-opacity=\"0.6\" points=\"";
          for (const auto& p : it.pts) os << px(p[0]) << ',' << py(p[1]) << ' ';
          os << "\"/>\n";
          break;
      }
    }
    os << "</svg>\n";
    return os.str();
  }

  void write(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << render();
    if (!out) throw IoError("write failed: " + path);
  }

  std::size_t size() const { return items_.size(); }

 private:
  enum class Kind { Point, Segment, Polyline };
  struct Item {
    Kind kind;
    std::array<double, 4> a;
    std::vector<std::array<double, 2>> pts;
    int color;
    double radius;
  };

  static const char* color(int i) {
    static constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                               "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
    return kPalette[static_cast<std::size_t>(i < 0 ? 7 : i) % 8];
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

  void extend(double x, double y) {
    if (!std::isfinite(x) || !std::isfinite(y)) return;
    lo_[0] = std::min(lo_[0], x);
    lo_[1] = std::min(lo_[1], y);
    hi_[0] = std::max(hi_[0], x);
    hi_[1] = std::max(hi_[1], y);
  }

  std::string title_;
  int size_;
  std::vector<Item> items_;
  std::array<double, 2> lo_{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  std::array<double, 2> hi_{-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
};

}  // namespace ism
