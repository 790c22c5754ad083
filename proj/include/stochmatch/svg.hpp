#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "stochmatch/io.hpp"
#include "stochmatch/landmark.hpp"
#include "stochmatch/string_method.hpp"

namespace stochmatch {

namespace detail {

class SvgCanvas {
 public:
  SvgCanvas(double width, double height) : width_(width), height_(height) {}

  void fit(Vec2 lo, Vec2 hi) {
    const double pad_x = 0.08 * std::max(hi.x - lo.x, 1e-9);
    const double pad_y = 0.08 * std::max(hi.y - lo.y, 1e-9);
    lo_ = {lo.x - pad_x, lo.y - pad_y};
    const Vec2 hi_p{hi.x + pad_x, hi.y + pad_y};
    scale_ = std::min(width_ / (hi_p.x - lo_.x), height_ / (hi_p.y - lo_.y));
    hi_ = hi_p;
  }

  double px(double x) const { return (x - lo_.x) * scale_; }
  double py(double y) const { return height_ - (y - lo_.y) * scale_; }
  double len(double d) const { return d * scale_; }

  void open(std::ostream& out) const {
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width_
        << "\" height=\"" << height_ << "\" viewBox=\"0 0 " << width_ << ' ' << height_
        << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  }

  void close(std::ostream& out) const { out << "</svg>\n"; }

  void polyline(std::ostream& out, const std::vector<Vec2>& pts, const std::string& stroke,
                double stroke_width, bool closed, const std::string& dash = "") const {
    if (pts.empty()) return;
    out << (closed ? "<polygon" : "<polyline") << " fill=\"none\" stroke=\"" << stroke
        << "\" stroke-width=\"" << stroke_width << "\"";
    if (!dash.empty()) out << " stroke-dasharray=\"" << dash << "\"";
    out << " points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i) out << ' ';
      out << format_double(px(pts[i].x)) << ',' << format_double(py(pts[i].y));
    }
    out << "\"/>\n";
  }

  void cross(std::ostream& out, Vec2 p, double half, const std::string& stroke) const {
    const double cx = px(p.x), cy = py(p.y);
    out << "<path stroke=\"" << stroke << "\" stroke-width=\"1\" d=\"M" << format_double(cx - half)
        << ' ' << format_double(cy) << " H" << format_double(cx + half) << " M"
        << format_double(cx) << ' ' << format_double(cy - half) << " V"
        << format_double(cy + half) << "\"/>\n";
  }

  // 2-sigma ellipse of a symmetric 2x2 covariance, axis lengths in data units
  void covariance_ellipse(std::ostream& out, Vec2 center, const Mat2& cov,
                          const std::string& stroke) const {
    const double tr = 0.5 * (cov.a + cov.d);
    const double off = std::sqrt(std::max(0.25 * (cov.a - cov.d) * (cov.a - cov.d) + cov.b * cov.b, 0.0));
    const double l1 = std::max(tr + off, 0.0);
    const double l2 = std::max(tr - off, 0.0);
    const double angle = 0.5 * std::atan2(2.0 * cov.b, cov.a - cov.d);
    out << "<ellipse cx=\"0\" cy=\"0\" rx=\"" << format_double(len(2.0 * std::sqrt(l1)))
        << "\" ry=\"" << format_double(len(2.0 * std::sqrt(l2))) << "\" fill=\"none\" stroke=\""
        << stroke << "\" stroke-width=\"0.7\" transform=\"translate("
        << format_double(px(center.x)) << ' ' << format_double(py(center.y)) << ") rotate("
        << format_double(-angle * 180.0 / M_PI) << ")\"/>\n";
  }

 private:
  double width_, height_;
  Vec2 lo_{0, 0}, hi_{1, 1};
  double scale_ = 1.0;
};

inline void extend_bounds(Vec2& lo, Vec2& hi, Vec2 p) {
  lo.x = std::min(lo.x, p.x);
  lo.y = std::min(lo.y, p.y);
  hi.x = std::max(hi.x, p.x);
  hi.y = std::max(hi.y, p.y);
}

}  // namespace detail

struct StringFigure {
  LandmarkConfig source;
  LandmarkConfig target;
  std::vector<Trajectory> strings;            // a subset of sampled strings
  Trajectory mean_string;                     // drawn when non-empty
  std::vector<LandmarkConfig> endpoint_samples;
  PathStatistics statistics;                  // covariance ellipses when non-empty
  std::vector<std::size_t> ellipse_t_indices; // which t-slices get ellipses
};

/**
 * Fig-style strings plot: source/target outlines, sampled strings, the mean
 * string, endpoint samples, and 2-sigma covariance ellipses per selected
 * t-slice and landmark. Zero covariance draws no ellipses.
 */
inline void emit_svg_strings(const std::filesystem::path& path, const StringFigure& fig) {
  Vec2 lo{1e300, 1e300}, hi{-1e300, -1e300};
  for (Vec2 p : fig.source.points) detail::extend_bounds(lo, hi, p);
  for (Vec2 p : fig.target.points) detail::extend_bounds(lo, hi, p);
  for (const Trajectory& s : fig.strings)
    for (Vec2 p : s.values) detail::extend_bounds(lo, hi, p);
  for (const LandmarkConfig& c : fig.endpoint_samples)
    for (Vec2 p : c.points) detail::extend_bounds(lo, hi, p);
  if (lo.x > hi.x) throw std::invalid_argument("emit_svg_strings: nothing to draw");

  detail::SvgCanvas canvas(640, 640);
  canvas.fit(lo, hi);
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  canvas.open(out);

  for (const Trajectory& s : fig.strings)
    for (std::size_t i = 0; i < s.n_points; ++i) {
      std::vector<Vec2> line;
      line.reserve(s.n_t);
      for (std::size_t k = 0; k < s.n_t; ++k) line.push_back(s.at(k, i));
      canvas.polyline(out, line, "#9ecae1", 0.6, false);
    }

  if (fig.mean_string.n_t > 0)
    for (std::size_t i = 0; i < fig.mean_string.n_points; ++i) {
      std::vector<Vec2> line;
      for (std::size_t k = 0; k < fig.mean_string.n_t; ++k) line.push_back(fig.mean_string.at(k, i));
      canvas.polyline(out, line, "#1f4e9c", 2.2, false, "7,4");
    }

  for (const LandmarkConfig& c : fig.endpoint_samples)
    for (Vec2 p : c.points) canvas.cross(out, p, 2.5, "#d62728");

  if (fig.statistics.mean.n_t > 0)
    for (std::size_t k : fig.ellipse_t_indices)
      for (std::size_t i = 0; i < fig.statistics.mean.n_points; ++i) {
        const Mat2& cov = fig.statistics.covariance.at(k, i);
        if (cov.a + cov.d < 1e-15) continue;
        canvas.covariance_ellipse(out, fig.statistics.mean.at(k, i), cov, "#7f7f7f");
      }

  canvas.polyline(out, fig.source.points, "#1f77b4", 1.8, true);
  for (Vec2 p : fig.source.points) canvas.cross(out, p, 3.5, "#1f77b4");
  canvas.polyline(out, fig.target.points, "#d62728", 1.8, true);

  canvas.close(out);
}

/**
 * Mean-evolution overlay: observation outlines, the template iterate history,
 * and the initial/final templates.
 */
inline void emit_svg_mean_evolution(const std::filesystem::path& path,
                                    const std::vector<LandmarkConfig>& observations,
                                    const LandmarkConfig& init,
                                    const std::vector<LandmarkConfig>& history) {
  Vec2 lo{1e300, 1e300}, hi{-1e300, -1e300};
  for (const LandmarkConfig& c : observations)
    for (Vec2 p : c.points) detail::extend_bounds(lo, hi, p);
  for (Vec2 p : init.points) detail::extend_bounds(lo, hi, p);
  for (const LandmarkConfig& c : history)
    for (Vec2 p : c.points) detail::extend_bounds(lo, hi, p);
  if (lo.x > hi.x) throw std::invalid_argument("emit_svg_mean_evolution: nothing to draw");

  detail::SvgCanvas canvas(640, 640);
  canvas.fit(lo, hi);
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  canvas.open(out);
  for (const LandmarkConfig& c : observations) canvas.polyline(out, c.points, "#bbbbbb", 0.8, true);
  for (const LandmarkConfig& c : history) canvas.polyline(out, c.points, "#2ca02c", 0.8, true, "4,3");
  canvas.polyline(out, init.points, "#1f77b4", 1.8, true);
  if (!history.empty()) canvas.polyline(out, history.back().points, "#d62728", 2.0, true);
  canvas.close(out);
}

}  // namespace stochmatch
