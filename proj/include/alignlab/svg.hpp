#pragma once

#include "alignlab/dataset.hpp"
#include "alignlab/dynamics.hpp"

#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

namespace alignlab {

struct FigureOptions {
  int width = 480;
  int height = 360;
  int samples = 400;  // polyline vertices for h
  std::string title;
};

/// An SVG document, or the reason it was skipped.
struct Figure {
  std::optional<std::string> svg;
  std::string notice;
};

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

inline std::string svg_open(int w, int h) {
  return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
         "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" +
         std::to_string(w) + "\" height=\"" + std::to_string(h) + "\" viewBox=\"0 0 " + std::to_string(w) + " " +
         std::to_string(h) + "\">\n<rect x=\"0\" y=\"0\" width=\"" + std::to_string(w) + "\" height=\"" +
         std::to_string(h) + "\" fill=\"white\"/>\n";
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

inline std::string title_text(const std::string& title, double x, double y) {
  if (title.empty()) return {};
  return "<text x=\"" + fmt(x) + "\" y=\"" + fmt(y) +
         "\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">" + escape(title) + "</text>\n";
}

/// Univariate view of the data: the non-bias coordinate when d = 1, or when
/// d = 2 and the second coordinate is a shared constant.
inline std::optional<int> univariate_axis(const Dataset& ds) {
  if (ds.d() == 1) return 0;
  if (ds.d() != 2) return std::nullopt;
  const double c = ds.features()(0, 1);
  for (int k = 1; k < ds.n(); ++k) {
    if (ds.features()(k, 1) != c) return std::nullopt;
  }
  return 0;
}

}  // namespace detail

/// h(x) over the data range with the data points and, when given, the
/// linear fit <beta, x> dashed.
inline Figure function_plot(const NetworkState& s, const Dataset& ds, double gamma,
                            const std::optional<Vec>& beta = std::nullopt, const FigureOptions& opt = {}) {
  using detail::fmt;
  Figure fig;
  const auto axis = detail::univariate_axis(ds);
  if (!axis) {
    fig.notice = "function plot needs univariate data (d = 1, or d = 2 with a constant bias feature); skipped";
    return fig;
  }
  if (s.m() > 0 && s.d() != ds.d()) throw ConfigError("network dimension does not match the dataset");
  const Vec bias_row = ds.features().row(0).transpose();
  auto point = [&](double x) {
    Vec p = bias_row;
    p[*axis] = x;
    return p;
  };
  const Vec xs = ds.features().col(*axis);
  double x_lo = xs.minCoeff();
  double x_hi = xs.maxCoeff();
  const double span = x_hi > x_lo ? x_hi - x_lo : 1.0;
  x_lo -= 0.25 * span;
  x_hi += 0.25 * span;

  std::vector<double> grid(static_cast<std::size_t>(opt.samples));
  std::vector<double> h(grid.size());
  std::vector<double> lin(grid.size());
  double y_lo = ds.labels().minCoeff();
  double y_hi = ds.labels().maxCoeff();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    grid[i] = x_lo + (x_hi - x_lo) * static_cast<double>(i) / static_cast<double>(grid.size() - 1);
    const Vec p = point(grid[i]);
    if (s.m() > 0) {
      h[i] = forward(s, p, gamma);
      y_lo = std::min(y_lo, h[i]);
      y_hi = std::max(y_hi, h[i]);
    }
    if (beta) {
      lin[i] = beta->dot(p);
      y_lo = std::min(y_lo, lin[i]);
      y_hi = std::max(y_hi, lin[i]);
    }
  }
  y_lo = std::min(y_lo, 0.0);
  y_hi = std::max(y_hi, 0.0);
  const double ypad = 0.1 * (y_hi > y_lo ? y_hi - y_lo : 1.0);
  y_lo -= ypad;
  y_hi += ypad;

  const double left = 56;
  const double right = opt.width - 16.0;
  const double top = 32;
  const double bottom = opt.height - 40.0;
  auto px = [&](double x) { return left + (x - x_lo) / (x_hi - x_lo) * (right - left); };
  auto py = [&](double y) { return bottom - (y - y_lo) / (y_hi - y_lo) * (bottom - top); };

  std::string out = detail::svg_open(opt.width, opt.height);
  out += detail::title_text(opt.title, opt.width / 2.0, 20);
  out += "<g id=\"axes\" stroke=\"black\" stroke-width=\"1\" fill=\"none\">\n";
  out += "<rect x=\"" + fmt(left) + "\" y=\"" + fmt(top) + "\" width=\"" + fmt(right - left) + "\" height=\"" +
         fmt(bottom - top) + "\"/>\n";
  out += "<line x1=\"" + fmt(left) + "\" y1=\"" + fmt(py(0)) + "\" x2=\"" + fmt(right) + "\" y2=\"" + fmt(py(0)) +
         "\" stroke=\"#999999\" stroke-dasharray=\"2,3\"/>\n";
  out += "</g>\n<g id=\"ticks\" font-family=\"sans-serif\" font-size=\"10\">\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x_lo + (x_hi - x_lo) * i / 4.0;
    const double yv = y_lo + (y_hi - y_lo) * i / 4.0;
    out += "<text x=\"" + fmt(px(xv)) + "\" y=\"" + fmt(bottom + 14) + "\" text-anchor=\"middle\">" +
           detail::tick_label(xv) + "</text>\n";
    out += "<text x=\"" + fmt(left - 4) + "\" y=\"" + fmt(py(yv) + 3) + "\" text-anchor=\"end\">" +
           detail::tick_label(yv) + "</text>\n";
  }
  out += "</g>\n";
  if (beta) {
    out += "<polyline id=\"ols\" fill=\"none\" stroke=\"#888888\" stroke-width=\"1\" stroke-dasharray=\"5,4\" points=\"";
    for (std::size_t i = 0; i < grid.size(); ++i) out += fmt(px(grid[i])) + "," + fmt(py(lin[i])) + " ";
    out += "\"/>\n";
  }
  if (s.m() > 0) {
    out += "<polyline id=\"estimate\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < grid.size(); ++i) out += fmt(px(grid[i])) + "," + fmt(py(h[i])) + " ";
    out += "\"/>\n";
  }
  out += "<g id=\"data\" fill=\"black\">\n";
  for (int k = 0; k < ds.n(); ++k) {
    out += "<circle cx=\"" + fmt(px(xs[k])) + "\" cy=\"" + fmt(py(ds.y(k))) + "\" r=\"3.5\"/>\n";
  }
  out += "</g>\n</svg>\n";
  fig.svg = std::move(out);
  return fig;
}

/// Polar view of the hidden weights: one marker per neuron at angle(w_j)
/// and radius r0 + (R - r0) ||w_j|| / max ||w||, blue for a_j > 0 and red
/// for a_j < 0. Data directions are crosses, cone boundaries dotted rays.
inline Figure polar_plot(const NetworkState& s, const Dataset& ds, const FigureOptions& opt = {}) {
  using detail::fmt;
  Figure fig;
  if (ds.d() != 2) {
    fig.notice = "polar plot is only drawn for d = 2; skipped";
    return fig;
  }
  if (s.m() > 0 && s.d() != 2) throw ConfigError("network dimension does not match the dataset");
  const int size = std::min(opt.width, opt.height);
  const double cx = opt.width / 2.0;
  const double cy = opt.height / 2.0 + 8.0;
  const double outer = size / 2.0 - 28.0;
  const double inner = 0.2 * outer;
  auto at = [&](double angle, double r, double& x, double& y) {
    x = cx + r * std::cos(angle);
    y = cy - r * std::sin(angle);
  };

  std::string out = detail::svg_open(opt.width, opt.height);
  out += detail::title_text(opt.title, opt.width / 2.0, 20);
  out += "<g id=\"axes\" fill=\"none\" stroke=\"black\" stroke-width=\"1\">\n";
  out += "<circle cx=\"" + fmt(cx) + "\" cy=\"" + fmt(cy) + "\" r=\"" + fmt(inner) + "\"/>\n";
  out += "<circle cx=\"" + fmt(cx) + "\" cy=\"" + fmt(cy) + "\" r=\"" + fmt(outer) +
         "\" stroke=\"#cccccc\"/>\n</g>\n";

  out += "<g id=\"cone-boundaries\" stroke=\"#555555\" stroke-width=\"1\" stroke-dasharray=\"1,3\">\n";
  for (int k = 0; k < ds.n(); ++k) {
    const double base = std::atan2(ds.features()(k, 1), ds.features()(k, 0)) + std::numbers::pi / 2.0;
    for (double a : {base, base + std::numbers::pi}) {
      double x0, y0, x1, y1;
      at(a, inner, x0, y0);
      at(a, outer, x1, y1);
      out += "<line x1=\"" + fmt(x0) + "\" y1=\"" + fmt(y0) + "\" x2=\"" + fmt(x1) + "\" y2=\"" + fmt(y1) + "\"/>\n";
    }
  }
  out += "</g>\n";

  double max_norm = 0.0;
  for (int j = 0; j < s.m(); ++j) max_norm = std::max(max_norm, s.w.row(j).norm());
  out += "<g id=\"neurons\" stroke=\"none\">\n";
  for (int j = 0; j < s.m(); ++j) {
    const double nrm = s.w.row(j).norm();
    const double angle = std::atan2(s.w(j, 1), s.w(j, 0));
    const double r = inner + (max_norm > 0.0 ? (outer - inner) * nrm / max_norm : 0.0);
    double x, y;
    at(angle, r, x, y);
    const char* color = s.a[j] > 0.0 ? "#1f77b4" : (s.a[j] < 0.0 ? "#d62728" : "#7f7f7f");
    out += "<circle cx=\"" + fmt(x) + "\" cy=\"" + fmt(y) + "\" r=\"2\" fill=\"" + color + "\"/>\n";
  }
  out += "</g>\n";

  out += "<g id=\"data\" stroke=\"black\" stroke-width=\"1.5\">\n";
  for (int k = 0; k < ds.n(); ++k) {
    const double a = std::atan2(ds.features()(k, 1), ds.features()(k, 0));
    double x, y;
    at(a, outer, x, y);
    out += "<path d=\"M " + fmt(x - 5) + " " + fmt(y - 5) + " L " + fmt(x + 5) + " " + fmt(y + 5) + " M " +
           fmt(x - 5) + " " + fmt(y + 5) + " L " + fmt(x + 5) + " " + fmt(y - 5) + "\"/>\n";
  }
  out += "</g>\n</svg>\n";
  fig.svg = std::move(out);
  return fig;
}

}  // namespace alignlab
