#pragma once

// Small dependency-free SVG charts: line/scatter plots, heatmaps, horizontal
// bar charts and a SHAP summary scatter. Output is deterministic text.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace ma::svg {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
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

inline std::string label_number(double v) {
  char buf[32];
  if (v != 0.0 && (std::abs(v) >= 1e5 || std::abs(v) < 1e-3)) {
    std::snprintf(buf, sizeof buf, "%.2g", v);
  } else {
    std::snprintf(buf, sizeof buf, "%.4g", v);
  }
  return buf;
}

/// Viridis-like ramp on [0, 1].
inline std::string ramp(double u) {
  static constexpr std::array<std::array<int, 3>, 5> kStops = {
      {{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}}};
  if (std::isnan(u)) return "#dddddd";
  u = std::clamp(u, 0.0, 1.0) * (kStops.size() - 1);
  const auto i = std::min(static_cast<std::size_t>(u), kStops.size() - 2);
  const double f = u - static_cast<double>(i);
  char buf[8];
  int c[3];
  for (int k = 0; k < 3; ++k) {
    c[k] = static_cast<int>(std::lround(kStops[i][k] + f * (kStops[i + 1][k] - kStops[i][k])));
  }
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c[0], c[1], c[2]);
  return buf;
}

inline constexpr std::array<const char*, 8> kPalette = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                         "#9467bd", "#8c564b", "#e377c2", "#17becf"};

class Document {
 public:
  Document(double width, double height) : w_(width), h_(height) {}

  void text(double x, double y, const std::string& s, const char* anchor = "middle", int size = 12,
            double rotate = 0.0) {
    body_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-size=\"" << size
          << "\" text-anchor=\"" << anchor << "\"";
    if (rotate != 0.0) body_ << " transform=\"rotate(" << num(rotate) << ' ' << num(x) << ' ' << num(y) << ")\"";
    body_ << ">" << escape(s) << "</text>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill, const char* stroke = "none") {
    body_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w) << "\" height=\""
          << num(h) << "\" fill=\"" << fill << "\" stroke=\"" << stroke << "\"/>\n";
  }
  void line(double x1, double y1, double x2, double y2, const std::string& stroke = "#000", double width = 1.0) {
    body_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2) << "\" y2=\"" << num(y2)
          << "\" stroke=\"" << stroke << "\" stroke-width=\"" << num(width) << "\"/>\n";
  }
  void circle(double cx, double cy, double r, const std::string& fill) {
    body_ << "<circle cx=\"" << num(cx) << "\" cy=\"" << num(cy) << "\" r=\"" << num(r) << "\" fill=\"" << fill
          << "\"/>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke, double width = 1.5) {
    body_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"" << num(width) << "\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
      body_ << (i ? " " : "") << num(pts[i].first) << ',' << num(pts[i].second);
    }
    body_ << "\"/>\n";
  }

  std::string str() const {
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w_) << "\" height=\"" << num(h_)
        << "\" viewBox=\"0 0 " << num(w_) << ' ' << num(h_) << "\" font-family=\"sans-serif\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << body_.str() << "</svg>\n";
    return out.str();
  }

 private:
  double w_, h_;
  std::ostringstream body_;
};

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  bool markers = false;  // points instead of a connected line
};

inline std::pair<double, double> finite_range(const std::vector<double>& v) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double x : v) {
    if (std::isfinite(x)) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  if (!std::isfinite(lo)) return {0.0, 1.0};
  if (lo == hi) return {lo - 0.5, hi + 0.5};
  return {lo, hi};
}

inline std::string line_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                              const std::vector<Series>& series) {
  const double W = 640, H = 420, L = 70, R = 150, T = 40, B = 50;
  Document d(W, H);
  std::vector<double> xs, ys;
  for (const auto& s : series) {
    xs.insert(xs.end(), s.x.begin(), s.x.end());
    ys.insert(ys.end(), s.y.begin(), s.y.end());
  }
  const auto [x0, x1] = finite_range(xs);
  const auto [y0, y1] = finite_range(ys);
  const auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  const auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  d.text(W / 2, 22, title, "middle", 14);
  d.line(L, H - B, W - R, H - B);
  d.line(L, T, L, H - B);
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
    d.text(px(xv), H - B + 16, label_number(xv), "middle", 10);
    d.text(L - 6, py(yv) + 4, label_number(yv), "end", 10);
  }
  d.text((L + W - R) / 2, H - 10, xlabel);
  d.text(16, (T + H - B) / 2, ylabel, "middle", 12, -90);
  for (std::size_t s = 0; s < series.size(); ++s) {
    const std::string color = kPalette[s % kPalette.size()];
    const auto& se = series[s];
    if (se.markers) {
      for (std::size_t i = 0; i < se.x.size(); ++i) {
        if (std::isfinite(se.x[i]) && std::isfinite(se.y[i])) d.circle(px(se.x[i]), py(se.y[i]), 2.5, color);
      }
    } else {
      std::vector<std::pair<double, double>> pts;
      for (std::size_t i = 0; i < se.x.size(); ++i) {
        if (std::isfinite(se.x[i]) && std::isfinite(se.y[i])) pts.emplace_back(px(se.x[i]), py(se.y[i]));
      }
      d.polyline(pts, color);
    }
    const double ly = T + 16.0 * static_cast<double>(s);
    d.rect(W - R + 12, ly - 8, 10, 10, color);
    d.text(W - R + 28, ly + 1, se.label, "start", 11);
  }
  return d.str();
}

/// values[r][c]; NaN cells are drawn grey.
inline std::string heatmap(const std::string& title, const std::vector<std::string>& row_labels,
                           const std::vector<std::string>& col_labels, const std::vector<std::vector<double>>& values,
                           const std::string& value_label) {
  const double cell_w = std::max(24.0, 480.0 / std::max<std::size_t>(col_labels.size(), 1));
  const double cell_h = std::max(6.0, std::min(24.0, 420.0 / std::max<std::size_t>(row_labels.size(), 1)));
  const double L = 70, T = 40, B = 70, legend = 110;
  const double W = L + cell_w * col_labels.size() + legend;
  const double H = T + cell_h * row_labels.size() + B;
  Document d(W, H);
  std::vector<double> all;
  for (const auto& r : values) all.insert(all.end(), r.begin(), r.end());
  const auto [lo, hi] = finite_range(all);
  d.text(W / 2, 22, title, "middle", 14);
  for (std::size_t r = 0; r < row_labels.size(); ++r) {
    for (std::size_t c = 0; c < col_labels.size(); ++c) {
      const double v = values[r][c];
      d.rect(L + c * cell_w, T + r * cell_h, cell_w, cell_h, ramp(std::isfinite(v) ? (v - lo) / (hi - lo) : NAN));
    }
    const std::size_t every = std::max<std::size_t>(1, row_labels.size() / 24);
    if (r % every == 0) d.text(L - 6, T + (r + 0.5) * cell_h + 4, row_labels[r], "end", 10);
  }
  for (std::size_t c = 0; c < col_labels.size(); ++c) {
    d.text(L + (c + 0.5) * cell_w, T + row_labels.size() * cell_h + 14, col_labels[c], "end", 10, -45);
  }
  const double lx = W - legend + 20;
  for (int k = 0; k < 20; ++k) d.rect(lx, T + (19 - k) * 10.0, 14, 10, ramp(k / 19.0));
  d.text(lx + 18, T + 8, label_number(hi), "start", 10);
  d.text(lx + 18, T + 200, label_number(lo), "start", 10);
  d.text(lx, T + 220, value_label, "start", 10);
  return d.str();
}

/// Horizontal bars, one per label, in the given order.
inline std::string bar_chart(const std::string& title, const std::vector<std::string>& labels,
                             const std::vector<double>& values, const std::string& value_label) {
  const double bar_h = 20, L = 170, R = 40, T = 40, B = 50, W = 640;
  const double H = T + bar_h * labels.size() + B;
  Document d(W, H);
  auto [lo, hi] = finite_range(values);
  lo = std::min(lo, 0.0);
  hi = std::max(hi, 0.0);
  const auto px = [&](double v) { return L + (v - lo) / (hi - lo) * (W - L - R); };
  d.text(W / 2, 22, title, "middle", 14);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double v = values[i];
    const double a = px(std::min(v, 0.0)), b = px(std::max(v, 0.0));
    d.rect(a, T + i * bar_h + 3, std::max(b - a, 0.5), bar_h - 6, v >= 0 ? "#d62728" : "#1f77b4");
    d.text(L - 6, T + i * bar_h + 14, labels[i], "end", 11);
    d.text(b + 4, T + i * bar_h + 14, label_number(v), "start", 9);
  }
  d.line(px(0.0), T, px(0.0), T + bar_h * labels.size());
  d.text((L + W - R) / 2, H - 14, value_label);
  return d.str();
}

/// One row per feature; each dot is one instance's attribution, coloured by
/// the instance's feature value (low = dark, high = bright).
inline std::string shap_summary(const std::string& title, const std::vector<std::string>& features,
                                const std::vector<std::vector<double>>& phi,
                                const std::vector<std::vector<double>>& feature_values) {
  const double row_h = 26, L = 170, R = 40, T = 40, B = 50, W = 640;
  const double H = T + row_h * features.size() + B;
  Document d(W, H);
  std::vector<double> all;
  for (const auto& r : phi) all.insert(all.end(), r.begin(), r.end());
  const auto [lo, hi] = finite_range(all);
  const auto px = [&](double v) { return L + (v - lo) / (hi - lo) * (W - L - R); };
  d.text(W / 2, 22, title, "middle", 14);
  for (std::size_t j = 0; j < features.size(); ++j) {
    std::vector<double> col;
    for (const auto& r : feature_values) col.push_back(r[j]);
    const auto [vlo, vhi] = finite_range(col);
    const double y = T + (j + 0.5) * row_h;
    d.text(L - 6, y + 4, features[j], "end", 11);
    for (std::size_t i = 0; i < phi.size(); ++i) {
      const double jitter = (static_cast<double>((i * 7919) % 11) - 5.0) * 1.2;
      d.circle(px(phi[i][j]), y + jitter, 2.2, ramp((feature_values[i][j] - vlo) / (vhi - vlo)));
    }
  }
  d.line(px(0.0), T, px(0.0), T + row_h * features.size(), "#888");
  d.text((L + W - R) / 2, H - 14, "SHAP value");
  return d.str();
}

}  // namespace ma::svg
