#pragma once

// Figure output: SVG line charts and PNG rasters (fields, design montages).

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cloak/em_solver.hpp"

namespace cloak::plot {

struct Image {
  int width = 0, height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 255) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, fill) {}

  void set(int x, int y, std::array<std::uint8_t, 3> c) {
    auto* p = &rgb[(static_cast<std::size_t>(y) * width + x) * 3];
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }
};

inline void write_png(const std::filesystem::path& path, const Image& img) {
  std::FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw FormatError("png: cannot open " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw FormatError("png: encoder failure for " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(&img.rgb[static_cast<std::size_t>(y) * img.width * 3]));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

/// Blue-white-red for signed data in [-1, 1].
inline std::array<std::uint8_t, 3> diverging(double t) {
  t = std::clamp(t, -1.0, 1.0);
  auto mix = [](double a, double b, double s) { return static_cast<std::uint8_t>(std::lround(a + (b - a) * s)); };
  if (t < 0) return {mix(255, 33, -t), mix(255, 102, -t), mix(255, 172, -t)};
  return {mix(255, 178, t), mix(255, 24, t), mix(255, 43, t)};
}

/// Dark-to-bright ramp for data in [0, 1].
inline std::array<std::uint8_t, 3> sequential(double t) {
  t = std::clamp(t, 0.0, 1.0);
  static constexpr std::array<std::array<double, 3>, 5> stops{
      {{0, 0, 4}, {87, 16, 110}, {188, 55, 84}, {249, 142, 9}, {252, 255, 164}}};
  const double u = t * (stops.size() - 1);
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(u), stops.size() - 2);
  const double f = u - static_cast<double>(i);
  std::array<std::uint8_t, 3> c{};
  for (int k = 0; k < 3; ++k) c[k] = static_cast<std::uint8_t>(std::lround(stops[i][k] + (stops[i + 1][k] - stops[i][k]) * f));
  return c;
}

/// |H_z| and Re(H_z) of the total field, normalized to the background
/// amplitude, side by side. PEC cells are drawn grey; the PML is cropped.
inline Image field_maps(const FieldSolution& sol, double view_radius, int scale = 2) {
  const double h0 = std::abs(sol.hz_background.front());
  const int c0 = std::max(0, static_cast<int>(std::floor((sol.half_width() - view_radius) / sol.cell_size)));
  const int m = sol.n - 2 * c0;
  const int gap = 8;
  Image img(2 * m * scale + gap, m * scale);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < m; ++c) {
      const auto k = sol.index(c0 + r, c0 + c);
      const std::complex<double> total = sol.pec_mask[k] ? 0.0 : sol.hz_scattered[k] + sol.hz_background[k];
      const auto grey = std::array<std::uint8_t, 3>{128, 128, 128};
      const auto mag = sol.pec_mask[k] ? grey : sequential(std::abs(total) / h0 / 2.0);
      const auto re = sol.pec_mask[k] ? grey : diverging(total.real() / h0 / 2.0);
      const int y = (m - 1 - r) * scale;  // y grows upward in the image
      for (int dy = 0; dy < scale; ++dy)
        for (int dx = 0; dx < scale; ++dx) {
          img.set(c * scale + dx, y + dy, mag);
          img.set(m * scale + gap + c * scale + dx, y + dy, re);
        }
    }
  return img;
}

/// Grid of designs; each tile is the mirror-expanded full shell.
inline Image montage(std::span<const QuadrantImage> designs, int columns = 8, int scale = 1) {
  if (designs.empty()) return Image(1, 1);
  columns = std::max(1, std::min<int>(columns, static_cast<int>(designs.size())));
  const int rows = static_cast<int>((designs.size() + columns - 1) / columns);
  const int tile = 2 * designs.front().size() * scale, pad = 4;
  Image img(columns * (tile + pad) + pad, rows * (tile + pad) + pad, 200);
  for (std::size_t d = 0; d < designs.size(); ++d) {
    const auto full = mirror_expand(designs[d]);
    const int ox = pad + static_cast<int>(d % columns) * (tile + pad);
    const int oy = pad + static_cast<int>(d / columns) * (tile + pad);
    for (int r = 0; r < full.size(); ++r)
      for (int c = 0; c < full.size(); ++c) {
        const std::uint8_t v = full.at(full.size() - 1 - r, c) ? 20 : 255;
        for (int dy = 0; dy < scale; ++dy)
          for (int dx = 0; dx < scale; ++dx) img.set(ox + c * scale + dx, oy + r * scale + dy, {v, v, v});
      }
  }
  return img;
}

struct Series {
  std::string label;
  std::string color;
  std::vector<double> x, y;
};

struct LineChart {
  std::string title, x_label, y_label;
  bool log_y = false;
  std::vector<Series> series;
};

inline std::string render_svg(const LineChart& chart) {
  const double W = 720, H = 440, L = 80, R = 170, T = 40, B = 60;
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  auto ty = [&](double v) { return chart.log_y ? std::log10(v) : v; };
  for (const auto& s : chart.series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i]) || (chart.log_y && !(s.y[i] > 0))) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, ty(s.y[i]));
      y1 = std::max(y1, ty(s.y[i]));
    }
  if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (ty(y) - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream os;
  os.precision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << chart.title << "</text>\n";
  os << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 5; ++k) {
    const double xv = x0 + (x1 - x0) * k / 5.0, yv = y0 + (y1 - y0) * k / 5.0;
    const double xp = L + (W - L - R) * k / 5.0, yp = H - B - (H - T - B) * k / 5.0;
    os << "<line x1=\"" << xp << "\" y1=\"" << H - B << "\" x2=\"" << xp << "\" y2=\"" << H - B + 5
       << "\" stroke=\"black\"/><text x=\"" << xp << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << xv
       << "</text>\n";
    os << "<line x1=\"" << L - 5 << "\" y1=\"" << yp << "\" x2=\"" << L << "\" y2=\"" << yp
       << "\" stroke=\"black\"/><text x=\"" << L - 8 << "\" y=\"" << yp + 4 << "\" text-anchor=\"end\">"
       << (chart.log_y ? std::pow(10.0, yv) : yv) << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">" << chart.x_label
     << "</text>\n";
  os << "<text x=\"18\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
     << (T + H - B) / 2 << ")\">" << chart.y_label << "</text>\n";
  for (std::size_t si = 0; si < chart.series.size(); ++si) {
    const auto& s = chart.series[si];
    std::string pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i]) || (chart.log_y && !(s.y[i] > 0))) continue;
      pts += std::to_string(px(s.x[i])) + "," + std::to_string(py(s.y[i])) + " ";
    }
    os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\" points=\"" << pts << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size() && s.x.size() <= 40; ++i)
      if (std::isfinite(s.y[i]) && (!chart.log_y || s.y[i] > 0))
        os << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\"" << s.color << "\"/>\n";
    const double ly = T + 16 + 20 * static_cast<double>(si);
    os << "<line x1=\"" << W - R + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 36 << "\" y2=\"" << ly
       << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/><text x=\"" << W - R + 42 << "\" y=\"" << ly + 4
       << "\">" << s.label << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

inline void write_svg(const std::filesystem::path& path, const LineChart& chart) {
  std::ofstream os(path);
  if (!os) throw FormatError("svg: cannot write " + path.string());
  os << render_svg(chart);
}

}  // namespace cloak::plot
