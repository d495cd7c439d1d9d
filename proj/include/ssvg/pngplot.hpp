#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ssvg {

struct Rgb {
  uint8_t r = 0, g = 0, b = 0;
};

struct Canvas {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pix;  // rgb, row-major

  Canvas(int w, int h, Rgb bg = {255, 255, 255});
  void set(int x, int y, Rgb c);
  void fill_rect(int x, int y, int w, int h, Rgb c);
  void line(int x0, int y0, int x1, int y1, Rgb c);
  // 5x7 bitmap font, uppercased; supports A-Z 0-9 % . - _ / : and space.
  void text(int x, int y, const std::string& s, Rgb c);
};

// Minimal PNG encoder (stored-deflate zlib stream); output bytes are a pure
// function of the canvas.
void write_png(const std::string& path, const Canvas& canvas);

struct PlotSeries {
  std::string label;
  std::vector<double> xs;
  std::vector<double> ys;
};

void line_plot_png(const std::string& path, const std::string& title,
                   const std::vector<PlotSeries>& series, const std::string& x_label,
                   const std::string& y_label);

void bar_plot_png(const std::string& path, const std::string& title,
                  const std::vector<std::string>& labels, const std::vector<double>& values);

}  // namespace ssvg
