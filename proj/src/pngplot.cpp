#include "ssvg/pngplot.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ssvg {

Canvas::Canvas(int w, int h, Rgb bg) : width(w), height(h), pix(static_cast<size_t>(w) * h * 3) {
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) set(x, y, bg);
}

void Canvas::set(int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  const size_t i = (static_cast<size_t>(y) * width + x) * 3;
  pix[i] = c.r;
  pix[i + 1] = c.g;
  pix[i + 2] = c.b;
}

void Canvas::fill_rect(int x, int y, int w, int h, Rgb c) {
  for (int j = y; j < y + h; ++j)
    for (int i = x; i < x + w; ++i) set(i, j, c);
}

void Canvas::line(int x0, int y0, int x1, int y1, Rgb c) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    set(x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

namespace {

struct Glyph {
  char ch;
  uint8_t rows[7];  // low 5 bits, MSB = left column
};

const Glyph kFont[] = {
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
    {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
    {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
    {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
    {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
    {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'A', {0x0E, 0x11, 0x11, 0x11, 0x1F, 0x11, 0x11}},
    {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
    {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
    {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
    {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
    {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
    {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
    {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
    {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
    {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
    {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
    {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
    {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
    {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
    {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
    {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}},
    {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}},
    {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
    {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
    {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
    {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
    {'/', {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10}},
    {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
    {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
};

const Glyph* find_glyph(char c) {
  for (const auto& g : kFont)
    if (g.ch == c) return &g;
  return nullptr;
}

// ---- CRC32 / Adler32 for the PNG container ---------------------------------

uint32_t crc32_update(uint32_t crc, const uint8_t* data, size_t len) {
  static uint32_t table[256];
  static bool init = false;
  if (!init) {
    for (uint32_t n = 0; n < 256; ++n) {
      uint32_t c = n;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320U ^ (c >> 1) : c >> 1;
      table[n] = c;
    }
    init = true;
  }
  crc ^= 0xffffffffU;
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xffU] ^ (crc >> 8);
  return crc ^ 0xffffffffU;
}

uint32_t adler32(const std::vector<uint8_t>& data) {
  uint32_t a = 1, b = 0;
  for (uint8_t byte : data) {
    a = (a + byte) % 65521U;
    b = (b + a) % 65521U;
  }
  return (b << 16) | a;
}

void put_be32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& body) {
  put_be32(out, static_cast<uint32_t>(body.size()));
  std::vector<uint8_t> tb;
  tb.insert(tb.end(), type, type + 4);
  tb.insert(tb.end(), body.begin(), body.end());
  out.insert(out.end(), tb.begin(), tb.end());
  put_be32(out, crc32_update(0, tb.data(), tb.size()));
}

}  // namespace

void Canvas::text(int x, int y, const std::string& s, Rgb c) {
  int cx = x;
  for (char raw : s) {
    const char ch = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
    const Glyph* g = find_glyph(ch);
    if (g) {
      for (int r = 0; r < 7; ++r)
        for (int col = 0; col < 5; ++col)
          if (g->rows[r] & (1 << (4 - col))) set(cx + col, y + r, c);
    }
    cx += 6;
  }
}

void write_png(const std::string& path, const Canvas& canvas) {
  // raw scanlines with filter byte 0
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(canvas.height) * (canvas.width * 3 + 1));
  for (int y = 0; y < canvas.height; ++y) {
    raw.push_back(0);
    const uint8_t* row = canvas.pix.data() + static_cast<size_t>(y) * canvas.width * 3;
    raw.insert(raw.end(), row, row + canvas.width * 3);
  }

  // zlib stream with stored (uncompressed) deflate blocks
  std::vector<uint8_t> z;
  z.push_back(0x78);
  z.push_back(0x01);
  size_t off = 0;
  while (off < raw.size()) {
    const size_t n = std::min<size_t>(65535, raw.size() - off);
    const bool last = off + n == raw.size();
    z.push_back(last ? 1 : 0);
    z.push_back(static_cast<uint8_t>(n & 0xff));
    z.push_back(static_cast<uint8_t>(n >> 8));
    z.push_back(static_cast<uint8_t>(~n & 0xff));
    z.push_back(static_cast<uint8_t>((~n >> 8) & 0xff));
    z.insert(z.end(), raw.begin() + static_cast<std::ptrdiff_t>(off),
             raw.begin() + static_cast<std::ptrdiff_t>(off + n));
    off += n;
  }
  put_be32(z, adler32(raw));

  std::vector<uint8_t> png = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<uint8_t> ihdr;
  put_be32(ihdr, static_cast<uint32_t>(canvas.width));
  put_be32(ihdr, static_cast<uint32_t>(canvas.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // rgb
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  put_chunk(png, "IHDR", ihdr);
  put_chunk(png, "IDAT", z);
  put_chunk(png, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_png: cannot open " + path);
  f.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
  if (!f) throw std::runtime_error("write_png: write failed for " + path);
}

namespace {

const Rgb kPalette[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44},
                        {214, 39, 40},  {148, 103, 189}, {140, 86, 75}};

std::string fmt_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

}  // namespace

void line_plot_png(const std::string& path, const std::string& title,
                   const std::vector<PlotSeries>& series, const std::string& x_label,
                   const std::string& y_label) {
  const int W = 640, H = 440, L = 70, R = 180, T = 40, B = 50;
  Canvas cv(W, H);
  cv.text(L, 12, title, {0, 0, 0});

  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (size_t i = 0; i < s.xs.size(); ++i) {
      xmin = std::min(xmin, s.xs[i]);
      xmax = std::max(xmax, s.xs[i]);
      ymin = std::min(ymin, s.ys[i]);
      ymax = std::max(ymax, s.ys[i]);
    }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
  }
  if (ymin > ymax) {
    ymin = 0;
    ymax = 1;
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;

  const int pw = W - L - R, ph = H - T - B;
  auto px = [&](double x) { return L + static_cast<int>(std::lround((x - xmin) / (xmax - xmin) * pw)); };
  auto py = [&](double y) { return T + static_cast<int>(std::lround((1.0 - (y - ymin) / (ymax - ymin)) * ph)); };

  cv.line(L, T, L, T + ph, {0, 0, 0});
  cv.line(L, T + ph, L + pw, T + ph, {0, 0, 0});
  for (int i = 0; i <= 4; ++i) {
    const double yv = ymin + (ymax - ymin) * i / 4.0;
    const int yy = py(yv);
    cv.line(L - 3, yy, L, yy, {0, 0, 0});
    cv.text(6, yy - 3, fmt_tick(yv), {60, 60, 60});
    const double xv = xmin + (xmax - xmin) * i / 4.0;
    const int xx = px(xv);
    cv.line(xx, T + ph, xx, T + ph + 3, {0, 0, 0});
    cv.text(xx - 8, T + ph + 8, fmt_tick(xv), {60, 60, 60});
  }
  cv.text(L + pw / 2 - 3 * static_cast<int>(x_label.size()), H - 14, x_label, {0, 0, 0});
  cv.text(6, T - 14, y_label, {0, 0, 0});

  for (size_t si = 0; si < series.size(); ++si) {
    const Rgb c = kPalette[si % 6];
    const auto& s = series[si];
    for (size_t i = 0; i + 1 < s.xs.size(); ++i)
      cv.line(px(s.xs[i]), py(s.ys[i]), px(s.xs[i + 1]), py(s.ys[i + 1]), c);
    for (size_t i = 0; i < s.xs.size(); ++i)
      cv.fill_rect(px(s.xs[i]) - 1, py(s.ys[i]) - 1, 3, 3, c);
    const int ly = T + 14 * static_cast<int>(si);
    cv.fill_rect(L + pw + 12, ly + 2, 10, 3, c);
    cv.text(L + pw + 28, ly, s.label, {0, 0, 0});
  }
  write_png(path, cv);
}

void bar_plot_png(const std::string& path, const std::string& title,
                  const std::vector<std::string>& labels, const std::vector<double>& values) {
  const int W = 640, H = 440, L = 70, R = 30, T = 40, B = 80;
  Canvas cv(W, H);
  cv.text(L, 12, title, {0, 0, 0});
  double vmax = 1e-9;
  for (double v : values) vmax = std::max(vmax, v);
  const int pw = W - L - R, ph = H - T - B;
  cv.line(L, T, L, T + ph, {0, 0, 0});
  cv.line(L, T + ph, L + pw, T + ph, {0, 0, 0});
  for (int i = 0; i <= 4; ++i) {
    const double yv = vmax * i / 4.0;
    const int yy = T + static_cast<int>(std::lround((1.0 - yv / vmax) * ph));
    cv.line(L - 3, yy, L, yy, {0, 0, 0});
    cv.text(6, yy - 3, fmt_tick(yv), {60, 60, 60});
  }
  const int n = static_cast<int>(values.size());
  const int slot = n > 0 ? pw / n : pw;
  for (int i = 0; i < n; ++i) {
    const int bh = static_cast<int>(std::lround(values[static_cast<size_t>(i)] / vmax * ph));
    const int bx = L + i * slot + slot / 6;
    cv.fill_rect(bx, T + ph - bh, slot * 2 / 3, bh, kPalette[static_cast<size_t>(i) % 6]);
    cv.text(bx, T + ph + 8 + 10 * (i % 2), labels[static_cast<size_t>(i)], {0, 0, 0});
  }
  write_png(path, cv);
}

}  // namespace ssvg
