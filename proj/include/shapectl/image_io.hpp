#pragma once

// Minimal PNG support (8-bit grayscale / RGB, non-interlaced) over zlib,
// grayscale image grids, and simple line plots for sweep outputs.

#include <cstdint>
#include <string>
#include <vector>

namespace shapectl::img {

struct ImageU8 {
  int height = 0;
  int width = 0;
  int channels = 1;  // 1 = gray, 3 = rgb
  std::vector<std::uint8_t> data;

  ImageU8() = default;
  ImageU8(int h, int w, int c)
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * w * c, 0) {}

  std::uint8_t& at(int y, int x, int c = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

std::vector<std::uint8_t> encode_png(const ImageU8& img);
ImageU8 decode_png(const std::vector<std::uint8_t>& bytes);
void save_png(const ImageU8& img, const std::string& path);
ImageU8 load_png(const std::string& path);

// [0,1] floats <-> 8-bit gray (round-to-nearest)
ImageU8 gray_from_float(const float* data, int h, int w);
std::vector<float> float_from_gray(const ImageU8& img);

// Tiles same-size grayscale images left-to-right, top-to-bottom.
ImageU8 tile_grid(const std::vector<ImageU8>& tiles, int cols, int pad = 2);

// 5x7 bitmap text (digits, upper-case letters, a little punctuation)
void draw_text(ImageU8& img, int y, int x, const std::string& text,
               std::uint8_t r, std::uint8_t g, std::uint8_t b);

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::uint8_t r = 0, g = 0, b = 0;
};

// Line plot with axes, ticks and a legend; y range auto or fixed.
ImageU8 render_line_plot(const std::string& title,
                         const std::vector<PlotSeries>& series, int width = 640,
                         int height = 420);

}  // namespace shapectl::img
