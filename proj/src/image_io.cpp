#include "shapectl/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "shapectl/errors.hpp"

namespace shapectl::img {

namespace {

void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t read_u32_be(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void append_chunk(std::vector<std::uint8_t>& out, const char* type,
                  const std::vector<std::uint8_t>& payload) {
  put_u32_be(out, static_cast<std::uint32_t>(payload.size()));
  std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start)));
  put_u32_be(out, crc);
}

int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3)
    throw InvariantError("encode_png: only gray/rgb supported");
  std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

  std::vector<std::uint8_t> ihdr;
  put_u32_be(ihdr, static_cast<std::uint32_t>(img.width));
  put_u32_be(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);                                   // bit depth
  ihdr.push_back(img.channels == 1 ? 0 : 2);           // color type
  ihdr.push_back(0);                                   // compression
  ihdr.push_back(0);                                   // filter
  ihdr.push_back(0);                                   // no interlace
  append_chunk(out, "IHDR", ihdr);

  std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  std::vector<std::uint8_t> raw((stride + 1) * static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) {
    raw[(stride + 1) * static_cast<std::size_t>(y)] = 0;  // filter: none
    std::memcpy(raw.data() + (stride + 1) * static_cast<std::size_t>(y) + 1,
                img.data.data() + stride * static_cast<std::size_t>(y), stride);
  }
  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(),
                static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw InvariantError("encode_png: deflate failed");
  comp.resize(comp_len);
  append_chunk(out, "IDAT", comp);
  append_chunk(out, "IEND", {});
  return out;
}

ImageU8 decode_png(const std::vector<std::uint8_t>& bytes) {
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
    throw ConfigError("decode_png: not a PNG file");
  std::size_t pos = 8;
  int w = 0, h = 0, channels = 0;
  std::vector<std::uint8_t> idat;
  while (pos + 8 <= bytes.size()) {
    std::uint32_t len = read_u32_be(bytes.data() + pos);
    std::string type(reinterpret_cast<const char*>(bytes.data() + pos + 4), 4);
    const std::uint8_t* payload = bytes.data() + pos + 8;
    if (pos + 12 + len > bytes.size())
      throw ConfigError("decode_png: truncated chunk");
    if (type == "IHDR") {
      w = static_cast<int>(read_u32_be(payload));
      h = static_cast<int>(read_u32_be(payload + 4));
      int depth = payload[8], color = payload[9], interlace = payload[12];
      if (depth != 8 || (color != 0 && color != 2) || interlace != 0)
        throw ConfigError("decode_png: unsupported format (need 8-bit gray/rgb)");
      channels = color == 0 ? 1 : 3;
    } else if (type == "IDAT") {
      idat.insert(idat.end(), payload, payload + len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  if (w <= 0 || h <= 0 || idat.empty())
    throw ConfigError("decode_png: missing IHDR/IDAT");
  std::size_t stride = static_cast<std::size_t>(w) * channels;
  std::vector<std::uint8_t> raw((stride + 1) * static_cast<std::size_t>(h));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(),
                 static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size())
    throw ConfigError("decode_png: inflate failed");

  ImageU8 img(h, w, channels);
  int bpp = channels;
  std::vector<std::uint8_t> prev(stride, 0);
  for (int y = 0; y < h; ++y) {
    const std::uint8_t* src = raw.data() + (stride + 1) * static_cast<std::size_t>(y);
    std::uint8_t filter = src[0];
    ++src;
    std::uint8_t* dst = img.data.data() + stride * static_cast<std::size_t>(y);
    for (std::size_t i = 0; i < stride; ++i) {
      int a = i >= static_cast<std::size_t>(bpp) ? dst[i - bpp] : 0;
      int b = prev[i];
      int c = i >= static_cast<std::size_t>(bpp) ? prev[i - bpp] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw ConfigError("decode_png: bad filter type");
      }
      dst[i] = static_cast<std::uint8_t>(v & 0xff);
    }
    std::memcpy(prev.data(), dst, stride);
  }
  return img;
}

void save_png(const ImageU8& img, const std::string& path) {
  auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write PNG: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

ImageU8 load_png(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read PNG: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_png(bytes);
}

ImageU8 gray_from_float(const float* data, int h, int w) {
  ImageU8 img(h, w, 1);
  for (std::size_t i = 0; i < static_cast<std::size_t>(h) * w; ++i) {
    float v = data[i];
    if (v < 0.0f) v = 0.0f;
    if (v > 1.0f) v = 1.0f;
    img.data[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return img;
}

std::vector<float> float_from_gray(const ImageU8& img) {
  std::vector<float> out(img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i)
    out[i] = static_cast<float>(img.data[i]) / 255.0f;
  return out;
}

ImageU8 tile_grid(const std::vector<ImageU8>& tiles, int cols, int pad) {
  if (tiles.empty()) throw InvariantError("tile_grid: no tiles");
  int th = tiles[0].height, tw = tiles[0].width;
  int rows = (static_cast<int>(tiles.size()) + cols - 1) / cols;
  ImageU8 out(rows * (th + pad) + pad, cols * (tw + pad) + pad, 1);
  std::fill(out.data.begin(), out.data.end(), 32);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    int r = static_cast<int>(i) / cols, c = static_cast<int>(i) % cols;
    for (int y = 0; y < th; ++y)
      for (int x = 0; x < tw; ++x)
        out.at(pad + r * (th + pad) + y, pad + c * (tw + pad) + x) =
            tiles[i].at(y, x);
  }
  return out;
}

namespace {

// 5x7 font; each glyph is 7 rows of 5 cells.
struct Glyph {
  char ch;
  const char* rows[7];
};

const Glyph kGlyphs[] = {
    {'0', {" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "}},
    {'1', {"  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "}},
    {'2', {" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"}},
    {'3', {" ### ", "#   #", "    #", "  ## ", "    #", "#   #", " ### "}},
    {'4', {"   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "}},
    {'5', {"#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "}},
    {'6', {" ### ", "#    ", "#    ", "#### ", "#   #", "#   #", " ### "}},
    {'7', {"#####", "    #", "   # ", "  #  ", "  #  ", "  #  ", "  #  "}},
    {'8', {" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "}},
    {'9', {" ### ", "#   #", "#   #", " ####", "    #", "    #", " ### "}},
    {'A', {" ### ", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"}},
    {'B', {"#### ", "#   #", "#   #", "#### ", "#   #", "#   #", "#### "}},
    {'C', {" ### ", "#   #", "#    ", "#    ", "#    ", "#   #", " ### "}},
    {'D', {"#### ", "#   #", "#   #", "#   #", "#   #", "#   #", "#### "}},
    {'E', {"#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#####"}},
    {'F', {"#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#    "}},
    {'G', {" ### ", "#   #", "#    ", "# ###", "#   #", "#   #", " ### "}},
    {'H', {"#   #", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"}},
    {'I', {" ### ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "}},
    {'J', {"  ###", "   # ", "   # ", "   # ", "   # ", "#  # ", " ##  "}},
    {'K', {"#   #", "#  # ", "# #  ", "##   ", "# #  ", "#  # ", "#   #"}},
    {'L', {"#    ", "#    ", "#    ", "#    ", "#    ", "#    ", "#####"}},
    {'M', {"#   #", "## ##", "# # #", "# # #", "#   #", "#   #", "#   #"}},
    {'N', {"#   #", "##  #", "# # #", "#  ##", "#   #", "#   #", "#   #"}},
    {'O', {" ### ", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "}},
    {'P', {"#### ", "#   #", "#   #", "#### ", "#    ", "#    ", "#    "}},
    {'Q', {" ### ", "#   #", "#   #", "#   #", "# # #", "#  # ", " ## #"}},
    {'R', {"#### ", "#   #", "#   #", "#### ", "# #  ", "#  # ", "#   #"}},
    {'S', {" ####", "#    ", "#    ", " ### ", "    #", "    #", "#### "}},
    {'T', {"#####", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  "}},
    {'U', {"#   #", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "}},
    {'V', {"#   #", "#   #", "#   #", "#   #", "#   #", " # # ", "  #  "}},
    {'W', {"#   #", "#   #", "#   #", "# # #", "# # #", "## ##", "#   #"}},
    {'X', {"#   #", "#   #", " # # ", "  #  ", " # # ", "#   #", "#   #"}},
    {'Y', {"#   #", "#   #", " # # ", "  #  ", "  #  ", "  #  ", "  #  "}},
    {'Z', {"#####", "    #", "   # ", "  #  ", " #   ", "#    ", "#####"}},
    {'.', {"     ", "     ", "     ", "     ", "     ", " ##  ", " ##  "}},
    {',', {"     ", "     ", "     ", "     ", " ##  ", "  #  ", " #   "}},
    {'-', {"     ", "     ", "     ", "#####", "     ", "     ", "     "}},
    {'+', {"     ", "  #  ", "  #  ", "#####", "  #  ", "  #  ", "     "}},
    {'=', {"     ", "     ", "#####", "     ", "#####", "     ", "     "}},
    {':', {"     ", " ##  ", " ##  ", "     ", " ##  ", " ##  ", "     "}},
    {'/', {"    #", "    #", "   # ", "  #  ", " #   ", "#    ", "#    "}},
    {'(', {"   # ", "  #  ", " #   ", " #   ", " #   ", "  #  ", "   # "}},
    {')', {" #   ", "  #  ", "   # ", "   # ", "   # ", "  #  ", " #   "}},
    {'%', {"##  #", "##  #", "   # ", "  #  ", " #   ", "#  ##", "#  ##"}},
    {'_', {"     ", "     ", "     ", "     ", "     ", "     ", "#####"}},
    {' ', {"     ", "     ", "     ", "     ", "     ", "     ", "     "}},
};

const Glyph* find_glyph(char c) {
  if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  for (const auto& g : kGlyphs)
    if (g.ch == c) return &g;
  return nullptr;
}

}  // namespace

void draw_text(ImageU8& img, int y, int x, const std::string& text,
               std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  int cx = x;
  for (char c : text) {
    const Glyph* gl = find_glyph(c);
    if (gl) {
      for (int gy = 0; gy < 7; ++gy) {
        for (int gx = 0; gx < 5; ++gx) {
          if (gl->rows[gy][gx] != '#') continue;
          int py = y + gy, px = cx + gx;
          if (py < 0 || py >= img.height || px < 0 || px >= img.width) continue;
          if (img.channels == 3) {
            img.at(py, px, 0) = r;
            img.at(py, px, 1) = g;
            img.at(py, px, 2) = b;
          } else {
            img.at(py, px) = r;
          }
        }
      }
    }
    cx += 6;
  }
}

ImageU8 render_line_plot(const std::string& title,
                         const std::vector<PlotSeries>& series, int width,
                         int height) {
  ImageU8 img(height, width, 3);
  std::fill(img.data.begin(), img.data.end(), 255);
  int left = 56, right = width - 16, top = 28, bottom = height - 36;

  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    for (double v : s.x) {
      xmin = std::min(xmin, v);
      xmax = std::max(xmax, v);
    }
    for (double v : s.y) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
  }
  if (ymin > ymax) {
    ymin = 0;
    ymax = 1;
  }
  if (xmax - xmin < 1e-12) xmax = xmin + 1;
  double ypad = (ymax - ymin < 1e-12) ? 0.5 : 0.08 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  auto to_px = [&](double vx, double vy) {
    int px = left + static_cast<int>(std::lround(
                        (vx - xmin) / (xmax - xmin) * (right - left)));
    int py = bottom - static_cast<int>(std::lround(
                          (vy - ymin) / (ymax - ymin) * (bottom - top)));
    return std::pair<int, int>(px, py);
  };
  auto set_px = [&](int y, int x, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (y < 0 || y >= img.height || x < 0 || x >= img.width) return;
    img.at(y, x, 0) = r;
    img.at(y, x, 1) = g;
    img.at(y, x, 2) = b;
  };
  auto draw_line = [&](int x0, int y0, int x1, int y1, std::uint8_t r,
                       std::uint8_t g, std::uint8_t b) {
    int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
      set_px(y0, x0, r, g, b);
      if (x0 == x1 && y0 == y1) break;
      int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  };

  // axes
  draw_line(left, top, left, bottom, 0, 0, 0);
  draw_line(left, bottom, right, bottom, 0, 0, 0);
  char buf[32];
  for (int i = 0; i <= 4; ++i) {
    double vy = ymin + (ymax - ymin) * i / 4.0;
    int py = bottom - (bottom - top) * i / 4;
    draw_line(left - 3, py, left, py, 0, 0, 0);
    std::snprintf(buf, sizeof(buf), "%.2f", vy);
    draw_text(img, py - 3, 8, buf, 0, 0, 0);
    double vx = xmin + (xmax - xmin) * i / 4.0;
    int px = left + (right - left) * i / 4;
    draw_line(px, bottom, px, bottom + 3, 0, 0, 0);
    std::snprintf(buf, sizeof(buf), "%.2g", vx);
    draw_text(img, bottom + 6, px - 10, buf, 0, 0, 0);
  }
  draw_text(img, 8, left, title, 0, 0, 0);

  int legend_x = left + 8;
  for (const auto& s : series) {
    for (std::size_t i = 0; i + 1 < s.x.size(); ++i) {
      auto [x0, y0] = to_px(s.x[i], s.y[i]);
      auto [x1, y1] = to_px(s.x[i + 1], s.y[i + 1]);
      draw_line(x0, y0, x1, y1, s.r, s.g, s.b);
    }
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      auto [px, py] = to_px(s.x[i], s.y[i]);
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) set_px(py + dy, px + dx, s.r, s.g, s.b);
    }
    for (int dx = 0; dx < 10; ++dx) set_px(height - 14, legend_x + dx, s.r, s.g, s.b);
    draw_text(img, height - 18, legend_x + 14, s.label, 0, 0, 0);
    legend_x += 14 + 6 * static_cast<int>(s.label.size()) + 16;
  }
  return img;
}

}  // namespace shapectl::img
