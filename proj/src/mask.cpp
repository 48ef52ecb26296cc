#include "shapectl/mask.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "shapectl/errors.hpp"

namespace shapectl::masks {

std::int64_t BinaryMask::area() const {
  std::int64_t n = 0;
  for (std::uint8_t b : bits) n += b;
  return n;
}

namespace {

// Offsets (dy,dx) with dy*dy+dx*dx <= r*r.
std::vector<std::pair<int, int>> disk_offsets(int r) {
  std::vector<std::pair<int, int>> out;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      if (dy * dy + dx * dx <= r * r) out.emplace_back(dy, dx);
  return out;
}

}  // namespace

BinaryMask dilate(const BinaryMask& mask, int r) {
  if (r < 0) throw InvariantError("dilate: radius must be >= 0");
  if (r == 0) return mask;
  BinaryMask out(mask.height, mask.width);
  auto offs = disk_offsets(r);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.get(y, x)) continue;
      for (auto [dy, dx] : offs) {
        int yy = y + dy, xx = x + dx;
        if (yy >= 0 && yy < mask.height && xx >= 0 && xx < mask.width)
          out.set(yy, xx, true);
      }
    }
  }
  return out;
}

BinaryMask erode(const BinaryMask& mask, int r) {
  if (r < 0) throw InvariantError("erode: radius must be >= 0");
  if (r == 0) return mask;
  BinaryMask out(mask.height, mask.width);
  auto offs = disk_offsets(r);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.get(y, x)) continue;
      bool keep = true;
      for (auto [dy, dx] : offs) {
        int yy = y + dy, xx = x + dx;
        if (yy < 0 || yy >= mask.height || xx < 0 || xx >= mask.width ||
            !mask.get(yy, xx)) {
          keep = false;
          break;
        }
      }
      out.set(y, x, keep);
    }
  }
  return out;
}

Box tight_bbox(const BinaryMask& mask) {
  int x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.get(y, x)) continue;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
  }
  if (x1 < 0) throw InvariantError("empty instance");
  return Box{x0, y0, x1 + 1, y1 + 1};
}

BinaryMask box_fill(int h, int w, const Box& box) {
  BinaryMask out(h, w);
  for (int y = box.y0; y < box.y1; ++y)
    for (int x = box.x0; x < box.x1; ++x) out.set(y, x, true);
  return out;
}

BinaryMask bbox_mask(const BinaryMask& mask) {
  return box_fill(mask.height, mask.width, tight_bbox(mask));
}

BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_dims(b)) throw InvariantError("mask_union: dimension mismatch");
  BinaryMask out(a.height, a.width);
  for (std::size_t i = 0; i < a.bits.size(); ++i)
    out.bits[i] = (a.bits[i] | b.bits[i]);
  return out;
}

BinaryMask mask_intersect(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_dims(b)) throw InvariantError("mask_intersect: dimension mismatch");
  BinaryMask out(a.height, a.width);
  for (std::size_t i = 0; i < a.bits.size(); ++i)
    out.bits[i] = (a.bits[i] & b.bits[i]);
  return out;
}

bool is_subset(const BinaryMask& inner, const BinaryMask& outer) {
  if (!inner.same_dims(outer)) throw InvariantError("is_subset: dimension mismatch");
  for (std::size_t i = 0; i < inner.bits.size(); ++i)
    if (inner.bits[i] && !outer.bits[i]) return false;
  return true;
}

BinaryMask inner_boundary(const BinaryMask& mask) {
  BinaryMask er = erode(mask, 1);
  BinaryMask out(mask.height, mask.width);
  for (std::size_t i = 0; i < mask.bits.size(); ++i)
    out.bits[i] = mask.bits[i] ^ er.bits[i];
  return out;
}

BinaryMask deteriorate(const InstanceMaskSet& instances, Radius r) {
  if (instances.instances.empty())
    throw InvariantError("deteriorate: empty instance list");
  if (!r.infinite && r.value < 0)
    throw InvariantError("deteriorate: radius must be >= 0");
  BinaryMask out(instances.height, instances.width);
  for (const auto& inst : instances.instances) {
    BinaryMask part;
    if (r.infinite) {
      part = bbox_mask(inst.mask);
    } else {
      part = mask_intersect(dilate(inst.mask, r.value), bbox_mask(inst.mask));
    }
    out = mask_union(out, part);
  }
  return out;
}

DeteriorationRatio deterioration_ratio(const BinaryMask& m_r,
                                       const BinaryMask& m_0,
                                       const BinaryMask& m_inf) {
  if (!m_r.same_dims(m_0) || !m_r.same_dims(m_inf))
    throw InvariantError("deterioration_ratio: dimension mismatch");
  DeteriorationRatio out;
  if (!is_subset(m_0, m_r) || !is_subset(m_r, m_inf))
    out.nesting_warned = true;  // user masks may break nesting; warn only
  std::int64_t s0 = m_0.area();
  std::int64_t sr = m_r.area();
  std::int64_t si = m_inf.area();
  std::int64_t denom = std::abs(si - s0);
  if (denom == 0) {
    out.rho = 0.0;  // mask already fills its box: no identifiable deterioration
    return out;
  }
  out.rho = static_cast<double>(std::abs(sr - s0)) / static_cast<double>(denom);
  return out;
}

double deterioration_ratio_aggregate(const InstanceMaskSet& instances,
                                     Radius r) {
  if (instances.instances.empty())
    throw InvariantError("deterioration_ratio_aggregate: empty instance list");
  double num = 0.0, den = 0.0;
  for (const auto& inst : instances.instances) {
    BinaryMask b = bbox_mask(inst.mask);
    BinaryMask mr =
        r.infinite ? b : mask_intersect(dilate(inst.mask, r.value), b);
    std::int64_t s0 = inst.mask.area();
    std::int64_t sr = mr.area();
    std::int64_t si = b.area();
    num += static_cast<double>(std::abs(sr - s0));
    den += static_cast<double>(std::abs(si - s0));
  }
  if (den == 0.0) return 0.0;
  return num / den;
}

std::string to_pbm(const BinaryMask& mask) {
  std::ostringstream os;
  os << "P1\n" << mask.width << " " << mask.height << "\n";
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (x) os << " ";
      os << (mask.get(y, x) ? 1 : 0);
    }
    os << "\n";
  }
  return os.str();
}

BinaryMask from_pbm(const std::string& text) {
  std::istringstream is(text);
  auto next_token = [&]() -> std::string {
    std::string t;
    while (is >> t) {
      if (t[0] == '#') {
        std::string rest;
        std::getline(is, rest);
        continue;
      }
      return t;
    }
    throw ConfigError("PBM parse error: unexpected end of input");
  };
  if (next_token() != "P1") throw ConfigError("PBM parse error: expected P1 magic");
  int w = std::stoi(next_token());
  int h = std::stoi(next_token());
  if (w <= 0 || h <= 0) throw ConfigError("PBM parse error: bad dimensions");
  BinaryMask mask(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::string t = next_token();
      if (t != "0" && t != "1")
        throw ConfigError("PBM parse error: expected 0/1, got '" + t + "'");
      mask.set(y, x, t == "1");
    }
  }
  return mask;
}

void save_pbm(const BinaryMask& mask, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write mask file: " + path);
  out << to_pbm(mask);
}

BinaryMask load_pbm(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read mask file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_pbm(ss.str());
}

std::vector<int> to_rle(const BinaryMask& mask) {
  std::vector<int> runs;
  std::uint8_t cur = 0;
  int len = 0;
  for (std::uint8_t b : mask.bits) {
    if (b == cur) {
      ++len;
    } else {
      runs.push_back(len);
      cur = b;
      len = 1;
    }
  }
  runs.push_back(len);
  return runs;
}

BinaryMask from_rle(int h, int w, const std::vector<int>& runs) {
  BinaryMask mask(h, w);
  std::size_t pos = 0;
  std::uint8_t cur = 0;
  for (int run : runs) {
    if (run < 0 || pos + static_cast<std::size_t>(run) > mask.bits.size())
      throw ConfigError("RLE decode: runs exceed mask size");
    for (int i = 0; i < run; ++i) mask.bits[pos++] = cur;
    cur = cur ? 0 : 1;
  }
  if (pos != mask.bits.size())
    throw ConfigError("RLE decode: runs do not cover mask");
  return mask;
}

}  // namespace shapectl::masks
