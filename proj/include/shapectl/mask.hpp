#pragma once

// Binary-mask algebra: Euclidean-disk dilation/erosion, bounding boxes, the
// deterioration operator m_r = Dilate(m, r) ∩ b and the deterioration ratio
// rho = |S(m_r) - S(m_0)| / |S(m_inf) - S(m_0)|.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace shapectl::masks {

struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;  // row-major, 0/1

  BinaryMask() = default;
  BinaryMask(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}

  bool get(int y, int x) const {
    return bits[static_cast<std::size_t>(y) * width + x] != 0;
  }
  void set(int y, int x, bool v) {
    bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0;
  }
  std::int64_t area() const;  // S(mask)
  bool empty() const { return area() == 0; }
  bool same_dims(const BinaryMask& o) const {
    return height == o.height && width == o.width;
  }
  bool operator==(const BinaryMask& o) const {
    return height == o.height && width == o.width && bits == o.bits;
  }
};

// Half-open pixel box [x0,x1) x [y0,y1).
struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  std::int64_t pixel_area() const {
    return static_cast<std::int64_t>(width()) * height();
  }
  bool operator==(const Box& o) const = default;
};

// Dilation radius; the infinite sentinel denotes the bounding-box mask m_inf.
struct Radius {
  int value = 0;
  bool infinite = false;

  static Radius finite(int r) { return Radius{r, false}; }
  static Radius inf() { return Radius{0, true}; }
  std::string str() const { return infinite ? "inf" : std::to_string(value); }
  bool operator==(const Radius& o) const = default;
};

struct Instance {
  BinaryMask mask;
  int class_id = 0;
  Box bbox;  // tight box of mask
};

struct InstanceMaskSet {
  int height = 0;
  int width = 0;
  std::vector<Instance> instances;
};

struct DeteriorationRatio {
  double rho = 0.0;
  bool nesting_warned = false;  // set when m_0 ⊆ m_r ⊆ m_inf was violated
};

// Pixel p is set iff some set pixel of `mask` lies within Euclidean
// distance <= r of p (disk structuring element); r=0 is the identity.
BinaryMask dilate(const BinaryMask& mask, int r);
// Pixel p stays set iff every pixel within distance <= r is set; pixels
// outside the grid count as unset.
BinaryMask erode(const BinaryMask& mask, int r);

Box tight_bbox(const BinaryMask& mask);  // throws on empty mask
// Filled tight bounding rectangle; error "empty instance" on empty mask.
BinaryMask bbox_mask(const BinaryMask& mask);

BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b);
BinaryMask mask_intersect(const BinaryMask& a, const BinaryMask& b);
bool is_subset(const BinaryMask& inner, const BinaryMask& outer);
// 1-px inner boundary: mask XOR erode(mask, 1)
BinaryMask inner_boundary(const BinaryMask& mask);
BinaryMask box_fill(int h, int w, const Box& box);

// Eq. 4 per instance (Dilate(m,r) ∩ b), then union across instances.
// r = inf yields the union of bounding-box masks.
BinaryMask deteriorate(const InstanceMaskSet& instances, Radius r);

// Eq. 5 on one mask triple. If S(m_inf) == S(m_0) the mask already fills
// its box and rho is defined as 0. Violated nesting only warns (flag in the
// result); dimension mismatch throws.
DeteriorationRatio deterioration_ratio(const BinaryMask& m_r,
                                       const BinaryMask& m_0,
                                       const BinaryMask& m_inf);

// Aggregate Eq. 5 across instances of one conditional image, weighted by
// per-instance deterioration capacity S(m_inf)-S(m_0). For disjoint
// instances this equals Eq. 5 evaluated on the unions.
double deterioration_ratio_aggregate(const InstanceMaskSet& instances, Radius r);

// 1-bit text grid ("P1" portable bitmap) serialization.
std::string to_pbm(const BinaryMask& mask);
BinaryMask from_pbm(const std::string& text);
void save_pbm(const BinaryMask& mask, const std::string& path);
BinaryMask load_pbm(const std::string& path);

// Row-major run-length encoding, starting with the count of zeros.
std::vector<int> to_rle(const BinaryMask& mask);
BinaryMask from_rle(int h, int w, const std::vector<int>& runs);

}  // namespace shapectl::masks
