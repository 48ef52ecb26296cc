#include "shapectl/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <deque>

#include "shapectl/errors.hpp"

namespace shapectl::metrics {

using masks::BinaryMask;
using masks::Box;
using nn::Tensor;

namespace {

void image_dims(const Tensor& image, int& h, int& w) {
  if (image.ndim() == 2) {
    h = image.dim(0);
    w = image.dim(1);
  } else if (image.ndim() == 3 && image.dim(0) == 1) {
    h = image.dim(1);
    w = image.dim(2);
  } else {
    throw InvariantError("metrics: image must be [H,W] or [1,H,W], got " +
                         image.shape_str());
  }
}

}  // namespace

EdgeMap canny(const Tensor& image, const MetricParams& p) {
  int h = 0, w = 0;
  image_dims(image, h, w);
  const float* px = image.f32();

  // Gaussian smoothing, separable, clamp-to-edge
  double sigma = p.canny_gauss_sigma;
  int rad = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kern(static_cast<std::size_t>(2 * rad + 1));
  double ksum = 0.0;
  for (int i = -rad; i <= rad; ++i) {
    double v = std::exp(-(i * i) / (2.0 * sigma * sigma));
    kern[static_cast<std::size_t>(i + rad)] = v;
    ksum += v;
  }
  for (auto& v : kern) v /= ksum;

  std::vector<double> tmp(static_cast<std::size_t>(h) * w);
  std::vector<double> smooth(static_cast<std::size_t>(h) * w);
  auto at_clamped = [&](const auto& buf, int y, int x) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return static_cast<double>(buf[static_cast<std::size_t>(y) * w + x]);
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -rad; i <= rad; ++i)
        acc += kern[static_cast<std::size_t>(i + rad)] * at_clamped(px, y, x + i);
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -rad; i <= rad; ++i)
        acc += kern[static_cast<std::size_t>(i + rad)] * at_clamped(tmp, y + i, x);
      smooth[static_cast<std::size_t>(y) * w + x] = acc;
    }

  // Sobel
  std::vector<double> mag(static_cast<std::size_t>(h) * w, 0.0);
  std::vector<double> gx_buf(static_cast<std::size_t>(h) * w, 0.0);
  std::vector<double> gy_buf(static_cast<std::size_t>(h) * w, 0.0);
  double max_mag = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      auto s = [&](int yy, int xx) { return at_clamped(smooth, yy, xx); };
      double gx = (s(y - 1, x + 1) + 2 * s(y, x + 1) + s(y + 1, x + 1)) -
                  (s(y - 1, x - 1) + 2 * s(y, x - 1) + s(y + 1, x - 1));
      double gy = (s(y + 1, x - 1) + 2 * s(y + 1, x) + s(y + 1, x + 1)) -
                  (s(y - 1, x - 1) + 2 * s(y - 1, x) + s(y - 1, x + 1));
      double m = std::sqrt(gx * gx + gy * gy);
      gx_buf[static_cast<std::size_t>(y) * w + x] = gx;
      gy_buf[static_cast<std::size_t>(y) * w + x] = gy;
      mag[static_cast<std::size_t>(y) * w + x] = m;
      max_mag = std::max(max_mag, m);
    }

  EdgeMap out;
  out.map = BinaryMask(h, w);
  if (max_mag <= 1e-12) return out;  // constant image: no edges

  double lo = p.canny_low_frac * max_mag;
  double hi = p.canny_high_frac * max_mag;

  // non-max suppression along the quantized gradient direction
  std::vector<std::uint8_t> cls(static_cast<std::size_t>(h) * w, 0);  // 0 none, 1 weak, 2 strong
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double m = mag[static_cast<std::size_t>(y) * w + x];
      if (m < lo) continue;
      double gx = gx_buf[static_cast<std::size_t>(y) * w + x];
      double gy = gy_buf[static_cast<std::size_t>(y) * w + x];
      double ang = std::atan2(gy, gx);  // [-pi, pi]
      double deg = ang * 180.0 / M_PI;
      if (deg < 0) deg += 180.0;
      int dy1, dx1;
      if (deg < 22.5 || deg >= 157.5) {
        dy1 = 0; dx1 = 1;
      } else if (deg < 67.5) {
        dy1 = 1; dx1 = 1;
      } else if (deg < 112.5) {
        dy1 = 1; dx1 = 0;
      } else {
        dy1 = 1; dx1 = -1;
      }
      auto m_at = [&](int yy, int xx) {
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
        return mag[static_cast<std::size_t>(yy) * w + xx];
      };
      if (m >= m_at(y + dy1, x + dx1) && m >= m_at(y - dy1, x - dx1))
        cls[static_cast<std::size_t>(y) * w + x] = m >= hi ? 2 : 1;
    }

  // hysteresis: strong seeds, 8-connected growth through weak
  std::deque<std::pair<int, int>> queue;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (cls[static_cast<std::size_t>(y) * w + x] == 2) {
        out.map.set(y, x, true);
        queue.emplace_back(y, x);
      }
  while (!queue.empty()) {
    auto [y, x] = queue.front();
    queue.pop_front();
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        int yy = y + dy, xx = x + dx;
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
        if (cls[static_cast<std::size_t>(yy) * w + xx] == 1 && !out.map.get(yy, xx)) {
          out.map.set(yy, xx, true);
          queue.emplace_back(yy, xx);
        }
      }
  }

  // border artifacts excluded: 1-px frame cleared
  for (int x = 0; x < w; ++x) {
    out.map.set(0, x, false);
    out.map.set(h - 1, x, false);
  }
  for (int y = 0; y < h; ++y) {
    out.map.set(y, 0, false);
    out.map.set(y, w - 1, false);
  }
  return out;
}

masks::BinaryMask maxpool_window(const BinaryMask& edges, int sigma) {
  if (sigma < 0) throw InvariantError("maxpool_window: sigma must be >= 0");
  if (sigma == 0) return edges;
  BinaryMask out(edges.height, edges.width);
  for (int y = 0; y < edges.height; ++y)
    for (int x = 0; x < edges.width; ++x) {
      if (!edges.get(y, x)) continue;
      for (int dy = -sigma; dy <= sigma; ++dy)
        for (int dx = -sigma; dx <= sigma; ++dx) {
          int yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < edges.height && xx >= 0 && xx < edges.width)
            out.set(yy, xx, true);
        }
    }
  return out;
}

double contour_recall(const std::vector<Tensor>& generated,
                      const Tensor& condition_image, const MetricParams& p) {
  if (generated.empty())
    throw InvariantError("contour_recall: need at least one generated image");
  EdgeMap dc = canny(condition_image, p);
  std::int64_t dc_count = dc.count();
  if (dc_count == 0) throw InvariantError("no condition edges");
  double acc = 0.0;
  for (const auto& gen : generated) {
    EdgeMap dx = canny(gen, p);
    BinaryMask pooled = maxpool_window(dx.map, p.cr_tolerance_sigma);
    std::int64_t hit = masks::mask_intersect(pooled, dc.map).area();
    acc += static_cast<double>(hit) / static_cast<double>(dc_count);
  }
  return acc / static_cast<double>(generated.size());
}

namespace {

struct Component {
  std::vector<std::pair<int, int>> pixels;
  Box bbox;
  double mean_intensity = 0.0;
};

std::vector<Component> connected_components(const Tensor& image, double thresh,
                                            int min_area) {
  int h = 0, w = 0;
  image_dims(image, h, w);
  const float* px = image.f32();
  std::vector<int> label(static_cast<std::size_t>(h) * w, -1);
  std::vector<Component> comps;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::size_t at = static_cast<std::size_t>(y) * w + x;
      if (label[at] != -1 || px[at] <= thresh) continue;
      // BFS, 8-connectivity
      Component comp;
      int id = static_cast<int>(comps.size());
      std::deque<std::pair<int, int>> queue{{y, x}};
      label[at] = id;
      double acc = 0.0;
      int x0 = x, x1 = x, y0 = y, y1 = y;
      while (!queue.empty()) {
        auto [cy, cx] = queue.front();
        queue.pop_front();
        comp.pixels.emplace_back(cy, cx);
        acc += px[static_cast<std::size_t>(cy) * w + cx];
        x0 = std::min(x0, cx);
        x1 = std::max(x1, cx);
        y0 = std::min(y0, cy);
        y1 = std::max(y1, cy);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            int yy = cy + dy, xx = cx + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            std::size_t nat = static_cast<std::size_t>(yy) * w + xx;
            if (label[nat] == -1 && px[nat] > thresh) {
              label[nat] = id;
              queue.emplace_back(yy, xx);
            }
          }
      }
      comp.bbox = Box{x0, y0, x1 + 1, y1 + 1};
      comp.mean_intensity = acc / static_cast<double>(comp.pixels.size());
      comps.push_back(std::move(comp));
    }
  }
  std::vector<Component> kept;
  for (auto& c : comps)
    if (static_cast<int>(c.pixels.size()) >= min_area) kept.push_back(std::move(c));
  return kept;
}

}  // namespace

std::vector<Detection> oracle_detect(const Tensor& image, const MetricParams& p) {
  int h = 0, w = 0;
  image_dims(image, h, w);
  auto comps = connected_components(image, p.segmentation_threshold,
                                    p.detector_min_area);
  // palette spacing for the intensity-confidence scale
  double spacing = synth::class_intensity(1) - synth::class_intensity(0);

  std::vector<Detection> out;
  for (const auto& comp : comps) {
    int best_cls = 0;
    double best_d = 1e9;
    for (int k = 0; k < synth::kNumShapeClasses; ++k) {
      double d = std::fabs(comp.mean_intensity - synth::class_intensity(k));
      if (d < best_d) {
        best_d = d;
        best_cls = k;
      }
    }
    double conf_intensity = std::max(0.0, 1.0 - best_d / spacing);

    // objectness: best silhouette-template IoU over all classes
    BinaryMask comp_mask(h, w);
    for (auto [y, x] : comp.pixels) comp_mask.set(y, x, true);
    double objectness = 0.0;
    for (int k = 0; k < synth::kNumShapeClasses; ++k) {
      BinaryMask tmpl = synth::raster_shape(static_cast<synth::ShapeKind>(k), h,
                                            w, comp.bbox);
      std::int64_t inter = masks::mask_intersect(comp_mask, tmpl).area();
      std::int64_t uni = masks::mask_union(comp_mask, tmpl).area();
      if (uni > 0)
        objectness = std::max(
            objectness, static_cast<double>(inter) / static_cast<double>(uni));
    }

    Detection det;
    det.bbox = comp.bbox;
    det.class_id = best_cls;
    det.confidence = conf_intensity * objectness;
    if (det.confidence >= p.detector_threshold) out.push_back(det);
  }
  return out;
}

double box_iou(const Box& a, const Box& b) {
  int ix0 = std::max(a.x0, b.x0), iy0 = std::max(a.y0, b.y0);
  int ix1 = std::min(a.x1, b.x1), iy1 = std::min(a.y1, b.y1);
  std::int64_t inter = 0;
  if (ix1 > ix0 && iy1 > iy0)
    inter = static_cast<std::int64_t>(ix1 - ix0) * (iy1 - iy0);
  std::int64_t uni = a.pixel_area() + b.pixel_area() - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

LayoutConsistency layout_consistency(const std::vector<Detection>& detections,
                                     const std::vector<Box>& condition_boxes,
                                     int canvas_h, int canvas_w) {
  BinaryMask det_union(canvas_h, canvas_w);
  for (const auto& d : detections) {
    if (d.bbox.x0 < 0 || d.bbox.y0 < 0 || d.bbox.x1 > canvas_w ||
        d.bbox.y1 > canvas_h || d.bbox.x0 >= d.bbox.x1 || d.bbox.y0 >= d.bbox.y1)
      throw InvariantError("layout_consistency: detection box outside canvas");
    det_union = masks::mask_union(det_union, masks::box_fill(canvas_h, canvas_w, d.bbox));
  }
  BinaryMask cond_union(canvas_h, canvas_w);
  for (const auto& b : condition_boxes) {
    if (b.x0 < 0 || b.y0 < 0 || b.x1 > canvas_w || b.y1 > canvas_h ||
        b.x0 >= b.x1 || b.y0 >= b.y1)
      throw InvariantError("layout_consistency: condition box outside canvas");
    cond_union = masks::mask_union(cond_union, masks::box_fill(canvas_h, canvas_w, b));
  }
  std::int64_t inter = masks::mask_intersect(det_union, cond_union).area();
  std::int64_t uni = masks::mask_union(det_union, cond_union).area();
  LayoutConsistency out;
  if (uni == 0) {
    out.value = 0.0;
    out.both_empty = true;
    return out;
  }
  out.value = static_cast<double>(inter) / static_cast<double>(uni);
  return out;
}

double semantic_retrieval(const std::vector<Detection>& detections,
                          const std::vector<int>& assigned_labels) {
  if (assigned_labels.empty())
    throw InvariantError("semantic_retrieval: empty label set");
  std::vector<int> label_set = assigned_labels;
  std::sort(label_set.begin(), label_set.end());
  label_set.erase(std::unique(label_set.begin(), label_set.end()), label_set.end());
  std::vector<int> detected;
  for (const auto& d : detections) detected.push_back(d.class_id);
  std::sort(detected.begin(), detected.end());
  detected.erase(std::unique(detected.begin(), detected.end()), detected.end());
  int hits = 0;
  for (int l : label_set)
    if (std::binary_search(detected.begin(), detected.end(), l)) ++hits;
  return static_cast<double>(hits) / static_cast<double>(label_set.size());
}

void MetricsReport::finalize() {
  n_samples = static_cast<int>(per_sample.size());
  double acc_cr = 0, acc_lc = 0, acc_sr = 0;
  for (const auto& s : per_sample) {
    acc_cr += s.cr;
    acc_lc += s.lc;
    acc_sr += s.sr;
  }
  if (n_samples > 0) {
    cr = acc_cr / n_samples;
    lc = acc_lc / n_samples;
    sr = acc_sr / n_samples;
  }
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["cr"] = cr;
  j["lc"] = lc;
  j["sr"] = sr;
  j["n_samples"] = n_samples;
  j["params"] = {{"canny_gauss_sigma", params.canny_gauss_sigma},
                 {"canny_low_frac", params.canny_low_frac},
                 {"canny_high_frac", params.canny_high_frac},
                 {"cr_tolerance_sigma", params.cr_tolerance_sigma},
                 {"detector_threshold", params.detector_threshold},
                 {"segmentation_threshold", params.segmentation_threshold},
                 {"detector_min_area", params.detector_min_area},
                 {"images_per_condition", params.images_per_condition}};
  if (!config_echo.empty())
    j["config_echo"] = nlohmann::json::parse(config_echo);
  j["checkpoint_hash"] = checkpoint_hash;
  j["per_sample"] = nlohmann::json::array();
  for (const auto& s : per_sample)
    j["per_sample"].push_back({{"index", s.index},
                               {"cr", s.cr},
                               {"lc", s.lc},
                               {"sr", s.sr},
                               {"rho_used", s.rho_used}});
  return j.dump(2);
}

}  // namespace shapectl::metrics
