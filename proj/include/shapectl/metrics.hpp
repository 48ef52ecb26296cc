#pragma once

// Evaluation stack: Canny edges, Contour-Recall with a MaxPool pixel
// tolerance, an oracle detector for the synthetic shape family (threshold
// segmentation -> connected components -> intensity classification with a
// template-IoU objectness factor), union-IoU Layout Consistency and
// set-retrieval Semantic Retrieval.

#include <string>
#include <vector>

#include "shapectl/mask.hpp"
#include "shapectl/synth.hpp"
#include "shapectl/tensor.hpp"

namespace shapectl::metrics {

// Fixed metric parameters; echoed into every report so numbers stay
// comparable across runs.
struct MetricParams {
  double canny_gauss_sigma = 1.0;
  double canny_low_frac = 0.1;   // of max gradient magnitude
  double canny_high_frac = 0.2;  // of max gradient magnitude
  int cr_tolerance_sigma = 2;
  double detector_threshold = 0.1;   // confidence threshold t
  double segmentation_threshold = 0.15;
  int detector_min_area = 6;
  int images_per_condition = 4;
};

struct EdgeMap {
  masks::BinaryMask map;  // 1-px border frame always cleared
  std::int64_t count() const { return map.area(); }
};

// Gaussian smooth -> Sobel -> non-max suppression -> double-threshold
// hysteresis; deterministic. Image is [H,W] or [1,H,W] floats in [0,1].
EdgeMap canny(const nn::Tensor& image, const MetricParams& p = {});

// Square-window dilation ((2*sigma+1)^2), the MaxPool of Eq. 3.
masks::BinaryMask maxpool_window(const masks::BinaryMask& edges, int sigma);

// Mean over images of |MaxPool(D(x),sigma) ∩ D(c)| / |D(c)|.
// Throws InvariantError("no condition edges") when D(c) is empty.
double contour_recall(const std::vector<nn::Tensor>& generated,
                      const nn::Tensor& condition_image,
                      const MetricParams& p = {});

struct Detection {
  masks::Box bbox;  // half-open, within canvas
  int class_id = 0;
  double confidence = 0.0;  // in [0,1]
};

std::vector<Detection> oracle_detect(const nn::Tensor& image,
                                     const MetricParams& p = {});

double box_iou(const masks::Box& a, const masks::Box& b);

struct LayoutConsistency {
  double value = 0.0;
  bool both_empty = false;  // flagged: LC defined as 0
};

// Pixel-rasterized IoU of the two box-set unions on the canvas grid.
LayoutConsistency layout_consistency(const std::vector<Detection>& detections,
                                     const std::vector<masks::Box>& condition_boxes,
                                     int canvas_h, int canvas_w);

// |S ∩ L| / |L| over class-id sets; detections below threshold are assumed
// already filtered. Throws on empty L.
double semantic_retrieval(const std::vector<Detection>& detections,
                          const std::vector<int>& assigned_labels);

struct PerSample {
  int index = 0;
  double cr = 0.0, lc = 0.0, sr = 0.0;
  double rho_used = 0.0;
};

struct MetricsReport {
  double cr = 0.0, lc = 0.0, sr = 0.0;  // means of per_sample values
  int n_samples = 0;
  std::vector<PerSample> per_sample;
  MetricParams params;
  std::string config_echo;       // JSON of the evaluating config
  std::string checkpoint_hash;

  void finalize();               // aggregates from per_sample
  std::string to_json() const;
};

}  // namespace shapectl::metrics
