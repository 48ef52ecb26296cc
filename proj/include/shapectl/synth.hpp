#pragma once

// Procedural image–label–mask triplets on a small canvas. Six shape classes,
// each rendered with its own flat intensity drawn from an 8-bit-exact
// palette so PNG round-trips are lossless and an oracle detector can
// classify components by intensity. The same rasterizer also produces the
// detector's geometry templates.

#include <cstdint>
#include <string>
#include <vector>

#include "shapectl/mask.hpp"
#include "shapectl/rng.hpp"
#include "shapectl/tensor.hpp"

namespace shapectl::synth {

enum class ShapeKind : int {
  kCircle = 0,
  kSquare = 1,
  kTriangle = 2,
  kCross = 3,
  kRing = 4,
  kBar = 5,
};

constexpr int kNumShapeClasses = 6;

struct ShapeClass {
  int id = 0;
  std::string name;
  std::string render_style;   // e.g. "flat:0.302"
  std::uint8_t intensity_u8;  // palette byte; float intensity = byte/255
};

// Canonical classes, ids dense from 0, name<->id bijection.
const std::vector<ShapeClass>& shape_classes();
const ShapeClass& class_by_id(int id);
int class_id_by_name(const std::string& name);  // throws ConfigError
double class_intensity(int id);

// Deterministic silhouette of `kind` filling `box` tightly (touches all four
// box edges). Shared between the sample renderer and detector templates.
masks::BinaryMask raster_shape(ShapeKind kind, int canvas_h, int canvas_w,
                               const masks::Box& box);

struct SampleTriplet {
  nn::Tensor image;  // [1,H,W] f32 in [0,1]
  masks::InstanceMaskSet instances;
  std::vector<int> labels;  // per-instance class ids
  std::uint64_t seed = 0;   // stream key that regenerates this sample
};

struct ConditionImage {
  enum class Kind { kMask, kEdge };
  Kind kind = Kind::kMask;
  masks::BinaryMask data;
  double rho_true = 0.0;
  masks::Radius radius;
};

struct SynthSpec {
  int canvas = 32;
  int n_instances_min = 1;
  int n_instances_max = 2;
  std::vector<int> class_pool = {0, 1, 2, 3, 4, 5};
};

// Deterministic in `seed`. Shapes are placed fully inside the canvas with a
// 1-px margin and pairwise box separation; bounded retries, then error.
SampleTriplet synth_sample(std::uint64_t seed, const SynthSpec& spec);

ConditionImage make_condition(const SampleTriplet& triplet, masks::Radius r,
                              ConditionImage::Kind kind);

// Renders a condition to the model's single condition channel ({0,1} floats).
nn::Tensor render_condition(const ConditionImage& cond);
// Renders a binary mask as a grayscale image (for Canny on conditions).
nn::Tensor mask_to_image(const masks::BinaryMask& mask);

// 50% prompt dropping: with probability p the class conditioning collapses
// to the learned null token (index = number of classes).
int prompt_dropout(int class_index, int null_index, double p, RngStream& rng);

// ---- dataset persistence --------------------------------------------------

struct DatasetConfig {
  std::uint64_t seed = 0;
  int canvas = 32;
  int n_train = 2000;
  int n_test = 400;
  int n_instances_min = 1;
  int n_instances_max = 2;
  std::vector<std::string> classes = {"circle", "square", "triangle",
                                      "cross",  "ring",   "bar"};
  int radius_max = 10;        // training radii: uniform 0..radius_max
  double infinity_prob = 1.0 / 12.0;  // plus the inf sentinel at this rate
};

struct Dataset {
  DatasetConfig config;
  std::vector<SampleTriplet> train;
  std::vector<SampleTriplet> test;
  SynthSpec spec() const;
};

// (seed, split, index) fully determines a sample; splits use disjoint keys.
SampleTriplet generate_sample(const DatasetConfig& cfg, int split, int index);
Dataset generate_dataset(const DatasetConfig& cfg);

// Directory layout: manifest.json, {train,test}/sample_#####.png,
// {train,test}/masks.jsonl (labels, per-instance class/bbox/RLE records).
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);
// Content hash over manifest + image bytes + mask records.
std::string dataset_content_hash(const std::string& dir);

// Training-time radius distribution (uniform 0..r_max plus inf sentinel).
masks::Radius sample_training_radius(const DatasetConfig& cfg, RngStream& rng);

}  // namespace shapectl::synth
