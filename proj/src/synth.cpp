#include "shapectl/synth.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "shapectl/errors.hpp"
#include "shapectl/image_io.hpp"
#include "shapectl/sha256.hpp"

namespace shapectl::synth {

namespace fs = std::filesystem;
using nlohmann::json;
using masks::BinaryMask;
using masks::Box;
using masks::Radius;

namespace {

// 8-bit-exact palette; float intensity is byte/255.
constexpr std::uint8_t kPalette[kNumShapeClasses] = {77, 110, 143, 176, 209, 242};
constexpr const char* kNames[kNumShapeClasses] = {"circle", "square", "triangle",
                                                  "cross",  "ring",   "bar"};

std::vector<ShapeClass> build_classes() {
  std::vector<ShapeClass> out;
  for (int i = 0; i < kNumShapeClasses; ++i) {
    ShapeClass c;
    c.id = i;
    c.name = kNames[i];
    c.intensity_u8 = kPalette[i];
    char buf[32];
    std::snprintf(buf, sizeof(buf), "flat:%.3f", kPalette[i] / 255.0);
    c.render_style = buf;
    out.push_back(c);
  }
  return out;
}

}  // namespace

const std::vector<ShapeClass>& shape_classes() {
  static const std::vector<ShapeClass> classes = build_classes();
  return classes;
}

const ShapeClass& class_by_id(int id) {
  if (id < 0 || id >= kNumShapeClasses)
    throw ConfigError("unknown shape class id: " + std::to_string(id));
  return shape_classes()[static_cast<std::size_t>(id)];
}

int class_id_by_name(const std::string& name) {
  for (const auto& c : shape_classes())
    if (c.name == name) return c.id;
  throw ConfigError("unknown shape class name: " + name);
}

double class_intensity(int id) { return class_by_id(id).intensity_u8 / 255.0; }

masks::BinaryMask raster_shape(ShapeKind kind, int canvas_h, int canvas_w,
                               const Box& box) {
  BinaryMask out(canvas_h, canvas_w);
  int bw = box.width(), bh = box.height();
  if (bw <= 0 || bh <= 0) throw InvariantError("raster_shape: empty box");
  double cx = (bw - 1) / 2.0, cy = (bh - 1) / 2.0;
  double rx = std::max(0.5, (bw - 1) / 2.0);
  double ry = std::max(0.5, (bh - 1) / 2.0);
  auto inside_ellipse = [&](double lx, double ly, double sx, double sy) {
    double ex = (lx - cx) / (sx > 0 ? sx : 0.5);
    double ey = (ly - cy) / (sy > 0 ? sy : 0.5);
    return ex * ex + ey * ey <= 1.0 + 1e-9;
  };
  for (int ly = 0; ly < bh; ++ly) {
    for (int lx = 0; lx < bw; ++lx) {
      bool on = false;
      switch (kind) {
        case ShapeKind::kCircle:
          on = inside_ellipse(lx, ly, rx, ry);
          break;
        case ShapeKind::kSquare:
        case ShapeKind::kBar:
          on = true;
          break;
        case ShapeKind::kTriangle: {
          double hw = ((ly + 1) / static_cast<double>(bh)) * ((bw - 1) / 2.0) + 0.25;
          on = std::fabs(lx - cx) <= hw;
          break;
        }
        case ShapeKind::kCross: {
          double aw = std::max(0.5, bw / 6.0);
          double ah = std::max(0.5, bh / 6.0);
          on = std::fabs(lx - cx) <= aw || std::fabs(ly - cy) <= ah;
          break;
        }
        case ShapeKind::kRing: {
          bool outer = inside_ellipse(lx, ly, rx, ry);
          bool inner = inside_ellipse(lx, ly, 0.55 * rx, 0.55 * ry);
          on = outer && !inner;
          break;
        }
      }
      if (on) out.set(box.y0 + ly, box.x0 + lx, true);
    }
  }
  return out;
}

namespace {

Box choose_box(ShapeKind kind, int canvas, RngStream& rng) {
  int rmin = std::max(3, canvas / 10);
  int rmax = std::max(rmin, canvas / 5);
  int bw = 0, bh = 0;
  switch (kind) {
    case ShapeKind::kRing: {
      int r = static_cast<int>(rng.uniform_int(std::max(4, rmin), std::max(4, rmax)));
      bw = bh = 2 * r + 1;
      break;
    }
    case ShapeKind::kBar: {
      int longside = static_cast<int>(
          rng.uniform_int(std::max(9, canvas / 3), std::max(11, (2 * canvas) / 5)));
      int shortside = static_cast<int>(
          rng.uniform_int(3, std::max(4, longside / 3)));
      if (rng.bernoulli(0.5)) {
        bw = longside;
        bh = shortside;
      } else {
        bw = shortside;
        bh = longside;
      }
      break;
    }
    default: {
      int r = static_cast<int>(rng.uniform_int(rmin, rmax));
      bw = bh = 2 * r + 1;
      break;
    }
  }
  bw = std::min(bw, canvas - 2);
  bh = std::min(bh, canvas - 2);
  return Box{0, 0, bw, bh};
}

bool boxes_clash(const Box& a, const Box& b, int gap) {
  return a.x0 - gap < b.x1 && b.x0 - gap < a.x1 && a.y0 - gap < b.y1 &&
         b.y0 - gap < a.y1;
}

}  // namespace

SampleTriplet synth_sample(std::uint64_t seed, const SynthSpec& spec) {
  if (spec.class_pool.empty())
    throw ConfigError("synth_sample: empty class pool");
  RngStream rng(seed);
  int canvas = spec.canvas;
  int n_instances = static_cast<int>(
      rng.uniform_int(spec.n_instances_min, spec.n_instances_max));
  if (n_instances < 1) throw ConfigError("synth_sample: n_instances must be >= 1");

  SampleTriplet out;
  out.seed = seed;
  out.instances.height = canvas;
  out.instances.width = canvas;

  std::vector<Box> placed;
  int restarts = 0;
  for (int i = 0; i < n_instances; ++i) {
    int cls = spec.class_pool[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(spec.class_pool.size()) - 1))];
    ShapeKind kind = static_cast<ShapeKind>(cls);
    bool ok = false;
    for (int attempt = 0; attempt < 60 && !ok; ++attempt) {
      Box size = choose_box(kind, canvas, rng);
      int bw = size.width(), bh = size.height();
      if (bw > canvas - 2 || bh > canvas - 2) continue;
      int x0 = static_cast<int>(rng.uniform_int(1, canvas - 1 - bw));
      int y0 = static_cast<int>(rng.uniform_int(1, canvas - 1 - bh));
      Box box{x0, y0, x0 + bw, y0 + bh};
      bool clash = false;
      for (const Box& other : placed)
        if (boxes_clash(box, other, 2)) clash = true;
      if (clash) continue;
      masks::Instance inst;
      inst.mask = raster_shape(kind, canvas, canvas, box);
      inst.class_id = cls;
      inst.bbox = masks::tight_bbox(inst.mask);
      placed.push_back(box);
      out.instances.instances.push_back(std::move(inst));
      out.labels.push_back(cls);
      ok = true;
    }
    if (!ok) {
      // crowded draw: restart the whole sample from the same stream
      if (++restarts > 3)
        throw InvariantError(
            "synth_sample: infeasible placement after bounded retries");
      placed.clear();
      out.instances.instances.clear();
      out.labels.clear();
      i = -1;
      continue;
    }
  }

  out.image = nn::Tensor::zeros({1, canvas, canvas}, nn::DType::kF32);
  float* img = out.image.f32();
  for (const auto& inst : out.instances.instances) {
    float v = static_cast<float>(class_intensity(inst.class_id));
    for (int y = 0; y < canvas; ++y)
      for (int x = 0; x < canvas; ++x)
        if (inst.mask.get(y, x))
          img[static_cast<std::size_t>(y) * canvas + x] = v;
  }
  return out;
}

ConditionImage make_condition(const SampleTriplet& triplet, Radius r,
                              ConditionImage::Kind kind) {
  ConditionImage cond;
  cond.kind = kind;
  cond.radius = r;
  BinaryMask det = masks::deteriorate(triplet.instances, r);
  cond.rho_true = masks::deterioration_ratio_aggregate(triplet.instances, r);
  cond.data = kind == ConditionImage::Kind::kEdge ? masks::inner_boundary(det)
                                                  : det;
  return cond;
}

nn::Tensor render_condition(const ConditionImage& cond) {
  return mask_to_image(cond.data);
}

nn::Tensor mask_to_image(const BinaryMask& mask) {
  nn::Tensor t = nn::Tensor::zeros({1, mask.height, mask.width}, nn::DType::kF32);
  float* p = t.f32();
  for (std::size_t i = 0; i < mask.bits.size(); ++i)
    p[i] = mask.bits[i] ? 1.0f : 0.0f;
  return t;
}

int prompt_dropout(int class_index, int null_index, double p, RngStream& rng) {
  if (p < 0.0 || p > 1.0) throw ConfigError("prompt_dropout: p must be in [0,1]");
  return rng.bernoulli(p) ? null_index : class_index;
}

SynthSpec Dataset::spec() const {
  SynthSpec s;
  s.canvas = config.canvas;
  s.n_instances_min = config.n_instances_min;
  s.n_instances_max = config.n_instances_max;
  s.class_pool.clear();
  for (const auto& name : config.classes)
    s.class_pool.push_back(class_id_by_name(name));
  return s;
}

SampleTriplet generate_sample(const DatasetConfig& cfg, int split, int index) {
  Dataset tmp;
  tmp.config = cfg;
  std::uint64_t key = splitmix64(splitmix64(cfg.seed ^ (0x53504C49ull + static_cast<std::uint64_t>(split))) +
                                 static_cast<std::uint64_t>(index));
  return synth_sample(key, tmp.spec());
}

Dataset generate_dataset(const DatasetConfig& cfg) {
  Dataset ds;
  ds.config = cfg;
  ds.train.reserve(static_cast<std::size_t>(cfg.n_train));
  ds.test.reserve(static_cast<std::size_t>(cfg.n_test));
  for (int i = 0; i < cfg.n_train; ++i) ds.train.push_back(generate_sample(cfg, 0, i));
  for (int i = 0; i < cfg.n_test; ++i) ds.test.push_back(generate_sample(cfg, 1, i));
  return ds;
}

namespace {

json manifest_json(const DatasetConfig& cfg) {
  json j;
  j["format_version"] = 1;
  j["seed"] = cfg.seed;
  j["canvas"] = cfg.canvas;
  j["n_train"] = cfg.n_train;
  j["n_test"] = cfg.n_test;
  j["n_instances"] = {cfg.n_instances_min, cfg.n_instances_max};
  j["classes"] = cfg.classes;
  j["radii"] = {{"radius_max", cfg.radius_max}, {"infinity_prob", cfg.infinity_prob}};
  return j;
}

DatasetConfig config_from_manifest(const json& j) {
  DatasetConfig cfg;
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.canvas = j.at("canvas").get<int>();
  cfg.n_train = j.at("n_train").get<int>();
  cfg.n_test = j.at("n_test").get<int>();
  cfg.n_instances_min = j.at("n_instances").at(0).get<int>();
  cfg.n_instances_max = j.at("n_instances").at(1).get<int>();
  cfg.classes = j.at("classes").get<std::vector<std::string>>();
  cfg.radius_max = j.at("radii").at("radius_max").get<int>();
  cfg.infinity_prob = j.at("radii").at("infinity_prob").get<double>();
  return cfg;
}

std::string sample_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%05d.png", index);
  return buf;
}

void save_split(const std::vector<SampleTriplet>& samples, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream records(dir / "masks.jsonl");
  if (!records) throw ConfigError("cannot write " + (dir / "masks.jsonl").string());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    int canvas = s.instances.height;
    img::ImageU8 png = img::gray_from_float(s.image.f32(), canvas, canvas);
    img::save_png(png, (dir / sample_name(static_cast<int>(i))).string());
    json rec;
    rec["index"] = i;
    rec["seed"] = s.seed;
    rec["labels"] = s.labels;
    rec["instances"] = json::array();
    for (const auto& inst : s.instances.instances) {
      json ji;
      ji["class"] = inst.class_id;
      ji["bbox"] = {inst.bbox.x0, inst.bbox.y0, inst.bbox.x1, inst.bbox.y1};
      ji["rle"] = masks::to_rle(inst.mask);
      rec["instances"].push_back(ji);
    }
    records << rec.dump() << "\n";
  }
}

std::vector<SampleTriplet> load_split(const fs::path& dir, int count, int canvas) {
  std::vector<SampleTriplet> out;
  std::ifstream records(dir / "masks.jsonl");
  if (!records) throw ConfigError("cannot read " + (dir / "masks.jsonl").string());
  std::string line;
  for (int i = 0; i < count; ++i) {
    if (!std::getline(records, line))
      throw ConfigError("dataset: masks.jsonl shorter than manifest count");
    json rec = json::parse(line);
    SampleTriplet s;
    s.seed = rec.at("seed").get<std::uint64_t>();
    s.labels = rec.at("labels").get<std::vector<int>>();
    s.instances.height = canvas;
    s.instances.width = canvas;
    for (const auto& ji : rec.at("instances")) {
      masks::Instance inst;
      inst.class_id = ji.at("class").get<int>();
      inst.mask = masks::from_rle(canvas, canvas, ji.at("rle").get<std::vector<int>>());
      inst.bbox = masks::Box{ji.at("bbox").at(0).get<int>(), ji.at("bbox").at(1).get<int>(),
                             ji.at("bbox").at(2).get<int>(), ji.at("bbox").at(3).get<int>()};
      s.instances.instances.push_back(std::move(inst));
    }
    img::ImageU8 png = img::load_png((dir / sample_name(i)).string());
    if (png.height != canvas || png.width != canvas || png.channels != 1)
      throw ConfigError("dataset: image dims disagree with manifest");
    auto floats = img::float_from_gray(png);
    s.image = nn::Tensor::from_f32({1, canvas, canvas}, std::move(floats));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  {
    std::ofstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw ConfigError("cannot write dataset manifest in " + dir);
    mf << manifest_json(ds.config).dump(2) << "\n";
  }
  save_split(ds.train, fs::path(dir) / "train");
  save_split(ds.test, fs::path(dir) / "test");
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw ConfigError("no dataset manifest in " + dir);
  json j = json::parse(mf);
  Dataset ds;
  ds.config = config_from_manifest(j);
  ds.train = load_split(fs::path(dir) / "train", ds.config.n_train, ds.config.canvas);
  ds.test = load_split(fs::path(dir) / "test", ds.config.n_test, ds.config.canvas);
  return ds;
}

std::string dataset_content_hash(const std::string& dir) {
  Sha256 h;
  auto add_file = [&h](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError("dataset hash: missing file " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string bytes = ss.str();
    h.update(bytes.data(), bytes.size());
  };
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw ConfigError("no dataset manifest in " + dir);
  json j = json::parse(mf);
  DatasetConfig cfg = config_from_manifest(j);
  add_file(fs::path(dir) / "manifest.json");
  for (int split = 0; split < 2; ++split) {
    fs::path sub = fs::path(dir) / (split == 0 ? "train" : "test");
    int count = split == 0 ? cfg.n_train : cfg.n_test;
    add_file(sub / "masks.jsonl");
    for (int i = 0; i < count; ++i) add_file(sub / sample_name(i));
  }
  return h.hex_digest();
}

masks::Radius sample_training_radius(const DatasetConfig& cfg, RngStream& rng) {
  if (rng.bernoulli(cfg.infinity_prob)) return Radius::inf();
  return Radius::finite(static_cast<int>(rng.uniform_int(0, cfg.radius_max)));
}

}  // namespace shapectl::synth
