#include "shapectl/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "shapectl/errors.hpp"
#include "shapectl/sha256.hpp"

namespace shapectl::ckpt {

namespace {

constexpr char kMagic[4] = {'S', 'A', 'C', 'N'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::ifstream& in, const std::string& what) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw ConfigError("checkpoint: truncated while reading " + what);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<nn::ParamRef>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint: " + path);
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  for (const auto& p : params) {
    write_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const nn::Tensor& t = p.tensor;
    write_u32(out, t.dtype() == nn::DType::kF32 ? 0u : 1u);
    write_u32(out, static_cast<std::uint32_t>(t.ndim()));
    for (int d = 0; d < t.ndim(); ++d)
      write_u32(out, static_cast<std::uint32_t>(t.dim(d)));
    if (t.dtype() == nn::DType::kF32)
      out.write(reinterpret_cast<const char*>(t.f32()),
                static_cast<std::streamsize>(t.numel() * sizeof(float)));
    else
      out.write(reinterpret_cast<const char*>(t.f64()),
                static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!out) throw ConfigError("checkpoint write failed: " + path);
}

namespace {

struct RawEntry {
  std::string name;
  std::uint32_t dtype = 0;
  std::vector<int> shape;
  std::vector<char> bytes;
};

std::vector<RawEntry> read_entries(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw ConfigError("checkpoint: bad magic in " + path);
  std::uint32_t version = read_u32(in, "version");
  if (version != kVersion)
    throw ConfigError("checkpoint: unsupported version " + std::to_string(version));
  std::vector<RawEntry> entries;
  while (true) {
    std::uint32_t name_len = 0;
    in.read(reinterpret_cast<char*>(&name_len), 4);
    if (in.eof()) break;
    if (!in) throw ConfigError("checkpoint: truncated name length");
    RawEntry e;
    e.name.resize(name_len);
    in.read(e.name.data(), name_len);
    e.dtype = read_u32(in, "dtype");
    std::uint32_t ndim = read_u32(in, "ndim");
    std::int64_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      std::uint32_t extent = read_u32(in, "extent");
      e.shape.push_back(static_cast<int>(extent));
      numel *= extent;
    }
    std::size_t elt = e.dtype == 0 ? sizeof(float) : sizeof(double);
    e.bytes.resize(static_cast<std::size_t>(numel) * elt);
    in.read(e.bytes.data(), static_cast<std::streamsize>(e.bytes.size()));
    if (!in) throw ConfigError("checkpoint: truncated tensor data for " + e.name);
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace

void load_checkpoint(const std::string& path, std::vector<nn::ParamRef>& params) {
  auto entries = read_entries(path);
  if (entries.size() != params.size())
    throw ConfigError("checkpoint: tensor count mismatch (" +
                      std::to_string(entries.size()) + " in file, " +
                      std::to_string(params.size()) + " expected)");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const RawEntry& e = entries[i];
    nn::Tensor& t = params[i].tensor;
    if (e.name != params[i].name)
      throw ConfigError("checkpoint: tensor name mismatch at #" +
                        std::to_string(i) + ": " + e.name + " vs " +
                        params[i].name);
    if (e.shape != t.shape())
      throw ConfigError("checkpoint: shape mismatch for " + e.name);
    std::uint32_t want = t.dtype() == nn::DType::kF32 ? 0u : 1u;
    if (e.dtype != want)
      throw ConfigError("checkpoint: dtype mismatch for " + e.name);
    if (t.dtype() == nn::DType::kF32)
      std::memcpy(t.f32(), e.bytes.data(), e.bytes.size());
    else
      std::memcpy(t.f64(), e.bytes.data(), e.bytes.size());
  }
}

std::vector<std::string> checkpoint_tensor_names(const std::string& path) {
  std::vector<std::string> names;
  for (const auto& e : read_entries(path)) names.push_back(e.name);
  return names;
}

void write_checkpoint_manifest(
    const std::string& ckpt_path, const std::string& params_hash,
    const std::vector<std::pair<std::string, std::string>>& inputs) {
  nlohmann::json j;
  j["file"] = std::filesystem::path(ckpt_path).filename().string();
  j["sha256"] = Sha256::of_file(ckpt_path);
  j["params_hash"] = params_hash;
  j["inputs"] = nlohmann::json::object();
  for (const auto& [k, v] : inputs) j["inputs"][k] = v;
  std::string tmp = ckpt_path + ".manifest.json.tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw ConfigError("cannot write checkpoint manifest for " + ckpt_path);
    out << j.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, ckpt_path + ".manifest.json");
}

void verify_checkpoint(const std::string& ckpt_path) {
  std::ifstream in(ckpt_path + ".manifest.json");
  if (!in)
    throw ConfigError("checkpoint manifest missing: " + ckpt_path +
                      ".manifest.json");
  nlohmann::json j = nlohmann::json::parse(in);
  std::string want = j.at("sha256").get<std::string>();
  std::string got = Sha256::of_file(ckpt_path);
  if (want != got)
    throw InvariantError("checkpoint hash mismatch for " + ckpt_path +
                         ": manifest " + want + " vs file " + got);
}

}  // namespace shapectl::ckpt
