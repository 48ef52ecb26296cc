#pragma once

// Single-file chunked checkpoint format:
//   magic "SACN", version u32, then per tensor:
//   name-length u32, name bytes, dtype u32 (0=f32, 1=f64),
//   ndim u32, extents u32 each, raw little-endian data.
// A JSON manifest alongside (<file>.manifest.json) lists the file hash and
// the content hash of every tensor group for frozen-base verification.

#include <string>
#include <vector>

#include "shapectl/modules.hpp"

namespace shapectl::ckpt {

void save_checkpoint(const std::string& path,
                     const std::vector<nn::ParamRef>& params);

// Loads into existing tensors; names, dtypes and shapes must match exactly.
void load_checkpoint(const std::string& path, std::vector<nn::ParamRef>& params);

// Names present in a checkpoint file, in order.
std::vector<std::string> checkpoint_tensor_names(const std::string& path);

void write_checkpoint_manifest(const std::string& ckpt_path,
                               const std::string& params_hash,
                               const std::vector<std::pair<std::string, std::string>>& inputs);
// Verifies the sidecar manifest's file hash; throws on mismatch.
void verify_checkpoint(const std::string& ckpt_path);

}  // namespace shapectl::ckpt
