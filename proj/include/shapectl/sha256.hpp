#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace shapectl {

// FIPS 180-4 SHA-256, used for checkpoint/manifest content hashes.
class Sha256 {
 public:
  Sha256();
  void update(const void* data, std::size_t len);
  // hex digest; finalizes a copy, so update() may continue afterwards
  std::string hex_digest() const;

  static std::string of_bytes(const void* data, std::size_t len);
  static std::string of_string(const std::string& s);
  static std::string of_file(const std::string& path);

 private:
  void process_block(const std::uint8_t* block);
  std::uint32_t state_[8];
  std::uint64_t total_len_ = 0;
  std::uint8_t buffer_[64];
  std::size_t buffer_len_ = 0;
};

}  // namespace shapectl
