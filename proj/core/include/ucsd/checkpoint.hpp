#pragma once

#include <map>
#include <string>

#include "ucsd/tensor.hpp"

// Little-endian container: "UCSD", version byte, u32 tensor count, then per
// tensor u16 name length, name, u8 rank, u32 dims, f32 payload; then a u32
// metadata length and UTF-8 metadata text; then the adler-32 of everything
// before it.
namespace ucsd {

inline constexpr std::uint8_t kCheckpointVersion = 1;

struct Checkpoint {
  std::map<std::string, Tensor> tensors;
  std::string metadata;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ucsd
