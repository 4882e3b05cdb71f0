#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "deepgrading/param.hpp"

namespace dg {

// Shared "DGCK" container, all integers little-endian:
//   "DGCK" | u32 version | u32 n | n bytes UTF-8 JSON metadata |
//   per tensor: u16 name length, name, u8 rank, rank x u32 dims, f32 payload
// Tensors run to end of file.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json meta;
  std::vector<Param> tensors;

  const Param& tensor(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                      const std::vector<Param>& tensors);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace dg
