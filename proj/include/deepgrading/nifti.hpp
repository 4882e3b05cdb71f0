#pragma once

#include <cstdint>
#include <filesystem>

#include "deepgrading/volume.hpp"

namespace dg {

// Minimal single-file NIfTI-1 (.nii): 348-byte little-endian header, data at
// offset 352, no compression, no orientation handling.
enum class VoxelType : std::int16_t { UInt8 = 2, Int16 = 4, Float32 = 16 };

struct ImageFile {
  Dims3 dims;
  Spacing3 spacing;
  VoxelType type = VoxelType::Float32;
  std::vector<float> values;  // already widened to float; exact for int types
};

ImageFile read_nifti_file(const std::filesystem::path& path);
void write_nifti_file(const std::filesystem::path& path, const ImageFile& img);

Volume3D read_nifti(const std::filesystem::path& path);
void write_nifti(const std::filesystem::path& path, const Volume3D& vol);

/// structure_count == 0 means "use the largest label present".
LabelVolume read_nifti_labels(const std::filesystem::path& path, int structure_count = 0);
void write_nifti_labels(const std::filesystem::path& path, const LabelVolume& lab);

// Fallback raw format: <base>.json sidecar {dims, spacing, dtype} plus a
// little-endian <base>.raw blob.
ImageFile read_raw_file(const std::filesystem::path& base);
void write_raw_file(const std::filesystem::path& base, const ImageFile& img);

/// Dispatches on extension: ".nii" is NIfTI-1, anything else is the raw pair.
Volume3D read_volume(const std::filesystem::path& path);
void write_volume(const std::filesystem::path& path, const Volume3D& vol);
LabelVolume read_labels(const std::filesystem::path& path, int structure_count = 0);
void write_labels(const std::filesystem::path& path, const LabelVolume& lab);

}  // namespace dg
