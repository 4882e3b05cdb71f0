#pragma once

#include <array>
#include <vector>

#include <json.hpp>

#include "deepgrading/util.hpp"
#include "deepgrading/volume.hpp"

namespace dg {

/// Evenly spaced patch starts along one axis: k == 1 centers the patch,
/// otherwise origin_j = round_half_up(j * (D - P) / (k - 1)).
std::vector<int> compute_origins(int axis_len, int patch_len, int k);

/// k x k x k (per-axis counts may differ) overlapping patch layout. Patch j
/// enumerates grid coordinates in raster order, x fastest.
class PatchGridSpec {
 public:
  PatchGridSpec() = default;
  PatchGridSpec(Dims3 volume_dims, Dims3 patch_dims, Dims3 k_per_axis);

  const Dims3& volume_dims() const { return volume_dims_; }
  const Dims3& patch_dims() const { return patch_dims_; }
  const Dims3& k_per_axis() const { return k_; }
  const std::vector<int>& origins(int axis) const { return origins_[axis]; }

  int count() const { return k_.x * k_.y * k_.z; }
  Index3 grid_coord(int j) const;
  int index_of(Index3 grid) const;
  Index3 origin(int j) const;

  friend bool operator==(const PatchGridSpec&, const PatchGridSpec&) = default;

 private:
  Dims3 volume_dims_, patch_dims_, k_;
  std::array<std::vector<int>, 3> origins_;
};

void to_json(nlohmann::json& j, const PatchGridSpec& spec);
void from_json(const nlohmann::json& j, PatchGridSpec& spec);

template <class T>
Grid3<T> extract_patch(const Grid3<T>& vol, Index3 origin, Dims3 patch) {
  for (int a = 0; a < 3; ++a)
    if (origin[a] < 0 || patch[a] <= 0 || origin[a] + patch[a] > vol.dims()[a])
      throw DataError("patch extends outside the volume");
  Grid3<T> out(patch, vol.spacing());
  for (int k = 0; k < patch.z; ++k)
    for (int j = 0; j < patch.y; ++j) {
      const std::size_t src = vol.offset(origin.x, origin.y + j, origin.z + k);
      const std::size_t dst = out.offset(0, j, k);
      std::copy_n(vol.data().begin() + static_cast<std::ptrdiff_t>(src), patch.x,
                  out.data().begin() + static_cast<std::ptrdiff_t>(dst));
    }
  return out;
}

/// Patch indices j (ascending) whose region contains the voxel.
std::vector<int> covering_patches(const PatchGridSpec& spec, Index3 voxel);

/// Shifts each axis by the given offsets in {-1, 0, 1}, clamped to [0, D - P].
Index3 shift_origin(Index3 origin, Dims3 patch, Dims3 volume, Index3 offsets);
/// Same with offsets drawn uniformly and independently per axis.
Index3 jitter_origin(Index3 origin, Dims3 patch, Dims3 volume, Rng& rng);

}  // namespace dg
