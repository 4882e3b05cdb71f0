#include "deepgrading/patch_grid.hpp"

#include <algorithm>

#include "deepgrading/errors.hpp"

namespace dg {

std::vector<int> compute_origins(int axis_len, int patch_len, int k) {
  if (patch_len <= 0 || k < 1) throw DataError("invalid patch geometry: patch length and k must be positive");
  if (patch_len > axis_len) throw DataError("invalid patch geometry: patch longer than axis");
  const int span = axis_len - patch_len;
  if (k == 1) return {span / 2};
  if (span < k - 1) throw DataError("invalid patch geometry: origins would not be strictly increasing");
  std::vector<int> o(k);
  // floor(j*span/(k-1) + 1/2) in exact integer arithmetic.
  for (int j = 0; j < k; ++j) o[j] = (2 * j * span + (k - 1)) / (2 * (k - 1));
  return o;
}

PatchGridSpec::PatchGridSpec(Dims3 volume_dims, Dims3 patch_dims, Dims3 k_per_axis)
    : volume_dims_(volume_dims), patch_dims_(patch_dims), k_(k_per_axis) {
  for (int a = 0; a < 3; ++a)
    origins_[a] = compute_origins(volume_dims[a], patch_dims[a], k_per_axis[a]);
}

Index3 PatchGridSpec::grid_coord(int j) const {
  if (j < 0 || j >= count()) throw DataError("patch index out of range");
  return {j % k_.x, (j / k_.x) % k_.y, j / (k_.x * k_.y)};
}

int PatchGridSpec::index_of(Index3 g) const { return g.x + k_.x * (g.y + k_.y * g.z); }

Index3 PatchGridSpec::origin(int j) const {
  const Index3 g = grid_coord(j);
  return {origins_[0][g.x], origins_[1][g.y], origins_[2][g.z]};
}

void to_json(nlohmann::json& j, const PatchGridSpec& s) {
  auto d = [](const Dims3& v) { return nlohmann::json::array({v.x, v.y, v.z}); };
  j = {{"volume_dims", d(s.volume_dims())},
       {"patch_dims", d(s.patch_dims())},
       {"k_per_axis", d(s.k_per_axis())},
       {"origins", {s.origins(0), s.origins(1), s.origins(2)}}};
}

void from_json(const nlohmann::json& j, PatchGridSpec& s) {
  auto d = [](const nlohmann::json& v) {
    const auto a = v.get<std::vector<int>>();
    if (a.size() != 3) throw DataError("expected three dims");
    return Dims3{a[0], a[1], a[2]};
  };
  s = PatchGridSpec(d(j.at("volume_dims")), d(j.at("patch_dims")), d(j.at("k_per_axis")));
  if (j.contains("origins")) {
    const auto o = j.at("origins").get<std::vector<std::vector<int>>>();
    for (int a = 0; a < 3; ++a)
      if (o.size() != 3 || o[a] != s.origins(a))
        throw DataError("stored patch origins disagree with the placement rule");
  }
}

std::vector<int> covering_patches(const PatchGridSpec& spec, Index3 v) {
  const Dims3& vd = spec.volume_dims();
  if (v.x < 0 || v.y < 0 || v.z < 0 || v.x >= vd.x || v.y >= vd.y || v.z >= vd.z)
    throw DataError("voxel outside the patch grid volume");
  std::array<std::vector<int>, 3> hits;
  for (int a = 0; a < 3; ++a) {
    const auto& o = spec.origins(a);
    for (int g = 0; g < static_cast<int>(o.size()); ++g)
      if (o[g] <= v[a] && v[a] < o[g] + spec.patch_dims()[a]) hits[a].push_back(g);
  }
  std::vector<int> out;
  for (int gz : hits[2])
    for (int gy : hits[1])
      for (int gx : hits[0]) out.push_back(spec.index_of({gx, gy, gz}));
  std::sort(out.begin(), out.end());
  return out;
}

Index3 shift_origin(Index3 origin, Dims3 patch, Dims3 volume, Index3 offsets) {
  Index3 o;
  for (int a = 0; a < 3; ++a)
    o[a] = std::clamp(origin[a] + offsets[a], 0, volume[a] - patch[a]);
  return o;
}

Index3 jitter_origin(Index3 origin, Dims3 patch, Dims3 volume, Rng& rng) {
  std::uniform_int_distribution<int> t(-1, 1);
  Index3 off;
  off.x = t(rng);
  off.y = t(rng);
  off.z = t(rng);
  return shift_origin(origin, patch, volume, off);
}

}  // namespace dg
