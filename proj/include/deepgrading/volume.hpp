#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <set>
#include <utility>
#include <vector>

#include "deepgrading/errors.hpp"

namespace dg {

struct Dims3 {
  int x = 0, y = 0, z = 0;

  std::size_t count() const {
    return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) *
           static_cast<std::size_t>(z);
  }
  int operator[](int axis) const { return axis == 0 ? x : axis == 1 ? y : z; }
  int& operator[](int axis) { return axis == 0 ? x : axis == 1 ? y : z; }
  friend bool operator==(const Dims3&, const Dims3&) = default;
};

using Index3 = Dims3;

struct Spacing3 {
  double x = 1.0, y = 1.0, z = 1.0;
  friend bool operator==(const Spacing3&, const Spacing3&) = default;
};

/// Dense 3D grid in row-major x-fastest order: offset = x + nx*(y + ny*z).
template <class T>
class Grid3 {
 public:
  Grid3() = default;
  Grid3(Dims3 dims, Spacing3 spacing = {}, T fill = T{});
  Grid3(Dims3 dims, Spacing3 spacing, std::vector<T> data);

  const Dims3& dims() const { return dims_; }
  const Spacing3& spacing() const { return spacing_; }
  std::size_t size() const { return data_.size(); }

  std::size_t offset(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims_.x) *
               (static_cast<std::size_t>(j) +
                static_cast<std::size_t>(dims_.y) * static_cast<std::size_t>(k));
  }
  bool contains(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < dims_.x && j < dims_.y && k < dims_.z;
  }

  T& operator()(int i, int j, int k) { return data_[offset(i, j, k)]; }
  const T& operator()(int i, int j, int k) const { return data_[offset(i, j, k)]; }
  T& operator[](std::size_t n) { return data_[n]; }
  const T& operator[](std::size_t n) const { return data_[n]; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  friend bool operator==(const Grid3&, const Grid3&) = default;

 private:
  Dims3 dims_;
  Spacing3 spacing_;
  std::vector<T> data_;
};

using Volume3D = Grid3<float>;
using MaskVolume = Grid3<std::uint8_t>;

/// Structure labels; 0 is outside the intracranial cavity (ICC), 1..s are
/// structure identifiers.
class LabelVolume {
 public:
  LabelVolume() = default;
  // Throws DataError when a label exceeds s or is negative. An empty ICC is
  // representable; consumers that need one check has_icc().
  LabelVolume(Grid3<std::int32_t> labels, int structure_count);

  const Dims3& dims() const { return labels_.dims(); }
  const Spacing3& spacing() const { return labels_.spacing(); }
  int structure_count() const { return structure_count_; }
  const Grid3<std::int32_t>& grid() const { return labels_; }
  std::int32_t operator[](std::size_t n) const { return labels_[n]; }
  std::int32_t operator()(int i, int j, int k) const { return labels_(i, j, k); }
  const std::set<int>& used_labels() const { return used_; }
  bool has_icc() const { return !used_.empty(); }

  friend bool operator==(const LabelVolume& a, const LabelVolume& b) {
    return a.structure_count_ == b.structure_count_ && a.labels_ == b.labels_;
  }

 private:
  Grid3<std::int32_t> labels_;
  int structure_count_ = 0;
  std::set<int> used_;
};

Volume3D downsample_stride2(const Volume3D& vol);

/// Same index rule as downsample_stride2. Keeps structure_count; the used
/// label set may shrink.
LabelVolume downsample_labels_stride2(const LabelVolume& lab);

/// Corner-aligned trilinear interpolation; source coordinate along an axis is
/// i*(Dsrc-1)/(Ddst-1).
Volume3D upsample_trilinear(const Volume3D& vol, Dims3 target);

MaskVolume icc_mask(const LabelVolume& lab);

// ---------------------------------------------------------------------------

template <class T>
Grid3<T>::Grid3(Dims3 dims, Spacing3 spacing, T fill)
    : dims_(dims), spacing_(spacing), data_(dims.count(), fill) {
  if (dims.x <= 0 || dims.y <= 0 || dims.z <= 0) throw DataError("grid dims must be positive");
}

template <class T>
Grid3<T>::Grid3(Dims3 dims, Spacing3 spacing, std::vector<T> data)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
  if (dims.x <= 0 || dims.y <= 0 || dims.z <= 0) throw DataError("grid dims must be positive");
  if (data_.size() != dims.count()) throw DataError("grid data length does not match dims");
}

}  // namespace dg
