#include "deepgrading/volume.hpp"

#include <cmath>

namespace dg {

LabelVolume::LabelVolume(Grid3<std::int32_t> labels, int structure_count)
    : labels_(std::move(labels)), structure_count_(structure_count) {
  if (structure_count_ < 1) throw DataError("structure count must be >= 1");
  for (std::int32_t v : labels_.data()) {
    if (v < 0 || v > structure_count_)
      throw DataError("label " + std::to_string(v) + " outside 0.." +
                      std::to_string(structure_count_));
    if (v > 0) used_.insert(v);
  }
}

namespace {

Dims3 half_dims(const Dims3& d) {
  return {(d.x + 1) / 2, (d.y + 1) / 2, (d.z + 1) / 2};
}

template <class T>
Grid3<T> stride2(const Grid3<T>& in) {
  const Dims3 od = half_dims(in.dims());
  const Spacing3 sp{in.spacing().x * 2, in.spacing().y * 2, in.spacing().z * 2};
  Grid3<T> out(od, sp);
  for (int k = 0; k < od.z; ++k)
    for (int j = 0; j < od.y; ++j)
      for (int i = 0; i < od.x; ++i) out(i, j, k) = in(2 * i, 2 * j, 2 * k);
  return out;
}

struct AxisWeights {
  std::vector<int> lo, hi;
  std::vector<double> t;
};

AxisWeights axis_weights(int src, int dst) {
  AxisWeights w;
  w.lo.resize(dst);
  w.hi.resize(dst);
  w.t.resize(dst);
  for (int i = 0; i < dst; ++i) {
    const double c = dst == 1 ? 0.0
                              : static_cast<double>(i) * (src - 1) / (dst - 1);
    int lo = static_cast<int>(std::floor(c));
    if (lo > src - 1) lo = src - 1;
    const int hi = lo + 1 < src ? lo + 1 : lo;
    w.lo[i] = lo;
    w.hi[i] = hi;
    w.t[i] = c - lo;
  }
  return w;
}

}  // namespace

Volume3D downsample_stride2(const Volume3D& vol) { return stride2(vol); }

LabelVolume downsample_labels_stride2(const LabelVolume& lab) {
  return LabelVolume(stride2(lab.grid()), lab.structure_count());
}

Volume3D upsample_trilinear(const Volume3D& vol, Dims3 target) {
  const Dims3& s = vol.dims();
  for (int a = 0; a < 3; ++a) {
    if (target[a] < s[a])
      throw DataError("upsample target smaller than source along an axis");
    if (target[a] == 1 && s[a] > 1) throw DataError("invalid upsample target dim 1");
  }
  const Spacing3 sp{
      vol.spacing().x * (s.x > 1 ? double(s.x - 1) / (target.x - 1) : 1.0),
      vol.spacing().y * (s.y > 1 ? double(s.y - 1) / (target.y - 1) : 1.0),
      vol.spacing().z * (s.z > 1 ? double(s.z - 1) / (target.z - 1) : 1.0)};
  if (target == s) return Volume3D(target, vol.spacing(), vol.data());

  const AxisWeights wx = axis_weights(s.x, target.x);
  const AxisWeights wy = axis_weights(s.y, target.y);
  const AxisWeights wz = axis_weights(s.z, target.z);
  Volume3D out(target, sp);
  for (int k = 0; k < target.z; ++k) {
    const double tz = wz.t[k];
    for (int j = 0; j < target.y; ++j) {
      const double ty = wy.t[j];
      for (int i = 0; i < target.x; ++i) {
        const double tx = wx.t[i];
        auto lerp_x = [&](int jj, int kk) {
          const double a = vol(wx.lo[i], jj, kk);
          const double b = vol(wx.hi[i], jj, kk);
          return a + tx * (b - a);
        };
        auto lerp_xy = [&](int kk) {
          const double a = lerp_x(wy.lo[j], kk);
          const double b = lerp_x(wy.hi[j], kk);
          return a + ty * (b - a);
        };
        const double a = lerp_xy(wz.lo[k]);
        const double b = lerp_xy(wz.hi[k]);
        out(i, j, k) = static_cast<float>(a + tz * (b - a));
      }
    }
  }
  return out;
}

MaskVolume icc_mask(const LabelVolume& lab) {
  MaskVolume m(lab.dims(), lab.spacing());
  for (std::size_t n = 0; n < m.size(); ++n) m[n] = lab[n] > 0 ? 1 : 0;
  return m;
}

}  // namespace dg
