#include "deepgrading/unet.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Core>

#include "deepgrading/errors.hpp"
#include "deepgrading/util.hpp"

namespace dg {

namespace {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

// Convolutions run on a zero-padded copy of the input. In that layout the
// tap (dx, dy, dz) of every output voxel is a fixed offset, so each im2col row
// is one contiguous slice covering the padded positions [lo, lo + len); rows
// outside the interior are computed and discarded.
struct PaddedGeometry {
  Dims3 padded;
  std::size_t np = 0;   // voxels per padded channel
  std::size_t lo = 0;   // first padded position evaluated
  std::size_t len = 0;  // number of padded positions evaluated
  int pad = 0;
};

PaddedGeometry padded_geometry(const Dims3& d, int kernel) {
  PaddedGeometry g;
  g.pad = kernel / 2;
  g.padded = {d.x + 2 * g.pad, d.y + 2 * g.pad, d.z + 2 * g.pad};
  g.np = g.padded.count();
  const auto px = static_cast<std::size_t>(g.padded.x), py = static_cast<std::size_t>(g.padded.y);
  g.lo = static_cast<std::size_t>(g.pad) * (1 + px + px * py);
  g.len = g.np - 2 * g.lo;
  return g;
}

void pad_into(const Tensor& x, const PaddedGeometry& g, FloatBuffer& out) {
  out.assign(static_cast<std::size_t>(x.channels) * g.np, 0.0f);
  const Dims3& d = x.dims;
  for (int c = 0; c < x.channels; ++c) {
    const float* src = x.channel(c);
    float* dst = out.data() + static_cast<std::size_t>(c) * g.np;
    for (int z = 0; z < d.z; ++z)
      for (int y = 0; y < d.y; ++y)
        std::copy_n(src + static_cast<std::size_t>(d.x) * (y + static_cast<std::size_t>(d.y) * z), d.x,
                    dst + (g.pad + static_cast<std::size_t>(g.padded.x) *
                                      (y + g.pad + static_cast<std::size_t>(g.padded.y) * (z + g.pad))));
  }
}

/// Row (c, tap) of the result is the padded channel c shifted by the tap offset.
void im2col(const FloatBuffer& xp, int channels, const PaddedGeometry& g, int kernel,
            FloatBuffer& cols) {
  const int taps = kernel * kernel * kernel;
  cols.resize(static_cast<std::size_t>(channels) * taps * g.len);
  const auto px = static_cast<std::ptrdiff_t>(g.padded.x), py = static_cast<std::ptrdiff_t>(g.padded.y);
  for (int c = 0; c < channels; ++c)
    for (int dz = 0; dz < kernel; ++dz)
      for (int dy = 0; dy < kernel; ++dy)
        for (int dx = 0; dx < kernel; ++dx) {
          const std::ptrdiff_t off = (dx - g.pad) + px * ((dy - g.pad) + py * (dz - g.pad));
          const int tap = (dz * kernel + dy) * kernel + dx;
          const float* src = xp.data() + static_cast<std::size_t>(c) * g.np + g.lo + off;
          std::copy_n(src, g.len, cols.data() + (static_cast<std::size_t>(c) * taps + tap) * g.len);
        }
}

/// Convolution without bias; weights row-major [cout, cin * taps].
Tensor convolve(const Tensor& x, const float* weights, int cout, int kernel) {
  const PaddedGeometry g = padded_geometry(x.dims, kernel);
  const int rows = x.channels * kernel * kernel * kernel;
  thread_local FloatBuffer xp, cols, yp;
  pad_into(x, g, xp);
  im2col(xp, x.channels, g, kernel, cols);
  yp.resize(static_cast<std::size_t>(cout) * g.len);
  const auto len = static_cast<Eigen::Index>(g.len);
  MapR(yp.data(), cout, len).noalias() = CMapR(weights, cout, rows) * CMapR(cols.data(), rows, len);
  Tensor y(cout, x.dims);
  const Dims3& d = x.dims;
  for (int c = 0; c < cout; ++c) {
    const float* src = yp.data() + static_cast<std::size_t>(c) * g.len;
    float* dst = y.channel(c);
    for (int z = 0; z < d.z; ++z)
      for (int yy = 0; yy < d.y; ++yy) {
        const std::size_t q = g.pad + static_cast<std::size_t>(g.padded.x) *
                                          (yy + g.pad + static_cast<std::size_t>(g.padded.y) * (z + g.pad));
        std::copy_n(src + (q - g.lo), d.x, dst + static_cast<std::size_t>(d.x) * (yy + static_cast<std::size_t>(d.y) * z));
      }
  }
  return y;
}

struct Weights1D {
  std::vector<int> lo, hi;
  std::vector<float> t;
};

Weights1D interp_weights(int src, int dst) {
  Weights1D w;
  w.lo.resize(dst);
  w.hi.resize(dst);
  w.t.resize(dst);
  for (int i = 0; i < dst; ++i) {
    const double c = dst == 1 ? 0.0 : static_cast<double>(i) * (src - 1) / (dst - 1);
    int lo = std::min(static_cast<int>(std::floor(c)), src - 1);
    w.lo[i] = lo;
    w.hi[i] = lo + 1 < src ? lo + 1 : lo;
    w.t[i] = static_cast<float>(c - lo);
  }
  return w;
}

// Linear resize of one axis to out_len samples. The adjoint variant maps a
// gradient on the resized grid back onto out_len source samples.
std::size_t lin(const Dims3& d, int i, int j, int k) {
  return static_cast<std::size_t>(i) + static_cast<std::size_t>(d.x) * (j + static_cast<std::size_t>(d.y) * k);
}

Tensor resize_axis(const Tensor& x, int axis, int out_len) {
  Dims3 od = x.dims;
  od[axis] = out_len;
  Tensor y(x.channels, od);
  const Weights1D w = interp_weights(x.dims[axis], out_len);
  for (int c = 0; c < x.channels; ++c) {
    const float* in = x.channel(c);
    float* out = y.channel(c);
    for (int k = 0; k < od.z; ++k)
      for (int j = 0; j < od.y; ++j)
        for (int i = 0; i < od.x; ++i) {
          Index3 lo{i, j, k}, hi{i, j, k};
          const int p = lo[axis];
          lo[axis] = w.lo[p];
          hi[axis] = w.hi[p];
          const float a = in[lin(x.dims, lo.x, lo.y, lo.z)];
          const float b = in[lin(x.dims, hi.x, hi.y, hi.z)];
          out[lin(od, i, j, k)] = a + w.t[p] * (b - a);
        }
  }
  return y;
}

Tensor resize_axis_adjoint(const Tensor& dy, int axis, int out_len) {
  Dims3 od = dy.dims;
  od[axis] = out_len;
  Tensor dx(dy.channels, od);
  const Weights1D w = interp_weights(out_len, dy.dims[axis]);
  for (int c = 0; c < dy.channels; ++c) {
    const float* g = dy.channel(c);
    float* out = dx.channel(c);
    for (int k = 0; k < dy.dims.z; ++k)
      for (int j = 0; j < dy.dims.y; ++j)
        for (int i = 0; i < dy.dims.x; ++i) {
          Index3 lo{i, j, k}, hi{i, j, k};
          const int p = lo[axis];
          lo[axis] = w.lo[p];
          hi[axis] = w.hi[p];
          const float v = g[lin(dy.dims, i, j, k)];
          out[lin(od, lo.x, lo.y, lo.z)] += v * (1.0f - w.t[p]);
          out[lin(od, hi.x, hi.y, hi.z)] += v * w.t[p];
        }
  }
  return dx;
}

void require_finite(std::span<const float> v, const char* what) {
  for (float x : v)
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite values in ") + what);
}

}  // namespace

namespace nn {

Tensor conv3d(const Tensor& x, const Param& weight, const Param& bias, int kernel) {
  const int cout = static_cast<int>(bias.size());
  const int rows = x.channels * kernel * kernel * kernel;
  if (weight.size() != static_cast<std::size_t>(cout) * rows)
    throw DataError("conv3d weight shape does not match input channels");
  Tensor y = convolve(x, weight.value.data(), cout, kernel);
  MapR out(y.data.data(), cout, static_cast<Eigen::Index>(x.voxels()));
  for (int c = 0; c < cout; ++c) out.row(c).array() += bias.value[c];
  return y;
}

Tensor conv3d_backward(const Tensor& x, const Tensor& dy, Param& weight, Param& bias, int kernel) {
  const int cout = dy.channels;
  const int taps = kernel * kernel * kernel;
  const int rows = x.channels * taps;
  const PaddedGeometry g = padded_geometry(x.dims, kernel);
  const auto len = static_cast<Eigen::Index>(g.len);
  thread_local FloatBuffer xp, dyp, cols;
  pad_into(x, g, xp);
  im2col(xp, x.channels, g, kernel, cols);
  // dy embedded in the padded layout is zero at every discarded position.
  pad_into(dy, g, dyp);
  using Strided = Eigen::Map<const MatR, 0, Eigen::OuterStride<>>;
  const Strided gy(dyp.data() + g.lo, cout, len, Eigen::OuterStride<>(static_cast<Eigen::Index>(g.np)));
  MapR(weight.grad.data(), cout, rows).noalias() += gy * CMapR(cols.data(), rows, len).transpose();
  CMapR gd(dy.data.data(), cout, static_cast<Eigen::Index>(dy.voxels()));
  for (int c = 0; c < cout; ++c) bias.grad[c] += gd.row(c).sum();
  // The adjoint of a zero-padded stride-1 convolution is the convolution
  // with spatially flipped kernels and swapped channel roles.
  thread_local FloatBuffer wt;
  wt.resize(static_cast<std::size_t>(x.channels) * cout * taps);
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < x.channels; ++ci)
      for (int t = 0; t < taps; ++t)
        wt[(static_cast<std::size_t>(ci) * cout + co) * taps + (taps - 1 - t)] =
            weight.value[(static_cast<std::size_t>(co) * x.channels + ci) * taps + t];
  return convolve(dy, wt.data(), x.channels, kernel);
}

Tensor leaky_relu(const Tensor& x) {
  Tensor y = x;
  for (float& v : y.data) v = v > 0.0f ? v : kLeakySlope * v;
  return y;
}

Tensor leaky_relu_backward(const Tensor& y, const Tensor& dy) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.data.size(); ++i)
    if (!(y.data[i] > 0.0f)) dx.data[i] *= kLeakySlope;
  return dx;
}

Tensor maxpool2(const Tensor& x, std::vector<std::uint32_t>& argmax) {
  const Dims3& d = x.dims;
  if (d.x % 2 || d.y % 2 || d.z % 2) throw DataError("maxpool2 needs even dims");
  const Dims3 od{d.x / 2, d.y / 2, d.z / 2};
  Tensor y(x.channels, od);
  argmax.assign(y.data.size(), 0);
  std::size_t o = 0;
  for (int c = 0; c < x.channels; ++c) {
    const float* in = x.channel(c);
    for (int k = 0; k < od.z; ++k)
      for (int j = 0; j < od.y; ++j)
        for (int i = 0; i < od.x; ++i, ++o) {
          float best = -INFINITY;
          std::uint32_t arg = 0;
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const std::size_t s = (2 * i + dx) + static_cast<std::size_t>(d.x) *
                                                         ((2 * j + dy) + static_cast<std::size_t>(d.y) * (2 * k + dz));
                if (in[s] > best) {
                  best = in[s];
                  arg = static_cast<std::uint32_t>(s);
                }
              }
          y.data[o] = best;
          argmax[o] = arg;
        }
  }
  return y;
}

Tensor maxpool2_backward(const Tensor& x, const std::vector<std::uint32_t>& argmax, const Tensor& dy) {
  Tensor dx(x.channels, x.dims);
  const std::size_t per = dy.voxels();
  for (int c = 0; c < dy.channels; ++c) {
    float* g = dx.channel(c);
    for (std::size_t n = 0; n < per; ++n) {
      const std::size_t o = c * per + n;
      g[argmax[o]] += dy.data[o];
    }
  }
  return dx;
}

Tensor upsample(const Tensor& x, Dims3 target) {
  Tensor t = resize_axis(x, 0, target.x);
  t = resize_axis(t, 1, target.y);
  return resize_axis(t, 2, target.z);
}

Tensor upsample_backward(const Tensor& dy, Dims3 source) {
  Tensor t = resize_axis_adjoint(dy, 2, source.z);
  t = resize_axis_adjoint(t, 1, source.y);
  return resize_axis_adjoint(t, 0, source.x);
}

Tensor concat(const Tensor& a, const Tensor& b) {
  if (!(a.dims == b.dims)) throw DataError("concat dims mismatch");
  Tensor y(a.channels + b.channels, a.dims);
  std::copy(a.data.begin(), a.data.end(), y.data.begin());
  std::copy(b.data.begin(), b.data.end(), y.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
  return y;
}

void split(const Tensor& d, int channels_a, Tensor& da, Tensor& db) {
  da = Tensor(channels_a, d.dims);
  db = Tensor(d.channels - channels_a, d.dims);
  std::copy_n(d.data.begin(), da.data.size(), da.data.begin());
  std::copy(d.data.begin() + static_cast<std::ptrdiff_t>(da.data.size()), d.data.end(), db.data.begin());
}

Tensor tanh(const Tensor& x) {
  Tensor y = x;
  for (float& v : y.data) v = std::tanh(v);
  return y;
}

Tensor tanh_backward(const Tensor& y, const Tensor& dy) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] *= 1.0f - y.data[i] * y.data[i];
  return dx;
}

}  // namespace nn

// ---------------------------------------------------------------------------
// UNet

namespace {

// Parameter layout: for every encoder level l two convs, for every decoder
// level l < depth-1 two convs, then the head. Each conv is (weight, bias).
struct Layout {
  int depth;
  static int enc(int l, int i) { return 4 * l + 2 * i; }
  int dec(int l, int i) const { return 4 * depth + 4 * l + 2 * i; }
  int head() const { return 4 * depth + 4 * (depth - 1); }
};

int level_channels(const UNetConfig& c, int l) { return c.base_channels << l; }

}  // namespace

struct UNet::Cache {
  // Per encoder level: input, conv0 output (post-activation), conv1 output (post-activation).
  std::vector<Tensor> enc_in, enc_a, enc_b;
  std::vector<std::vector<std::uint32_t>> pool_arg;
  // Per decoder level: concat input, conv0 output, conv1 output.
  std::vector<Tensor> dec_in, dec_a, dec_b;
  Tensor out;  // tanh output, single channel
};

UNet::UNet(UNetConfig cfg, Dims3 patch_dims, std::uint64_t seed) : cfg_(cfg), patch_dims_(patch_dims) {
  if (cfg.depth < 1 || cfg.base_channels < 1 || cfg.kernel < 1 || cfg.kernel % 2 == 0)
    throw DataError("invalid U-Net config: depth, channels >= 1 and odd kernel required");
  const int div = 1 << (cfg.depth - 1);
  for (int a = 0; a < 3; ++a)
    if (patch_dims[a] <= 0 || patch_dims[a] % div)
      throw DataError("patch dims must be divisible by 2^(depth-1)");

  Rng rng(seed);
  const Layout L{cfg.depth};
  params_.resize(static_cast<std::size_t>(L.head() + 2));
  const auto k = static_cast<std::uint32_t>(cfg.kernel);
  auto make_conv = [&](int slot, const std::string& name, int cin, int cout, std::uint32_t ks, double gain) {
    params_[slot] = Param(name + ".weight", {static_cast<std::uint32_t>(cout), static_cast<std::uint32_t>(cin), ks, ks, ks});
    params_[slot + 1] = Param(name + ".bias", {static_cast<std::uint32_t>(cout)});
    const double fan_in = static_cast<double>(cin) * ks * ks * ks;
    std::normal_distribution<float> nd(0.0f, static_cast<float>(std::sqrt(gain / fan_in)));
    for (float& w : params_[slot].value) w = nd(rng);
  };
  for (int l = 0; l < cfg.depth; ++l) {
    const int cin = l == 0 ? 1 : level_channels(cfg, l - 1);
    const int c = level_channels(cfg, l);
    make_conv(Layout::enc(l, 0), "enc" + std::to_string(l) + ".conv0", cin, c, k, 2.0);
    make_conv(Layout::enc(l, 1), "enc" + std::to_string(l) + ".conv1", c, c, k, 2.0);
  }
  for (int l = cfg.depth - 2; l >= 0; --l) {
    const int c = level_channels(cfg, l);
    const int cin = c + level_channels(cfg, l + 1);
    make_conv(L.dec(l, 0), "dec" + std::to_string(l) + ".conv0", cin, c, k, 2.0);
    make_conv(L.dec(l, 1), "dec" + std::to_string(l) + ".conv1", c, c, k, 2.0);
  }
  make_conv(L.head(), "head", level_channels(cfg, 0), 1, 1, 1.0);
}

std::size_t UNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

Tensor UNet::run(const Volume3D& patch, Cache* cache) const {
  if (!(patch.dims() == patch_dims_)) throw DataError("patch dims do not match the model");
  const Layout L{cfg_.depth};
  const int k = cfg_.kernel;
  Cache local;
  Cache& c = cache ? *cache : local;
  c.enc_in.assign(cfg_.depth, {});
  c.enc_a.assign(cfg_.depth, {});
  c.enc_b.assign(cfg_.depth, {});
  c.pool_arg.assign(cfg_.depth, {});
  c.dec_in.assign(cfg_.depth, {});
  c.dec_a.assign(cfg_.depth, {});
  c.dec_b.assign(cfg_.depth, {});

  Tensor x(1, patch.dims());
  x.data.assign(patch.data().begin(), patch.data().end());
  for (float& v : x.data) v = (v - norm_.shift) * norm_.scale;
  for (int l = 0; l < cfg_.depth; ++l) {
    c.enc_in[l] = std::move(x);
    c.enc_a[l] = nn::leaky_relu(nn::conv3d(c.enc_in[l], params_[Layout::enc(l, 0)], params_[Layout::enc(l, 0) + 1], k));
    c.enc_b[l] = nn::leaky_relu(nn::conv3d(c.enc_a[l], params_[Layout::enc(l, 1)], params_[Layout::enc(l, 1) + 1], k));
    if (l + 1 < cfg_.depth) x = nn::maxpool2(c.enc_b[l], c.pool_arg[l]);
  }
  Tensor up = c.enc_b[cfg_.depth - 1];
  for (int l = cfg_.depth - 2; l >= 0; --l) {
    c.dec_in[l] = nn::concat(nn::upsample(up, c.enc_b[l].dims), c.enc_b[l]);
    c.dec_a[l] = nn::leaky_relu(nn::conv3d(c.dec_in[l], params_[L.dec(l, 0)], params_[L.dec(l, 0) + 1], k));
    c.dec_b[l] = nn::leaky_relu(nn::conv3d(c.dec_a[l], params_[L.dec(l, 1)], params_[L.dec(l, 1) + 1], k));
    up = c.dec_b[l];
  }
  c.out = nn::tanh(nn::conv3d(up, params_[L.head()], params_[L.head() + 1], 1));
  return c.out;
}

Volume3D UNet::forward(const Volume3D& patch) const {
  Tensor y = run(patch, nullptr);
  return Volume3D(patch.dims(), patch.spacing(), std::vector<float>(y.data.begin(), y.data.end()));
}

void UNet::backward(const Cache& c, Tensor d_out) {
  const Layout L{cfg_.depth};
  const int k = cfg_.kernel;
  Tensor g = nn::tanh_backward(c.out, d_out);
  const Tensor& head_in = cfg_.depth > 1 ? c.dec_b[0] : c.enc_b[0];
  g = nn::conv3d_backward(head_in, g, params_[L.head()], params_[L.head() + 1], 1);

  // Gradients flowing into each encoder output via the skip connections.
  std::vector<Tensor> skip_grad(cfg_.depth);
  for (int l = 0; l + 1 < cfg_.depth; ++l) {
    g = nn::leaky_relu_backward(c.dec_b[l], g);
    g = nn::conv3d_backward(c.dec_a[l], g, params_[L.dec(l, 1)], params_[L.dec(l, 1) + 1], k);
    g = nn::leaky_relu_backward(c.dec_a[l], g);
    g = nn::conv3d_backward(c.dec_in[l], g, params_[L.dec(l, 0)], params_[L.dec(l, 0) + 1], k);
    Tensor d_up, d_skip;
    nn::split(g, level_channels(cfg_, l + 1), d_up, d_skip);
    skip_grad[l] = std::move(d_skip);
    const Tensor& below = l + 2 < cfg_.depth ? c.dec_b[l + 1] : c.enc_b[l + 1];
    g = nn::upsample_backward(d_up, below.dims);
  }
  // g is now the gradient w.r.t. the deepest encoder output.
  for (int l = cfg_.depth - 1; l >= 0; --l) {
    g = nn::leaky_relu_backward(c.enc_b[l], g);
    g = nn::conv3d_backward(c.enc_a[l], g, params_[Layout::enc(l, 1)], params_[Layout::enc(l, 1) + 1], k);
    g = nn::leaky_relu_backward(c.enc_a[l], g);
    g = nn::conv3d_backward(c.enc_in[l], g, params_[Layout::enc(l, 0)], params_[Layout::enc(l, 0) + 1], k);
    if (l > 0) {
      Tensor d = nn::maxpool2_backward(c.enc_b[l - 1], c.pool_arg[l - 1], g);
      for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += skip_grad[l - 1].data[i];
      g = std::move(d);
    }
  }
}

double UNet::accumulate_gradients(const Volume3D& patch, const Volume3D& target) {
  if (!(target.dims() == patch_dims_)) throw DataError("target dims do not match the model");
  Cache cache;
  run(patch, &cache);
  const std::size_t n = cache.out.data.size();
  Tensor d(1, patch_dims_);
  double loss = 0.0;
  const float inv_n = 1.0f / static_cast<float>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float diff = cache.out.data[i] - target[i];
    loss += std::fabs(static_cast<double>(diff));
    // subgradient of |.| at 0 taken as 0
    d.data[i] = diff > 0.0f ? inv_n : diff < 0.0f ? -inv_n : 0.0f;
  }
  loss /= static_cast<double>(n);
  if (!std::isfinite(loss)) throw NumericError("non-finite training loss");
  backward(cache, std::move(d));
  return loss;
}

void UNet::backward_from_output(const Volume3D& patch, const Tensor& d_output) {
  Cache cache;
  run(patch, &cache);
  require_finite(cache.out.data, "network output");
  backward(cache, d_output);
}

void UNet::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void UNet::copy_weights_from(const UNet& other) {
  if (!(other.cfg_ == cfg_) || !(other.patch_dims_ == patch_dims_))
    throw DataError("transfer source has a different architecture");
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].value = other.params_[i].value;
  norm_ = other.norm_;
}

void UNet::set_input_normalization(InputNormalization n) {
  if (!std::isfinite(n.shift) || !std::isfinite(n.scale) || n.scale <= 0.0f)
    throw DataError("input normalization needs a finite shift and a positive scale");
  norm_ = n;
}

std::uint64_t UNet::activation_pattern(const Volume3D& patch) const {
  Cache c;
  run(patch, &c);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mask = [&](const std::vector<Tensor>& ts) {
    for (const auto& t : ts) {
      std::vector<std::uint8_t> on(t.data.size());
      for (std::size_t i = 0; i < on.size(); ++i) on[i] = t.data[i] > 0.0f;
      h = hash_values(std::span<const std::uint8_t>(on), h);
    }
  };
  mask(c.enc_a);
  mask(c.enc_b);
  mask(c.dec_a);
  mask(c.dec_b);
  for (const auto& a : c.pool_arg) h = hash_values(std::span<const std::uint32_t>(a), h);
  return h;
}

std::uint64_t UNet::weight_hash() const {
  const float n[2] = {norm_.shift, norm_.scale};
  std::uint64_t h = hash_values(std::span<const float>(n));
  for (const auto& p : params_) {
    h = fnv1a(p.name, h);
    h = hash_values(std::span<const float>(p.value), h);
  }
  return h;
}

double mae_loss(const Volume3D& pred, const Volume3D& target) {
  if (!(pred.dims() == target.dims())) throw DataError("mae_loss dims mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::fabs(static_cast<double>(pred[i]) - target[i]);
  return s / static_cast<double>(pred.size());
}

}  // namespace dg
