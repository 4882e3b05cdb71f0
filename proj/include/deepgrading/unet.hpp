#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "deepgrading/param.hpp"
#include "deepgrading/volume.hpp"

namespace dg {

/// Multi-channel activation, channel-major: data[c * N + voxel] with voxels in
/// the same x-fastest order as Volume3D.
struct Tensor {
  int channels = 0;
  Dims3 dims;
  FloatBuffer data;

  Tensor() = default;
  Tensor(int c, Dims3 d) : channels(c), dims(d), data(static_cast<std::size_t>(c) * d.count(), 0.0f) {}
  std::size_t voxels() const { return dims.count(); }
  float* channel(int c) { return data.data() + static_cast<std::size_t>(c) * voxels(); }
  const float* channel(int c) const { return data.data() + static_cast<std::size_t>(c) * voxels(); }
};

namespace nn {

// Layer primitives with explicit backward passes. Backward functions
// accumulate into weight gradients and overwrite the input gradient.

/// Zero-padded "same" convolution, odd cubic kernel. weight shape
/// [cout, cin, k, k, k], bias [cout].
Tensor conv3d(const Tensor& x, const Param& weight, const Param& bias, int kernel);
Tensor conv3d_backward(const Tensor& x, const Tensor& dy, Param& weight, Param& bias, int kernel);

/// Negative inputs are scaled by kLeakySlope. A plain ReLU lets the grader
/// collapse into a constant output on background-dominated patches.
inline constexpr float kLeakySlope = 0.1f;
Tensor leaky_relu(const Tensor& x);
Tensor leaky_relu_backward(const Tensor& y, const Tensor& dy);

/// 2x2x2 max pooling with stride 2; dims must be even. argmax receives the
/// input offset chosen for every output element.
Tensor maxpool2(const Tensor& x, std::vector<std::uint32_t>& argmax);
Tensor maxpool2_backward(const Tensor& x, const std::vector<std::uint32_t>& argmax, const Tensor& dy);

/// Corner-aligned separable trilinear resize to target dims.
Tensor upsample(const Tensor& x, Dims3 target);
Tensor upsample_backward(const Tensor& dy, Dims3 source);

Tensor concat(const Tensor& a, const Tensor& b);
void split(const Tensor& d, int channels_a, Tensor& da, Tensor& db);

Tensor tanh(const Tensor& x);
Tensor tanh_backward(const Tensor& y, const Tensor& dy);

}  // namespace nn

/// Affine map (x - shift) * scale applied to every input patch. Fitted on the
/// training cohort, not trained.
struct InputNormalization {
  float shift = 0.0f;
  float scale = 1.0f;
  friend bool operator==(const InputNormalization&, const InputNormalization&) = default;
};

struct UNetConfig {
  int depth = 2;          // resolution levels
  int base_channels = 8;  // channels at full resolution, doubled per level
  int kernel = 3;

  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

/// Encoder-decoder grading network with skip concatenation and a 1x1x1 tanh
/// head, so every output voxel lies in [-1, 1].
class UNet {
 public:
  UNet() = default;
  // Throws DataError when patch dims are not divisible by 2^(depth-1) or the
  // config is invalid.
  UNet(UNetConfig cfg, Dims3 patch_dims, std::uint64_t seed);

  const UNetConfig& config() const { return cfg_; }
  const Dims3& patch_dims() const { return patch_dims_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  std::size_t parameter_count() const;

  Volume3D forward(const Volume3D& patch) const;

  /// Runs forward, adds d(MAE)/d(weights) into the gradient buffers and
  /// returns the loss. Throws NumericError on a non-finite loss.
  double accumulate_gradients(const Volume3D& patch, const Volume3D& target);

  /// Same, for an arbitrary scalar loss given through its gradient w.r.t. the
  /// output; used by gradient checks.
  void backward_from_output(const Volume3D& patch, const Tensor& d_output);

  void zero_grad();
  /// Copies weights from another network of identical architecture.
  void copy_weights_from(const UNet& other);
  std::uint64_t weight_hash() const;

  const InputNormalization& input_normalization() const { return norm_; }
  void set_input_normalization(InputNormalization n);
  /// Hash of every activation sign and pooling choice for this input; equal
  /// patterns mean the network is linear in between (up to the tanh head).
  std::uint64_t activation_pattern(const Volume3D& patch) const;

 private:
  struct Cache;
  Tensor run(const Volume3D& patch, Cache* cache) const;
  void backward(const Cache& cache, Tensor d_out);

  UNetConfig cfg_;
  Dims3 patch_dims_;
  std::vector<Param> params_;
  InputNormalization norm_;
};

double mae_loss(const Volume3D& pred, const Volume3D& target);

}  // namespace dg
