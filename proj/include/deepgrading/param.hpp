#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace dg {

/// Float storage aligned to Eigen's widest packet. Vectorized reductions
/// peel their head by runtime alignment, so with malloc alignment the float
/// summation order, and the trained weights, varied with heap layout.
using FloatBuffer = std::vector<float, Eigen::aligned_allocator<float>>;

/// A named f32 weight tensor together with its gradient accumulator.
struct Param {
  std::string name;
  std::vector<std::uint32_t> shape;
  FloatBuffer value;
  FloatBuffer grad;

  Param() = default;
  Param(std::string n, std::vector<std::uint32_t> s) : name(std::move(n)), shape(std::move(s)) {
    std::size_t count = 1;
    for (auto d : shape) count *= d;
    value.assign(count, 0.0f);
    grad.assign(count, 0.0f);
  }
  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(std::vector<Param>& params) {
    if (m_.size() != params.size()) {
      m_.assign(params.size(), {});
      v_.assign(params.size(), {});
      for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i].assign(params[i].size(), 0.0f);
        v_[i].assign(params[i].size(), 0.0f);
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
    const auto step = static_cast<float>(cfg_.learning_rate / c1);
    const auto inv_c2 = static_cast<float>(1.0 / c2);
    const auto eps = static_cast<float>(cfg_.epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t n = 0; n < p.size(); ++n) {
        const float g = p.grad[n];
        m[n] = b1 * m[n] + (1.0f - b1) * g;
        v[n] = b2 * v[n] + (1.0f - b2) * g * g;
        p.value[n] -= step * m[n] / (std::sqrt(v[n] * inv_c2) + eps);
      }
    }
  }

  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<FloatBuffer> m_, v_;
  long t_ = 0;
};

}  // namespace dg
