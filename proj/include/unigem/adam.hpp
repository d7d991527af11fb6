#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "unigem/common.hpp"
#include "unigem/tensor.hpp"

namespace unigem {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. First/second moment accumulators are kept per
/// parameter, keyed by position in the (ordered) parameter store.
template <class Real>
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  std::size_t step_count() const { return step_; }

  /// One update over all tracked parameters in `params`. Throws NumericError
  /// naming the parameter if its gradient is non-finite; the step is aborted
  /// before any parameter is modified.
  void step(NamedTensors<Real>& params) {
    init_if_needed(params);
    for (auto& [name, p] : params) {
      if (!p.tracked()) continue;
      for (std::size_t i = 0; i < p.size(); ++i)
        if (!std::isfinite(static_cast<double>(p.grad()[i])))
          throw NumericError("adam: non-finite gradient in parameter '" + name +
                             "'");
    }
    ++step_;
    const Real b1 = static_cast<Real>(cfg_.beta1);
    const Real b2 = static_cast<Real>(cfg_.beta2);
    const Real correction1 =
        Real(1) - static_cast<Real>(std::pow(cfg_.beta1, double(step_)));
    const Real correction2 =
        Real(1) - static_cast<Real>(std::pow(cfg_.beta2, double(step_)));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = params[k].second;
      if (!p.tracked()) continue;
      auto& mk = m_[k];
      auto& vk = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const Real g = p.grad()[i];
        mk[i] = b1 * mk[i] + (Real(1) - b1) * g;
        vk[i] = b2 * vk[i] + (Real(1) - b2) * g * g;
        const Real mhat = mk[i] / correction1;
        const Real vhat = vk[i] / correction2;
        p.data()[i] -= static_cast<Real>(cfg_.lr) * mhat /
                       (std::sqrt(vhat) + static_cast<Real>(cfg_.eps));
      }
    }
  }

  // Moment access for checkpointing.
  std::vector<std::vector<Real>>& first_moments() { return m_; }
  std::vector<std::vector<Real>>& second_moments() { return v_; }
  void restore(std::vector<std::vector<Real>> m, std::vector<std::vector<Real>> v,
               std::size_t step) {
    m_ = std::move(m);
    v_ = std::move(v);
    step_ = step;
  }

 private:
  void init_if_needed(const NamedTensors<Real>& params) {
    if (!m_.empty()) return;
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t k = 0; k < params.size(); ++k) {
      m_[k].assign(params[k].second.size(), Real(0));
      v_[k].assign(params[k].second.size(), Real(0));
    }
  }

  AdamConfig cfg_;
  std::size_t step_ = 0;
  std::vector<std::vector<Real>> m_;
  std::vector<std::vector<Real>> v_;
};

}  // namespace unigem
