#pragma once

// Adam with bias correction (Kingma & Ba), 64-bit state throughout.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cvae/tensor.hpp"

namespace cvae {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment tensors, stored in the same fixed order as the
// parameter list they were initialized from.
struct AdamState {
  AdamConfig config;
  long long step_count = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  static AdamState init(const std::vector<std::pair<std::string, Tensor*>>& params,
                        AdamConfig cfg = {}) {
    AdamState st;
    st.config = cfg;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (const auto& [name, t] : params) {
      st.m.push_back(Tensor(t->shape));
      st.v.push_back(Tensor(t->shape));
    }
    return st;
  }
};

inline void adam_step(const std::vector<std::pair<std::string, Tensor*>>& params,
                      const std::vector<const Tensor*>& grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw std::invalid_argument("adam_step: parameter/gradient/state count mismatch");
  }
  ++state.step_count;
  const double b1 = state.config.beta1;
  const double b2 = state.config.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step_count));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& w = *params[p].second;
    const Tensor& g = *grads[p];
    if (!w.same_shape(g)) {
      throw std::invalid_argument("adam_step: gradient shape mismatch for " +
                                  params[p].first);
    }
    const auto arr = [](Tensor& t) {
      return Eigen::Map<Eigen::ArrayXd>(t.data.data(),
                                        static_cast<Eigen::Index>(t.size()));
    };
    const Eigen::Map<const Eigen::ArrayXd> ga(g.data.data(),
                                              static_cast<Eigen::Index>(g.size()));
    auto ma = arr(state.m[p]);
    auto va = arr(state.v[p]);
    ma = b1 * ma + (1.0 - b1) * ga;
    va = b2 * va + (1.0 - b2) * ga * ga;
    arr(w) -= state.config.lr * (ma / bc1) / ((va / bc2).sqrt() + state.config.eps);
  }
}

}  // namespace cvae
