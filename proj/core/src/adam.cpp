#include "pimpnet/adam.hpp"

#include <cmath>
#include <string>

#include "pimpnet/error.hpp"

namespace pimpnet {

AdamState AdamState::for_params(std::span<const TensorPtr> params) {
  AdamState st;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const auto& p : params) {
    st.m.emplace_back(p->data.size(), 0.0f);
    st.v.emplace_back(p->data.size(), 0.0f);
  }
  return st;
}

void adam_step(std::span<const TensorPtr> params, AdamState& state, float lr) {
  if (!(lr > 0.0f)) throw Error("adam_step: learning rate must be positive");
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw Error("adam_step: state holds " + std::to_string(state.m.size()) +
                " moment arrays for " + std::to_string(params.size()) +
                " parameters");
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t]->grad.size() != params[t]->data.size()) {
      throw Error("adam_step: missing gradient for parameter tensor " +
                  std::to_string(t));
    }
    if (state.m[t].size() != params[t]->data.size()) {
      throw Error("adam_step: moment length mismatch for parameter tensor " +
                  std::to_string(t));
    }
  }

  state.step += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = params[t]->data;
    const auto& g = params[t]->grad;
    auto& m = state.m[t];
    auto& v = state.v[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double m_hat = mi / c1;
      const double v_hat = vi / c2;
      p[i] = static_cast<float>(
          p[i] - static_cast<double>(lr) * m_hat /
                     (std::sqrt(v_hat) + static_cast<double>(state.eps)));
    }
  }
}

}  // namespace pimpnet
