// adam.hpp — Adam with bias correction, updating a ParameterSet in place.
#pragma once

#include <cmath>
#include <unordered_map>
#include <vector>

#include "spars/tensor.hpp"

namespace spars::ad {

template <class S>
class Adam {
 public:
  explicit Adam(S lr, S beta1 = S(0.9), S beta2 = S(0.999), S eps = S(1e-8),
                S weight_decay = S(0))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {}

  void step(ParameterSet<S>& params) {
    ++t_;
    const S bc1 = S(1) - std::pow(beta1_, static_cast<S>(t_));
    const S bc2 = S(1) - std::pow(beta2_, static_cast<S>(t_));
    for (auto& [name, p] : params) {
      if (p->grad.data.empty()) continue;
      auto& st = state_[name];
      if (st.m.empty()) {
        st.m.assign(p->value.numel(), S(0));
        st.v.assign(p->value.numel(), S(0));
      }
      S* w = p->value.data.data();
      const S* g = p->grad.data.data();
      for (std::size_t i = 0; i < p->value.numel(); ++i) {
        st.m[i] = beta1_ * st.m[i] + (S(1) - beta1_) * g[i];
        st.v[i] = beta2_ * st.v[i] + (S(1) - beta2_) * g[i] * g[i];
        const S mhat = st.m[i] / bc1;
        const S vhat = st.v[i] / bc2;
        w[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * w[i]);
      }
    }
  }

  S learning_rate() const { return lr_; }

 private:
  struct State {
    std::vector<S> m, v;
  };
  S lr_, beta1_, beta2_, eps_, wd_;
  long t_ = 0;
  std::unordered_map<std::string, State> state_;
};

}  // namespace spars::ad
