#pragma once

#include <map>

#include "dgs/common.hpp"

namespace dgs {

// Adaptive-moment optimizer keyed by tensor name. Moment rows follow primitive
// resizes through keep()/append() so densification stays coherent.
template <class S>
class Adam {
 public:
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-8);

  void step(const std::string& name, S* params, const S* grads, size_t n, S lr) {
    auto& st = states_[name];
    if (st.m.size() != n) {
      require(st.m.empty(), cat("Adam: tensor '", name, "' changed size ", st.m.size(), " -> ", n,
                                " without a resize call"));
      st.m.assign(n, S(0));
      st.v.assign(n, S(0));
    }
    st.t += 1;
    const S bc1 = S(1) - std::pow(beta1, S(st.t));
    const S bc2 = S(1) - std::pow(beta2, S(st.t));
    for (size_t i = 0; i < n; ++i) {
      st.m[i] = beta1 * st.m[i] + (S(1) - beta1) * grads[i];
      st.v[i] = beta2 * st.v[i] + (S(1) - beta2) * grads[i] * grads[i];
      const S mh = st.m[i] / bc1;
      const S vh = st.v[i] / bc2;
      params[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }

  // Keeps moment rows where mask is true; `stride` values per row.
  void keep_rows(const std::string& name, const std::vector<uint8_t>& mask, size_t stride) {
    auto it = states_.find(name);
    if (it == states_.end()) return;
    auto compact = [&](std::vector<S>& v) {
      size_t w = 0;
      for (size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        for (size_t k = 0; k < stride; ++k) v[w * stride + k] = v[i * stride + k];
        ++w;
      }
      v.resize(w * stride);
    };
    compact(it->second.m);
    compact(it->second.v);
  }

  // Appends zeroed moment rows for newly created primitives.
  void append_rows(const std::string& name, size_t rows, size_t stride) {
    auto it = states_.find(name);
    if (it == states_.end()) return;
    it->second.m.resize(it->second.m.size() + rows * stride, S(0));
    it->second.v.resize(it->second.v.size() + rows * stride, S(0));
  }

  void reset() { states_.clear(); }

 private:
  struct State {
    std::vector<S> m, v;
    long t = 0;
  };
  std::map<std::string, State> states_;
};

// Exponential decay from lr_init to lr_final over `total` steps.
template <class S>
S exp_decay_lr(S lr_init, S lr_final, long step, long total) {
  if (total <= 0 || lr_init <= S(0)) return lr_init;
  const S frac = std::min(S(1), std::max(S(0), S(step) / S(total)));
  return lr_init * std::pow(lr_final / lr_init, frac);
}

}  // namespace dgs
