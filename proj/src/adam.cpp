#include "latcert/adam.hpp"

#include <cmath>

#include "latcert/error.hpp"

namespace latcert {

void adam_step(ParameterSet& params, const Gradients& grads, AdamState& state, const AdamHyper& hyper) {
  if (state.step < 0) throw UsageError("adam step counter is negative");
  for (const auto& [name, g] : grads) {
    const Parameter* p = params.find(name);
    if (p == nullptr) throw StructuralError("gradient for unknown parameter '" + name + "'");
    if (p->trainable) require_same_shape(p->value, g, name.c_str());
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (Parameter& p : params.items()) {
    if (!p.trainable) continue;
    auto [m_it, m_new] = state.first.try_emplace(p.name, p.value.shape(), 0.0);
    auto [v_it, v_new] = state.second.try_emplace(p.name, p.value.shape(), 0.0);
    Tensor& m = m_it->second;
    Tensor& v = v_it->second;
    require_same_shape(p.value, m, "adam moment");
    const auto g_it = grads.find(p.name);
    const Tensor* g = g_it == grads.end() ? nullptr : &g_it->second;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * gi;
      v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * gi * gi;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p.value[i] -= hyper.lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
    }
  }
}

}  // namespace latcert
