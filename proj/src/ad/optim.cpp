#include "v2p/ad/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace v2p::ad {

bool AdamW::step(ParamStore& store,
                 const std::map<std::string, std::vector<double>>& grads) {
  for (const auto& [name, g] : grads) {
    const ParamStore::Entry& e = store.at(name);
    if (g.size() != e.value.size()) {
      throw std::runtime_error("adamw: gradient for '" + name + "' has " +
                               std::to_string(g.size()) + " entries, param has " +
                               std::to_string(e.value.size()));
    }
    for (double v : g) {
      if (!std::isfinite(v)) {
        ++skipped_;
        return false;
      }
    }
  }
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  for (const auto& [name, g] : grads) {
    ParamStore::Entry& e = store.at(name);
    for (std::size_t i = 0; i < g.size(); ++i) {
      e.m[i] = cfg_.beta1 * e.m[i] + (1.0 - cfg_.beta1) * g[i];
      e.v[i] = cfg_.beta2 * e.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      double m_hat = e.m[i] / bc1;
      double v_hat = e.v[i] / bc2;
      e.value[i] = e.value[i] * (1.0 - cfg_.lr * cfg_.weight_decay) -
                   cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
  return true;
}

}  // namespace v2p::ad
