#pragma once

#include <map>
#include <string>
#include <vector>

#include "v2p/ad/params.hpp"

namespace v2p::ad {

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Decoupled-decay Adam: p <- p * (1 - lr*wd) - lr * m_hat / (sqrt(v_hat) +
// eps), with bias-corrected moments. Only parameters named in the gradient
// map are touched.
class AdamW {
 public:
  explicit AdamW(const AdamWConfig& cfg) : cfg_(cfg) {}

  // Returns false and leaves everything untouched (including the step
  // counter) if any gradient entry is non-finite.
  bool step(ParamStore& store,
            const std::map<std::string, std::vector<double>>& grads);

  long steps_taken() const { return t_; }
  long steps_skipped() const { return skipped_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  long t_ = 0;
  long skipped_ = 0;
};

}  // namespace v2p::ad
