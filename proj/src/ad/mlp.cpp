#include "v2p/ad/mlp.hpp"

#include <stdexcept>

namespace v2p::ad {

Tensor affine(Graph& g, ParamStore& store, const std::string& prefix, Tensor x,
              int out_width, bool bias) {
  Tensor w = g.param(store, prefix + ".w", x.cols(), out_width, false);
  Tensor y = g.matmul(x, w);
  if (bias) {
    Tensor b = g.param(store, prefix + ".b", 1, out_width, true);
    y = g.add_rowvec(y, b);
  }
  return y;
}

Tensor mlp_forward(Graph& g, ParamStore& store, const std::string& prefix,
                   const MlpSpec& spec, Tensor x) {
  if (spec.widths.size() < 2) {
    throw std::runtime_error("mlp '" + prefix +
                             "': need at least input and output widths");
  }
  for (int w : spec.widths) {
    if (w < 1) throw std::runtime_error("mlp '" + prefix + "': width < 1");
  }
  if (x.cols() != spec.widths.front()) {
    throw std::runtime_error(
        "mlp '" + prefix + "': input is " + std::to_string(x.rows()) + "x" +
        std::to_string(x.cols()) + " but the spec expects width " +
        std::to_string(spec.widths.front()));
  }
  Tensor h = x;
  for (std::size_t k = 1; k < spec.widths.size(); ++k) {
    h = affine(g, store, prefix + ".l" + std::to_string(k - 1), h,
               spec.widths[k], spec.bias);
    bool last = k + 1 == spec.widths.size();
    if (!last || spec.final_activation) h = g.relu(h);
  }
  return h;
}

}  // namespace v2p::ad
