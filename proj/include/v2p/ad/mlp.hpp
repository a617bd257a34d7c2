#pragma once

#include <string>
#include <vector>

#include "v2p/ad/graph.hpp"
#include "v2p/ad/params.hpp"

namespace v2p::ad {

// Fully-connected stack description: widths = [in, hidden..., out]. ReLU
// after every layer except the last, unless final_activation is set.
struct MlpSpec {
  std::vector<int> widths;
  bool final_activation = false;
  bool bias = true;
};

// One affine layer with parameters `prefix + ".w"` (and ".b" when bias).
Tensor affine(Graph& g, ParamStore& store, const std::string& prefix, Tensor x,
              int out_width, bool bias = true);

// Layers get parameter prefixes `prefix + ".l<k>"`.
Tensor mlp_forward(Graph& g, ParamStore& store, const std::string& prefix,
                   const MlpSpec& spec, Tensor x);

}  // namespace v2p::ad
