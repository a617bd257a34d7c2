#pragma once

#include <vector>

#include "v2p/ad/graph.hpp"

namespace v2p::ad {

// Probabilities are clamped to [kProbEps, 1 - kProbEps] inside the losses;
// gradients are zero where the clamp is active.
inline constexpr double kProbEps = 1e-7;

// Mean over elements of -alpha_t (1 - p_t)^gamma log(p_t), where p_t = p
// for label 1 and 1-p for label 0, alpha_t likewise. Labels must be exactly
// 0 or 1.
Tensor focal_loss(Graph& g, Tensor p, const std::vector<double>& labels,
                  double alpha = 0.25, double gamma = 2.0);

// Mean binary cross entropy with the same clamping and label rules.
Tensor bce_loss(Graph& g, Tensor p, const std::vector<double>& labels);

// Per-element Huber: 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise, d = pred -
// target. Reduce with mul_const / sum_all as the caller requires.
Tensor smooth_l1(Graph& g, Tensor pred, const std::vector<double>& target);

}  // namespace v2p::ad
