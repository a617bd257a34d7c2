#include "v2p/ad/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace v2p::ad {
namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error("loss: " + msg);
}

void check_labels(const Tensor& p, const std::vector<double>& labels,
                  const char* who) {
  if (labels.size() != p.values().size()) {
    fail(std::string(who) + ": " + std::to_string(labels.size()) +
         " labels for " + std::to_string(p.values().size()) + " probabilities");
  }
  for (double y : labels) {
    if (y != 0.0 && y != 1.0) {
      fail(std::string(who) + ": label " + std::to_string(y) +
           " is not 0 or 1");
    }
  }
}

double clamp_prob(double p) {
  if (p < kProbEps) return kProbEps;
  if (p > 1.0 - kProbEps) return 1.0 - kProbEps;
  return p;
}

}  // namespace

Tensor focal_loss(Graph& g, Tensor p, const std::vector<double>& labels,
                  double alpha, double gamma) {
  check_labels(p, labels, "focal_loss");
  const std::vector<double>& pv = p.values();
  std::size_t n = pv.size();
  if (n == 0) fail("focal_loss: empty input");
  double acc = 0.0;
  std::vector<double> dacc(n);  // d(mean loss)/d(p_i)
  for (std::size_t i = 0; i < n; ++i) {
    double pc = clamp_prob(pv[i]);
    bool clamped = pv[i] < kProbEps || pv[i] > 1.0 - kProbEps;
    double d;
    if (labels[i] == 1.0) {
      double om = 1.0 - pc;
      acc += -alpha * std::pow(om, gamma) * std::log(pc);
      double t1 = gamma == 0.0 ? 0.0 : gamma * std::pow(om, gamma - 1.0);
      d = -alpha * (-t1 * std::log(pc) + std::pow(om, gamma) / pc);
    } else {
      double a0 = 1.0 - alpha;
      acc += -a0 * std::pow(pc, gamma) * std::log(1.0 - pc);
      double t1 = gamma == 0.0 ? 0.0 : gamma * std::pow(pc, gamma - 1.0);
      d = -a0 * (t1 * std::log(1.0 - pc) - std::pow(pc, gamma) / (1.0 - pc));
    }
    dacc[i] = clamped ? 0.0 : d / double(n);
  }
  Tensor out = g.constant(1, 1, {acc / double(n)});
  Graph* gp = &g;
  int ip = p.id, io = out.id;
  gp->node_backward_hook(io, [gp, ip, io, dv = std::move(dacc)] {
    double go = gp->grad_at(io, 0);
    for (std::size_t i = 0; i < dv.size(); ++i) {
      gp->accumulate_grad(ip, i, go * dv[i]);
    }
  });
  return out;
}

Tensor bce_loss(Graph& g, Tensor p, const std::vector<double>& labels) {
  check_labels(p, labels, "bce_loss");
  const std::vector<double>& pv = p.values();
  std::size_t n = pv.size();
  if (n == 0) fail("bce_loss: empty input");
  double acc = 0.0;
  std::vector<double> dacc(n);
  for (std::size_t i = 0; i < n; ++i) {
    double pc = clamp_prob(pv[i]);
    bool clamped = pv[i] < kProbEps || pv[i] > 1.0 - kProbEps;
    acc += -(labels[i] * std::log(pc) +
             (1.0 - labels[i]) * std::log(1.0 - pc));
    double d = -labels[i] / pc + (1.0 - labels[i]) / (1.0 - pc);
    dacc[i] = clamped ? 0.0 : d / double(n);
  }
  Tensor out = g.constant(1, 1, {acc / double(n)});
  Graph* gp = &g;
  int ip = p.id, io = out.id;
  gp->node_backward_hook(io, [gp, ip, io, dv = std::move(dacc)] {
    double go = gp->grad_at(io, 0);
    for (std::size_t i = 0; i < dv.size(); ++i) {
      gp->accumulate_grad(ip, i, go * dv[i]);
    }
  });
  return out;
}

Tensor smooth_l1(Graph& g, Tensor pred, const std::vector<double>& target) {
  const std::vector<double>& pv = pred.values();
  if (target.size() != pv.size()) {
    fail("smooth_l1: " + std::to_string(target.size()) + " targets for " +
         std::to_string(pv.size()) + " predictions");
  }
  std::size_t n = pv.size();
  std::vector<double> out(n), slope(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = pv[i] - target[i];
    if (std::abs(d) < 1.0) {
      out[i] = 0.5 * d * d;
      slope[i] = d;
    } else {
      out[i] = std::abs(d) - 0.5;
      slope[i] = d > 0 ? 1.0 : -1.0;
    }
  }
  Tensor t = g.constant(pred.rows(), pred.cols(), std::move(out));
  Graph* gp = &g;
  int ip = pred.id, io = t.id;
  gp->node_backward_hook(io, [gp, ip, io, sl = std::move(slope)] {
    for (std::size_t i = 0; i < sl.size(); ++i) {
      gp->accumulate_grad(ip, i, gp->grad_at(io, i) * sl[i]);
    }
  });
  return t;
}

}  // namespace v2p::ad
