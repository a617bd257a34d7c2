#include "v2p/ad/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "v2p/ad/params.hpp"

namespace v2p::ad {
namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error("autodiff: " + msg);
}

std::string shape_str(int r, int c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace

int Tensor::rows() const { return g->node(id).rows; }
int Tensor::cols() const { return g->node(id).cols; }
const std::vector<double>& Tensor::values() const { return g->node(id).val; }
const std::vector<double>& Tensor::grad() const { return g->node(id).grad; }

double Tensor::value_at(int r, int c) const {
  return g->node(id).val[std::size_t(r) * std::size_t(g->node(id).cols) +
                         std::size_t(c)];
}

double Tensor::scalar() const {
  if (rows() != 1 || cols() != 1) {
    fail("scalar() on tensor of shape " + shape_str(rows(), cols()));
  }
  return values()[0];
}

Tensor Graph::make_node(int rows, int cols, std::vector<double> values,
                        const char* op) {
  if (rows < 0 || cols < 0) fail(std::string(op) + ": negative shape");
  if (values.size() != std::size_t(rows) * std::size_t(cols)) {
    fail(std::string(op) + ": value count " + std::to_string(values.size()) +
         " does not match shape " + shape_str(rows, cols));
  }
  if (check_finite_) {
    for (double v : values) {
      if (!std::isfinite(v)) {
        fail(std::string(op) + " produced a non-finite value");
      }
    }
  }
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.val = std::move(values);
  n.grad.assign(n.val.size(), 0.0);
  nodes_.push_back(std::move(n));
  return Tensor{this, int(nodes_.size()) - 1};
}

void Graph::check_same_graph(Tensor t, const char* op) const {
  if (t.g != this || t.id < 0 || t.id >= int(nodes_.size())) {
    fail(std::string(op) + ": tensor does not belong to this graph");
  }
}

Tensor Graph::constant(int rows, int cols, std::vector<double> values) {
  return make_node(rows, cols, std::move(values), "constant");
}

Tensor Graph::scalar(double v) { return make_node(1, 1, {v}, "scalar"); }

Tensor Graph::param(ParamStore& store, const std::string& name, int rows,
                    int cols, bool bias_init) {
  ParamStore::Entry& e = store.ensure(name, rows, cols, bias_init);
  Tensor t = make_node(rows, cols, e.value, "param");
  param_leaves_.emplace_back(name, t.id);
  return t;
}

Tensor Graph::add(Tensor a, Tensor b) {
  check_same_graph(a, "add");
  check_same_graph(b, "add");
  const Node& na = node(a.id);
  const Node& nb = node(b.id);
  if (na.rows != nb.rows || na.cols != nb.cols) {
    fail("add: shape " + shape_str(na.rows, na.cols) + " vs " +
         shape_str(nb.rows, nb.cols));
  }
  std::vector<double> out(na.val.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.val[i] + nb.val[i];
  Tensor t = make_node(na.rows, na.cols, std::move(out), "add");
  Graph* g = this;
  int ia = a.id, ib = b.id, io = t.id;
  node(t.id).backward = [g, ia, ib, io] {
    const std::vector<double>& go = g->node(io).grad;
    std::vector<double>& ga = g->node(ia).grad;
    std::vector<double>& gb = g->node(ib).grad;
    for (std::size_t i = 0; i < go.size(); ++i) {
      ga[i] += go[i];
      gb[i] += go[i];
    }
  };
  return t;
}

Tensor Graph::sub(Tensor a, Tensor b) {
  check_same_graph(a, "sub");
  check_same_graph(b, "sub");
  const Node& na = node(a.id);
  const Node& nb = node(b.id);
  if (na.rows != nb.rows || na.cols != nb.cols) {
    fail("sub: shape " + shape_str(na.rows, na.cols) + " vs " +
         shape_str(nb.rows, nb.cols));
  }
  std::vector<double> out(na.val.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.val[i] - nb.val[i];
  Tensor t = make_node(na.rows, na.cols, std::move(out), "sub");
  Graph* g = this;
  int ia = a.id, ib = b.id, io = t.id;
  node(t.id).backward = [g, ia, ib, io] {
    const std::vector<double>& go = g->node(io).grad;
    std::vector<double>& ga = g->node(ia).grad;
    std::vector<double>& gb = g->node(ib).grad;
    for (std::size_t i = 0; i < go.size(); ++i) {
      ga[i] += go[i];
      gb[i] -= go[i];
    }
  };
  return t;
}

Tensor Graph::scale(Tensor a, double s) {
  check_same_graph(a, "scale");
  const Node& na = node(a.id);
  std::vector<double> out(na.val.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.val[i] * s;
  Tensor t = make_node(na.rows, na.cols, std::move(out), "scale");
  Graph* g = this;
  int ia = a.id, io = t.id;
  node(t.id).backward = [g, ia, io, s] {
    const std::vector<double>& go = g->node(io).grad;
    std::vector<double>& ga = g->node(ia).grad;
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += s * go[i];
  };
  return t;
}

Tensor Graph::add_rowvec(Tensor a, Tensor bias) {
  check_same_graph(a, "add_rowvec");
  check_same_graph(bias, "add_rowvec");
  const Node& na = node(a.id);
  const Node& nb = node(bias.id);
  if (nb.rows != 1 || nb.cols != na.cols) {
    fail("add_rowvec: bias shape " + shape_str(nb.rows, nb.cols) +
         " does not broadcast over " + shape_str(na.rows, na.cols));
  }
  std::vector<double> out(na.val.size());
  for (int r = 0; r < na.rows; ++r) {
    for (int c = 0; c < na.cols; ++c) {
      out[std::size_t(r) * na.cols + c] =
          na.val[std::size_t(r) * na.cols + c] + nb.val[std::size_t(c)];
    }
  }
  Tensor t = make_node(na.rows, na.cols, std::move(out), "add_rowvec");
  Graph* g = this;
  int ia = a.id, ib = bias.id, io = t.id;
  node(t.id).backward = [g, ia, ib, io] {
    const Node& no = g->node(io);
    std::vector<double>& ga = g->node(ia).grad;
    std::vector<double>& gb = g->node(ib).grad;
    for (int r = 0; r < no.rows; ++r) {
      for (int c = 0; c < no.cols; ++c) {
        double gv = no.grad[std::size_t(r) * no.cols + c];
        ga[std::size_t(r) * no.cols + c] += gv;
        gb[std::size_t(c)] += gv;
      }
    }
  };
  return t;
}

Tensor Graph::mul_const(Tensor a, std::vector<double> weights) {
  check_same_graph(a, "mul_const");
  const Node& na = node(a.id);
  if (weights.size() != na.val.size()) {
    fail("mul_const: weight count " + std::to_string(weights.size()) +
         " does not match " + shape_str(na.rows, na.cols));
  }
  std::vector<double> out(na.val.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = na.val[i] * weights[i];
  }
  Tensor t = make_node(na.rows, na.cols, std::move(out), "mul_const");
  Graph* g = this;
  int ia = a.id, io = t.id;
  node(t.id).backward = [g, ia, io, w = std::move(weights)] {
    const std::vector<double>& go = g->node(io).grad;
    std::vector<double>& ga = g->node(ia).grad;
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += w[i] * go[i];
  };
  return t;
}

Tensor Graph::relu(Tensor a) {
  check_same_graph(a, "relu");
  const Node& na = node(a.id);
  std::vector<double> out(na.val.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = na.val[i] > 0 ? na.val[i] : 0.0;
  }
  Tensor t = make_node(na.rows, na.cols, std::move(out), "relu");
  Graph* g = this;
  int ia = a.id, io = t.id;
  node(t.id).backward = [g, ia, io] {
    const Node& no = g->node(io);
    const std::vector<double>& va = g->node(ia).val;
    std::vector<double>& ga = g->node(ia).grad;
    for (std::size_t i = 0; i < no.grad.size(); ++i) {
      if (va[i] > 0) ga[i] += no.grad[i];
    }
  };
  return t;
}

Tensor Graph::sigmoid(Tensor a) {
  check_same_graph(a, "sigmoid");
  const Node& na = node(a.id);
  std::vector<double> out(na.val.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double x = na.val[i];
    // Stable in both tails.
    out[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                    : std::exp(x) / (1.0 + std::exp(x));
  }
  Tensor t = make_node(na.rows, na.cols, std::move(out), "sigmoid");
  Graph* g = this;
  int ia = a.id, io = t.id;
  node(t.id).backward = [g, ia, io] {
    const Node& no = g->node(io);
    std::vector<double>& ga = g->node(ia).grad;
    for (std::size_t i = 0; i < no.grad.size(); ++i) {
      double s = no.val[i];
      ga[i] += no.grad[i] * s * (1.0 - s);
    }
  };
  return t;
}

Tensor Graph::matmul(Tensor a, Tensor b) {
  check_same_graph(a, "matmul");
  check_same_graph(b, "matmul");
  const Node& na = node(a.id);
  const Node& nb = node(b.id);
  if (na.cols != nb.rows) {
    fail("matmul: inner extents differ, " + shape_str(na.rows, na.cols) +
         " vs " + shape_str(nb.rows, nb.cols));
  }
  int N = na.rows, K = na.cols, M = nb.cols;
  std::vector<double> out(std::size_t(N) * std::size_t(M), 0.0);
  // i-k-j order: unit-stride inner loops.
  for (int i = 0; i < N; ++i) {
    const double* arow = na.val.data() + std::size_t(i) * K;
    double* orow = out.data() + std::size_t(i) * M;
    for (int k = 0; k < K; ++k) {
      double av = arow[k];
      if (av == 0.0) continue;
      const double* brow = nb.val.data() + std::size_t(k) * M;
      for (int j = 0; j < M; ++j) orow[j] += av * brow[j];
    }
  }
  Tensor t = make_node(N, M, std::move(out), "matmul");
  Graph* g = this;
  int ia = a.id, ib = b.id, io = t.id;
  node(t.id).backward = [g, ia, ib, io, N, K, M] {
    const std::vector<double>& go = g->node(io).grad;
    const std::vector<double>& va = g->node(ia).val;
    const std::vector<double>& vb = g->node(ib).val;
    std::vector<double>& ga = g->node(ia).grad;
    std::vector<double>& gb = g->node(ib).grad;
    // dA = dOut * B^T  (i-j-k with unit stride on B rows)
    for (int i = 0; i < N; ++i) {
      const double* gorow = go.data() + std::size_t(i) * M;
      double* garow = ga.data() + std::size_t(i) * K;
      for (int k = 0; k < K; ++k) {
        const double* brow = vb.data() + std::size_t(k) * M;
        double acc = 0.0;
        for (int j = 0; j < M; ++j) acc += gorow[j] * brow[j];
        garow[k] += acc;
      }
    }
    // dB = A^T * dOut  (k from A columns; i-k-j keeps unit stride)
    for (int i = 0; i < N; ++i) {
      const double* arow = va.data() + std::size_t(i) * K;
      const double* gorow = go.data() + std::size_t(i) * M;
      for (int k = 0; k < K; ++k) {
        double av = arow[k];
        if (av == 0.0) continue;
        double* gbrow = gb.data() + std::size_t(k) * M;
        for (int j = 0; j < M; ++j) gbrow[j] += av * gorow[j];
      }
    }
  };
  return t;
}

Tensor Graph::reshape(Tensor a, int rows, int cols) {
  check_same_graph(a, "reshape");
  const Node& na = node(a.id);
  if (std::size_t(rows) * std::size_t(cols) != na.val.size()) {
    fail("reshape: cannot view " + shape_str(na.rows, na.cols) + " as " +
         shape_str(rows, cols));
  }
  Tensor t = make_node(rows, cols, na.val, "reshape");
  Graph* g = this;
  int ia = a.id, io = t.id;
  node(t.id).backward = [g, ia, io] {
    const std::vector<double>& go = g->node(io).grad;
    std::vector<double>& ga = g->node(ia).grad;
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
  };
  return t;
}

Tensor Graph::concat_cols(std::vector<Tensor> parts) {
  if (parts.empty()) fail("concat_cols: no inputs");
  int rows = -1, total_cols = 0;
  for (Tensor p : parts) {
    check_same_graph(p, "concat_cols");
    const Node& np = node(p.id);
    if (rows < 0) rows = np.rows;
    if (np.rows != rows) {
      fail("concat_cols: row mismatch " + std::to_string(np.rows) + " vs " +
           std::to_string(rows));
    }
    total_cols += np.cols;
  }
  std::vector<double> out(std::size_t(rows) * std::size_t(total_cols));
  int col0 = 0;
  for (Tensor p : parts) {
    const Node& np = node(p.id);
    for (int r = 0; r < rows; ++r) {
      std::copy_n(np.val.data() + std::size_t(r) * np.cols, np.cols,
                  out.data() + std::size_t(r) * total_cols + col0);
    }
    col0 += np.cols;
  }
  Tensor t = make_node(rows, total_cols, std::move(out), "concat_cols");
  Graph* g = this;
  std::vector<int> ids;
  for (Tensor p : parts) ids.push_back(p.id);
  int io = t.id;
  node(t.id).backward = [g, ids, io, rows, total_cols] {
    const std::vector<double>& go = g->node(io).grad;
    int col0 = 0;
    for (int idp : ids) {
      Node& np = g->node(idp);
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < np.cols; ++c) {
          np.grad[std::size_t(r) * np.cols + c] +=
              go[std::size_t(r) * total_cols + col0 + c];
        }
      }
      col0 += np.cols;
    }
  };
  return t;
}

Tensor Graph::concat_rows(std::vector<Tensor> parts) {
  if (parts.empty()) fail("concat_rows: no inputs");
  int cols = -1, total_rows = 0;
  for (Tensor p : parts) {
    check_same_graph(p, "concat_rows");
    const Node& np = node(p.id);
    if (cols < 0) cols = np.cols;
    if (np.cols != cols) {
      fail("concat_rows: column mismatch " + std::to_string(np.cols) + " vs " +
           std::to_string(cols));
    }
    total_rows += np.rows;
  }
  std::vector<double> out;
  out.reserve(std::size_t(total_rows) * std::size_t(cols));
  for (Tensor p : parts) {
    const Node& np = node(p.id);
    out.insert(out.end(), np.val.begin(), np.val.end());
  }
  Tensor t = make_node(total_rows, cols, std::move(out), "concat_rows");
  Graph* g = this;
  std::vector<int> ids;
  for (Tensor p : parts) ids.push_back(p.id);
  int io = t.id;
  node(t.id).backward = [g, ids, io] {
    const std::vector<double>& go = g->node(io).grad;
    std::size_t off = 0;
    for (int idp : ids) {
      Node& np = g->node(idp);
      for (std::size_t i = 0; i < np.grad.size(); ++i) {
        np.grad[i] += go[off + i];
      }
      off += np.grad.size();
    }
  };
  return t;
}

Tensor Graph::gather_rows(Tensor a, std::vector<int> idx) {
  check_same_graph(a, "gather_rows");
  const Node& na = node(a.id);
  for (int i : idx) {
    if (i < 0 || i >= na.rows) {
      fail("gather_rows: index " + std::to_string(i) + " out of " +
           std::to_string(na.rows) + " rows");
    }
  }
  int C = na.cols;
  std::vector<double> out(idx.size() * std::size_t(C));
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy_n(na.val.data() + std::size_t(idx[r]) * C, C,
                out.data() + r * std::size_t(C));
  }
  Tensor t = make_node(int(idx.size()), C, std::move(out), "gather_rows");
  Graph* g = this;
  int ia = a.id, io = t.id;
  node(t.id).backward = [g, ia, io, C, ix = std::move(idx)] {
    const std::vector<double>& go = g->node(io).grad;
    std::vector<double>& ga = g->node(ia).grad;
    for (std::size_t r = 0; r < ix.size(); ++r) {
      for (int c = 0; c < C; ++c) {
        ga[std::size_t(ix[r]) * C + c] += go[r * std::size_t(C) + c];
      }
    }
  };
  return t;
}

Tensor Graph::scatter_sum_rows(Tensor a, std::vector<int> dst, int out_rows) {
  check_same_graph(a, "scatter_sum_rows");
  const Node& na = node(a.id);
  if (int(dst.size()) != na.rows) {
    fail("scatter_sum_rows: " + std::to_string(dst.size()) +
         " destinations for " + std::to_string(na.rows) + " rows");
  }
  for (int d : dst) {
    if (d < 0 || d >= out_rows) {
      fail("scatter_sum_rows: destination " + std::to_string(d) + " out of " +
           std::to_string(out_rows) + " rows");
    }
  }
  int C = na.cols;
  std::vector<double> out(std::size_t(out_rows) * std::size_t(C), 0.0);
  for (int r = 0; r < na.rows; ++r) {
    const double* src = na.val.data() + std::size_t(r) * C;
    double* d = out.data() + std::size_t(dst[std::size_t(r)]) * C;
    for (int c = 0; c < C; ++c) d[c] += src[c];
  }
  Tensor t = make_node(out_rows, C, std::move(out), "scatter_sum_rows");
  Graph* g = this;
  int ia = a.id, io = t.id;
  node(t.id).backward = [g, ia, io, C, ds = std::move(dst)] {
    const std::vector<double>& go = g->node(io).grad;
    std::vector<double>& ga = g->node(ia).grad;
    for (std::size_t r = 0; r < ds.size(); ++r) {
      const double* src = go.data() + std::size_t(ds[r]) * C;
      double* d = ga.data() + r * std::size_t(C);
      for (int c = 0; c < C; ++c) d[c] += src[c];
    }
  };
  return t;
}

Tensor Graph::weighted_sum_rows(Tensor a, std::vector<MixRow> mix) {
  check_same_graph(a, "weighted_sum_rows");
  const Node& na = node(a.id);
  for (const MixRow& row : mix) {
    for (const auto& [src, w] : row) {
      if (src < 0 || src >= na.rows) {
        fail("weighted_sum_rows: source " + std::to_string(src) + " out of " +
             std::to_string(na.rows) + " rows");
      }
    }
  }
  int C = na.cols;
  std::vector<double> out(mix.size() * std::size_t(C), 0.0);
  for (std::size_t r = 0; r < mix.size(); ++r) {
    double* orow = out.data() + r * std::size_t(C);
    for (const auto& [src, w] : mix[r]) {
      const double* arow = na.val.data() + std::size_t(src) * C;
      for (int c = 0; c < C; ++c) orow[c] += w * arow[c];
    }
  }
  Tensor t = make_node(int(mix.size()), C, std::move(out), "weighted_sum_rows");
  Graph* g = this;
  int ia = a.id, io = t.id;
  node(t.id).backward = [g, ia, io, C, mx = std::move(mix)] {
    const std::vector<double>& go = g->node(io).grad;
    std::vector<double>& ga = g->node(ia).grad;
    for (std::size_t r = 0; r < mx.size(); ++r) {
      const double* gorow = go.data() + r * std::size_t(C);
      for (const auto& [src, w] : mx[r]) {
        double* garow = ga.data() + std::size_t(src) * C;
        for (int c = 0; c < C; ++c) garow[c] += w * gorow[c];
      }
    }
  };
  return t;
}

Tensor Graph::max_pool_groups(Tensor a, std::vector<std::vector<int>> groups) {
  check_same_graph(a, "max_pool_groups");
  const Node& na = node(a.id);
  for (const std::vector<int>& grp : groups) {
    for (int i : grp) {
      if (i < 0 || i >= na.rows) {
        fail("max_pool_groups: index " + std::to_string(i) + " out of " +
             std::to_string(na.rows) + " rows");
      }
    }
  }
  int C = na.cols;
  int G = int(groups.size());
  std::vector<double> out(std::size_t(G) * std::size_t(C), 0.0);
  // argmax[g*C+c] = source row feeding out[g][c]; -1 for empty groups.
  std::vector<int> argmax(std::size_t(G) * std::size_t(C), -1);
  for (int gi = 0; gi < G; ++gi) {
    const std::vector<int>& grp = groups[std::size_t(gi)];
    if (grp.empty()) continue;
    for (int c = 0; c < C; ++c) {
      int best = grp[0];
      double bv = na.val[std::size_t(grp[0]) * C + c];
      for (std::size_t k = 1; k < grp.size(); ++k) {
        double v = na.val[std::size_t(grp[k]) * C + c];
        if (v > bv) {  // strict: ties keep the earliest listed row
          bv = v;
          best = grp[k];
        }
      }
      out[std::size_t(gi) * C + c] = bv;
      argmax[std::size_t(gi) * C + c] = best;
    }
  }
  Tensor t = make_node(G, C, std::move(out), "max_pool_groups");
  Graph* g = this;
  int ia = a.id, io = t.id;
  node(t.id).backward = [g, ia, io, C, am = std::move(argmax)] {
    const std::vector<double>& go = g->node(io).grad;
    std::vector<double>& ga = g->node(ia).grad;
    for (std::size_t i = 0; i < go.size(); ++i) {
      if (am[i] >= 0) {
        ga[std::size_t(am[i]) * C + int(i % std::size_t(C))] += go[i];
      }
    }
  };
  return t;
}

Tensor Graph::sum_all(Tensor a) {
  check_same_graph(a, "sum_all");
  const Node& na = node(a.id);
  double s = 0.0;
  for (double v : na.val) s += v;
  Tensor t = make_node(1, 1, {s}, "sum_all");
  Graph* g = this;
  int ia = a.id, io = t.id;
  node(t.id).backward = [g, ia, io] {
    double go = g->node(io).grad[0];
    std::vector<double>& ga = g->node(ia).grad;
    for (double& v : ga) v += go;
  };
  return t;
}

Tensor Graph::mean_all(Tensor a) {
  check_same_graph(a, "mean_all");
  const Node& na = node(a.id);
  if (na.val.empty()) fail("mean_all: empty tensor");
  return scale(sum_all(a), 1.0 / double(na.val.size()));
}

void Graph::node_backward_hook(int id, std::function<void()> fn) {
  if (id < 0 || id >= int(nodes_.size())) fail("backward hook: bad node id");
  if (nodes_[std::size_t(id)].backward) {
    fail("backward hook: node already has a backward pass");
  }
  nodes_[std::size_t(id)].backward = std::move(fn);
}

void Graph::backward(Tensor loss) {
  check_same_graph(loss, "backward");
  if (ran_backward_) fail("backward already ran on this graph");
  const Node& nl = node(loss.id);
  if (nl.rows != 1 || nl.cols != 1) {
    fail("backward: loss must be scalar, got " +
         shape_str(nl.rows, nl.cols));
  }
  ran_backward_ = true;
  node(loss.id).grad[0] = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    if (nodes_[std::size_t(i)].backward) nodes_[std::size_t(i)].backward();
  }
}

std::map<std::string, std::vector<double>> Graph::param_grads() const {
  std::map<std::string, std::vector<double>> out;
  for (const auto& [name, id] : param_leaves_) {
    const Node& n = node(id);
    auto [it, fresh] = out.emplace(name, n.grad);
    if (!fresh) {
      // Same parameter used through several leaves: gradients add.
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        it->second[i] += n.grad[i];
      }
    }
  }
  return out;
}

}  // namespace v2p::ad
