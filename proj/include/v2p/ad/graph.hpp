#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace v2p::ad {

class Graph;
class ParamStore;

// Handle into a Graph node. All tensors are dense row-major 2-D arrays of
// 64-bit floats; scalars are 1x1.
struct Tensor {
  Graph* g = nullptr;
  int id = -1;

  bool valid() const { return g != nullptr && id >= 0; }
  int rows() const;
  int cols() const;
  const std::vector<double>& values() const;
  const std::vector<double>& grad() const;
  double value_at(int r, int c) const;
  double scalar() const;  // requires shape 1x1
};

// Reverse-mode tape. One Graph holds one forward pass; backward() walks the
// tape in reverse creation order, which is a valid topological order because
// ops only consume earlier nodes. Single-threaded by design; build one Graph
// per scene and run graphs in parallel if needed.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // When enabled (default), every new node's values are checked for
  // NaN/Inf and the offending op is named in the exception.
  void set_check_finite(bool on) { check_finite_ = on; }

  // ---- leaves ----
  Tensor constant(int rows, int cols, std::vector<double> values);
  Tensor scalar(double v);
  // Parameter leaf: copies the store entry's current value; entry is
  // created (and initialized) on first use. After backward(), the leaf's
  // gradient is available via param_grads().
  Tensor param(ParamStore& store, const std::string& name, int rows, int cols,
               bool bias_init = false);

  // ---- elementwise / linear ----
  Tensor add(Tensor a, Tensor b);
  Tensor sub(Tensor a, Tensor b);
  Tensor scale(Tensor a, double s);
  Tensor add_rowvec(Tensor a, Tensor bias);  // bias shape 1 x C
  Tensor mul_const(Tensor a, std::vector<double> weights);  // elementwise
  Tensor relu(Tensor a);
  Tensor sigmoid(Tensor a);
  Tensor matmul(Tensor a, Tensor b);

  // ---- structure ----
  Tensor reshape(Tensor a, int rows, int cols);
  Tensor concat_cols(std::vector<Tensor> parts);
  Tensor concat_rows(std::vector<Tensor> parts);
  Tensor gather_rows(Tensor a, std::vector<int> idx);
  // out[dst[i]] += a[i]; rows without sources stay zero.
  Tensor scatter_sum_rows(Tensor a, std::vector<int> dst, int out_rows);
  // out[i] = sum_k w_ik * a[src_ik] with fixed (non-learned) weights;
  // covers KNN interpolation and bilinear map reads.
  using MixRow = std::vector<std::pair<int, double>>;
  Tensor weighted_sum_rows(Tensor a, std::vector<MixRow> mix);
  // Column-wise max over each listed group of rows; gradient flows to the
  // first-listed argmax row (ties break toward the earliest index). Empty
  // groups produce zero rows and receive no gradient.
  Tensor max_pool_groups(Tensor a, std::vector<std::vector<int>> groups);
  Tensor sum_all(Tensor a);   // 1x1
  Tensor mean_all(Tensor a);  // 1x1

  // ---- fused-op support ----
  // Attach a backward closure to a node created via constant(); the closure
  // reads grad_at(out) and accumulates into its inputs. Used by ops with
  // analytic gradients that live outside this class (the losses).
  void node_backward_hook(int id, std::function<void()> fn);
  double grad_at(int id, std::size_t i) const {
    return nodes_[std::size_t(id)].grad[i];
  }
  void accumulate_grad(int id, std::size_t i, double v) {
    nodes_[std::size_t(id)].grad[i] += v;
  }

  // ---- execution ----
  void backward(Tensor loss);  // loss must be 1x1; seeds d(loss)/d(loss)=1
  // Parameter-name -> gradient for every param leaf of this graph.
  std::map<std::string, std::vector<double>> param_grads() const;

  int num_nodes() const { return int(nodes_.size()); }

 private:
  friend struct Tensor;

  struct Node {
    int rows = 0, cols = 0;
    std::vector<double> val;
    std::vector<double> grad;
    std::function<void()> backward;  // may be empty for leaves
  };

  Tensor make_node(int rows, int cols, std::vector<double> values,
                   const char* op);
  Node& node(int id) { return nodes_[std::size_t(id)]; }
  const Node& node(int id) const { return nodes_[std::size_t(id)]; }
  void check_same_graph(Tensor t, const char* op) const;

  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, int>> param_leaves_;
  bool check_finite_ = true;
  bool ran_backward_ = false;
};

}  // namespace v2p::ad
