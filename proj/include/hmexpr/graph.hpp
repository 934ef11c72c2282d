#pragma once

// Define-then-run reverse-mode differentiation over batched tensors.
//
// Every operator treats the leading extent as the batch axis. Nodes can only
// reference nodes created before them, so creation order is a topological
// order and the graph is acyclic by construction.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "hmexpr/param_set.hpp"
#include "hmexpr/tensor.hpp"

namespace hmexpr {

enum class OpKind {
  Input,
  Parameter,
  Affine,        // [B,in] x W[out,in] + b[out] -> [B,out]
  Conv1d,        // [B,C,L] * W[F,C,K] + b[F] -> [B,F,(L-K)/stride+1]
  MaxPool,       // [B,C,L] -> [B,C,(L-w)/stride+1]
  AvgPool,
  Relu,
  Sigmoid,
  Softplus,
  Softmax,       // over the last axis
  Dropout,       // inverted dropout, identity when not training
  Flatten,       // [B,...] -> [B,prod]
  TemporalMean,  // [B,C,L] -> [B,C]
  Add,
  Scale,
  L2Distance,    // Euclidean norm of (a - b) over all entries -> [1]
  CrossEntropyLoss,  // mean -log p[label] over the batch -> [1]
  BceLoss,       // mean binary cross-entropy against targets -> [1]
};

std::string_view op_name(OpKind kind);

struct NodeId {
  std::size_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

struct Node {
  OpKind kind = OpKind::Input;
  std::vector<NodeId> inputs;
  std::string name;  // input / parameter binding name
  std::size_t width = 0;
  std::size_t stride = 1;
  double rate = 0.0;    // dropout
  double factor = 1.0;  // scale
  Tensor value;
  Tensor grad;
};

using Feed = std::map<std::string, Tensor, std::less<>>;

class Graph {
 public:
  NodeId input(std::string name);
  NodeId parameter(std::string name);

  NodeId affine(NodeId x, NodeId weight, NodeId bias);
  NodeId conv1d(NodeId x, NodeId weight, NodeId bias, std::size_t stride = 1);
  NodeId max_pool(NodeId x, std::size_t width, std::size_t stride);
  NodeId avg_pool(NodeId x, std::size_t width, std::size_t stride);
  NodeId relu(NodeId x);
  NodeId sigmoid(NodeId x);
  NodeId softplus(NodeId x);
  NodeId softmax(NodeId x);
  NodeId dropout(NodeId x, double rate);
  NodeId flatten(NodeId x);
  NodeId temporal_mean(NodeId x);
  NodeId add(NodeId a, NodeId b);
  NodeId scale(NodeId x, double factor);
  NodeId l2_distance(NodeId a, NodeId b);
  /// `labels` holds class indices stored as doubles, shape [B].
  NodeId cross_entropy(NodeId probs, NodeId labels);
  /// `targets` holds values in [0,1] with the same entry count as `probs`.
  NodeId bce(NodeId probs, NodeId targets);

  void set_training(bool on) noexcept { training_ = on; }
  bool training() const noexcept { return training_; }
  void set_seed(std::uint64_t seed) { rng_.seed(seed); }

  /// Binds every input and parameter node by name and evaluates all nodes.
  void forward(const ParamSet& params, const Feed& inputs);
  /// Accumulates d(loss)/d(node) for every node. `loss` must be a scalar.
  void backward(NodeId loss);

  const Tensor& value(NodeId id) const;
  const Tensor& grad(NodeId id) const;
  /// Gradients of all parameter nodes keyed by binding name.
  ParamSet parameter_grads() const;

  std::size_t node_count() const noexcept { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id.index); }
  std::optional<NodeId> find(std::string_view name) const;
  bool has_forward() const noexcept { return forward_done_; }

  // Finite-difference support. Perturbs one parameter entry in place and
  // re-evaluates only the nodes downstream of it, reusing dropout masks.
  double loss_with_perturbation(NodeId loss, NodeId param, std::size_t entry, double delta);

 private:
  NodeId push(Node n);
  void compute(std::size_t i, bool redraw_masks);
  void compute_incremental(std::size_t i, std::size_t param_node, std::size_t entry, double delta);
  void backprop(std::size_t i);
  [[noreturn]] void fail(std::size_t i, const std::string& msg) const;

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> masks_;  // dropout masks per node
  bool training_ = false;
  bool forward_done_ = false;
  std::mt19937_64 rng_{0};
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  /// When nonzero, only this many evenly spaced entries per tensor are checked.
  std::size_t max_entries_per_tensor = 0;
};

/// Max over parameter entries of |analytic - central| / max(1, |analytic|, |central|).
/// Requires a completed forward pass; leaves the graph as it found it.
double check_gradients(Graph& graph, NodeId loss, const GradCheckOptions& opts = {});

}  // namespace hmexpr
