#include "hmexpr/graph.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "hmexpr/errors.hpp"

namespace hmexpr {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

constexpr double kProbFloor = 1e-300;
constexpr double kBceClamp = 1e-12;

double sigmoid_of(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

double softplus_of(double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); }

std::size_t pooled_length(std::size_t len, std::size_t width, std::size_t stride) {
  return (len - width) / stride + 1;
}

// im2col for one batch element: cols[c*K + k][t] = x[c][t*stride + k].
void im2col(const double* x, std::size_t channels, std::size_t len, std::size_t k_width, std::size_t stride,
            std::size_t out_len, double* cols) {
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t k = 0; k < k_width; ++k) {
      double* row = cols + (c * k_width + k) * out_len;
      const double* src = x + c * len + k;
      for (std::size_t t = 0; t < out_len; ++t) row[t] = src[t * stride];
    }
}

void col2im_add(const double* cols, std::size_t channels, std::size_t len, std::size_t k_width, std::size_t stride,
                std::size_t out_len, double* dx) {
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t k = 0; k < k_width; ++k) {
      const double* row = cols + (c * k_width + k) * out_len;
      double* dst = dx + c * len + k;
      for (std::size_t t = 0; t < out_len; ++t) dst[t * stride] += row[t];
    }
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Input: return "input";
    case OpKind::Parameter: return "parameter";
    case OpKind::Affine: return "affine";
    case OpKind::Conv1d: return "conv1d";
    case OpKind::MaxPool: return "maxpool";
    case OpKind::AvgPool: return "avgpool";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Softplus: return "softplus";
    case OpKind::Softmax: return "softmax";
    case OpKind::Dropout: return "dropout";
    case OpKind::Flatten: return "flatten";
    case OpKind::TemporalMean: return "temporal-mean";
    case OpKind::Add: return "add";
    case OpKind::Scale: return "scale";
    case OpKind::L2Distance: return "l2-distance";
    case OpKind::CrossEntropyLoss: return "cross-entropy-loss";
    case OpKind::BceLoss: return "bce-loss";
  }
  return "unknown";
}

NodeId Graph::push(Node n) {
  for (NodeId in : n.inputs)
    if (in.index >= nodes_.size()) throw ConfigError("node input refers to a node that does not exist yet");
  nodes_.push_back(std::move(n));
  masks_.emplace_back();
  forward_done_ = false;
  return NodeId{nodes_.size() - 1};
}

NodeId Graph::input(std::string name) {
  if (find(name)) throw ConfigError("duplicate node name: " + name);
  Node n;
  n.kind = OpKind::Input;
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::parameter(std::string name) {
  if (find(name)) throw ConfigError("duplicate node name: " + name);
  Node n;
  n.kind = OpKind::Parameter;
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::affine(NodeId x, NodeId weight, NodeId bias) {
  Node n;
  n.kind = OpKind::Affine;
  n.inputs = {x, weight, bias};
  return push(std::move(n));
}

NodeId Graph::conv1d(NodeId x, NodeId weight, NodeId bias, std::size_t stride) {
  if (stride == 0) throw ConfigError("conv1d stride must be positive");
  Node n;
  n.kind = OpKind::Conv1d;
  n.inputs = {x, weight, bias};
  n.stride = stride;
  return push(std::move(n));
}

NodeId Graph::max_pool(NodeId x, std::size_t width, std::size_t stride) {
  if (width == 0 || stride == 0) throw ConfigError("pool width and stride must be positive");
  Node n;
  n.kind = OpKind::MaxPool;
  n.inputs = {x};
  n.width = width;
  n.stride = stride;
  return push(std::move(n));
}

NodeId Graph::avg_pool(NodeId x, std::size_t width, std::size_t stride) {
  if (width == 0 || stride == 0) throw ConfigError("pool width and stride must be positive");
  Node n;
  n.kind = OpKind::AvgPool;
  n.inputs = {x};
  n.width = width;
  n.stride = stride;
  return push(std::move(n));
}

#define HMEXPR_UNARY(fn, KIND)    \
  NodeId Graph::fn(NodeId x) {    \
    Node n;                       \
    n.kind = OpKind::KIND;        \
    n.inputs = {x};               \
    return push(std::move(n));    \
  }
HMEXPR_UNARY(relu, Relu)
HMEXPR_UNARY(sigmoid, Sigmoid)
HMEXPR_UNARY(softplus, Softplus)
HMEXPR_UNARY(softmax, Softmax)
HMEXPR_UNARY(flatten, Flatten)
HMEXPR_UNARY(temporal_mean, TemporalMean)
#undef HMEXPR_UNARY

NodeId Graph::dropout(NodeId x, double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0,1)");
  Node n;
  n.kind = OpKind::Dropout;
  n.inputs = {x};
  n.rate = rate;
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
  Node n;
  n.kind = OpKind::Add;
  n.inputs = {a, b};
  return push(std::move(n));
}

NodeId Graph::scale(NodeId x, double factor) {
  Node n;
  n.kind = OpKind::Scale;
  n.inputs = {x};
  n.factor = factor;
  return push(std::move(n));
}

NodeId Graph::l2_distance(NodeId a, NodeId b) {
  Node n;
  n.kind = OpKind::L2Distance;
  n.inputs = {a, b};
  return push(std::move(n));
}

NodeId Graph::cross_entropy(NodeId probs, NodeId labels) {
  Node n;
  n.kind = OpKind::CrossEntropyLoss;
  n.inputs = {probs, labels};
  return push(std::move(n));
}

NodeId Graph::bce(NodeId probs, NodeId targets) {
  Node n;
  n.kind = OpKind::BceLoss;
  n.inputs = {probs, targets};
  return push(std::move(n));
}

std::optional<NodeId> Graph::find(std::string_view name) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (!nodes_[i].name.empty() && nodes_[i].name == name) return NodeId{i};
  return std::nullopt;
}

const Tensor& Graph::value(NodeId id) const { return nodes_.at(id.index).value; }
const Tensor& Graph::grad(NodeId id) const { return nodes_.at(id.index).grad; }

void Graph::fail(std::size_t i, const std::string& msg) const {
  throw ShapeError("node " + std::to_string(i) + " (" + std::string(op_name(nodes_[i].kind)) + "): " + msg);
}

void Graph::forward(const ParamSet& params, const Feed& inputs) {
  forward_done_ = false;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.kind == OpKind::Input) {
      auto it = inputs.find(n.name);
      if (it == inputs.end()) fail(i, "input '" + n.name + "' is not bound");
      n.value = it->second;
      if (!n.value.all_finite()) throw NumericError("input '" + n.name + "' contains non-finite values");
    } else if (n.kind == OpKind::Parameter) {
      const Tensor* t = params.find(n.name);
      if (!t) fail(i, "parameter '" + n.name + "' is not bound");
      n.value = *t;
      if (!n.value.all_finite()) throw NumericError("parameter '" + n.name + "' contains non-finite values");
    } else {
      compute(i, true);
      if (!n.value.all_finite())
        throw NumericError("non-finite value produced at node " + std::to_string(i) + " (" +
                           std::string(op_name(n.kind)) + ")");
    }
  }
  forward_done_ = true;
}

void Graph::compute(std::size_t i, bool redraw_masks) {
  Node& n = nodes_[i];
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k].index].value; };

  switch (n.kind) {
    case OpKind::Input:
    case OpKind::Parameter:
      return;

    case OpKind::Affine: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      const Tensor& b = in(2);
      if (x.rank() != 2) fail(i, "expected [batch, features] input, got " + shape_string(x.shape()));
      if (w.rank() != 2 || w.dim(1) != x.dim(1))
        fail(i, "weight " + shape_string(w.shape()) + " incompatible with input " + shape_string(x.shape()));
      if (b.size() != w.dim(0)) fail(i, "bias length " + std::to_string(b.size()) + " != " + std::to_string(w.dim(0)));
      const std::size_t batch = x.dim(0), fan_in = x.dim(1), fan_out = w.dim(0);
      n.value = Tensor({batch, fan_out});
      MatMap y(n.value.data().data(), batch, fan_out);
      ConstMatMap xm(x.data().data(), batch, fan_in);
      ConstMatMap wm(w.data().data(), fan_out, fan_in);
      Eigen::Map<const Eigen::RowVectorXd> bv(b.data().data(), fan_out);
      y.noalias() = xm * wm.transpose();
      y.rowwise() += bv;
      return;
    }

    case OpKind::Conv1d: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      const Tensor& b = in(2);
      if (x.rank() != 3) fail(i, "expected [batch, channels, length] input, got " + shape_string(x.shape()));
      if (w.rank() != 3 || w.dim(1) != x.dim(1))
        fail(i, "weight " + shape_string(w.shape()) + " incompatible with input " + shape_string(x.shape()));
      if (b.size() != w.dim(0)) fail(i, "bias length does not match filter count");
      const std::size_t batch = x.dim(0), ch = x.dim(1), len = x.dim(2);
      const std::size_t filters = w.dim(0), kw = w.dim(2);
      if (kw > len) fail(i, "kernel width exceeds input length");
      const std::size_t out_len = pooled_length(len, kw, n.stride);
      n.value = Tensor({batch, filters, out_len});
      std::vector<double> cols(ch * kw * out_len);
      ConstMatMap wm(w.data().data(), filters, ch * kw);
      Eigen::Map<const Eigen::VectorXd> bv(b.data().data(), filters);
      for (std::size_t s = 0; s < batch; ++s) {
        im2col(x.data().data() + s * ch * len, ch, len, kw, n.stride, out_len, cols.data());
        ConstMatMap cm(cols.data(), ch * kw, out_len);
        MatMap y(n.value.data().data() + s * filters * out_len, filters, out_len);
        y.noalias() = wm * cm;
        y.colwise() += bv;
      }
      return;
    }

    case OpKind::MaxPool:
    case OpKind::AvgPool: {
      const Tensor& x = in(0);
      if (x.rank() != 3) fail(i, "expected [batch, channels, length] input, got " + shape_string(x.shape()));
      const std::size_t rows = x.dim(0) * x.dim(1), len = x.dim(2);
      if (n.width > len) fail(i, "pool width exceeds input length");
      const std::size_t out_len = pooled_length(len, n.width, n.stride);
      n.value = Tensor({x.dim(0), x.dim(1), out_len});
      const bool is_max = n.kind == OpKind::MaxPool;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* src = x.data().data() + r * len;
        double* dst = n.value.data().data() + r * out_len;
        for (std::size_t t = 0; t < out_len; ++t) {
          const double* win = src + t * n.stride;
          if (is_max) {
            dst[t] = *std::max_element(win, win + n.width);
          } else {
            double acc = 0;
            for (std::size_t k = 0; k < n.width; ++k) acc += win[k];
            dst[t] = acc / static_cast<double>(n.width);
          }
        }
      }
      return;
    }

    case OpKind::Relu:
    case OpKind::Sigmoid:
    case OpKind::Softplus:
    case OpKind::Scale: {
      const Tensor& x = in(0);
      n.value = Tensor(x.shape());
      auto src = x.data();
      auto dst = n.value.data();
      for (std::size_t k = 0; k < src.size(); ++k) {
        switch (n.kind) {
          case OpKind::Relu: dst[k] = src[k] > 0 ? src[k] : 0.0; break;
          case OpKind::Sigmoid: dst[k] = sigmoid_of(src[k]); break;
          case OpKind::Softplus: dst[k] = softplus_of(src[k]); break;
          default: dst[k] = src[k] * n.factor; break;
        }
      }
      return;
    }

    case OpKind::Softmax: {
      const Tensor& x = in(0);
      const std::size_t width = x.shape().back();
      const std::size_t rows = x.size() / width;
      n.value = Tensor(x.shape());
      for (std::size_t r = 0; r < rows; ++r) {
        const double* src = x.data().data() + r * width;
        double* dst = n.value.data().data() + r * width;
        const double mx = *std::max_element(src, src + width);
        double sum = 0;
        for (std::size_t k = 0; k < width; ++k) sum += dst[k] = std::exp(src[k] - mx);
        for (std::size_t k = 0; k < width; ++k) dst[k] /= sum;
      }
      return;
    }

    case OpKind::Dropout: {
      const Tensor& x = in(0);
      n.value = x;
      if (!training_ || n.rate == 0.0) {
        masks_[i].clear();
        return;
      }
      std::vector<double>& mask = masks_[i];
      if (redraw_masks || mask.size() != x.size()) {
        mask.resize(x.size());
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const double keep_scale = 1.0 / (1.0 - n.rate);
        for (double& m : mask) m = u(rng_) >= n.rate ? keep_scale : 0.0;
      }
      auto dst = n.value.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] *= mask[k];
      return;
    }

    case OpKind::Flatten: {
      const Tensor& x = in(0);
      n.value = x.reshaped({x.dim(0), x.size() / x.dim(0)});
      return;
    }

    case OpKind::TemporalMean: {
      const Tensor& x = in(0);
      if (x.rank() != 3) fail(i, "expected [batch, channels, length] input, got " + shape_string(x.shape()));
      const std::size_t rows = x.dim(0) * x.dim(1), len = x.dim(2);
      n.value = Tensor({x.dim(0), x.dim(1)});
      for (std::size_t r = 0; r < rows; ++r) {
        const double* src = x.data().data() + r * len;
        double acc = 0;
        for (std::size_t k = 0; k < len; ++k) acc += src[k];
        n.value[r] = acc / static_cast<double>(len);
      }
      return;
    }

    case OpKind::Add: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.shape() != b.shape())
        fail(i, "operand shapes differ: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
      n.value = a;
      auto dst = n.value.data();
      auto src = b.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      return;
    }

    case OpKind::L2Distance: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.size() != b.size())
        fail(i, "operand sizes differ: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
      double acc = 0;
      for (std::size_t k = 0; k < a.size(); ++k) acc += (a[k] - b[k]) * (a[k] - b[k]);
      n.value = Tensor::scalar(std::sqrt(acc));
      return;
    }

    case OpKind::CrossEntropyLoss: {
      const Tensor& p = in(0);
      const Tensor& labels = in(1);
      if (p.rank() != 2) fail(i, "expected [batch, classes] probabilities, got " + shape_string(p.shape()));
      if (labels.size() != p.dim(0)) fail(i, "label count does not match batch size");
      const std::size_t batch = p.dim(0), classes = p.dim(1);
      double acc = 0;
      for (std::size_t s = 0; s < batch; ++s) {
        const double lab = labels[s];
        if (!(lab >= 0) || lab != std::floor(lab) || static_cast<std::size_t>(lab) >= classes)
          fail(i, "label " + std::to_string(lab) + " is not a valid class index");
        acc -= std::log(std::max(p[s * classes + static_cast<std::size_t>(lab)], kProbFloor));
      }
      n.value = Tensor::scalar(acc / static_cast<double>(batch));
      return;
    }

    case OpKind::BceLoss: {
      const Tensor& p = in(0);
      const Tensor& t = in(1);
      if (p.size() != t.size()) fail(i, "target count does not match prediction count");
      double acc = 0;
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double q = std::clamp(p[k], kBceClamp, 1.0 - kBceClamp);
        acc -= t[k] * std::log(q) + (1.0 - t[k]) * std::log(1.0 - q);
      }
      n.value = Tensor::scalar(acc / static_cast<double>(p.size()));
      return;
    }
  }
}

void Graph::backward(NodeId loss) {
  if (!forward_done_) throw ConfigError("backward called before forward");
  if (loss.index >= nodes_.size()) throw ConfigError("loss node does not exist");
  if (nodes_[loss.index].value.size() != 1) fail(loss.index, "loss node must be a scalar");
  for (Node& n : nodes_) n.grad = Tensor(n.value.shape());
  nodes_[loss.index].grad[0] = 1.0;
  for (std::size_t i = loss.index + 1; i-- > 0;) backprop(i);
}

void Graph::backprop(std::size_t i) {
  Node& n = nodes_[i];
  if (n.kind == OpKind::Input || n.kind == OpKind::Parameter) return;
  const Tensor& g = n.grad;
  if (std::all_of(g.data().begin(), g.data().end(), [](double v) { return v == 0.0; })) return;
  auto node_in = [&](std::size_t k) -> Node& { return nodes_[n.inputs[k].index]; };

  switch (n.kind) {
    case OpKind::Input:
    case OpKind::Parameter:
      return;

    case OpKind::Affine: {
      Node& xn = node_in(0);
      Node& wn = node_in(1);
      Node& bn = node_in(2);
      const std::size_t batch = xn.value.dim(0), fan_in = xn.value.dim(1), fan_out = wn.value.dim(0);
      ConstMatMap gy(g.data().data(), batch, fan_out);
      ConstMatMap xm(xn.value.data().data(), batch, fan_in);
      ConstMatMap wm(wn.value.data().data(), fan_out, fan_in);
      MatMap(xn.grad.data().data(), batch, fan_in).noalias() += gy * wm;
      MatMap(wn.grad.data().data(), fan_out, fan_in).noalias() += gy.transpose() * xm;
      Eigen::Map<Eigen::RowVectorXd>(bn.grad.data().data(), fan_out) += gy.colwise().sum();
      return;
    }

    case OpKind::Conv1d: {
      Node& xn = node_in(0);
      Node& wn = node_in(1);
      Node& bn = node_in(2);
      const std::size_t batch = xn.value.dim(0), ch = xn.value.dim(1), len = xn.value.dim(2);
      const std::size_t filters = wn.value.dim(0), kw = wn.value.dim(2);
      const std::size_t out_len = n.value.dim(2);
      std::vector<double> cols(ch * kw * out_len), dcols(ch * kw * out_len);
      ConstMatMap wm(wn.value.data().data(), filters, ch * kw);
      MatMap gw(wn.grad.data().data(), filters, ch * kw);
      Eigen::Map<Eigen::VectorXd> gb(bn.grad.data().data(), filters);
      for (std::size_t s = 0; s < batch; ++s) {
        ConstMatMap gy(g.data().data() + s * filters * out_len, filters, out_len);
        im2col(xn.value.data().data() + s * ch * len, ch, len, kw, n.stride, out_len, cols.data());
        ConstMatMap cm(cols.data(), ch * kw, out_len);
        gw.noalias() += gy * cm.transpose();
        gb += gy.rowwise().sum();
        MatMap dc(dcols.data(), ch * kw, out_len);
        dc.noalias() = wm.transpose() * gy;
        col2im_add(dcols.data(), ch, len, kw, n.stride, out_len, xn.grad.data().data() + s * ch * len);
      }
      return;
    }

    case OpKind::MaxPool:
    case OpKind::AvgPool: {
      Node& xn = node_in(0);
      const std::size_t rows = xn.value.dim(0) * xn.value.dim(1), len = xn.value.dim(2);
      const std::size_t out_len = n.value.dim(2);
      const bool is_max = n.kind == OpKind::MaxPool;
      const double inv = 1.0 / static_cast<double>(n.width);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* src = xn.value.data().data() + r * len;
        double* dx = xn.grad.data().data() + r * len;
        const double* gy = g.data().data() + r * out_len;
        for (std::size_t t = 0; t < out_len; ++t) {
          const std::size_t start = t * n.stride;
          if (is_max) {
            // std::max_element returns the first maximal element.
            const std::size_t arg = static_cast<std::size_t>(std::max_element(src + start, src + start + n.width) - src);
            dx[arg] += gy[t];
          } else {
            for (std::size_t k = 0; k < n.width; ++k) dx[start + k] += gy[t] * inv;
          }
        }
      }
      return;
    }

    case OpKind::Relu:
    case OpKind::Sigmoid:
    case OpKind::Softplus:
    case OpKind::Scale:
    case OpKind::Dropout: {
      Node& xn = node_in(0);
      auto x = xn.value.data();
      auto y = n.value.data();
      auto dx = xn.grad.data();
      const auto& mask = masks_[i];
      for (std::size_t k = 0; k < dx.size(); ++k) {
        switch (n.kind) {
          case OpKind::Relu: dx[k] += x[k] > 0 ? g[k] : 0.0; break;
          case OpKind::Sigmoid: dx[k] += g[k] * y[k] * (1.0 - y[k]); break;
          case OpKind::Softplus: dx[k] += g[k] * sigmoid_of(x[k]); break;
          case OpKind::Scale: dx[k] += g[k] * n.factor; break;
          default: dx[k] += mask.empty() ? g[k] : g[k] * mask[k]; break;
        }
      }
      return;
    }

    case OpKind::Softmax: {
      Node& xn = node_in(0);
      const std::size_t width = n.value.shape().back();
      const std::size_t rows = n.value.size() / width;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* p = n.value.data().data() + r * width;
        const double* gy = g.data().data() + r * width;
        double* dx = xn.grad.data().data() + r * width;
        double dot = 0;
        for (std::size_t k = 0; k < width; ++k) dot += gy[k] * p[k];
        for (std::size_t k = 0; k < width; ++k) dx[k] += p[k] * (gy[k] - dot);
      }
      return;
    }

    case OpKind::Flatten: {
      Node& xn = node_in(0);
      auto dx = xn.grad.data();
      for (std::size_t k = 0; k < dx.size(); ++k) dx[k] += g[k];
      return;
    }

    case OpKind::TemporalMean: {
      Node& xn = node_in(0);
      const std::size_t len = xn.value.dim(2);
      const double inv = 1.0 / static_cast<double>(len);
      for (std::size_t r = 0; r < n.value.size(); ++r) {
        double* dx = xn.grad.data().data() + r * len;
        for (std::size_t k = 0; k < len; ++k) dx[k] += g[r] * inv;
      }
      return;
    }

    case OpKind::Add: {
      for (std::size_t which = 0; which < 2; ++which) {
        auto dx = node_in(which).grad.data();
        for (std::size_t k = 0; k < dx.size(); ++k) dx[k] += g[k];
      }
      return;
    }

    case OpKind::L2Distance: {
      Node& an = node_in(0);
      Node& bn = node_in(1);
      const double dist = n.value[0];
      if (dist == 0.0) return;  // zero subgradient at coincidence
      const double s = g[0] / dist;
      for (std::size_t k = 0; k < an.value.size(); ++k) {
        const double d = (an.value[k] - bn.value[k]) * s;
        an.grad[k] += d;
        bn.grad[k] -= d;
      }
      return;
    }

    case OpKind::CrossEntropyLoss: {
      Node& pn = node_in(0);
      const Tensor& labels = node_in(1).value;
      const std::size_t batch = pn.value.dim(0), classes = pn.value.dim(1);
      const double scale = g[0] / static_cast<double>(batch);
      for (std::size_t s = 0; s < batch; ++s) {
        const std::size_t idx = s * classes + static_cast<std::size_t>(labels[s]);
        const double p = pn.value[idx];
        if (p > kProbFloor) pn.grad[idx] -= scale / p;
      }
      return;
    }

    case OpKind::BceLoss: {
      Node& pn = node_in(0);
      const Tensor& t = node_in(1).value;
      const double scale = g[0] / static_cast<double>(pn.value.size());
      for (std::size_t k = 0; k < pn.value.size(); ++k) {
        const double p = pn.value[k];
        if (p < kBceClamp || p > 1.0 - kBceClamp) continue;  // clamped region is flat
        pn.grad[k] -= scale * (t[k] / p - (1.0 - t[k]) / (1.0 - p));
      }
      return;
    }
  }
}

ParamSet Graph::parameter_grads() const {
  ParamSet out;
  for (const Node& n : nodes_)
    if (n.kind == OpKind::Parameter) out.add(n.name, n.grad.empty() ? Tensor(n.value.shape()) : n.grad);
  return out;
}

void Graph::compute_incremental(std::size_t i, std::size_t param_node, std::size_t entry, double delta) {
  Node& n = nodes_[i];
  const Tensor& x = nodes_[n.inputs[0].index].value;
  const bool is_weight = n.inputs[1].index == param_node;
  if (n.kind == OpKind::Affine) {
    const std::size_t batch = x.dim(0), fan_in = x.dim(1), fan_out = n.value.dim(1);
    const std::size_t out = is_weight ? entry / fan_in : entry;
    for (std::size_t s = 0; s < batch; ++s)
      n.value[s * fan_out + out] += is_weight ? delta * x[s * fan_in + entry % fan_in] : delta;
    return;
  }
  // Conv1d
  const std::size_t batch = x.dim(0), ch = x.dim(1), len = x.dim(2);
  const std::size_t filters = n.value.dim(1), out_len = n.value.dim(2);
  const std::size_t kw = nodes_[n.inputs[1].index].value.dim(2);
  const std::size_t f = is_weight ? entry / (ch * kw) : entry;
  const std::size_t c = is_weight ? (entry / kw) % ch : 0;
  const std::size_t k = is_weight ? entry % kw : 0;
  for (std::size_t s = 0; s < batch; ++s) {
    double* y = n.value.data().data() + (s * filters + f) * out_len;
    const double* src = x.data().data() + (s * ch + c) * len + k;
    for (std::size_t t = 0; t < out_len; ++t) y[t] += is_weight ? delta * src[t * n.stride] : delta;
  }
}

double Graph::loss_with_perturbation(NodeId loss, NodeId param, std::size_t entry, double delta) {
  if (!forward_done_) throw ConfigError("perturbation requires a completed forward pass");
  Node& pn = nodes_.at(param.index);
  if (pn.kind != OpKind::Parameter) throw ConfigError("perturbation target is not a parameter node");
  std::vector<char> dirty(nodes_.size(), 0);
  std::vector<std::pair<std::size_t, Tensor>> saved;
  dirty[param.index] = 1;
  const double original = pn.value[entry];
  pn.value[entry] = original + delta;

  for (std::size_t i = param.index + 1; i <= loss.index; ++i) {
    Node& n = nodes_[i];
    std::size_t dirty_inputs = 0;
    for (NodeId in : n.inputs) dirty_inputs += dirty[in.index];
    if (dirty_inputs == 0) continue;
    saved.emplace_back(i, n.value);
    const bool local = (n.kind == OpKind::Affine || n.kind == OpKind::Conv1d) && dirty_inputs == 1 &&
                       !dirty[n.inputs[0].index] &&
                       (n.inputs[1].index == param.index || n.inputs[2].index == param.index);
    if (local) {
      compute_incremental(i, param.index, entry, delta);
    } else {
      compute(i, false);
    }
    dirty[i] = 1;
  }
  const double result = nodes_[loss.index].value[0];

  pn.value[entry] = original;
  for (auto& [i, v] : saved) nodes_[i].value = std::move(v);
  return result;
}

double check_gradients(Graph& graph, NodeId loss, const GradCheckOptions& opts) {
  graph.backward(loss);
  double worst = 0.0;
  for (std::size_t i = 0; i < graph.node_count(); ++i) {
    const Node& n = graph.node(NodeId{i});
    if (n.kind != OpKind::Parameter) continue;
    const Tensor analytic = n.grad;
    const std::size_t count = analytic.size();
    std::size_t step = 1;
    if (opts.max_entries_per_tensor && count > opts.max_entries_per_tensor)
      step = (count + opts.max_entries_per_tensor - 1) / opts.max_entries_per_tensor;
    for (std::size_t e = 0; e < count; e += step) {
      const double up = graph.loss_with_perturbation(loss, NodeId{i}, e, opts.epsilon);
      const double down = graph.loss_with_perturbation(loss, NodeId{i}, e, -opts.epsilon);
      const double central = (up - down) / (2.0 * opts.epsilon);
      const double a = analytic[e];
      const double err = std::abs(a - central) / std::max({1.0, std::abs(a), std::abs(central)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace hmexpr
