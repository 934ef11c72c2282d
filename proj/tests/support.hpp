// Shared helpers for the unit and acceptance tests: random graph generation
// and independent oracles.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "hmexpr/graph.hpp"
#include "hmexpr/models.hpp"
#include "hmexpr/param_set.hpp"

namespace hmexpr::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

struct RandomGraph {
  Graph graph;
  ParamSet params;
  Feed feed;
  NodeId loss;
  std::vector<OpKind> ops;
};

// Builds a small randomized network over the whole op set. Structure and
// values are drawn from `seed`; all parameters feed the loss.
inline RandomGraph make_random_graph(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  auto coin = [&] { return pick(0, 1) == 1; };

  RandomGraph r;
  Graph& g = r.graph;
  auto param = [&](const std::string& name, Shape shape, double scale = 0.8) {
    r.params.add(name, random_tensor(shape, rng, -scale, scale));
    return g.parameter(name);
  };
  auto note = [&](NodeId id) {
    r.ops.push_back(g.node(id).kind);
    return id;
  };

  const std::size_t batch = pick(1, 3), channels = pick(1, 4), length = pick(10, 16);
  const NodeId x = g.input("x");
  r.feed.emplace("x", random_tensor({batch, channels, length}, rng, 0.0, 2.0));

  const std::size_t filters = pick(1, 4), kernel = pick(1, 4), stride = pick(1, 2);
  NodeId h = note(g.conv1d(x, param("conv.w", {filters, channels, kernel}), param("conv.b", {filters}), stride));
  switch (pick(0, 2)) {
    case 0: h = note(g.relu(h)); break;
    case 1: h = note(g.sigmoid(h)); break;
    default: h = note(g.softplus(h)); break;
  }
  std::size_t cur_len = (length - kernel) / stride + 1;
  if (cur_len >= 2) {
    const std::size_t width = pick(1, 2), pstride = pick(1, 2);
    h = note(coin() ? g.max_pool(h, width, pstride) : g.avg_pool(h, width, pstride));
    cur_len = (cur_len - width) / pstride + 1;
  }
  if (coin()) {
    h = note(g.dropout(h, 0.3));
    g.set_training(true);
    g.set_seed(seed);
  }

  NodeId loss;
  if (coin()) {
    const NodeId flat = note(g.flatten(h));
    const std::size_t feat = filters * cur_len, hidden = pick(2, 6);
    NodeId a = note(g.affine(flat, param("fc1.w", {hidden, feat}), param("fc1.b", {hidden})));
    a = note(coin() ? g.relu(a) : g.sigmoid(a));
    const NodeId logits = note(g.affine(a, param("fc2.w", {2, hidden}), param("fc2.b", {2})));
    const NodeId probs = note(g.softmax(logits));
    const NodeId labels = g.input("labels");
    Tensor lab({batch});
    for (double& v : lab.data()) v = static_cast<double>(pick(0, 1));
    r.feed.emplace("labels", lab);
    loss = note(g.cross_entropy(probs, labels));
  } else {
    const NodeId mean = note(g.temporal_mean(h));
    const NodeId logit = note(g.affine(mean, param("fc.w", {1, filters}), param("fc.b", {1})));
    const NodeId prob = note(g.sigmoid(logit));
    const NodeId targets = g.input("targets");
    r.feed.emplace("targets", random_tensor({batch, 1}, rng, 0.0, 1.0));
    loss = note(g.bce(prob, targets));
    if (coin()) {
      const NodeId ref = param("ref", {batch, filters});
      const NodeId dist = note(g.l2_distance(mean, ref));
      loss = note(g.add(loss, note(g.scale(dist, 0.5))));
    }
  }
  if (coin()) loss = note(g.scale(loss, 1.5));
  r.loss = loss;
  return r;
}

// O(n^2) pair-count AUROC: positives beating negatives, ties half credit.
inline double pairwise_auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != -1) continue;
      pairs += 1;
      if (scores[i] > scores[j]) wins += 1;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// Per-layer parameter count from layer arithmetic alone.
inline std::size_t count_oracle(ArchKind kind) {
  const std::size_t in_rows = 5, bins = 100, filters = 50, k = 10;
  auto dense = [](std::size_t in, std::size_t out) { return in * out + out; };
  if (kind == ArchKind::Linear) return dense(in_rows, 2);
  const std::size_t conv = filters * in_rows * k + filters;
  std::size_t positions;
  if (kind == ArchKind::Strided) {
    positions = (bins - k) / 11 + 1;
  } else {
    positions = ((bins - k + 1) - 5) / 5 + 1;
  }
  return conv + dense(filters * positions, 625) + dense(625, 125) + dense(125, 2);
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("hmexpr_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace hmexpr::testing
