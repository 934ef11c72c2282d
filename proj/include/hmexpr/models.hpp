#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hmexpr/data.hpp"
#include "hmexpr/graph.hpp"
#include "hmexpr/param_set.hpp"

namespace hmexpr {

enum class ArchKind { Original, AvgPool, Strided, Linear };

ArchKind parse_arch(std::string_view name);
std::string_view arch_name(ArchKind kind);

/// Classifier layout. The defaults reproduce a ~645k-parameter convolutional
/// network; every extent can be overridden.
struct ArchSpec {
  ArchKind kind = ArchKind::Original;
  std::size_t conv_filters = 50;
  std::size_t kernel_width = 10;
  std::size_t pool_width = 5;
  std::size_t pool_stride = 5;
  std::vector<std::size_t> hidden = {625, 125};
  double dropout = 0.5;
  std::size_t strided_kernel = 10;
  std::size_t strided_stride = 11;

  static ArchSpec of(ArchKind kind) {
    ArchSpec s;
    s.kind = kind;
    return s;
  }
  void validate() const;
  /// Width of the flattened feature vector entering the first hidden layer.
  std::size_t flattened_width() const;
};

enum class InitMode { KaimingUniform, Zeros };

struct Classifier {
  ArchSpec arch;
  std::uint64_t seed = 0;
  ParamSet params;

  /// Appends the network reading x=[B,5,100]; returns the [B,2] softmax node.
  /// Dropout is only inserted when `with_dropout` is set.
  NodeId append(Graph& g, NodeId x, bool with_dropout) const;
};

Classifier build_classifier(const ArchSpec& arch, std::uint64_t seed, InitMode init = InitMode::KaimingUniform);
std::size_t count_parameters(const Classifier& model);

/// [B,2] probabilities (p_neg, p_pos) with dropout disabled. Input may be
/// [B,5,100] or a single [5,100]; values are not required to be non-negative.
Tensor predict_proba(const Classifier& model, const Tensor& batch);
std::array<double, 2> predict_proba(const Classifier& model, const HMMatrix& x);
std::vector<std::array<double, 2>> predict_proba(const Classifier& model, std::span<const HMMatrix> xs);

struct GanSpec {
  std::size_t latent_dim = 64;
  std::vector<std::size_t> generator_hidden = {128, 256};
  std::vector<std::size_t> discriminator_hidden = {128, 32};

  void validate() const;
};

struct Gan {
  GanSpec spec;
  std::uint64_t seed = 0;
  ParamSet generator;      // names start with "gen."
  ParamSet discriminator;  // names start with "disc."

  /// z=[B,latent] -> [B,500] softplus output.
  NodeId append_generator(Graph& g, NodeId z) const;
  /// x=[B,...] with 500 entries per row -> [B,1] sigmoid output.
  NodeId append_discriminator(Graph& g, NodeId x) const;

  /// [B,5,100] non-negative samples.
  Tensor generate(const Tensor& z) const;
  /// [B] discriminator probabilities.
  Tensor discriminate(const Tensor& x) const;
  /// Standard normal latent batch drawn from `rng_seed`.
  Tensor sample_latent(std::size_t count, std::uint64_t rng_seed) const;
};

Gan build_gan(const GanSpec& spec, std::uint64_t seed);

}  // namespace hmexpr
