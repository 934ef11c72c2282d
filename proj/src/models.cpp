#include "hmexpr/models.hpp"

#include <cmath>
#include <random>

#include "hmexpr/errors.hpp"

namespace hmexpr {
namespace {

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases.
Tensor init_weight(Shape shape, std::size_t fan_in, InitMode mode, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  if (mode == InitMode::Zeros) return t;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& v : t.data()) v = u(rng);
  return t;
}

void add_dense(ParamSet& ps, const std::string& name, std::size_t fan_in, std::size_t fan_out, InitMode mode,
               std::mt19937_64& rng) {
  ps.add(name + ".w", init_weight({fan_out, fan_in}, fan_in, mode, rng));
  ps.add(name + ".b", Tensor({fan_out}));
}

NodeId dense(Graph& g, NodeId x, const std::string& name) {
  return g.affine(x, g.parameter(name + ".w"), g.parameter(name + ".b"));
}

}  // namespace

ArchKind parse_arch(std::string_view name) {
  if (name == "original" || name == "maxpool") return ArchKind::Original;
  if (name == "avgpool") return ArchKind::AvgPool;
  if (name == "strided") return ArchKind::Strided;
  if (name == "linear") return ArchKind::Linear;
  throw ConfigError("unknown architecture: " + std::string(name));
}

std::string_view arch_name(ArchKind kind) {
  switch (kind) {
    case ArchKind::Original: return "original";
    case ArchKind::AvgPool: return "avgpool";
    case ArchKind::Strided: return "strided";
    case ArchKind::Linear: return "linear";
  }
  return "original";
}

void ArchSpec::validate() const {
  if (kind == ArchKind::Linear) return;
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout rate must lie in [0,1)");
  if (conv_filters == 0 || hidden.empty()) throw ConfigError("architecture extents must be positive");
  for (std::size_t h : hidden)
    if (h == 0) throw ConfigError("hidden sizes must be positive");
  if (kind == ArchKind::Strided) {
    if (strided_kernel == 0 || strided_stride == 0 || strided_kernel > kBins)
      throw ConfigError("invalid strided convolution layout");
  } else {
    if (kernel_width == 0 || kernel_width > kBins || pool_width == 0 || pool_stride == 0 ||
        pool_width > kBins - kernel_width + 1)
      throw ConfigError("invalid convolution/pool layout");
  }
}

std::size_t ArchSpec::flattened_width() const {
  switch (kind) {
    case ArchKind::Linear: return kHmRows;
    case ArchKind::Strided: return conv_filters * ((kBins - strided_kernel) / strided_stride + 1);
    default: {
      const std::size_t conv_len = kBins - kernel_width + 1;
      return conv_filters * ((conv_len - pool_width) / pool_stride + 1);
    }
  }
}

Classifier build_classifier(const ArchSpec& arch, std::uint64_t seed, InitMode init) {
  arch.validate();
  Classifier c;
  c.arch = arch;
  c.seed = seed;
  std::mt19937_64 rng(seed);
  if (arch.kind == ArchKind::Linear) {
    add_dense(c.params, "clf.out", kHmRows, 2, init, rng);
    return c;
  }
  const std::size_t kw = arch.kind == ArchKind::Strided ? arch.strided_kernel : arch.kernel_width;
  c.params.add("clf.conv.w", init_weight({arch.conv_filters, kHmRows, kw}, kHmRows * kw, init, rng));
  c.params.add("clf.conv.b", Tensor({arch.conv_filters}));
  std::size_t width = arch.flattened_width();
  for (std::size_t i = 0; i < arch.hidden.size(); ++i) {
    add_dense(c.params, "clf.fc" + std::to_string(i + 1), width, arch.hidden[i], init, rng);
    width = arch.hidden[i];
  }
  add_dense(c.params, "clf.out", width, 2, init, rng);
  return c;
}

NodeId Classifier::append(Graph& g, NodeId x, bool with_dropout) const {
  if (arch.kind == ArchKind::Linear) return g.softmax(dense(g, g.temporal_mean(x), "clf.out"));

  const std::size_t stride = arch.kind == ArchKind::Strided ? arch.strided_stride : 1;
  NodeId h = g.relu(g.conv1d(x, g.parameter("clf.conv.w"), g.parameter("clf.conv.b"), stride));
  if (arch.kind == ArchKind::Original) h = g.max_pool(h, arch.pool_width, arch.pool_stride);
  if (arch.kind == ArchKind::AvgPool) h = g.avg_pool(h, arch.pool_width, arch.pool_stride);
  if (with_dropout && arch.dropout > 0) h = g.dropout(h, arch.dropout);
  h = g.flatten(h);
  for (std::size_t i = 0; i < arch.hidden.size(); ++i) h = g.relu(dense(g, h, "clf.fc" + std::to_string(i + 1)));
  return g.softmax(dense(g, h, "clf.out"));
}

std::size_t count_parameters(const Classifier& model) { return model.params.total_entries(); }

Tensor predict_proba(const Classifier& model, const Tensor& batch) {
  Tensor x = batch;
  if (x.rank() == 2) x = x.reshaped({1, x.dim(0), x.dim(1)});
  if (x.rank() != 3 || x.dim(1) != kHmRows || x.dim(2) != kBins)
    throw ShapeError("classifier input must be [B,5,100], got " + shape_string(batch.shape()));
  Graph g;
  const NodeId in = g.input("x");
  const NodeId out = model.append(g, in, false);
  g.forward(model.params, {{"x", std::move(x)}});
  return g.value(out);
}

std::array<double, 2> predict_proba(const Classifier& model, const HMMatrix& x) {
  const Tensor p = predict_proba(model, x.to_tensor());
  return {p[0], p[1]};
}

std::vector<std::array<double, 2>> predict_proba(const Classifier& model, std::span<const HMMatrix> xs) {
  if (xs.empty()) return {};
  std::vector<double> data;
  data.reserve(xs.size() * kHmRows * kBins);
  for (const HMMatrix& m : xs) data.insert(data.end(), m.values().begin(), m.values().end());
  const Tensor p = predict_proba(model, Tensor({xs.size(), kHmRows, kBins}, std::move(data)));
  std::vector<std::array<double, 2>> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = {p[2 * i], p[2 * i + 1]};
  return out;
}

void GanSpec::validate() const {
  if (latent_dim == 0) throw ConfigError("latent dimension must be positive");
  for (std::size_t h : generator_hidden)
    if (h == 0) throw ConfigError("generator hidden sizes must be positive");
  for (std::size_t h : discriminator_hidden)
    if (h == 0) throw ConfigError("discriminator hidden sizes must be positive");
}

Gan build_gan(const GanSpec& spec, std::uint64_t seed) {
  spec.validate();
  Gan gan;
  gan.spec = spec;
  gan.seed = seed;
  std::mt19937_64 rng(seed);
  std::size_t width = spec.latent_dim;
  for (std::size_t i = 0; i < spec.generator_hidden.size(); ++i) {
    add_dense(gan.generator, "gen.fc" + std::to_string(i + 1), width, spec.generator_hidden[i],
              InitMode::KaimingUniform, rng);
    width = spec.generator_hidden[i];
  }
  add_dense(gan.generator, "gen.out", width, kHmRows * kBins, InitMode::KaimingUniform, rng);

  width = kHmRows * kBins;
  for (std::size_t i = 0; i < spec.discriminator_hidden.size(); ++i) {
    add_dense(gan.discriminator, "disc.fc" + std::to_string(i + 1), width, spec.discriminator_hidden[i],
              InitMode::KaimingUniform, rng);
    width = spec.discriminator_hidden[i];
  }
  add_dense(gan.discriminator, "disc.out", width, 1, InitMode::KaimingUniform, rng);
  return gan;
}

NodeId Gan::append_generator(Graph& g, NodeId z) const {
  NodeId h = z;
  for (std::size_t i = 0; i < spec.generator_hidden.size(); ++i)
    h = g.relu(dense(g, h, "gen.fc" + std::to_string(i + 1)));
  return g.softplus(dense(g, h, "gen.out"));
}

NodeId Gan::append_discriminator(Graph& g, NodeId x) const {
  NodeId h = g.flatten(x);
  for (std::size_t i = 0; i < spec.discriminator_hidden.size(); ++i)
    h = g.relu(dense(g, h, "disc.fc" + std::to_string(i + 1)));
  return g.sigmoid(dense(g, h, "disc.out"));
}

Tensor Gan::generate(const Tensor& z) const {
  if (z.rank() != 2 || z.dim(1) != spec.latent_dim)
    throw ShapeError("latent batch must be [B," + std::to_string(spec.latent_dim) + "]");
  Graph g;
  const NodeId in = g.input("z");
  const NodeId out = append_generator(g, in);
  g.forward(generator, {{"z", z}});
  return g.value(out).reshaped({z.dim(0), kHmRows, kBins});
}

Tensor Gan::discriminate(const Tensor& x) const {
  Tensor batch = x.rank() == 2 ? x.reshaped({1, x.dim(0), x.dim(1)}) : x;
  if (batch.size() != batch.dim(0) * kHmRows * kBins)
    throw ShapeError("discriminator input must hold 500 entries per sample");
  Graph g;
  const NodeId in = g.input("x");
  const NodeId out = append_discriminator(g, in);
  const std::size_t n = batch.dim(0);
  g.forward(discriminator, {{"x", std::move(batch)}});
  return g.value(out).reshaped({n});
}

Tensor Gan::sample_latent(std::size_t count, std::uint64_t rng_seed) const {
  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Tensor z({count, spec.latent_dim});
  for (double& v : z.data()) v = gauss(rng);
  return z;
}

}  // namespace hmexpr
