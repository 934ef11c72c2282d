#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "hmexpr/data.hpp"
#include "hmexpr/models.hpp"

namespace hmexpr {

// ---- input optimization ---------------------------------------------------------
//
// total = -log P(f(X)=c) + lambda * -log D(X) + phi * ||X - X1||_2

enum class InitKind { RandomUniform, GeneratorHotStart };

struct LossSpec {
  int target_class = 1;  // +1 or -1
  double lambda = 1.0;
  double phi = 0.1;
  std::optional<HMMatrix> reference;  // X1; drawn from the generator when absent
  double step = 0.1;
  std::size_t iterations = 200;
  InitKind init = InitKind::RandomUniform;
  double init_scale = 1.0;  // upper bound of the uniform initialization

  void validate(bool has_gan) const;
};

struct LossTerms {
  double classifier = 0;
  double discriminator = 0;
  double deviation = 0;
  double total = 0;
};

struct OptimizeResult {
  Tensor best;  // [5,100], unconstrained
  std::size_t best_iteration = 0;
  double best_probability = 0;  // P(f(best) = c)
  std::vector<LossTerms> trajectory;  // entry 0 is the initialization
};

/// Fixed-step gradient descent on the input, returning the lowest-loss iterate.
/// `gan` supplies the discriminator (lambda > 0) and the hot-start generator.
OptimizeResult optimize_input(const Classifier& classifier, const Gan* gan, const LossSpec& spec, std::uint64_t seed);

void write_trajectory_csv(std::ostream& out, std::span<const LossTerms> trajectory);

// ---- Monte Carlo selection ------------------------------------------------------

enum class SelectionMode { TopK, Threshold };

struct SelectionSpec {
  std::size_t samples = 100000;
  SelectionMode mode = SelectionMode::TopK;
  std::size_t k = 100;
  double threshold = 0.99;
  std::size_t batch = 1000;
  std::size_t workers = 1;

  void validate() const;
};

struct SelectedSample {
  std::size_t index = 0;  // generation order
  double probability = 0;
  HMMatrix x;
};

struct ClassSelection {
  int target_class = 1;
  std::vector<SelectedSample> items;  // top-k: best first; threshold: generation order
  bool exhausted = false;             // threshold mode found fewer than k
};

struct McSelection {
  ClassSelection positive;
  ClassSelection negative;
};

/// Latent batch `batch_index` of a selection run; exposed so callers can
/// reproduce the exact generated stream.
Tensor mc_batch(const Gan& gan, std::uint64_t seed, std::size_t batch_index, std::size_t count);

/// Streams `samples` generator outputs through the classifier and keeps, per
/// class, the k most confident (top-k) or the first k above threshold.
McSelection mc_sample_select(const Gan& gan, const Classifier& classifier, const SelectionSpec& spec,
                             std::uint64_t seed);

// ---- profiles and reports ---------------------------------------------------------

struct ActivationProfile {
  std::array<double, kHmRows> values{};
  bool degenerate = false;
};

/// Per-mark mean over samples and bins, divided by the largest mark.
ActivationProfile activation_profile(std::span<const HMMatrix> samples);
ActivationProfile activation_profile(std::span<const SelectedSample> samples);

/// CSV `class,hm,activation` with five rows per class.
void write_profiles_csv(std::ostream& out, const ActivationProfile& positive, const ActivationProfile& negative);

struct LinearWeightReport {
  // weights[row][0] feeds class -1, weights[row][1] feeds class +1.
  std::array<std::array<double, 2>, kHmRows> weights{};
  std::array<double, 2> bias{};

  /// Rows whose weight toward `target_class` is positive.
  std::vector<std::size_t> positive_rows(int target_class) const;
  friend bool operator==(const LinearWeightReport&, const LinearWeightReport&) = default;
};

LinearWeightReport export_linear_weights(const Classifier& model);
void write_weights_csv(std::ostream& out, const LinearWeightReport& report);
LinearWeightReport read_weights_csv(std::istream& in);

struct BinStat {
  double lower = 0;
  double upper = 0;
  std::size_t count = 0;
  double mean = 0;
  double variance = 0;
  bool empty = true;
};

/// Rank-normalizes RPKM to [0,1] (median near 0.5), buckets genes into equal
/// width bins and reports mean / variance of p_pos(A) - p_pos(B) per bin.
std::vector<BinStat> rpkm_binned_diff(const Classifier& a, const Classifier& b, std::span<const GeneSample> samples,
                                      std::size_t bins);
std::vector<double> rank_normalize(std::span<const double> values);
void write_bins_csv(std::ostream& out, std::span<const BinStat> bins);

}  // namespace hmexpr
