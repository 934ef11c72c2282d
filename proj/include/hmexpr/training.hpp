#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hmexpr/data.hpp"
#include "hmexpr/errors.hpp"
#include "hmexpr/models.hpp"
#include "hmexpr/optimizer.hpp"

namespace hmexpr {

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 30;
  std::optional<double> dropout;  // overrides ArchSpec::dropout when set
  std::uint64_t seed = 0;
  std::optional<std::size_t> patience;
  std::size_t workers = 1;  // parallel best-of-k runs

  void validate() const;
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_auroc;
  std::size_t selected_epoch = 0;  // 1-based; 0 when no epoch completed

  double best_val_auroc() const;
};

void write_history_csv(std::ostream& out, const TrainHistory& h);

class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, TrainHistory history)
      : NumericError(what), history_(std::move(history)) {}
  const TrainHistory& history() const noexcept { return history_; }

 private:
  TrainHistory history_;
};

struct TrainResult {
  Classifier model;
  TrainHistory history;
};

/// Trains on the pooled train splits of `cells` and returns the snapshot with
/// the highest pooled validation AUROC (earliest epoch on ties).
TrainResult train_classifier(std::span<const CellCorpus* const> cells, const ArchSpec& arch, const TrainConfig& cfg);
TrainResult train_classifier(const CellCorpus& cell, const ArchSpec& arch, const TrainConfig& cfg);

struct BestOfK {
  TrainResult best;
  std::vector<double> val_aurocs;  // one per run, seed order
  std::size_t chosen = 0;          // index of the returned run
};

/// k runs with seeds seed..seed+k-1; keeps the highest validation AUROC.
BestOfK select_best_of_k(std::span<const CellCorpus* const> cells, const ArchSpec& arch, std::size_t k,
                         const TrainConfig& cfg);

struct GanTrainConfig {
  double learning_rate = 5e-4;
  double beta1 = 0.5;
  std::size_t batch_size = 64;
  std::size_t epochs = 60;
  std::uint64_t seed = 0;
};

struct GanHistory {
  std::vector<double> discriminator_loss;  // per epoch mean
  std::vector<double> generator_loss;
  std::vector<std::string> warnings;
};

void write_gan_history_csv(std::ostream& out, const GanHistory& h);

struct GanResult {
  Gan gan;
  GanHistory history;
};

/// Alternating discriminator / generator updates with the non-saturating
/// generator loss. Collapse (probe variance < 1e-6) is recorded as a warning.
GanResult train_gan(std::span<const GeneSample> real, const GanSpec& spec, const GanTrainConfig& cfg);

/// Variance of generator outputs across a latent probe, averaged over entries.
double generator_output_variance(const Gan& gan, std::size_t probe, std::uint64_t seed);

// ---- checkpoints ----------------------------------------------------------------
//
// One JSON document: format tag, model kind, spec, seed, a manifest of
// {name, shape} in parameter order, and the values as nested arrays.

void save_checkpoint(const Classifier& model, const std::filesystem::path& path);
void save_checkpoint(const Gan& gan, const std::filesystem::path& path);
std::string checkpoint_json(const Classifier& model);
std::string checkpoint_json(const Gan& gan);
Classifier load_classifier(const std::filesystem::path& path);
Gan load_gan(const std::filesystem::path& path);
Classifier classifier_from_json(const std::string& text);
Gan gan_from_json(const std::string& text);

}  // namespace hmexpr
