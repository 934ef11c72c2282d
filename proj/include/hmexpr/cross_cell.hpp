#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hmexpr/data.hpp"
#include "hmexpr/metrics.hpp"
#include "hmexpr/models.hpp"
#include "hmexpr/training.hpp"

namespace hmexpr {

enum class Category { DeepChrome, All, Highly, Somewhat, Random };

Category parse_category(std::string_view s);
std::string_view category_name(Category c);

inline constexpr double kHighlyThreshold = 0.75;
inline constexpr double kSomewhatThreshold = 0.5;
inline constexpr std::size_t kRandomCells = 10;

enum class PlanStatus { Runnable, Blank };

struct ExperimentPlan {
  std::string target;
  Category category = Category::DeepChrome;
  bool inclusive = false;
  std::vector<std::string> training_cells;  // in cell-list order
  std::optional<double> threshold;
  std::optional<std::uint64_t> random_seed;
  PlanStatus status = PlanStatus::Runnable;

  /// Heatmap row label: "deepchrome", "inclusive-all", "exclusive-random", ...
  std::string experiment() const;
};

/// Seed used for the random category of `target`: seed xor FNV-1a64(target).
std::uint64_t random_plan_seed(std::uint64_t seed, std::string_view target);

/// `corr` must be normalized and cover every cell.
ExperimentPlan build_experiment_plan(std::span<const std::string> cells, const CorrelationMatrix& corr,
                                     const std::string& target, Category category, bool inclusive,
                                     std::uint64_t seed);

/// Trains on the pooled plan cells and returns AUROC on the target's test
/// split; blank plans yield nullopt without training.
std::optional<double> run_plan(const ExperimentPlan& plan, std::span<const CellCorpus> corpora, const ArchSpec& arch,
                               const TrainConfig& cfg);

struct GridEntry {
  std::string experiment;
  std::string cell;
  std::optional<double> auroc;
  std::string status;  // ok, blank, skipped
};

struct GridOptions {
  std::vector<Category> categories = {Category::DeepChrome, Category::All, Category::Highly, Category::Somewhat,
                                      Category::Random};
  ArchSpec arch = ArchSpec::of(ArchKind::AvgPool);
  TrainConfig train;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

struct GridResult {
  std::vector<ExperimentPlan> plans;  // includes skipped random plans as blank
  std::vector<GridEntry> entries;     // plan order
};

/// Every (experiment, cell) combination; random plans are marked skipped when
/// fewer than ten non-target cells exist.
GridResult run_grid(std::span<const CellCorpus> corpora, const CorrelationMatrix& corr, const GridOptions& opts);

void write_grid_csv(std::ostream& out, std::span<const GridEntry> entries);
std::vector<GridEntry> read_grid_csv(std::istream& in);
std::string plans_json(std::span<const ExperimentPlan> plans);

struct HeatmapMatrix {
  std::vector<std::string> rows;  // experiment types
  std::vector<std::string> cols;  // cells
  std::vector<std::vector<std::optional<double>>> raw;
  std::vector<std::vector<std::optional<double>>> display;  // per-column min-max

  /// Mean over non-blank entries of a row; nullopt when the row is all blank.
  std::optional<double> row_mean(std::string_view row) const;
};

HeatmapMatrix aggregate_heatmap(std::span<const GridEntry> entries);
void write_heatmap_csv(std::ostream& out, const HeatmapMatrix& h, bool display);

struct TransferPoint {
  std::string train_cell;
  std::string test_cell;
  double correlation = 0;
  double delta_auroc = 0;
};

/// Every ordered pair (train != test): AUROC of the train cell's model on the
/// test cell's test split minus that of the test cell's own model.
std::vector<TransferPoint> test_on_rest(const std::map<std::string, Classifier>& models,
                                        std::span<const CellCorpus> corpora, const CorrelationMatrix& corr,
                                        std::size_t workers = 1);

struct TrendlineFit {
  double slope = 0;
  double intercept = 0;
  std::optional<double> r;  // absent when either variance is zero
  std::size_t count = 0;
};

TrendlineFit fit_trendline(std::span<const double> x, std::span<const double> y);
TrendlineFit fit_trendline(std::span<const TransferPoint> points);

void write_transfer_csv(std::ostream& out, std::span<const TransferPoint> points);
void write_trendline_csv(std::ostream& out, const TrendlineFit& fit);

}  // namespace hmexpr
