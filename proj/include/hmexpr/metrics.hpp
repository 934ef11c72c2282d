#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "hmexpr/data.hpp"
#include "hmexpr/models.hpp"

namespace hmexpr {

/// Area under the ROC curve with half credit for ties (Mann-Whitney U).
/// Labels are +1 / -1; both classes must be present.
double auroc(std::span<const double> scores, std::span<const int> labels);

struct CorrelationOptions {
  bool log_transform = true;  // correlate log(1 + rpkm)
  bool normalize = true;      // min-max over the whole matrix
};

struct CorrelationMatrix {
  std::vector<std::string> cell_ids;
  std::vector<double> values;  // row-major C x C
  std::vector<double> raw;     // Pearson values before normalization
  bool normalized = false;
  std::vector<std::string> degenerate_cells;  // zero variance over the gene set

  std::size_t size() const noexcept { return cell_ids.size(); }
  double at(std::size_t i, std::size_t j) const { return values.at(i * size() + j); }
  double at(std::string_view a, std::string_view b) const;
  std::size_t index_of(std::string_view cell) const;
};

/// Pearson correlation between cells over `genes` (all genes when empty).
CorrelationMatrix correlation_matrix(const RpkmTable& table, std::span<const std::string> genes,
                                     const CorrelationOptions& opts = {});

/// Min-max rescale to [0,1]; a constant matrix maps to all ones.
CorrelationMatrix normalize_correlation(CorrelationMatrix m);

void write_correlation_csv(std::ostream& out, const CorrelationMatrix& m);

struct ClassMeans {
  double positive = 0.0;
  double negative = 0.0;
};

/// Mean predicted class probabilities over a [B,5,100] batch.
ClassMeans mean_class_prob(const Classifier& model, const Tensor& batch);
ClassMeans mean_class_prob(const Classifier& model, std::span<const GeneSample> samples);

/// p_pos for every sample, evaluated in chunks.
std::vector<double> positive_scores(const Classifier& model, std::span<const GeneSample> samples);
double evaluate_auroc(const Classifier& model, std::span<const GeneSample> samples);

}  // namespace hmexpr
