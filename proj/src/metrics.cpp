#include "hmexpr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>

#include "hmexpr/errors.hpp"

namespace hmexpr {

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ConfigError("auroc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Doubled mid-ranks keep the U statistic integral, so the result equals
  // the pairwise count exactly.
  std::int64_t rank_sum_x2 = 0;
  std::int64_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const auto tied_rank_x2 = static_cast<std::int64_t>(i + 1 + j);  // 2 * mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      const int lab = labels[order[k]];
      if (lab != 1 && lab != -1) throw ConfigError("auroc: labels must be +1 or -1");
      if (lab == 1) {
        rank_sum_x2 += tied_rank_x2;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::int64_t n_neg = static_cast<std::int64_t>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ConfigError("auroc requires both classes");
  const std::int64_t u_x2 = rank_sum_x2 - n_pos * (n_pos + 1);
  return static_cast<double>(u_x2) / static_cast<double>(2 * n_pos * n_neg);
}

double CorrelationMatrix::at(std::string_view a, std::string_view b) const { return at(index_of(a), index_of(b)); }

std::size_t CorrelationMatrix::index_of(std::string_view cell) const {
  auto it = std::find(cell_ids.begin(), cell_ids.end(), cell);
  if (it == cell_ids.end()) throw ConfigError("cell not in correlation matrix: " + std::string(cell));
  return static_cast<std::size_t>(it - cell_ids.begin());
}

CorrelationMatrix correlation_matrix(const RpkmTable& table, std::span<const std::string> genes,
                                     const CorrelationOptions& opts) {
  const std::size_t cells = table.cell_ids.size();
  if (cells < 2) throw ConfigError("correlation needs at least two cells");

  std::vector<std::size_t> rows;
  if (genes.empty()) {
    rows.resize(table.gene_ids.size());
    std::iota(rows.begin(), rows.end(), 0);
  } else {
    std::vector<std::size_t> order(table.gene_ids.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return table.gene_ids[a] < table.gene_ids[b]; });
    for (const std::string& g : genes) {
      auto it = std::lower_bound(order.begin(), order.end(), g,
                                 [&](std::size_t r, const std::string& key) { return table.gene_ids[r] < key; });
      if (it == order.end() || table.gene_ids[*it] != g) throw ConfigError("gene not in RPKM table: " + g);
      rows.push_back(*it);
    }
  }
  if (rows.size() < 2) throw ConfigError("correlation needs at least two genes");

  // Centered columns.
  std::vector<std::vector<double>> col(cells, std::vector<double>(rows.size()));
  std::vector<double> norm(cells);
  for (std::size_t c = 0; c < cells; ++c) {
    double mean = 0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const double v = table.values[rows[k]][c];
      mean += col[c][k] = opts.log_transform ? std::log1p(v) : v;
    }
    mean /= static_cast<double>(rows.size());
    double ss = 0;
    for (double& v : col[c]) {
      v -= mean;
      ss += v * v;
    }
    norm[c] = std::sqrt(ss);
  }

  CorrelationMatrix m;
  m.cell_ids = table.cell_ids;
  m.raw.assign(cells * cells, 0.0);
  for (std::size_t c = 0; c < cells; ++c)
    if (norm[c] == 0.0) m.degenerate_cells.push_back(table.cell_ids[c]);
  for (std::size_t a = 0; a < cells; ++a) {
    m.raw[a * cells + a] = 1.0;
    for (std::size_t b = a + 1; b < cells; ++b) {
      double r = 0.0;
      if (norm[a] > 0 && norm[b] > 0) {
        double dot = 0;
        for (std::size_t k = 0; k < rows.size(); ++k) dot += col[a][k] * col[b][k];
        r = std::clamp(dot / (norm[a] * norm[b]), -1.0, 1.0);
      }
      m.raw[a * cells + b] = m.raw[b * cells + a] = r;
    }
  }
  m.values = m.raw;
  return opts.normalize ? normalize_correlation(std::move(m)) : m;
}

CorrelationMatrix normalize_correlation(CorrelationMatrix m) {
  const auto [lo, hi] = std::minmax_element(m.values.begin(), m.values.end());
  const double min = *lo, max = *hi;
  for (double& v : m.values) v = max > min ? (v - min) / (max - min) : 1.0;
  m.normalized = true;
  return m;
}

void write_correlation_csv(std::ostream& out, const CorrelationMatrix& m) {
  out << "cell";
  for (const auto& c : m.cell_ids) out << ',' << c;
  out << '\n';
  for (std::size_t i = 0; i < m.size(); ++i) {
    out << m.cell_ids[i];
    for (std::size_t j = 0; j < m.size(); ++j) out << ',' << format_number(m.at(i, j));
    out << '\n';
  }
}

ClassMeans mean_class_prob(const Classifier& model, const Tensor& batch) {
  if (batch.empty()) throw ConfigError("mean_class_prob needs a non-empty dataset");
  const std::size_t n = batch.rank() == 3 ? batch.dim(0) : 1;
  const std::size_t per = kHmRows * kBins;
  constexpr std::size_t kChunk = 512;
  double pos = 0, neg = 0;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t len = std::min(kChunk, n - start);
    std::vector<double> chunk(batch.data().begin() + static_cast<std::ptrdiff_t>(start * per),
                              batch.data().begin() + static_cast<std::ptrdiff_t>((start + len) * per));
    const Tensor p = predict_proba(model, Tensor({len, kHmRows, kBins}, std::move(chunk)));
    for (std::size_t i = 0; i < len; ++i) {
      neg += p[2 * i];
      pos += p[2 * i + 1];
    }
  }
  return {pos / static_cast<double>(n), neg / static_cast<double>(n)};
}

ClassMeans mean_class_prob(const Classifier& model, std::span<const GeneSample> samples) {
  if (samples.empty()) throw ConfigError("mean_class_prob needs a non-empty dataset");
  return mean_class_prob(model, stack_inputs(samples));
}

std::vector<double> positive_scores(const Classifier& model, std::span<const GeneSample> samples) {
  constexpr std::size_t kChunk = 512;
  std::vector<double> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const auto part = samples.subspan(start, std::min(kChunk, samples.size() - start));
    const Tensor p = predict_proba(model, stack_inputs(part));
    for (std::size_t i = 0; i < part.size(); ++i) out.push_back(p[2 * i + 1]);
  }
  return out;
}

double evaluate_auroc(const Classifier& model, std::span<const GeneSample> samples) {
  const std::vector<double> scores = positive_scores(model, samples);
  std::vector<int> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(s.label);
  return auroc(scores, labels);
}

}  // namespace hmexpr
