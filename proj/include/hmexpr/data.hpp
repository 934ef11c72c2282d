#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hmexpr/tensor.hpp"

namespace hmexpr {

inline constexpr std::size_t kHmRows = 5;
inline constexpr std::size_t kBins = 100;
inline constexpr std::size_t kBinWidth = 100;
inline constexpr std::int64_t kTssFlank = 5000;

/// Row order of every HM matrix.
inline constexpr std::array<std::string_view, kHmRows> kHmNames = {"H3K27me3", "H3K36me3", "H3K4me1", "H3K4me3",
                                                                  "H3K9me3"};

/// Binned signal for one gene: 5 marks x 100 bins, non-negative and finite.
class HMMatrix {
 public:
  HMMatrix() : values_(kHmRows * kBins, 0.0) {}
  explicit HMMatrix(std::vector<double> values);

  double at(std::size_t row, std::size_t bin) const { return values_.at(row * kBins + bin); }
  void set(std::size_t row, std::size_t bin, double v);
  std::span<const double> values() const noexcept { return values_; }
  double row_mean(std::size_t row) const;
  Tensor to_tensor() const { return Tensor({kHmRows, kBins}, values_); }

  friend bool operator==(const HMMatrix&, const HMMatrix&) = default;

 private:
  std::vector<double> values_;
};

struct GeneSample {
  std::string gene_id;
  HMMatrix x;
  int label = -1;  // -1 or +1
  std::optional<double> rpkm;

  friend bool operator==(const GeneSample&, const GeneSample&) = default;
};

enum class Split { Train, Validation, Test };
std::string_view split_name(Split s);
Split parse_split(std::string_view name);

enum class Provenance { RealFormat, Synthetic };

struct CellCorpus {
  std::string cell_id;
  Provenance provenance = Provenance::Synthetic;
  std::vector<GeneSample> train;
  std::vector<GeneSample> validation;
  std::vector<GeneSample> test;

  const std::vector<GeneSample>& split(Split s) const;
  std::vector<GeneSample>& split(Split s);
  std::size_t gene_count() const { return train.size() + validation.size() + test.size(); }
};

// ---- CSV container ---------------------------------------------------------
//
// One line per (gene, bin): gene_id,bin_index,c1,c2,c3,c4,c5,label
// Exactly 100 consecutive rows per gene, bins 0..99 in any order, constant label.

std::vector<GeneSample> parse_deepchrome_csv(const std::filesystem::path& path);
std::vector<GeneSample> parse_deepchrome_csv(std::istream& in);
void write_deepchrome_csv(std::ostream& out, std::span<const GeneSample> samples);
std::string format_number(double v);

/// Gene-by-cell expression table: `gene_id,cell_1,...,cell_C` with a header row.
struct RpkmTable {
  std::vector<std::string> cell_ids;
  std::vector<std::string> gene_ids;
  std::vector<std::vector<double>> values;  // [gene][cell]

  std::size_t cell_index(std::string_view cell) const;
};
RpkmTable read_rpkm_csv(const std::filesystem::path& path);
RpkmTable read_rpkm_csv(std::istream& in);
void write_rpkm_csv(std::ostream& out, const RpkmTable& table);

std::map<std::string, Split> read_splits_csv(const std::filesystem::path& path);
void write_splits_csv(std::ostream& out, std::span<const std::string> gene_ids, std::span<const Split> splits);

// ---- Signal construction --------------------------------------------------

enum class Strand { Plus, Minus };

/// Bins reads within [tss-5000, tss+5000) into 100 bins of 100 bp. On the
/// minus strand the bin order is reversed so bin 0 is always upstream.
HMMatrix bin_reads(const std::array<std::vector<std::int64_t>, kHmRows>& positions, std::int64_t tss, Strand strand);

/// +1 iff rpkm exceeds the lower median of the cell, else -1.
std::vector<int> binarize_expression(std::span<const double> rpkm);

struct SplitRatios {
  double train = 1.0 / 3.0;
  double validation = 1.0 / 3.0;
  double test = 1.0 / 3.0;
};

/// Seeded shuffle, then contiguous blocks sized by rounding cumulative ratios.
std::vector<Split> split_genes(std::span<const std::string> gene_ids, const SplitRatios& ratios, std::uint64_t seed);

struct SyntheticSpec {
  std::size_t cells = 3;
  std::size_t genes_per_cell = 2000;
  /// Planted linear rule over per-row temporal means. Positive rows act as
  /// promoters, negative rows as repressors.
  std::array<double, kHmRows> planted_weights = {-1.0, 0.5, 0.7, 1.0, -0.9};
  double noise = 0.35;
  double perturbation = 0.1;
  /// Optional per-cell perturbation scales; overrides `perturbation` when set.
  std::vector<double> cell_perturbations;
  SplitRatios ratios;

  double perturbation_for(std::size_t cell) const;
  void validate() const;
};

std::vector<std::size_t> promoter_rows(const std::array<double, kHmRows>& planted);
std::vector<std::size_t> repressor_rows(const std::array<double, kHmRows>& planted);

/// Cells C1..Cn sharing one gene list and one split assignment. RPKM is
/// exp(planted score), labels are its per-cell binarization.
std::vector<CellCorpus> generate_synthetic_corpus(const SyntheticSpec& spec, std::uint64_t seed);

RpkmTable rpkm_table(std::span<const CellCorpus> cells);

/// Writes cell_<id>.csv per cell, rpkm.csv and splits.csv into `dir`.
void write_corpus_dir(const std::filesystem::path& dir, std::span<const CellCorpus> cells);
/// Reassembles one cell from a directory written by write_corpus_dir.
CellCorpus load_cell(const std::filesystem::path& dir, std::string_view cell_id);
std::vector<std::string> list_cells(const std::filesystem::path& dir);

/// Stacks samples into a [n,5,100] tensor and a [n] class-index tensor (+1 -> 1).
Tensor stack_inputs(std::span<const GeneSample> samples);
Tensor stack_inputs(std::span<const GeneSample* const> samples);
Tensor stack_labels(std::span<const GeneSample* const> samples);

/// Writes `content` to a sibling temp file then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace hmexpr
