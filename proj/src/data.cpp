#include "hmexpr/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "hmexpr/errors.hpp"

namespace hmexpr {
namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string_view chomp(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

std::optional<double> to_double(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  return in;
}

}  // namespace

HMMatrix::HMMatrix(std::vector<double> values) : values_(std::move(values)) {
  if (values_.size() != kHmRows * kBins)
    throw ShapeError("HM matrix needs 500 values, got " + std::to_string(values_.size()));
  for (double v : values_)
    if (!std::isfinite(v) || v < 0) throw ConfigError("HM matrix entries must be finite and non-negative");
}

void HMMatrix::set(std::size_t row, std::size_t bin, double v) {
  if (!std::isfinite(v) || v < 0) throw ConfigError("HM matrix entries must be finite and non-negative");
  values_.at(row * kBins + bin) = v;
}

double HMMatrix::row_mean(std::size_t row) const {
  const auto first = values_.begin() + static_cast<std::ptrdiff_t>(row * kBins);
  return std::accumulate(first, first + kBins, 0.0) / static_cast<double>(kBins);
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "validation") return Split::Validation;
  if (name == "test") return Split::Test;
  throw ParseError("unknown split: " + std::string(name));
}

const std::vector<GeneSample>& CellCorpus::split(Split s) const {
  switch (s) {
    case Split::Train: return train;
    case Split::Validation: return validation;
    case Split::Test: return test;
  }
  return train;
}

std::vector<GeneSample>& CellCorpus::split(Split s) {
  return const_cast<std::vector<GeneSample>&>(std::as_const(*this).split(s));
}

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw NumericError("cannot format number");
  return std::string(buf, ptr);
}

// ---- corpus CSV -------------------------------------------------------------

std::vector<GeneSample> parse_deepchrome_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  try {
    return parse_deepchrome_csv(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::vector<GeneSample> parse_deepchrome_csv(std::istream& in) {
  std::vector<GeneSample> out;
  std::set<std::string> finished;

  std::string current;
  std::vector<double> values;
  std::vector<char> seen;
  std::size_t rows = 0;
  int label = 0;
  std::size_t block_start = 0;

  auto close_block = [&](std::size_t line_no) {
    if (current.empty()) return;
    if (rows != kBins)
      throw ParseError("gene " + current + " has " + std::to_string(rows) + " bins, expected 100", line_no);
    GeneSample s;
    s.gene_id = current;
    s.x = HMMatrix(std::move(values));
    s.label = label;
    out.push_back(std::move(s));
    finished.insert(current);
    current.clear();
  };

  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = chomp(raw);
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != 8) throw ParseError("expected 8 fields, got " + std::to_string(fields.size()), line_no);
    const auto bin = to_double(fields[1]);
    if (!bin) {
      if (line_no == 1) continue;  // header
      throw ParseError("non-numeric bin index", line_no);
    }
    const std::string gene(fields[0]);
    if (gene.empty()) throw ParseError("empty gene id", line_no);
    if (gene != current) {
      close_block(line_no);
      if (finished.count(gene)) throw ParseError("gene " + gene + " rows are not consecutive", line_no);
      current = gene;
      values.assign(kHmRows * kBins, 0.0);
      seen.assign(kBins, 0);
      rows = 0;
      block_start = line_no;
    }
    if (*bin < 0 || *bin >= static_cast<double>(kBins) || *bin != std::floor(*bin))
      throw ParseError("bin index out of range for gene " + gene, line_no);
    const auto b = static_cast<std::size_t>(*bin);
    if (seen[b]) throw ParseError("duplicate bin " + std::to_string(b) + " for gene " + gene, line_no);
    seen[b] = 1;
    for (std::size_t r = 0; r < kHmRows; ++r) {
      const auto v = to_double(fields[2 + r]);
      if (!v || !std::isfinite(*v)) throw ParseError("invalid count for gene " + gene, line_no);
      if (*v < 0) throw ParseError("negative count for gene " + gene, line_no);
      values[r * kBins + b] = *v;
    }
    const auto lab = to_double(fields[7]);
    if (!lab || (*lab != 1.0 && *lab != -1.0)) throw ParseError("label must be -1 or 1 for gene " + gene, line_no);
    if (rows == 0) {
      label = static_cast<int>(*lab);
    } else if (label != static_cast<int>(*lab)) {
      throw ParseError("inconsistent labels for gene " + gene + " (block starts at line " +
                           std::to_string(block_start) + ")",
                       line_no);
    }
    ++rows;
  }
  close_block(line_no);
  return out;
}

void write_deepchrome_csv(std::ostream& out, std::span<const GeneSample> samples) {
  for (const GeneSample& s : samples) {
    for (std::size_t b = 0; b < kBins; ++b) {
      out << s.gene_id << ',' << b;
      for (std::size_t r = 0; r < kHmRows; ++r) out << ',' << format_number(s.x.at(r, b));
      out << ',' << s.label << '\n';
    }
  }
}

// ---- RPKM / splits -----------------------------------------------------------

std::size_t RpkmTable::cell_index(std::string_view cell) const {
  auto it = std::find(cell_ids.begin(), cell_ids.end(), cell);
  if (it == cell_ids.end()) throw ConfigError("cell not in RPKM table: " + std::string(cell));
  return static_cast<std::size_t>(it - cell_ids.begin());
}

RpkmTable read_rpkm_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_rpkm_csv(in);
}

RpkmTable read_rpkm_csv(std::istream& in) {
  RpkmTable t;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = chomp(raw);
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (t.cell_ids.empty()) {
      if (fields.size() < 2) throw ParseError("RPKM header needs at least one cell column", line_no);
      for (std::size_t i = 1; i < fields.size(); ++i) t.cell_ids.emplace_back(fields[i]);
      continue;
    }
    if (fields.size() != t.cell_ids.size() + 1) throw ParseError("RPKM row has wrong field count", line_no);
    std::vector<double> row;
    for (std::size_t i = 1; i < fields.size(); ++i) {
      const auto v = to_double(fields[i]);
      if (!v || !std::isfinite(*v) || *v < 0) throw ParseError("invalid RPKM value", line_no);
      row.push_back(*v);
    }
    t.gene_ids.emplace_back(fields[0]);
    t.values.push_back(std::move(row));
  }
  if (t.cell_ids.empty()) throw ParseError("empty RPKM table");
  return t;
}

void write_rpkm_csv(std::ostream& out, const RpkmTable& table) {
  out << "gene_id";
  for (const auto& c : table.cell_ids) out << ',' << c;
  out << '\n';
  for (std::size_t g = 0; g < table.gene_ids.size(); ++g) {
    out << table.gene_ids[g];
    for (double v : table.values[g]) out << ',' << format_number(v);
    out << '\n';
  }
}

std::map<std::string, Split> read_splits_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::map<std::string, Split> out;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = chomp(raw);
    if (line.empty() || (line_no == 1 && line.starts_with("gene_id,"))) continue;
    const auto fields = split_fields(line);
    if (fields.size() != 2) throw ParseError("splits row needs 2 fields", line_no);
    out[std::string(fields[0])] = parse_split(fields[1]);
  }
  return out;
}

void write_splits_csv(std::ostream& out, std::span<const std::string> gene_ids, std::span<const Split> splits) {
  out << "gene_id,split\n";
  for (std::size_t i = 0; i < gene_ids.size(); ++i) out << gene_ids[i] << ',' << split_name(splits[i]) << '\n';
}

// ---- signal construction -------------------------------------------------------

HMMatrix bin_reads(const std::array<std::vector<std::int64_t>, kHmRows>& positions, std::int64_t tss,
                   Strand strand) {
  HMMatrix m;
  const std::int64_t lo = tss - kTssFlank;
  const std::int64_t hi = tss + kTssFlank;
  for (std::size_t r = 0; r < kHmRows; ++r) {
    for (std::int64_t pos : positions[r]) {
      if (pos < lo || pos >= hi) continue;
      auto bin = static_cast<std::size_t>((pos - lo) / static_cast<std::int64_t>(kBinWidth));
      if (strand == Strand::Minus) bin = kBins - 1 - bin;
      m.set(r, bin, m.at(r, bin) + 1.0);
    }
  }
  return m;
}

std::vector<int> binarize_expression(std::span<const double> rpkm) {
  if (rpkm.empty()) throw ConfigError("binarize_expression needs at least one gene");
  for (double v : rpkm)
    if (!std::isfinite(v)) throw NumericError("non-finite RPKM value");
  std::vector<double> sorted(rpkm.begin(), rpkm.end());
  const std::size_t mid = (sorted.size() - 1) / 2;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(mid), sorted.end());
  const double median = sorted[mid];
  std::vector<int> labels;
  labels.reserve(rpkm.size());
  for (double v : rpkm) labels.push_back(v > median ? 1 : -1);
  return labels;
}

std::vector<Split> split_genes(std::span<const std::string> gene_ids, const SplitRatios& ratios, std::uint64_t seed) {
  const double total = ratios.train + ratios.validation + ratios.test;
  if (ratios.train < 0 || ratios.validation < 0 || ratios.test < 0 || std::abs(total - 1.0) > 1e-9)
    throw ConfigError("split ratios must be non-negative and sum to 1");
  const std::size_t n = gene_ids.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios.train));
  const auto n_first_two =
      static_cast<std::size_t>(std::llround(static_cast<double>(n) * (ratios.train + ratios.validation)));
  std::vector<Split> out(n, Split::Test);
  for (std::size_t k = 0; k < n; ++k) {
    if (k < n_train) {
      out[order[k]] = Split::Train;
    } else if (k < n_first_two) {
      out[order[k]] = Split::Validation;
    }
  }
  return out;
}

// ---- synthetic corpora -----------------------------------------------------------

double SyntheticSpec::perturbation_for(std::size_t cell) const {
  return cell_perturbations.empty() ? perturbation : cell_perturbations.at(cell);
}

void SyntheticSpec::validate() const {
  if (cells == 0) throw ConfigError("synthetic spec needs at least one cell");
  if (genes_per_cell < 30) throw ConfigError("synthetic spec needs at least 30 genes per cell");
  if (!(noise >= 0)) throw ConfigError("noise scale must be non-negative");
  if (!(perturbation >= 0)) throw ConfigError("perturbation scale must be non-negative");
  if (!cell_perturbations.empty() && cell_perturbations.size() != cells)
    throw ConfigError("cell_perturbations must list one scale per cell");
  for (double p : cell_perturbations)
    if (!(p >= 0)) throw ConfigError("perturbation scales must be non-negative");
}

std::vector<std::size_t> promoter_rows(const std::array<double, kHmRows>& planted) {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < kHmRows; ++r)
    if (planted[r] > 0) out.push_back(r);
  return out;
}

std::vector<std::size_t> repressor_rows(const std::array<double, kHmRows>& planted) {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < kHmRows; ++r)
    if (planted[r] < 0) out.push_back(r);
  return out;
}

std::vector<CellCorpus> generate_synthetic_corpus(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::size_t n = spec.genes_per_cell;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Shared per-gene structure: row levels, bin texture and expression noise.
  std::array<double, kBins> profile{};
  for (std::size_t b = 0; b < kBins; ++b) {
    const double d = (static_cast<double>(b) - 49.5) / 12.0;
    profile[b] = 0.4 + 1.6 * std::exp(-d * d);
  }
  std::vector<std::string> ids(n);
  std::vector<std::vector<double>> base(n, std::vector<double>(kHmRows * kBins));
  std::vector<double> expr_noise(n);
  for (std::size_t g = 0; g < n; ++g) {
    ids[g] = "G" + std::string(5 - std::min<std::size_t>(5, std::to_string(g + 1).size()), '0') + std::to_string(g + 1);
    for (std::size_t r = 0; r < kHmRows; ++r) {
      const double level = 2.0 * std::exp(0.6 * gauss(rng));
      for (std::size_t b = 0; b < kBins; ++b)
        base[g][r * kBins + b] = level * profile[b] * std::exp(0.3 * gauss(rng));
    }
    expr_noise[g] = spec.noise * gauss(rng);
  }
  const std::vector<Split> splits = split_genes(ids, spec.ratios, seed ^ 0x9e3779b97f4a7c15ULL);

  std::vector<CellCorpus> cells;
  for (std::size_t c = 0; c < spec.cells; ++c) {
    const double s = spec.perturbation_for(c);
    std::vector<HMMatrix> xs;
    std::vector<double> rpkm(n);
    xs.reserve(n);
    for (std::size_t g = 0; g < n; ++g) {
      std::vector<double> v = base[g];
      double score = expr_noise[g];
      for (std::size_t r = 0; r < kHmRows; ++r) {
        // Always draw so cells stay aligned on the RNG stream regardless of s.
        const double factor = std::exp(s * gauss(rng));
        double sum = 0;
        for (std::size_t b = 0; b < kBins; ++b) sum += v[r * kBins + b] *= factor;
        score += spec.planted_weights[r] * sum / static_cast<double>(kBins);
      }
      rpkm[g] = std::exp(score);
      xs.emplace_back(std::move(v));
    }
    const std::vector<int> labels = binarize_expression(rpkm);
    CellCorpus corpus;
    corpus.cell_id = "C" + std::to_string(c + 1);
    corpus.provenance = Provenance::Synthetic;
    for (std::size_t g = 0; g < n; ++g)
      corpus.split(splits[g]).push_back(GeneSample{ids[g], std::move(xs[g]), labels[g], rpkm[g]});
    cells.push_back(std::move(corpus));
  }
  return cells;
}

RpkmTable rpkm_table(std::span<const CellCorpus> cells) {
  RpkmTable t;
  if (cells.empty()) return t;
  std::map<std::string, std::size_t> row_of;
  for (const auto& c : cells) t.cell_ids.push_back(c.cell_id);
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    for (Split s : {Split::Train, Split::Validation, Split::Test}) {
      for (const GeneSample& g : cells[ci].split(s)) {
        auto [it, inserted] = row_of.try_emplace(g.gene_id, t.gene_ids.size());
        if (inserted) {
          if (ci != 0) throw ConfigError("gene " + g.gene_id + " missing from cell " + cells[0].cell_id);
          t.gene_ids.push_back(g.gene_id);
          t.values.emplace_back(cells.size(), 0.0);
        }
        if (!g.rpkm) throw ConfigError("gene " + g.gene_id + " has no RPKM value");
        t.values[it->second][ci] = *g.rpkm;
      }
    }
  }
  return t;
}

// ---- directory layout ------------------------------------------------------------

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_corpus_dir(const std::filesystem::path& dir, std::span<const CellCorpus> cells) {
  if (cells.empty()) throw ConfigError("no cells to write");
  for (const CellCorpus& c : cells) {
    std::ostringstream os;
    for (Split s : {Split::Train, Split::Validation, Split::Test}) write_deepchrome_csv(os, c.split(s));
    write_file_atomic(dir / ("cell_" + c.cell_id + ".csv"), os.str());
  }
  std::ostringstream rp;
  write_rpkm_csv(rp, rpkm_table(cells));
  write_file_atomic(dir / "rpkm.csv", rp.str());

  std::vector<std::string> ids;
  std::vector<Split> splits;
  for (Split s : {Split::Train, Split::Validation, Split::Test})
    for (const GeneSample& g : cells.front().split(s)) {
      ids.push_back(g.gene_id);
      splits.push_back(s);
    }
  std::ostringstream sp;
  write_splits_csv(sp, ids, splits);
  write_file_atomic(dir / "splits.csv", sp.str());
}

CellCorpus load_cell(const std::filesystem::path& dir, std::string_view cell_id) {
  const auto splits = read_splits_csv(dir / "splits.csv");
  std::optional<RpkmTable> rpkm;
  std::size_t col = 0;
  std::map<std::string, std::size_t> rpkm_row;
  if (std::filesystem::exists(dir / "rpkm.csv")) {
    rpkm = read_rpkm_csv(dir / "rpkm.csv");
    col = rpkm->cell_index(cell_id);
    for (std::size_t g = 0; g < rpkm->gene_ids.size(); ++g) rpkm_row[rpkm->gene_ids[g]] = g;
  }
  CellCorpus corpus;
  corpus.cell_id = std::string(cell_id);
  corpus.provenance = Provenance::RealFormat;
  for (GeneSample& s : parse_deepchrome_csv(dir / ("cell_" + std::string(cell_id) + ".csv"))) {
    auto it = splits.find(s.gene_id);
    if (it == splits.end()) throw ParseError("gene " + s.gene_id + " has no split assignment");
    if (rpkm) {
      auto r = rpkm_row.find(s.gene_id);
      if (r != rpkm_row.end()) s.rpkm = rpkm->values[r->second][col];
    }
    corpus.split(it->second).push_back(std::move(s));
  }
  return corpus;
}

std::vector<std::string> list_cells(const std::filesystem::path& dir) {
  std::vector<std::string> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.starts_with("cell_") && name.ends_with(".csv")) out.push_back(name.substr(5, name.size() - 9));
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---- batching ------------------------------------------------------------------

Tensor stack_inputs(std::span<const GeneSample> samples) {
  std::vector<const GeneSample*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  return stack_inputs(std::span<const GeneSample* const>(ptrs));
}

Tensor stack_inputs(std::span<const GeneSample* const> samples) {
  if (samples.empty()) throw ConfigError("cannot stack an empty batch");
  std::vector<double> data;
  data.reserve(samples.size() * kHmRows * kBins);
  for (const GeneSample* s : samples) data.insert(data.end(), s->x.values().begin(), s->x.values().end());
  return Tensor({samples.size(), kHmRows, kBins}, std::move(data));
}

Tensor stack_labels(std::span<const GeneSample* const> samples) {
  if (samples.empty()) throw ConfigError("cannot stack an empty batch");
  std::vector<double> data;
  data.reserve(samples.size());
  for (const GeneSample* s : samples) data.push_back(s->label > 0 ? 1.0 : 0.0);
  return Tensor({samples.size()}, std::move(data));
}

}  // namespace hmexpr
