#include "hmexpr/cross_cell.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hmexpr/errors.hpp"
#include "hmexpr/parallel.hpp"

namespace hmexpr {

Category parse_category(std::string_view s) {
  if (s == "deepchrome") return Category::DeepChrome;
  if (s == "all") return Category::All;
  if (s == "highly") return Category::Highly;
  if (s == "somewhat") return Category::Somewhat;
  if (s == "random") return Category::Random;
  throw ConfigError("unknown experiment category: " + std::string(s));
}

std::string_view category_name(Category c) {
  switch (c) {
    case Category::DeepChrome: return "deepchrome";
    case Category::All: return "all";
    case Category::Highly: return "highly";
    case Category::Somewhat: return "somewhat";
    case Category::Random: return "random";
  }
  return "?";
}

std::string ExperimentPlan::experiment() const {
  if (category == Category::DeepChrome) return "deepchrome";
  return std::string(inclusive ? "inclusive-" : "exclusive-") + std::string(category_name(category));
}

std::uint64_t random_plan_seed(std::uint64_t seed, std::string_view target) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : target) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return seed ^ h;
}

ExperimentPlan build_experiment_plan(std::span<const std::string> cells, const CorrelationMatrix& corr,
                                     const std::string& target, Category category, bool inclusive,
                                     std::uint64_t seed) {
  if (std::find(cells.begin(), cells.end(), target) == cells.end())
    throw ConfigError("target cell " + target + " is not among the cells");
  if (!corr.normalized) throw ConfigError("plan construction needs a normalized correlation matrix");
  for (const std::string& c : cells) corr.index_of(c);  // throws when missing

  ExperimentPlan plan;
  plan.target = target;
  plan.category = category;
  plan.inclusive = category == Category::DeepChrome ? true : inclusive;

  std::vector<std::string> picked;
  switch (category) {
    case Category::DeepChrome:
      picked = {target};
      break;
    case Category::All:
      for (const std::string& c : cells)
        if (c != target || inclusive) picked.push_back(c);
      break;
    case Category::Highly:
    case Category::Somewhat: {
      const double t = category == Category::Highly ? kHighlyThreshold : kSomewhatThreshold;
      plan.threshold = t;
      for (const std::string& c : cells) {
        if (c == target ? inclusive : corr.at(c, target) > t) picked.push_back(c);
      }
      break;
    }
    case Category::Random: {
      std::vector<std::string> others;
      for (const std::string& c : cells)
        if (c != target) others.push_back(c);
      if (others.size() < kRandomCells)
        throw ConfigError("random category needs at least " + std::to_string(kRandomCells) +
                          " non-target cells, have " + std::to_string(others.size()));
      const std::size_t draw = inclusive ? kRandomCells - 1 : kRandomCells;
      plan.random_seed = random_plan_seed(seed, target);
      std::mt19937_64 rng(*plan.random_seed);
      for (std::size_t i = 0; i < draw; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, others.size() - 1);
        std::swap(others[i], others[pick(rng)]);
      }
      others.resize(draw);
      for (const std::string& c : cells)
        if ((c == target && inclusive) || std::find(others.begin(), others.end(), c) != others.end())
          picked.push_back(c);
      break;
    }
  }
  plan.training_cells = std::move(picked);
  plan.status = plan.training_cells.empty() ? PlanStatus::Blank : PlanStatus::Runnable;
  return plan;
}

namespace {

const CellCorpus& find_corpus(std::span<const CellCorpus> corpora, std::string_view id) {
  for (const CellCorpus& c : corpora)
    if (c.cell_id == id) return c;
  throw ConfigError("no corpus for cell " + std::string(id));
}

}  // namespace

std::optional<double> run_plan(const ExperimentPlan& plan, std::span<const CellCorpus> corpora, const ArchSpec& arch,
                               const TrainConfig& cfg) {
  if (plan.status == PlanStatus::Blank) return std::nullopt;
  std::vector<const CellCorpus*> cells;
  for (const std::string& id : plan.training_cells) cells.push_back(&find_corpus(corpora, id));
  const CellCorpus& target = find_corpus(corpora, plan.target);
  const TrainResult trained = train_classifier(cells, arch, cfg);
  return evaluate_auroc(trained.model, target.test);
}

GridResult run_grid(std::span<const CellCorpus> corpora, const CorrelationMatrix& corr, const GridOptions& opts) {
  std::vector<std::string> cells;
  for (const CellCorpus& c : corpora) cells.push_back(c.cell_id);

  GridResult out;
  std::vector<bool> skipped;
  for (Category cat : opts.categories) {
    for (bool inclusive : {false, true}) {
      if (cat == Category::DeepChrome && inclusive) continue;
      for (const std::string& target : cells) {
        try {
          out.plans.push_back(build_experiment_plan(cells, corr, target, cat, inclusive, opts.seed));
          skipped.push_back(false);
        } catch (const ConfigError&) {
          if (cat != Category::Random) throw;
          ExperimentPlan p;
          p.target = target;
          p.category = cat;
          p.inclusive = inclusive;
          p.status = PlanStatus::Blank;
          out.plans.push_back(std::move(p));
          skipped.push_back(true);
        }
      }
    }
  }

  std::vector<std::optional<double>> aucs(out.plans.size());
  parallel_for(out.plans.size(), opts.workers,
               [&](std::size_t i) { aucs[i] = run_plan(out.plans[i], corpora, opts.arch, opts.train); });
  for (std::size_t i = 0; i < out.plans.size(); ++i) {
    const ExperimentPlan& p = out.plans[i];
    const std::string status = skipped[i] ? "skipped" : (p.status == PlanStatus::Blank ? "blank" : "ok");
    out.entries.push_back({p.experiment(), p.target, aucs[i], status});
  }
  return out;
}

void write_grid_csv(std::ostream& out, std::span<const GridEntry> entries) {
  out << "experiment,cell,auroc,status\n";
  for (const GridEntry& e : entries)
    out << e.experiment << ',' << e.cell << ',' << (e.auroc ? format_number(*e.auroc) : "") << ',' << e.status << '\n';
}

std::vector<GridEntry> read_grid_csv(std::istream& in) {
  std::vector<GridEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 || line.empty()) continue;
    std::stringstream ss(line);
    GridEntry e;
    std::string auc;
    if (!std::getline(ss, e.experiment, ',') || !std::getline(ss, e.cell, ',') || !std::getline(ss, auc, ',') ||
        !std::getline(ss, e.status, ','))
      throw ParseError("expected experiment,cell,auroc,status", line_no);
    if (!auc.empty()) {
      try {
        e.auroc = std::stod(auc);
      } catch (const std::exception&) {
        throw ParseError("invalid AUROC value", line_no);
      }
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::string plans_json(std::span<const ExperimentPlan> plans) {
  nlohmann::json arr = nlohmann::json::array();
  for (const ExperimentPlan& p : plans) {
    nlohmann::json j = {{"experiment", p.experiment()},
                        {"target", p.target},
                        {"category", category_name(p.category)},
                        {"inclusive", p.inclusive},
                        {"training_cells", p.training_cells},
                        {"status", p.status == PlanStatus::Blank ? "blank" : "runnable"}};
    if (p.threshold) j["threshold"] = *p.threshold;
    if (p.random_seed) j["random_seed"] = *p.random_seed;
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

std::optional<double> HeatmapMatrix::row_mean(std::string_view row) const {
  const auto it = std::find(rows.begin(), rows.end(), row);
  if (it == rows.end()) return std::nullopt;
  const auto& vals = raw[static_cast<std::size_t>(it - rows.begin())];
  double sum = 0;
  std::size_t n = 0;
  for (const auto& v : vals)
    if (v) {
      sum += *v;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

HeatmapMatrix aggregate_heatmap(std::span<const GridEntry> entries) {
  HeatmapMatrix h;
  for (const GridEntry& e : entries) {
    if (std::find(h.rows.begin(), h.rows.end(), e.experiment) == h.rows.end()) h.rows.push_back(e.experiment);
    if (std::find(h.cols.begin(), h.cols.end(), e.cell) == h.cols.end()) h.cols.push_back(e.cell);
  }
  h.raw.assign(h.rows.size(), std::vector<std::optional<double>>(h.cols.size()));
  for (const GridEntry& e : entries) {
    const auto r = static_cast<std::size_t>(std::find(h.rows.begin(), h.rows.end(), e.experiment) - h.rows.begin());
    const auto c = static_cast<std::size_t>(std::find(h.cols.begin(), h.cols.end(), e.cell) - h.cols.begin());
    if (e.auroc && !(*e.auroc >= 0 && *e.auroc <= 1)) throw ConfigError("AUROC outside [0,1] in grid results");
    h.raw[r][c] = e.auroc;
  }
  h.display = h.raw;
  for (std::size_t c = 0; c < h.cols.size(); ++c) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t r = 0; r < h.rows.size(); ++r)
      if (h.raw[r][c]) {
        lo = std::min(lo, *h.raw[r][c]);
        hi = std::max(hi, *h.raw[r][c]);
      }
    for (std::size_t r = 0; r < h.rows.size(); ++r)
      if (h.raw[r][c]) h.display[r][c] = hi > lo ? (*h.raw[r][c] - lo) / (hi - lo) : 1.0;
  }
  return h;
}

void write_heatmap_csv(std::ostream& out, const HeatmapMatrix& h, bool display) {
  const auto& m = display ? h.display : h.raw;
  out << "experiment";
  for (const auto& c : h.cols) out << ',' << c;
  out << '\n';
  for (std::size_t r = 0; r < h.rows.size(); ++r) {
    out << h.rows[r];
    for (const auto& v : m[r]) out << ',' << (v ? format_number(*v) : "");
    out << '\n';
  }
}

std::vector<TransferPoint> test_on_rest(const std::map<std::string, Classifier>& models,
                                        std::span<const CellCorpus> corpora, const CorrelationMatrix& corr,
                                        std::size_t workers) {
  std::vector<std::string> cells;
  for (const CellCorpus& c : corpora) {
    if (!models.contains(c.cell_id)) throw ConfigError("no model for cell " + c.cell_id);
    cells.push_back(c.cell_id);
  }
  const std::size_t n = cells.size();
  // auc[i][j]: model of cell i on the test split of cell j.
  std::vector<double> auc(n * n);
  parallel_for(n * n, workers, [&](std::size_t k) {
    auc[k] = evaluate_auroc(models.at(cells[k / n]), corpora[k % n].test);
  });
  std::vector<TransferPoint> out;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      out.push_back({cells[i], cells[j], corr.at(cells[i], cells[j]), auc[i * n + j] - auc[j * n + j]});
    }
  return out;
}

TrendlineFit fit_trendline(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ConfigError("trendline needs matching x and y");
  const std::size_t n = x.size();
  if (n < 2) throw ConfigError("trendline needs at least two points");
  TrendlineFit fit;
  fit.count = n;
  if (n == 2) {
    if (x[0] == x[1]) throw ConfigError("trendline x values have zero variance");
    fit.slope = (y[1] - y[0]) / (x[1] - x[0]);
    fit.intercept = y[0] - fit.slope * x[0];
    if (y[0] != y[1]) fit.r = fit.slope > 0 ? 1.0 : -1.0;
    return fit;
  }
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0) throw ConfigError("trendline x values have zero variance");
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  if (syy > 0) fit.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  return fit;
}

TrendlineFit fit_trendline(std::span<const TransferPoint> points) {
  std::vector<double> x, y;
  for (const TransferPoint& p : points) {
    x.push_back(p.correlation);
    y.push_back(p.delta_auroc);
  }
  return fit_trendline(x, y);
}

void write_transfer_csv(std::ostream& out, std::span<const TransferPoint> points) {
  out << "train_cell,test_cell,correlation,delta_auroc\n";
  for (const TransferPoint& p : points)
    out << p.train_cell << ',' << p.test_cell << ',' << format_number(p.correlation) << ','
        << format_number(p.delta_auroc) << '\n';
}

void write_trendline_csv(std::ostream& out, const TrendlineFit& fit) {
  out << "slope,intercept,r,count\n";
  out << format_number(fit.slope) << ',' << format_number(fit.intercept) << ',' << (fit.r ? format_number(*fit.r) : "")
      << ',' << fit.count << '\n';
}

}  // namespace hmexpr
