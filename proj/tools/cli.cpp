#include "hmexpr/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>

#include "hmexpr/cross_cell.hpp"
#include "hmexpr/data.hpp"
#include "hmexpr/errors.hpp"
#include "hmexpr/metrics.hpp"
#include "hmexpr/models.hpp"
#include "hmexpr/parallel.hpp"
#include "hmexpr/training.hpp"
#include "hmexpr/visualization.hpp"

#ifndef HMEXPR_VERSION
#define HMEXPR_VERSION "0.0.0"
#endif

namespace hmexpr {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::string tool_version() { return HMEXPR_VERSION; }

namespace {

/// Bad invocation detected after flag parsing, e.g. a defaulted input that does not exist.
class UsageError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<double> split_doubles(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("not a number: " + item);
    }
  }
  return out;
}

// ---- option state --------------------------------------------------------------------

struct Common {
  std::string out;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::string name;
};

struct TrainFlags {
  std::string arch = "original";
  std::string optimizer = "adam";
  double lr = 1e-3;
  std::size_t batch = 64;
  std::size_t epochs = 30;
  std::optional<double> dropout;
  std::optional<std::size_t> patience;

  TrainConfig config(std::uint64_t seed, std::size_t workers) const {
    TrainConfig cfg;
    cfg.optimizer = parse_optimizer(optimizer);
    cfg.learning_rate = lr;
    cfg.batch_size = batch;
    cfg.max_epochs = epochs;
    cfg.dropout = dropout;
    cfg.patience = patience;
    cfg.seed = seed;
    cfg.workers = workers;
    cfg.validate();
    return cfg;
  }
  ArchSpec arch_spec() const {
    ArchSpec a = ArchSpec::of(parse_arch(arch));
    a.validate();
    return a;
  }
};

struct State {
  Common common;
  TrainFlags train;
  // Per-subcommand storage for options whose default differs between subcommands.
  std::map<std::string, std::string> names;
  std::map<std::string, TrainFlags> train_flags;

  // synth
  std::size_t cells = 3;
  std::size_t genes = 2000;
  double noise = 0.35;
  double perturbation = 0.1;
  std::string cell_perturbations;
  std::string planted;

  // inputs
  std::string data;
  std::string cell;
  std::string model;
  std::string gan;
  std::string model_a;
  std::string model_b;

  // train
  std::size_t best_of = 1;

  // train-gan
  std::size_t gan_epochs = 60;
  double gan_lr = 5e-4;
  std::size_t gan_batch = 64;
  std::size_t latent = 64;

  // visualize-opt
  int target_class = 1;
  double lambda = 1.0;
  double phi = 0.1;
  double step = 0.1;
  std::size_t iterations = 200;
  std::string init = "hot-start";
  double init_scale = 1.0;
  std::string reference_gene;

  // visualize-mc
  std::size_t n = 100000;
  std::size_t k = 100;
  std::string mode = "topk";
  double threshold = 0.99;
  std::size_t mc_batch = 1000;
  bool dump_samples = false;

  // grid / transfer / metrics
  std::string categories = "deepchrome,all,highly,somewhat,random";
  std::string corr_split = "train";
  std::string split = "test";
  std::size_t bins = 10;

  // replay
  std::string manifest;
};

// ---- run context ------------------------------------------------------------------------

struct Run {
  std::string command;
  fs::path out_dir;
  ojson options = ojson::object();
  std::vector<std::string> outputs;
  std::vector<std::string> warnings;
  std::ostream* log = nullptr;

  void emit(const std::string& file, const std::string& content) {
    write_file_atomic(out_dir / file, content);
    outputs.push_back(file);
    *log << "wrote " << (out_dir / file).string() << "\n";
  }
  template <typename Fn>
  void emit_with(const std::string& file, Fn&& fn) {
    std::ostringstream os;
    fn(os);
    emit(file, os.str());
  }
  void finish(const std::string& manifest_name) {
    ojson m;
    m["tool"] = "hmexpr";
    m["version"] = tool_version();
    m["command"] = command;
    ojson opts = ojson::object();
    for (const auto& [key, value] : options.items())
      if (!value.is_null()) opts[key] = value;
    m["options"] = opts;
    m["outputs"] = outputs;
    m["warnings"] = warnings;
    emit(manifest_name, m.dump(2) + "\n");
  }
};

std::string default_out() {
  const char* env = std::getenv(kOutEnv);
  return env && *env ? env : ".";
}

/// Fills `value` from `fallback` when empty and checks the path exists.
void resolve_input(Run& run, std::string& value, const std::string& option, const fs::path& fallback) {
  if (value.empty()) value = fallback.string();
  if (!fs::exists(value)) throw UsageError("--" + option + ": " + value + " does not exist");
  run.options[option] = value;
}

std::vector<CellCorpus> load_cells(const fs::path& dir, std::vector<std::string> ids) {
  if (ids.empty()) ids = list_cells(dir);
  if (ids.empty()) throw UsageError("no cell_*.csv files in " + dir.string());
  std::vector<CellCorpus> out;
  for (const auto& id : ids) {
    if (!fs::exists(dir / ("cell_" + id + ".csv"))) throw UsageError("unknown cell " + id + " in " + dir.string());
    out.push_back(load_cell(dir, id));
  }
  return out;
}

std::vector<std::string> split_genes_of(const CellCorpus& cell, Split s) {
  std::vector<std::string> ids;
  for (const auto& g : cell.split(s)) ids.push_back(g.gene_id);
  return ids;
}

CorrelationMatrix corpus_correlation(const fs::path& data, const std::vector<CellCorpus>& cells, Split s) {
  const RpkmTable table = read_rpkm_csv(data / "rpkm.csv");
  return correlation_matrix(table, split_genes_of(cells.front(), s));
}

// ---- subcommands -----------------------------------------------------------------------

void cmd_synth(State& st, Run& run) {
  SyntheticSpec spec;
  spec.cells = st.cells;
  spec.genes_per_cell = st.genes;
  spec.noise = st.noise;
  spec.perturbation = st.perturbation;
  spec.cell_perturbations = split_doubles(st.cell_perturbations);
  if (!st.planted.empty()) {
    const auto w = split_doubles(st.planted);
    if (w.size() != kHmRows) throw UsageError("--planted needs 5 weights");
    std::copy(w.begin(), w.end(), spec.planted_weights.begin());
  }
  spec.validate();
  const auto cells = generate_synthetic_corpus(spec, st.common.seed);
  write_corpus_dir(run.out_dir, cells);
  for (const auto& c : cells) run.outputs.push_back("cell_" + c.cell_id + ".csv");
  run.outputs.push_back("rpkm.csv");
  run.outputs.push_back("splits.csv");
  *run.log << "wrote " << cells.size() << " cells to " << run.out_dir.string() << "\n";
  run.finish("synth.manifest.json");
}

void cmd_train(State& st, Run& run) {
  resolve_input(run, st.data, "data", run.out_dir);
  const ArchSpec arch = st.train.arch_spec();
  const TrainConfig cfg = st.train.config(st.common.seed, st.common.workers);
  if (st.best_of == 0) throw UsageError("--best-of must be positive");
  const auto cells = load_cells(st.data, split_list(st.cell));
  std::vector<const CellCorpus*> ptrs;
  for (const auto& c : cells) ptrs.push_back(&c);
  const BestOfK result = select_best_of_k(ptrs, arch, st.best_of, cfg);
  const std::string& name = st.common.name;
  run.emit(name + ".json", checkpoint_json(result.best.model));
  run.emit_with(name + ".history.csv", [&](std::ostream& os) { write_history_csv(os, result.best.history); });
  run.emit_with(name + ".eval.csv", [&](std::ostream& os) {
    os << "cell,split,auroc\n";
    for (const auto& c : cells)
      for (Split s : {Split::Validation, Split::Test})
        os << c.cell_id << "," << split_name(s) << "," << format_number(evaluate_auroc(result.best.model, c.split(s)))
           << "\n";
  });
  if (st.best_of > 1)
    run.emit_with(name + ".runs.csv", [&](std::ostream& os) {
      os << "run,seed,val_auroc,chosen\n";
      for (std::size_t i = 0; i < result.val_aurocs.size(); ++i)
        os << i << "," << st.common.seed + i << "," << format_number(result.val_aurocs[i]) << ","
           << (i == result.chosen ? 1 : 0) << "\n";
    });
  run.finish(name + ".manifest.json");
}

void cmd_train_gan(State& st, Run& run) {
  resolve_input(run, st.data, "data", run.out_dir);
  GanSpec spec;
  spec.latent_dim = st.latent;
  spec.validate();
  GanTrainConfig cfg;
  cfg.epochs = st.gan_epochs;
  cfg.learning_rate = st.gan_lr;
  cfg.batch_size = st.gan_batch;
  cfg.seed = st.common.seed;
  const auto cells = load_cells(st.data, split_list(st.cell));
  std::vector<GeneSample> real;
  for (const auto& c : cells) real.insert(real.end(), c.train.begin(), c.train.end());
  const GanResult result = train_gan(real, spec, cfg);
  const std::string& name = st.common.name;
  run.emit(name + ".json", checkpoint_json(result.gan));
  run.emit_with(name + ".history.csv", [&](std::ostream& os) { write_gan_history_csv(os, result.history); });
  run.warnings = result.history.warnings;
  for (const auto& w : run.warnings) *run.log << "warning: " << w << "\n";
  run.finish(name + ".manifest.json");
}

void write_matrix_csv(std::ostream& os, const Tensor& x) {
  os << "hm";
  for (std::size_t b = 0; b < kBins; ++b) os << ",bin_" << b;
  os << "\n";
  for (std::size_t r = 0; r < kHmRows; ++r) {
    os << kHmNames[r];
    for (std::size_t b = 0; b < kBins; ++b) os << "," << format_number(x[r * kBins + b]);
    os << "\n";
  }
}

void cmd_visualize_opt(State& st, Run& run) {
  resolve_input(run, st.model, "model", run.out_dir / "classifier.json");
  const Classifier clf = load_classifier(st.model);
  LossSpec spec;
  spec.target_class = st.target_class;
  spec.lambda = st.lambda;
  spec.phi = st.phi;
  spec.step = st.step;
  spec.iterations = st.iterations;
  spec.init_scale = st.init_scale;
  if (st.init == "random") spec.init = InitKind::RandomUniform;
  else if (st.init == "hot-start") spec.init = InitKind::GeneratorHotStart;
  else throw UsageError("--init must be random or hot-start");
  if (!st.reference_gene.empty()) {
    resolve_input(run, st.data, "data", run.out_dir);
    const auto ids = split_list(st.cell);
    if (ids.size() != 1) throw UsageError("--reference-gene needs exactly one --cell");
    const CellCorpus cell = load_cell(st.data, ids.front());
    for (Split s : {Split::Train, Split::Validation, Split::Test})
      for (const auto& g : cell.split(s))
        if (g.gene_id == st.reference_gene) spec.reference = g.x;
    if (!spec.reference) throw UsageError("gene " + st.reference_gene + " not found in cell " + ids.front());
  }
  std::optional<Gan> gan;
  if (!st.gan.empty() || spec.lambda > 0 || (spec.init == InitKind::GeneratorHotStart && !spec.reference)) {
    resolve_input(run, st.gan, "gan", run.out_dir / "gan.json");
    gan = load_gan(st.gan);
  }
  spec.validate(gan.has_value());
  const OptimizeResult r = optimize_input(clf, gan ? &*gan : nullptr, spec, st.common.seed);
  const std::string& name = st.common.name;
  run.emit_with(name + ".input.csv", [&](std::ostream& os) { write_matrix_csv(os, r.best); });
  run.emit_with(name + ".trajectory.csv", [&](std::ostream& os) { write_trajectory_csv(os, r.trajectory); });
  run.emit_with(name + ".summary.csv", [&](std::ostream& os) {
    os << "key,value\nbest_iteration," << r.best_iteration << "\nbest_probability,"
       << format_number(r.best_probability) << "\n";
  });
  run.finish(name + ".manifest.json");
}

void cmd_visualize_mc(State& st, Run& run) {
  resolve_input(run, st.model, "model", run.out_dir / "classifier.json");
  resolve_input(run, st.gan, "gan", run.out_dir / "gan.json");
  const Classifier clf = load_classifier(st.model);
  const Gan gan = load_gan(st.gan);
  SelectionSpec spec;
  spec.samples = st.n;
  spec.k = st.k;
  spec.threshold = st.threshold;
  spec.batch = st.mc_batch;
  spec.workers = st.common.workers;
  if (st.mode == "topk") spec.mode = SelectionMode::TopK;
  else if (st.mode == "threshold") spec.mode = SelectionMode::Threshold;
  else throw UsageError("--mode must be topk or threshold");
  spec.validate();
  const McSelection sel = mc_sample_select(gan, clf, spec, st.common.seed);
  const ActivationProfile pos = activation_profile(sel.positive.items);
  const ActivationProfile neg = activation_profile(sel.negative.items);
  for (const auto* c : {&sel.positive, &sel.negative})
    if (c->exhausted)
      run.warnings.push_back("class " + std::to_string(c->target_class) + ": only " + std::to_string(c->items.size()) +
                             " samples above threshold");
  if (pos.degenerate || neg.degenerate) run.warnings.push_back("degenerate activation profile");
  for (const auto& w : run.warnings) *run.log << "warning: " << w << "\n";
  const std::string& name = st.common.name;
  run.emit_with(name + ".profiles.csv", [&](std::ostream& os) { write_profiles_csv(os, pos, neg); });
  run.emit_with(name + ".selected.csv", [&](std::ostream& os) {
    os << "class,rank,index,probability\n";
    for (const auto* c : {&sel.positive, &sel.negative})
      for (std::size_t i = 0; i < c->items.size(); ++i)
        os << c->target_class << "," << i + 1 << "," << c->items[i].index << ","
           << format_number(c->items[i].probability) << "\n";
  });
  if (st.dump_samples) {
    for (const auto* c : {&sel.positive, &sel.negative}) {
      std::vector<GeneSample> samples;
      for (const auto& item : c->items)
        samples.push_back({"mc_" + std::to_string(item.index), item.x, c->target_class, std::nullopt});
      run.emit_with(name + (c->target_class > 0 ? ".positive.csv" : ".negative.csv"),
                    [&](std::ostream& os) { write_deepchrome_csv(os, samples); });
    }
  }
  run.finish(name + ".manifest.json");
}

void cmd_cross_cell(State& st, Run& run) {
  resolve_input(run, st.data, "data", run.out_dir);
  GridOptions opts;
  opts.categories.clear();
  for (const auto& c : split_list(st.categories)) opts.categories.push_back(parse_category(c));
  if (opts.categories.empty()) throw UsageError("--categories is empty");
  opts.arch = st.train.arch_spec();
  opts.train = st.train.config(st.common.seed, 1);
  opts.seed = st.common.seed;
  opts.workers = st.common.workers;
  const auto cells = load_cells(st.data, split_list(st.cell));
  const CorrelationMatrix corr = corpus_correlation(st.data, cells, parse_split(st.corr_split));
  const GridResult grid = run_grid(cells, corr, opts);
  const HeatmapMatrix heat = aggregate_heatmap(grid.entries);
  const std::string& name = st.common.name;
  run.emit_with(name + ".correlation.csv", [&](std::ostream& os) { write_correlation_csv(os, corr); });
  run.emit_with(name + ".grid.csv", [&](std::ostream& os) { write_grid_csv(os, grid.entries); });
  run.emit_with(name + ".heatmap_raw.csv", [&](std::ostream& os) { write_heatmap_csv(os, heat, false); });
  run.emit_with(name + ".heatmap.csv", [&](std::ostream& os) { write_heatmap_csv(os, heat, true); });
  run.emit(name + ".plans.json", plans_json(grid.plans));
  run.emit_with(name + ".summary.csv", [&](std::ostream& os) {
    os << "experiment,mean_auroc\n";
    for (const auto& row : heat.rows) {
      const auto m = heat.row_mean(row);
      os << row << "," << (m ? format_number(*m) : "") << "\n";
    }
  });
  for (const auto& e : grid.entries)
    if (e.status == "skipped") {
      run.warnings.push_back(e.experiment + " skipped: fewer than " + std::to_string(kRandomCells) + " other cells");
      break;
    }
  run.finish(name + ".manifest.json");
}

void cmd_test_on_rest(State& st, Run& run) {
  resolve_input(run, st.data, "data", run.out_dir);
  const ArchSpec arch = st.train.arch_spec();
  const TrainConfig cfg = st.train.config(st.common.seed, 1);
  const auto cells = load_cells(st.data, split_list(st.cell));
  if (cells.size() < 2) throw UsageError("test-on-rest needs at least two cells");
  const CorrelationMatrix corr = corpus_correlation(st.data, cells, parse_split(st.corr_split));
  std::vector<std::optional<Classifier>> trained(cells.size());
  parallel_for(cells.size(), st.common.workers,
               [&](std::size_t i) { trained[i] = train_classifier(cells[i], arch, cfg).model; });
  std::map<std::string, Classifier> models;
  for (std::size_t i = 0; i < cells.size(); ++i) models.emplace(cells[i].cell_id, std::move(*trained[i]));
  const auto points = test_on_rest(models, cells, corr, st.common.workers);
  const TrendlineFit fit = fit_trendline(points);
  const std::string& name = st.common.name;
  run.emit_with(name + ".correlation.csv", [&](std::ostream& os) { write_correlation_csv(os, corr); });
  run.emit_with(name + ".points.csv", [&](std::ostream& os) { write_transfer_csv(os, points); });
  run.emit_with(name + ".trendline.csv", [&](std::ostream& os) { write_trendline_csv(os, fit); });
  run.finish(name + ".manifest.json");
}

void cmd_metrics(State& st, Run& run) {
  resolve_input(run, st.data, "data", run.out_dir);
  const auto cells = load_cells(st.data, split_list(st.cell));
  const RpkmTable table = read_rpkm_csv(fs::path(st.data) / "rpkm.csv");
  const std::string& name = st.common.name;
  for (Split s : {Split::Train, Split::Validation, Split::Test}) {
    const CorrelationMatrix corr = correlation_matrix(table, split_genes_of(cells.front(), s));
    for (const auto& d : corr.degenerate_cells) run.warnings.push_back("zero variance in " + d);
    run.emit_with(name + ".correlation_" + std::string(split_name(s)) + ".csv",
                  [&](std::ostream& os) { write_correlation_csv(os, corr); });
  }
  if (!st.model.empty()) {
    resolve_input(run, st.model, "model", {});
    const Classifier clf = load_classifier(st.model);
    run.emit_with(name + ".auroc.csv", [&](std::ostream& os) {
      os << "cell,split,auroc,mean_p_pos,mean_p_neg\n";
      for (const auto& c : cells)
        for (Split s : {Split::Train, Split::Validation, Split::Test}) {
          const ClassMeans m = mean_class_prob(clf, c.split(s));
          os << c.cell_id << "," << split_name(s) << "," << format_number(evaluate_auroc(clf, c.split(s))) << ","
             << format_number(m.positive) << "," << format_number(m.negative) << "\n";
        }
    });
  }
  run.finish(name + ".manifest.json");
}

void cmd_weights_report(State& st, Run& run) {
  resolve_input(run, st.model, "model", run.out_dir / "classifier.json");
  const LinearWeightReport report = export_linear_weights(load_classifier(st.model));
  run.emit_with(st.common.name + ".weights.csv", [&](std::ostream& os) { write_weights_csv(os, report); });
  run.finish(st.common.name + ".manifest.json");
}

void cmd_rpkm_diff(State& st, Run& run) {
  resolve_input(run, st.model_a, "model-a", {});
  resolve_input(run, st.model_b, "model-b", {});
  resolve_input(run, st.data, "data", run.out_dir);
  const auto ids = split_list(st.cell);
  if (ids.size() != 1) throw UsageError("rpkm-diff needs exactly one --cell");
  const CellCorpus cell = load_cells(st.data, ids).front();
  const auto bins = rpkm_binned_diff(load_classifier(st.model_a), load_classifier(st.model_b),
                                     cell.split(parse_split(st.split)), st.bins);
  run.emit_with(st.common.name + ".bins.csv", [&](std::ostream& os) { write_bins_csv(os, bins); });
  run.finish(st.common.name + ".manifest.json");
}

// ---- wiring --------------------------------------------------------------------------------

using Handler = void (*)(State&, Run&);

struct Subcommand {
  CLI::App* app;
  Handler handler;
};

void add_common(CLI::App* sub, State& st, const std::string& default_name) {
  sub->add_option("--out", st.common.out, "Output directory (default $" + std::string(kOutEnv) + " or .)");
  sub->add_option("--seed", st.common.seed, "Random seed")->capture_default_str();
  sub->add_option("--workers", st.common.workers, "Upper bound on worker threads")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  if (!default_name.empty()) {
    std::string& name = st.names[sub->get_name()] = default_name;
    sub->add_option("--name", name, "Output file stem")->capture_default_str();
  }
}

void add_data(CLI::App* sub, State& st, bool cell_required = false) {
  sub->add_option("--data", st.data, "Corpus directory (default: output directory)")->check(CLI::ExistingDirectory);
  auto* c = sub->add_option("--cell", st.cell, "Comma separated cell ids (default: all)");
  if (cell_required) c->required();
}

void add_train_flags(CLI::App* sub, State& st, const std::string& arch) {
  TrainFlags& t = st.train_flags[sub->get_name()];
  t.arch = arch;
  sub->add_option("--arch", t.arch, "original, avgpool, strided or linear")->capture_default_str();
  sub->add_option("--optimizer", t.optimizer, "adam or sgd")->capture_default_str();
  sub->add_option("--lr", t.lr, "Learning rate")->capture_default_str();
  sub->add_option("--batch", t.batch, "Minibatch size")->capture_default_str();
  sub->add_option("--epochs", t.epochs, "Maximum epochs")->capture_default_str();
  sub->add_option("--dropout", t.dropout, "Dropout override");
  sub->add_option("--patience", t.patience, "Early stopping patience");
}

std::vector<Subcommand> build_cli(CLI::App& app, State& st) {
  std::vector<Subcommand> subs;
  auto add = [&](const char* name, const char* desc, Handler h) {
    CLI::App* s = app.add_subcommand(name, desc);
    subs.push_back({s, h});
    return s;
  };

  auto* synth = add("synth", "Generate a planted multi-cell corpus", cmd_synth);
  add_common(synth, st, "");
  synth->add_option("--cells", st.cells, "Number of cells")->capture_default_str();
  synth->add_option("--genes", st.genes, "Genes per cell")->capture_default_str();
  synth->add_option("--noise", st.noise, "Label noise scale")->capture_default_str();
  synth->add_option("--perturbation", st.perturbation, "Per-cell weight perturbation")->capture_default_str();
  synth->add_option("--cell-perturbations", st.cell_perturbations, "Comma separated per-cell perturbations");
  synth->add_option("--planted", st.planted, "Comma separated planted weights, one per mark");

  auto* train = add("train", "Train a classifier on one or more cells", cmd_train);
  add_common(train, st, "classifier");
  add_data(train, st, true);
  add_train_flags(train, st, "original");
  train->add_option("--best-of", st.best_of, "Independent runs; keeps the best validation AUROC")
      ->capture_default_str();

  auto* gan = add("train-gan", "Train the generative model on pooled train splits", cmd_train_gan);
  add_common(gan, st, "gan");
  add_data(gan, st);
  gan->add_option("--epochs", st.gan_epochs, "Epochs")->capture_default_str();
  gan->add_option("--lr", st.gan_lr, "Learning rate")->capture_default_str();
  gan->add_option("--batch", st.gan_batch, "Minibatch size")->capture_default_str();
  gan->add_option("--latent", st.latent, "Latent dimension")->capture_default_str();

  auto* opt = add("visualize-opt", "Optimize an input toward a class", cmd_visualize_opt);
  add_common(opt, st, "opt");
  opt->add_option("--model", st.model, "Classifier checkpoint (default: <out>/classifier.json)")
      ->check(CLI::ExistingFile);
  opt->add_option("--gan", st.gan, "GAN checkpoint (default: <out>/gan.json when needed)")->check(CLI::ExistingFile);
  opt->add_option("--class", st.target_class, "Target class, 1 or -1")
      ->capture_default_str()
      ->check(CLI::IsMember({-1, 1}));
  opt->add_option("--lambda", st.lambda, "Discriminator term weight")->capture_default_str();
  opt->add_option("--phi", st.phi, "Deviation term weight")->capture_default_str();
  opt->add_option("--step", st.step, "Gradient step size")->capture_default_str();
  opt->add_option("--iterations", st.iterations, "Gradient steps")->capture_default_str();
  opt->add_option("--init", st.init, "random or hot-start")->capture_default_str();
  opt->add_option("--init-scale", st.init_scale, "Upper bound of the uniform start")->capture_default_str();
  opt->add_option("--reference-gene", st.reference_gene, "Gene used as the deviation reference");
  add_data(opt, st);

  auto* mc = add("visualize-mc", "Monte Carlo selection of generated samples", cmd_visualize_mc);
  add_common(mc, st, "mc");
  mc->add_option("--model", st.model, "Classifier checkpoint (default: <out>/classifier.json)")
      ->check(CLI::ExistingFile);
  mc->add_option("--gan", st.gan, "GAN checkpoint (default: <out>/gan.json)")->check(CLI::ExistingFile);
  mc->add_option("--n", st.n, "Samples to generate")->capture_default_str();
  mc->add_option("--k", st.k, "Samples kept per class")->capture_default_str();
  mc->add_option("--mode", st.mode, "topk or threshold")->capture_default_str();
  mc->add_option("--threshold", st.threshold, "Probability threshold")->capture_default_str();
  mc->add_option("--batch", st.mc_batch, "Generation batch size")->capture_default_str();
  mc->add_flag("--dump-samples", st.dump_samples, "Also write the selected samples as corpus CSVs");

  auto* cc = add("cross-cell", "Run the cross-cell experiment grid", cmd_cross_cell);
  add_common(cc, st, "cross");
  add_data(cc, st);
  add_train_flags(cc, st, "avgpool");
  cc->add_option("--categories", st.categories, "Comma separated experiment categories")->capture_default_str();
  cc->add_option("--corr-split", st.corr_split, "Split whose genes define cell correlation")->capture_default_str();

  auto* tor = add("test-on-rest", "Per-cell models evaluated on every other cell", cmd_test_on_rest);
  add_common(tor, st, "transfer");
  add_data(tor, st);
  add_train_flags(tor, st, "avgpool");
  tor->add_option("--corr-split", st.corr_split, "Split whose genes define cell correlation")->capture_default_str();

  auto* met = add("metrics", "Correlation matrices and optional model AUROCs", cmd_metrics);
  add_common(met, st, "metrics");
  add_data(met, st);
  met->add_option("--model", st.model, "Classifier checkpoint to evaluate")->check(CLI::ExistingFile);

  auto* wr = add("weights-report", "Export linear model weights", cmd_weights_report);
  add_common(wr, st, "weights");
  wr->add_option("--model", st.model, "Linear checkpoint (default: <out>/classifier.json)")
      ->check(CLI::ExistingFile);

  auto* rd = add("rpkm-diff", "Prediction differences binned by expression level", cmd_rpkm_diff);
  add_common(rd, st, "rpkm");
  rd->add_option("--model-a", st.model_a, "First classifier")->required()->check(CLI::ExistingFile);
  rd->add_option("--model-b", st.model_b, "Second classifier")->required()->check(CLI::ExistingFile);
  add_data(rd, st, true);
  rd->add_option("--split", st.split, "Split to evaluate")->capture_default_str();
  rd->add_option("--bins", st.bins, "Number of expression bins")->capture_default_str();

  return subs;
}

/// Every option of `sub` except --out and --help in declaration order. Unset
/// optional values are null until resolved and dropped from the manifest.
ojson canonical_options(const CLI::App* sub) {
  ojson opts = ojson::object();
  for (const CLI::Option* o : sub->get_options()) {
    const std::string name = o->get_single_name();
    if (name == "help" || name == "out") continue;
    if (o->get_expected_min() == 0) {
      opts[name] = o->count() > 0;
      continue;
    }
    const std::string value = o->count() > 0 ? o->results().front() : o->get_default_str();
    opts[name] = value.empty() ? ojson() : ojson(value);
  }
  return opts;
}

std::vector<std::string> replay_args(const fs::path& manifest, const std::string& out) {
  ojson m;
  try {
    std::ifstream in(manifest);
    m = ojson::parse(in);
  } catch (const std::exception& e) {
    throw ParseError(manifest.string() + ": " + e.what());
  }
  if (!m.contains("command") || !m.contains("options") || !m["options"].is_object())
    throw ParseError(manifest.string() + ": not an hmexpr manifest");
  std::vector<std::string> args{m["command"].get<std::string>()};
  for (const auto& [key, value] : m["options"].items()) {
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back("--" + key);
    } else {
      args.push_back("--" + key);
      args.push_back(value.get<std::string>());
    }
  }
  args.push_back("--out");
  args.push_back(out);
  return args;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  State st;
  CLI::App app("Histone modification to gene expression toolkit", "hmexpr");
  app.set_version_flag("--version", tool_version());
  app.require_subcommand(1);
  const auto subs = build_cli(app, st);
  CLI::App* replay = app.add_subcommand("replay", "Rerun the command recorded in a manifest");
  replay->add_option("manifest", st.manifest, "Manifest JSON")->required()->check(CLI::ExistingFile);
  replay->add_option("--out", st.common.out, "Output directory (default $" + std::string(kOutEnv) + " or .)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForVersion& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "hmexpr: error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (replay->parsed()) {
      const std::string dir = st.common.out.empty() ? default_out() : st.common.out;
      return run_command(replay_args(st.manifest, dir), out, err);
    }
    for (const auto& s : subs) {
      if (!s.app->parsed()) continue;
      Run run;
      run.command = s.app->get_name();
      run.out_dir = st.common.out.empty() ? default_out() : st.common.out;
      run.options = canonical_options(s.app);
      run.log = &out;
      if (auto it = st.names.find(run.command); it != st.names.end()) st.common.name = it->second;
      if (auto it = st.train_flags.find(run.command); it != st.train_flags.end()) st.train = it->second;
      fs::create_directories(run.out_dir);
      s.handler(st, run);
      return kExitOk;
    }
    err << "hmexpr: error: no subcommand\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "hmexpr: error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const TrainingDiverged& e) {
    err << "hmexpr: error: " << e.what() << " after " << e.history().train_loss.size() << " epochs\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "hmexpr: error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int run_command(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_command(args, std::cout, std::cerr);
}

}  // namespace hmexpr
