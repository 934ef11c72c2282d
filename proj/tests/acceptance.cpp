// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "hmexpr/cli.hpp"
#include "hmexpr/cross_cell.hpp"
#include "hmexpr/metrics.hpp"
#include "hmexpr/training.hpp"
#include "hmexpr/visualization.hpp"
#include "support.hpp"

using namespace hmexpr;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

// ---- shared fixture ---------------------------------------------------------------

const std::vector<CellCorpus>& fixture() {
  static const std::vector<CellCorpus> cells = [] {
    SyntheticSpec spec;
    spec.cells = 3;
    spec.genes_per_cell = 2000;
    return generate_synthetic_corpus(spec, 7);
  }();
  return cells;
}

std::vector<const CellCorpus*> fixture_ptrs() {
  std::vector<const CellCorpus*> p;
  for (const auto& c : fixture()) p.push_back(&c);
  return p;
}

double mean_test_auroc(const Classifier& m) {
  double sum = 0;
  for (const auto& c : fixture()) sum += evaluate_auroc(m, c.test);
  return sum / static_cast<double>(fixture().size());
}

TrainConfig arch_config(ArchKind k) {
  TrainConfig cfg;
  cfg.seed = 1;
  if (k == ArchKind::Linear) {
    cfg.learning_rate = 1e-2;
    cfg.max_epochs = 30;
  } else {
    cfg.max_epochs = 10;
  }
  return cfg;
}

const Classifier& linear_model() {
  static const Classifier m =
      train_classifier(fixture_ptrs(), ArchSpec::of(ArchKind::Linear), arch_config(ArchKind::Linear)).model;
  return m;
}

// ---- criteria ------------------------------------------------------------------------

Verdict gradient_fidelity() {
  double worst = 0;
  std::size_t failing = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto r = hmexpr::testing::make_random_graph(seed);
    r.graph.forward(r.params, r.feed);
    const double err = check_gradients(r.graph, r.loss);
    worst = std::max(worst, err);
    if (!(err < 1e-4)) ++failing;
  }

  std::mt19937_64 rng(42);
  const Classifier model = build_classifier(ArchSpec::of(ArchKind::Original), 3);
  Graph g;
  const NodeId x = g.input("x");
  const NodeId loss = g.cross_entropy(model.append(g, x, false), g.input("labels"));
  g.forward(model.params, {{"x", hmexpr::testing::random_tensor({2, 5, 100}, rng, 0, 3)},
                           {"labels", Tensor({2}, std::vector<double>{0, 1})}});
  GradCheckOptions opts;
  opts.max_entries_per_tensor = 2000;
  const double full = check_gradients(g, loss, opts);
  return {failing == 0 && full < 1e-4, "random graphs worst " + sci(worst) + " (" + std::to_string(failing) +
                                           " failing), original architecture " + sci(full)};
}

Verdict parameter_accounting() {
  const std::size_t lin = count_parameters(build_classifier(ArchSpec::of(ArchKind::Linear), 0));
  const std::size_t orig = count_parameters(build_classifier(ArchSpec::of(ArchKind::Original), 0));
  const std::size_t strided = count_parameters(build_classifier(ArchSpec::of(ArchKind::Strided), 0));
  const bool pass = lin == 12 && orig == hmexpr::testing::count_oracle(ArchKind::Original) && orig == 644177 &&
                    std::abs(static_cast<double>(strided) - 360000.0) <= 0.05 * 360000.0;
  return {pass, "linear " + std::to_string(lin) + ", original " + std::to_string(orig) + ", strided " +
                    std::to_string(strided)};
}

Verdict auroc_oracle() {
  std::mt19937_64 rng(2024);
  std::size_t mismatches = 0, done = 0;
  for (int inst = 0; inst < 1000; ++inst) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 50)(rng);
    const int levels = std::uniform_int_distribution<int>(2, 12)(rng);  // few levels force ties
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = std::uniform_int_distribution<int>(0, levels)(rng) / static_cast<double>(levels);
      labels[i] = std::bernoulli_distribution(0.5)(rng) ? 1 : -1;
    }
    labels[0] = 1;
    labels[1] = -1;
    if (auroc(scores, labels) != hmexpr::testing::pairwise_auroc(scores, labels)) ++mismatches;
    ++done;
  }
  return {mismatches == 0, std::to_string(done) + " instances, " + std::to_string(mismatches) + " mismatches"};
}

Verdict architecture_table() {
  std::map<ArchKind, double> result;
  std::string detail;
  for (ArchKind k : {ArchKind::Original, ArchKind::AvgPool, ArchKind::Strided, ArchKind::Linear}) {
    const double auc = k == ArchKind::Linear
                           ? mean_test_auroc(linear_model())
                           : mean_test_auroc(train_classifier(fixture_ptrs(), ArchSpec::of(k), arch_config(k)).model);
    result[k] = auc;
    detail += std::string(detail.empty() ? "" : ", ") + std::string(arch_name(k)) + " " + fmt(auc);
  }
  double lo = 1, hi = 0;
  for (const auto& [k, v] : result) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return {lo >= 0.90 && hi - lo <= 0.05, detail + "; spread " + fmt(hi - lo)};
}

struct GanFixture {
  Classifier classifier;
  GanResult gan;
};

const GanFixture& gan_fixture() {
  static const GanFixture f = [] {
    TrainConfig cfg;
    cfg.max_epochs = 8;
    cfg.seed = 1;
    GanFixture out{train_classifier(fixture_ptrs(), ArchSpec::of(ArchKind::Strided), cfg).model, {}};
    std::vector<GeneSample> real;
    for (const auto& c : fixture()) real.insert(real.end(), c.train.begin(), c.train.end());
    GanTrainConfig gc;
    gc.epochs = 60;
    gc.seed = 3;
    out.gan = train_gan(real, GanSpec{}, gc);
    return out;
  }();
  return f;
}

Verdict gan_realism() {
  const GanFixture& f = gan_fixture();
  std::vector<GeneSample> held;
  double max_real = 0;
  for (const auto& c : fixture()) {
    held.insert(held.end(), c.test.begin(), c.test.end());
    for (const auto& g : c.train)
      for (double v : g.x.values()) max_real = std::max(max_real, v);
  }
  const double real = mean_class_prob(f.classifier, held).positive;
  const double gan =
      mean_class_prob(f.classifier, f.gan.gan.generate(f.gan.gan.sample_latent(3000, 99))).positive;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, max_real);
  Tensor rnd({3000, kHmRows, kBins});
  for (double& v : rnd.data()) v = u(rng);
  const double random = mean_class_prob(f.classifier, rnd).positive;
  const bool pass = std::abs(gan - real) <= 0.05 && std::abs(random - real) >= 0.05;
  return {pass, "mean p_pos real " + fmt(real) + ", GAN " + fmt(gan) + ", random " + fmt(random) +
                    (f.gan.history.warnings.empty() ? "" : " (" + f.gan.history.warnings.front() + ")")};
}

Verdict mc_profiles() {
  const GanFixture& f = gan_fixture();
  const auto t0 = Clock::now();
  SelectionSpec spec;
  spec.samples = 100000;
  spec.k = 100;
  const McSelection sel = mc_sample_select(f.gan.gan, f.classifier, spec, 11);
  const ActivationProfile pos = activation_profile(sel.positive.items);
  const ActivationProfile neg = activation_profile(sel.negative.items);
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  const SyntheticSpec planted;
  const auto prom = promoter_rows(planted.planted_weights);
  const auto rep = repressor_rows(planted.planted_weights);
  auto separated = [&](const ActivationProfile& p, const std::vector<std::size_t>& high,
                       const std::vector<std::size_t>& low) {
    for (std::size_t h : high)
      for (std::size_t l : low)
        if (!(p.values[h] > p.values[l])) return false;
    return true;
  };
  std::string detail;
  for (const auto* p : {&pos, &neg}) {
    detail += p == &pos ? "positive [" : "; negative [";
    for (std::size_t r = 0; r < kHmRows; ++r) detail += (r ? " " : "") + fmt(p->values[r], 2);
    detail += "]";
  }
  const bool pass = sel.positive.items.size() == 100 && sel.negative.items.size() == 100 && !pos.degenerate &&
                    !neg.degenerate && separated(pos, prom, rep) && separated(neg, rep, prom) && secs < 120;
  return {pass, detail + " in " + fmt(secs, 1) + "s"};
}

Verdict cross_cell_grid() {
  SyntheticSpec spec;
  spec.cells = 4;
  spec.genes_per_cell = 1200;
  spec.cell_perturbations = {0.05, 0.2, 0.35, 0.5};
  const auto cells = generate_synthetic_corpus(spec, 7);
  std::vector<std::string> train_genes;
  for (const auto& g : cells.front().train) train_genes.push_back(g.gene_id);
  const CorrelationMatrix corr = correlation_matrix(rpkm_table(cells), train_genes);

  GridOptions opts;
  opts.categories = {Category::DeepChrome, Category::All};
  opts.train.max_epochs = 8;
  opts.seed = 7;
  const HeatmapMatrix heat = aggregate_heatmap(run_grid(cells, corr, opts).entries);
  const double base = heat.row_mean("deepchrome").value_or(0);
  const double incl = heat.row_mean("inclusive-all").value_or(0);

  std::map<std::string, Classifier> models;
  for (const auto& c : cells) models.emplace(c.cell_id, train_classifier(c, opts.arch, opts.train).model);
  const TrendlineFit fit = fit_trendline(test_on_rest(models, cells, corr));
  const bool pass = incl >= base - 0.02 && fit.r && std::abs(*fit.r) < 0.3;
  return {pass, "deepchrome " + fmt(base) + ", inclusive-all " + fmt(incl) + ", trendline slope " + sci(fit.slope) +
                    " r " + (fit.r ? fmt(*fit.r, 3) : std::string("undefined"))};
}

Verdict linear_weights() {
  const LinearWeightReport rep = export_linear_weights(linear_model());
  const SyntheticSpec planted;
  bool pass = true;
  for (std::size_t p : promoter_rows(planted.planted_weights))
    for (std::size_t r : repressor_rows(planted.planted_weights))
      if (!(rep.weights[p][1] > rep.weights[r][1])) pass = false;
  std::string detail = "w(+1)";
  for (std::size_t r = 0; r < kHmRows; ++r) detail += " " + std::string(kHmNames[r]) + "=" + fmt(rep.weights[r][1], 3);
  return {pass, detail};
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    files[e.path().filename().string()] = os.str();
  }
  return files;
}

Verdict cli_determinism() {
  const fs::path root = hmexpr::testing::scratch_dir("acceptance_cli");
  std::ostringstream sink;
  auto cli = [&](std::vector<std::string> args) { return run_command(args, sink, sink); };
  const std::string data = (root / "data").string();
  const std::string model = data + "/classifier.json", gan = data + "/gan.json";
  auto in = [&](std::vector<std::string> args, const std::string& dir) {
    args.insert(args.end(), {"--data", data, "--out", (root / dir).string()});
    return args;
  };
  const std::vector<std::vector<std::string>> commands = {
      {"synth", "--cells", "3", "--genes", "400", "--seed", "7", "--out", data},
      in({"train", "--arch", "linear", "--cell", "C1", "--lr", "1e-2", "--epochs", "5"}, "train"),
      in({"train", "--arch", "avgpool", "--cell", "C2", "--epochs", "1", "--best-of", "2", "--workers", "2"},
         "train_conv"),
      in({"train-gan", "--epochs", "3"}, "gan"),
      {"visualize-opt", "--model", model, "--gan", gan, "--lambda", "1", "--phi", "0.1", "--init", "hot-start",
       "--iterations", "20", "--out", (root / "opt").string()},
      {"visualize-mc", "--model", model, "--gan", gan, "--n", "5000", "--k", "20", "--workers", "2", "--out",
       (root / "mc").string()},
      in({"cross-cell", "--arch", "linear", "--epochs", "2"}, "cross"),
      in({"test-on-rest", "--arch", "linear", "--epochs", "2"}, "tor"),
      in({"metrics", "--model", model}, "metrics"),
      {"weights-report", "--model", model, "--out", (root / "weights").string()},
      in({"rpkm-diff", "--model-a", model, "--model-b", (root / "train_conv/classifier.json").string(), "--cell",
          "C1"},
         "rpkm"),
  };
  // The first commands provide inputs for the later ones.
  const std::vector<std::string> provides = {"", "train", "", "gan"};
  std::size_t checked = 0;
  std::string failures;
  for (std::size_t i = 0; i < commands.size(); ++i) {
    const auto& args = commands[i];
    if (cli(args) != 0) {
      failures += " " + args.front() + "(exit)";
      continue;
    }
    if (i < provides.size() && !provides[i].empty())
      for (const auto& e : fs::directory_iterator(root / provides[i]))
        fs::copy_file(e.path(), fs::path(data) / e.path().filename(), fs::copy_options::overwrite_existing);
    const fs::path out = args.back();
    fs::path manifest;
    for (const auto& e : fs::directory_iterator(out))
      if (e.path().string().ends_with(".manifest.json")) manifest = e.path();
    const fs::path again = out.string() + "_replay";
    if (manifest.empty() || cli({"replay", manifest.string(), "--out", again.string()}) != 0) {
      failures += " " + args.front() + "(replay)";
      continue;
    }
    if (snapshot(out) != snapshot(again)) failures += " " + args.front() + "(bytes)";
    ++checked;
  }
  return {failures.empty() && checked == commands.size(),
          std::to_string(checked) + "/" + std::to_string(commands.size()) + " subcommand runs byte-identical on replay" +
              (failures.empty() ? "" : "; failed:" + failures)};
}

Verdict round_trips() {
  std::size_t ok = 0, total = 0;
  for (const auto& c : fixture()) {
    for (Split s : {Split::Train, Split::Validation, Split::Test}) {
      std::ostringstream first;
      write_deepchrome_csv(first, c.split(s));
      std::istringstream in(first.str());
      const auto parsed = parse_deepchrome_csv(in);
      std::ostringstream second;
      write_deepchrome_csv(second, parsed);
      std::vector<GeneSample> expected = c.split(s);
      for (auto& g : expected) g.rpkm.reset();  // the corpus CSV carries no expression column
      ++total;
      if (parsed == expected && second.str() == first.str()) ++ok;
    }
  }
  {
    std::ostringstream first, second;
    write_rpkm_csv(first, rpkm_table(fixture()));
    std::istringstream in(first.str());
    write_rpkm_csv(second, read_rpkm_csv(in));
    ++total;
    if (first.str() == second.str()) ++ok;
  }
  const fs::path dir = hmexpr::testing::scratch_dir("acceptance_ckpt");
  for (ArchKind k : {ArchKind::Original, ArchKind::AvgPool, ArchKind::Strided, ArchKind::Linear}) {
    const Classifier m = build_classifier(ArchSpec::of(k), 5);
    const fs::path p = dir / (std::string(arch_name(k)) + ".json");
    save_checkpoint(m, p);
    const Classifier back = load_classifier(p);
    ++total;
    if (back.params == m.params && back.seed == m.seed && back.arch.kind == k && checkpoint_json(back) == checkpoint_json(m))
      ++ok;
  }
  {
    const Gan g = build_gan(GanSpec{}, 5);
    save_checkpoint(g, dir / "gan.json");
    const Gan back = load_gan(dir / "gan.json");
    ++total;
    if (back.generator == g.generator && back.discriminator == g.discriminator && checkpoint_json(back) == checkpoint_json(g))
      ++ok;
  }
  return {ok == total, std::to_string(ok) + "/" + std::to_string(total) + " identities hold"};
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<Verdict()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "gradient fidelity", 120, gradient_fidelity},
      {2, "parameter accounting", 5, parameter_accounting},
      {3, "AUROC oracle equivalence", 30, auroc_oracle},
      {4, "architecture comparison", 600, architecture_table},
      {5, "GAN sample realism", 600, gan_realism},
      {6, "Monte Carlo class profiles", 600, mc_profiles},
      {7, "cross-cell grid and test-on-rest", 900, cross_cell_grid},
      {8, "linear weight signs", 5, linear_weights},
      {9, "CLI determinism", 600, cli_determinism},
      {10, "round-trip integrity", 60, round_trips},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = Clock::now();
    Verdict v{false, ""};
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    const bool pass = v.pass && secs <= c.budget_seconds;
    if (!pass) ++failed;
    std::printf("criterion %2d %s %s: %s [%.1fs / %.0fs]\n", c.id, pass ? "PASS" : "FAIL", c.name, v.detail.c_str(),
                secs, c.budget_seconds);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
