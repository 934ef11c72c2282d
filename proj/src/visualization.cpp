#include "hmexpr/visualization.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

#include "hmexpr/errors.hpp"
#include "hmexpr/metrics.hpp"
#include "hmexpr/parallel.hpp"

namespace hmexpr {

// ---- input optimization ---------------------------------------------------------

void LossSpec::validate(bool has_gan) const {
  if (target_class != 1 && target_class != -1) throw ConfigError("target class must be +1 or -1");
  if (!(lambda >= 0) || !(phi >= 0)) throw ConfigError("lambda and phi must be non-negative");
  if (lambda > 0 && !has_gan) throw ConfigError("lambda > 0 requires a discriminator");
  if (phi > 0 && init != InitKind::GeneratorHotStart) throw ConfigError("phi > 0 requires a generator hot start");
  if (init == InitKind::GeneratorHotStart && !reference && !has_gan)
    throw ConfigError("hot start needs a generator or a reference input");
  if (!(step > 0) || !std::isfinite(step)) throw ConfigError("step size must be positive");
  if (!(init_scale > 0)) throw ConfigError("init scale must be positive");
}

OptimizeResult optimize_input(const Classifier& classifier, const Gan* gan, const LossSpec& spec, std::uint64_t seed) {
  spec.validate(gan != nullptr);
  const Shape single{1, kHmRows, kBins};

  Tensor x(single);
  Tensor reference(single);
  if (spec.init == InitKind::GeneratorHotStart) {
    if (spec.reference) {
      reference = spec.reference->to_tensor().reshaped(single);
    } else {
      reference = gan->generate(gan->sample_latent(1, seed)).reshaped(single);
    }
    x = reference;
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, spec.init_scale);
    for (double& v : x.data()) v = u(rng);
  }

  Graph g;
  const NodeId in = g.input("x");
  const NodeId cls = g.input("class");
  const NodeId probs = classifier.append(g, in, false);
  const NodeId clf_loss = g.cross_entropy(probs, cls);
  NodeId total = clf_loss;
  std::optional<NodeId> disc_loss, dev_loss;
  ParamSet params = classifier.params;
  if (spec.lambda > 0) {
    const NodeId ones = g.input("ones");
    disc_loss = g.bce(gan->append_discriminator(g, in), ones);
    total = g.add(total, g.scale(*disc_loss, spec.lambda));
    params = params.merged(gan->discriminator);
  }
  if (spec.phi > 0) {
    const NodeId ref = g.input("reference");
    dev_loss = g.l2_distance(in, ref);
    total = g.add(total, g.scale(*dev_loss, spec.phi));
  }
  const std::size_t class_index = spec.target_class > 0 ? 1 : 0;

  OptimizeResult result;
  double best_total = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0;; ++it) {
    Feed feed{{"x", x}, {"class", Tensor({1}, static_cast<double>(class_index))}};
    if (disc_loss) feed.emplace("ones", Tensor({1}, 1.0));
    if (dev_loss) feed.emplace("reference", reference);
    g.forward(params, feed);
    LossTerms terms;
    terms.classifier = g.value(clf_loss)[0];
    if (disc_loss) terms.discriminator = g.value(*disc_loss)[0];
    if (dev_loss) terms.deviation = g.value(*dev_loss)[0];
    terms.total = g.value(total)[0];
    result.trajectory.push_back(terms);
    if (terms.total < best_total) {
      best_total = terms.total;
      result.best = x.reshaped({kHmRows, kBins});
      result.best_iteration = it;
      result.best_probability = g.value(probs)[class_index];
    }
    if (it == spec.iterations) break;
    g.backward(total);
    const Tensor& grad = g.grad(in);
    for (std::size_t k = 0; k < x.size(); ++k) x[k] -= spec.step * grad[k];
  }
  return result;
}

void write_trajectory_csv(std::ostream& out, std::span<const LossTerms> trajectory) {
  out << "iteration,classifier,discriminator,deviation,total\n";
  for (std::size_t i = 0; i < trajectory.size(); ++i) {
    const LossTerms& t = trajectory[i];
    out << i << ',' << format_number(t.classifier) << ',' << format_number(t.discriminator) << ','
        << format_number(t.deviation) << ',' << format_number(t.total) << '\n';
  }
}

// ---- Monte Carlo selection ------------------------------------------------------

void SelectionSpec::validate() const {
  if (samples == 0 || k == 0 || batch == 0) throw ConfigError("selection sizes must be positive");
  if (k > samples) throw ConfigError("k must not exceed the sample budget");
  if (mode == SelectionMode::Threshold && !(threshold > 0 && threshold < 1))
    throw ConfigError("threshold must lie in (0,1)");
}

Tensor mc_batch(const Gan& gan, std::uint64_t seed, std::size_t batch_index, std::size_t count) {
  // splitmix64 of (seed, batch) keeps batches independent of worker count.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (batch_index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return gan.generate(gan.sample_latent(count, z));
}

namespace {

struct Candidate {
  std::size_t index;
  double probability;
  std::vector<double> values;
};

// Strict "a ranks ahead of b": higher probability, then earlier generation.
bool ranks_ahead(const Candidate& a, const Candidate& b) {
  if (a.probability != b.probability) return a.probability > b.probability;
  return a.index < b.index;
}

struct BatchScores {
  std::vector<Candidate> positive;
  std::vector<Candidate> negative;
};

// Keeps the k best of `items` (top-k) or the qualifying ones (threshold).
void keep_best(std::vector<Candidate>& items, std::size_t k) {
  if (items.size() <= k) return;
  std::nth_element(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(k), items.end(), ranks_ahead);
  items.resize(k);
}

}  // namespace

McSelection mc_sample_select(const Gan& gan, const Classifier& classifier, const SelectionSpec& spec,
                             std::uint64_t seed) {
  spec.validate();
  const std::size_t per = kHmRows * kBins;
  const std::size_t batches = (spec.samples + spec.batch - 1) / spec.batch;
  const bool top_k = spec.mode == SelectionMode::TopK;

  std::vector<Candidate> pos_keep, neg_keep;
  std::size_t pos_found = 0, neg_found = 0;
  const std::size_t round = std::max<std::size_t>(spec.workers, 1);

  for (std::size_t first = 0; first < batches; first += round) {
    const std::size_t in_round = std::min(round, batches - first);
    std::vector<BatchScores> scored(in_round);
    parallel_for(in_round, spec.workers, [&](std::size_t r) {
      const std::size_t b = first + r;
      const std::size_t start = b * spec.batch;
      const std::size_t count = std::min(spec.batch, spec.samples - start);
      const Tensor x = mc_batch(gan, seed, b, count);
      const Tensor p = predict_proba(classifier, x);
      BatchScores& out = scored[r];
      for (std::size_t i = 0; i < count; ++i) {
        const double p_neg = p[2 * i], p_pos = p[2 * i + 1];
        const bool take_pos = top_k || p_pos > spec.threshold;
        const bool take_neg = top_k || p_neg > spec.threshold;
        if (!take_pos && !take_neg) continue;
        std::vector<double> v(x.data().begin() + static_cast<std::ptrdiff_t>(i * per),
                              x.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
        if (take_pos) out.positive.push_back({start + i, p_pos, v});
        if (take_neg) out.negative.push_back({start + i, p_neg, std::move(v)});
      }
      if (top_k) {
        keep_best(out.positive, spec.k);
        keep_best(out.negative, spec.k);
      }
    });

    // Deterministic merge in batch order.
    for (BatchScores& s : scored) {
      for (auto& c : s.positive)
        if (top_k || pos_found < spec.k) {
          pos_keep.push_back(std::move(c));
          ++pos_found;
        }
      for (auto& c : s.negative)
        if (top_k || neg_found < spec.k) {
          neg_keep.push_back(std::move(c));
          ++neg_found;
        }
    }
    if (top_k) {
      keep_best(pos_keep, spec.k);
      keep_best(neg_keep, spec.k);
    } else if (pos_found >= spec.k && neg_found >= spec.k) {
      break;
    }
  }

  auto finish = [&](std::vector<Candidate>& keep, int cls) {
    ClassSelection sel;
    sel.target_class = cls;
    if (top_k) {
      std::sort(keep.begin(), keep.end(), ranks_ahead);
    } else {
      sel.exhausted = keep.size() < spec.k;
    }
    for (Candidate& c : keep) sel.items.push_back({c.index, c.probability, HMMatrix(std::move(c.values))});
    return sel;
  };
  McSelection out;
  out.positive = finish(pos_keep, 1);
  out.negative = finish(neg_keep, -1);
  return out;
}

// ---- profiles and reports ---------------------------------------------------------

ActivationProfile activation_profile(std::span<const HMMatrix> samples) {
  if (samples.empty()) throw ConfigError("activation profile needs at least one sample");
  ActivationProfile p;
  for (const HMMatrix& m : samples)
    for (std::size_t r = 0; r < kHmRows; ++r) p.values[r] += m.row_mean(r);
  for (double& v : p.values) v /= static_cast<double>(samples.size());
  const double mx = *std::max_element(p.values.begin(), p.values.end());
  if (mx <= 0) {
    p.values.fill(0.0);
    p.degenerate = true;
    return p;
  }
  for (double& v : p.values) v /= mx;
  return p;
}

ActivationProfile activation_profile(std::span<const SelectedSample> samples) {
  std::vector<HMMatrix> xs;
  xs.reserve(samples.size());
  for (const auto& s : samples) xs.push_back(s.x);
  return activation_profile(xs);
}

void write_profiles_csv(std::ostream& out, const ActivationProfile& positive, const ActivationProfile& negative) {
  out << "class,hm,activation\n";
  for (std::size_t r = 0; r < kHmRows; ++r) out << "+1," << kHmNames[r] << ',' << format_number(positive.values[r]) << '\n';
  for (std::size_t r = 0; r < kHmRows; ++r) out << "-1," << kHmNames[r] << ',' << format_number(negative.values[r]) << '\n';
}

std::vector<std::size_t> LinearWeightReport::positive_rows(int target_class) const {
  const std::size_t c = target_class > 0 ? 1 : 0;
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < kHmRows; ++r)
    if (weights[r][c] > 0) out.push_back(r);
  return out;
}

LinearWeightReport export_linear_weights(const Classifier& model) {
  if (model.arch.kind != ArchKind::Linear) throw ConfigError("weight report requires the linear architecture");
  const Tensor& w = model.params.at("clf.out.w");  // [2,5]
  const Tensor& b = model.params.at("clf.out.b");
  LinearWeightReport r;
  for (std::size_t row = 0; row < kHmRows; ++row)
    for (std::size_t c = 0; c < 2; ++c) r.weights[row][c] = w[c * kHmRows + row];
  r.bias = {b[0], b[1]};
  return r;
}

namespace {
const char* sign_of(double v) { return v > 0 ? "+" : (v < 0 ? "-" : "0"); }
}  // namespace

void write_weights_csv(std::ostream& out, const LinearWeightReport& report) {
  out << "hm,w_neg,w_pos,sign_neg,sign_pos\n";
  for (std::size_t r = 0; r < kHmRows; ++r)
    out << kHmNames[r] << ',' << format_number(report.weights[r][0]) << ',' << format_number(report.weights[r][1])
        << ',' << sign_of(report.weights[r][0]) << ',' << sign_of(report.weights[r][1]) << '\n';
  out << "bias," << format_number(report.bias[0]) << ',' << format_number(report.bias[1]) << ','
      << sign_of(report.bias[0]) << ',' << sign_of(report.bias[1]) << '\n';
}

LinearWeightReport read_weights_csv(std::istream& in) {
  LinearWeightReport r;
  std::string line;
  std::size_t row = 0, line_no = 0;
  bool got_bias = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line_no == 1) continue;
    std::stringstream ss(line);
    std::string name, wn, wp;
    std::getline(ss, name, ',');
    std::getline(ss, wn, ',');
    std::getline(ss, wp, ',');
    double a = 0, b = 0;
    try {
      a = std::stod(wn);
      b = std::stod(wp);
    } catch (const std::exception&) {
      throw ParseError("invalid weight value", line_no);
    }
    if (name == "bias") {
      r.bias = {a, b};
      got_bias = true;
    } else {
      if (row >= kHmRows || name != kHmNames[row]) throw ParseError("unexpected row " + name, line_no);
      r.weights[row++] = {a, b};
    }
  }
  if (row != kHmRows || !got_bias) throw ParseError("incomplete weight report");
  return r;
}

std::vector<double> rank_normalize(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<double> out(n, 0.0);
  if (n <= 1) return out;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + j - 1);
    for (std::size_t k = i; k < j; ++k) out[order[k]] = mid_rank / static_cast<double>(n - 1);
    i = j;
  }
  return out;
}

std::vector<BinStat> rpkm_binned_diff(const Classifier& a, const Classifier& b, std::span<const GeneSample> samples,
                                      std::size_t bins) {
  if (bins == 0) throw ConfigError("bin count must be positive");
  if (samples.empty()) throw ConfigError("rpkm_binned_diff needs samples");
  std::vector<double> rpkm;
  rpkm.reserve(samples.size());
  for (const GeneSample& s : samples) {
    if (!s.rpkm) throw ConfigError("gene " + s.gene_id + " has no RPKM value");
    rpkm.push_back(*s.rpkm);
  }
  const std::vector<double> pos = rank_normalize(rpkm);
  const std::vector<double> pa = positive_scores(a, samples);
  const std::vector<double> pb = positive_scores(b, samples);

  std::vector<BinStat> out(bins);
  std::vector<std::vector<double>> diffs(bins);
  for (std::size_t i = 0; i < bins; ++i) {
    out[i].lower = static_cast<double>(i) / static_cast<double>(bins);
    out[i].upper = static_cast<double>(i + 1) / static_cast<double>(bins);
  }
  for (std::size_t g = 0; g < samples.size(); ++g) {
    const auto bin = std::min(bins - 1, static_cast<std::size_t>(pos[g] * static_cast<double>(bins)));
    diffs[bin].push_back(pa[g] - pb[g]);
  }
  for (std::size_t i = 0; i < bins; ++i) {
    const auto& d = diffs[i];
    out[i].count = d.size();
    out[i].empty = d.empty();
    if (d.empty()) continue;
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
    double var = 0;
    for (double v : d) var += (v - mean) * (v - mean);
    out[i].mean = mean;
    out[i].variance = var / static_cast<double>(d.size());
  }
  return out;
}

void write_bins_csv(std::ostream& out, std::span<const BinStat> bins) {
  out << "bin,lower,upper,count,mean_diff,var_diff,empty\n";
  for (std::size_t i = 0; i < bins.size(); ++i) {
    const BinStat& b = bins[i];
    out << i << ',' << format_number(b.lower) << ',' << format_number(b.upper) << ',' << b.count << ','
        << format_number(b.mean) << ',' << format_number(b.variance) << ',' << (b.empty ? 1 : 0) << '\n';
  }
}

}  // namespace hmexpr
