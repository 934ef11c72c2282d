#include "hmexpr/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "hmexpr/metrics.hpp"
#include "hmexpr/parallel.hpp"

namespace hmexpr {
namespace {

std::vector<const GeneSample*> pool_split(std::span<const CellCorpus* const> cells, Split split) {
  std::vector<const GeneSample*> out;
  for (const CellCorpus* c : cells)
    for (const GeneSample& s : c->split(split)) out.push_back(&s);
  return out;
}

double pooled_auroc(const Classifier& model, std::span<const GeneSample* const> samples) {
  constexpr std::size_t kChunk = 512;
  std::vector<double> scores;
  std::vector<int> labels;
  scores.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const auto part = samples.subspan(start, std::min(kChunk, samples.size() - start));
    const Tensor p = predict_proba(model, stack_inputs(part));
    for (std::size_t i = 0; i < part.size(); ++i) {
      scores.push_back(p[2 * i + 1]);
      labels.push_back(part[i]->label);
    }
  }
  return auroc(scores, labels);
}

void shuffle_indices(std::vector<std::size_t>& order, std::mt19937_64& rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0 || max_epochs == 0) throw ConfigError("batch size and epoch count must be positive");
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
  if (dropout && !(*dropout >= 0.0 && *dropout < 1.0)) throw ConfigError("dropout rate must lie in [0,1)");
  if (patience && *patience == 0) throw ConfigError("patience must be positive");
}

double TrainHistory::best_val_auroc() const {
  if (selected_epoch == 0) return 0.0;
  return val_auroc.at(selected_epoch - 1);
}

void write_history_csv(std::ostream& out, const TrainHistory& h) {
  out << "epoch,train_loss,val_auroc\n";
  for (std::size_t e = 0; e < h.train_loss.size(); ++e)
    out << e + 1 << ',' << format_number(h.train_loss[e]) << ',' << format_number(h.val_auroc[e]) << '\n';
}

TrainResult train_classifier(const CellCorpus& cell, const ArchSpec& arch, const TrainConfig& cfg) {
  const CellCorpus* one[] = {&cell};
  return train_classifier(one, arch, cfg);
}

TrainResult train_classifier(std::span<const CellCorpus* const> cells, const ArchSpec& arch_in,
                             const TrainConfig& cfg) {
  cfg.validate();
  const std::vector<const GeneSample*> train = pool_split(cells, Split::Train);
  const std::vector<const GeneSample*> val = pool_split(cells, Split::Validation);
  if (train.empty()) throw ConfigError("training split is empty");
  if (val.empty()) throw ConfigError("validation split is empty");

  ArchSpec arch = arch_in;
  if (cfg.dropout) arch.dropout = *cfg.dropout;
  TrainResult result{build_classifier(arch, cfg.seed), {}};
  ParamSet& params = result.model.params;
  ParamSet best = params;
  TrainHistory& hist = result.history;

  Graph g;
  const NodeId x = g.input("x");
  const NodeId y = g.input("labels");
  const NodeId loss = g.cross_entropy(result.model.append(g, x, true), y);
  g.set_training(true);
  g.set_seed(cfg.seed * 6364136223846793005ULL + 1442695040888963407ULL);

  OptimizerState opt = make_optimizer(cfg.optimizer, cfg.learning_rate);
  std::mt19937_64 rng(cfg.seed ^ 0xa0761d6478bd642fULL);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  double best_auc = -1.0;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle_indices(order, rng);
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - start);
      std::vector<const GeneSample*> batch(len);
      for (std::size_t i = 0; i < len; ++i) batch[i] = train[order[start + i]];
      try {
        g.forward(params, {{"x", stack_inputs(batch)}, {"labels", stack_labels(batch)}});
        const double l = g.value(loss)[0];
        if (!std::isfinite(l)) throw NumericError("non-finite training loss");
        loss_sum += l * static_cast<double>(len);
        g.backward(loss);
        apply_update(params, g.parameter_grads(), opt);
      } catch (const NumericError& e) {
        throw TrainingDiverged(std::string("training diverged at epoch ") + std::to_string(epoch) + ": " + e.what(),
                               hist);
      }
    }
    hist.train_loss.push_back(loss_sum / static_cast<double>(train.size()));
    const double auc = pooled_auroc(result.model, val);
    hist.val_auroc.push_back(auc);
    if (auc > best_auc) {
      best_auc = auc;
      best = params;
      hist.selected_epoch = epoch;
      since_best = 0;
    } else if (cfg.patience && ++since_best >= *cfg.patience) {
      break;
    }
  }
  params = std::move(best);
  return result;
}

BestOfK select_best_of_k(std::span<const CellCorpus* const> cells, const ArchSpec& arch, std::size_t k,
                         const TrainConfig& cfg) {
  if (k == 0) throw ConfigError("best-of-k needs k >= 1");
  std::vector<std::optional<TrainResult>> runs(k);
  parallel_for(k, cfg.workers, [&](std::size_t i) {
    TrainConfig c = cfg;
    c.seed = cfg.seed + i;
    runs[i] = train_classifier(cells, arch, c);
  });
  BestOfK out;
  for (std::size_t i = 0; i < k; ++i) {
    out.val_aurocs.push_back(runs[i]->history.best_val_auroc());
    if (out.val_aurocs[i] > out.val_aurocs[out.chosen]) out.chosen = i;
  }
  out.best = std::move(*runs[out.chosen]);
  return out;
}

// ---- GAN ---------------------------------------------------------------------------

double generator_output_variance(const Gan& gan, std::size_t probe, std::uint64_t seed) {
  const Tensor x = gan.generate(gan.sample_latent(probe, seed));
  const std::size_t per = kHmRows * kBins;
  double total = 0;
  for (std::size_t k = 0; k < per; ++k) {
    double mean = 0, sq = 0;
    for (std::size_t s = 0; s < probe; ++s) mean += x[s * per + k];
    mean /= static_cast<double>(probe);
    for (std::size_t s = 0; s < probe; ++s) sq += (x[s * per + k] - mean) * (x[s * per + k] - mean);
    total += sq / static_cast<double>(probe);
  }
  return total / static_cast<double>(per);
}

void write_gan_history_csv(std::ostream& out, const GanHistory& h) {
  out << "epoch,d_loss,g_loss\n";
  for (std::size_t e = 0; e < h.discriminator_loss.size(); ++e)
    out << e + 1 << ',' << format_number(h.discriminator_loss[e]) << ',' << format_number(h.generator_loss[e])
        << '\n';
}

GanResult train_gan(std::span<const GeneSample> real, const GanSpec& spec, const GanTrainConfig& cfg) {
  if (real.empty()) throw ConfigError("GAN training needs real samples");
  if (cfg.batch_size == 0 || cfg.epochs == 0) throw ConfigError("GAN batch size and epochs must be positive");
  GanResult result{build_gan(spec, cfg.seed), {}};
  Gan& gan = result.gan;
  const std::size_t per = kHmRows * kBins;

  Graph gen_graph;
  const NodeId gen_z = gen_graph.input("z");
  const NodeId gen_out = gan.append_generator(gen_graph, gen_z);

  Graph disc_graph;
  const NodeId disc_x = disc_graph.input("x");
  const NodeId disc_t = disc_graph.input("t");
  const NodeId disc_loss = disc_graph.bce(gan.append_discriminator(disc_graph, disc_x), disc_t);

  Graph joint;
  const NodeId joint_z = joint.input("z");
  const NodeId joint_t = joint.input("t");
  const NodeId joint_loss =
      joint.bce(gan.append_discriminator(joint, gan.append_generator(joint, joint_z)), joint_t);

  OptimizerState d_opt = make_optimizer(OptimizerKind::Adam, cfg.learning_rate);
  OptimizerState g_opt = make_optimizer(OptimizerKind::Adam, cfg.learning_rate);
  d_opt.beta1 = g_opt.beta1 = cfg.beta1;

  std::mt19937_64 rng(cfg.seed ^ 0xe7037ed1a0b428dbULL);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::size_t> order(real.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_indices(order, rng);
    double d_sum = 0, g_sum = 0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - start);
      Tensor z({len, spec.latent_dim});
      for (double& v : z.data()) v = gauss(rng);

      gen_graph.forward(gan.generator, {{"z", z}});
      const Tensor& fake = gen_graph.value(gen_out);

      // Discriminator step on real (target 1) and generated (target 0) rows.
      Tensor both({2 * len, per});
      Tensor targets({2 * len});
      for (std::size_t i = 0; i < len; ++i) {
        const auto v = real[order[start + i]].x.values();
        std::copy(v.begin(), v.end(), both.data().begin() + static_cast<std::ptrdiff_t>(i * per));
        targets[i] = 1.0;
      }
      std::copy(fake.data().begin(), fake.data().end(), both.data().begin() + static_cast<std::ptrdiff_t>(len * per));
      disc_graph.forward(gan.discriminator, {{"x", std::move(both)}, {"t", std::move(targets)}});
      d_sum += disc_graph.value(disc_loss)[0];
      disc_graph.backward(disc_loss);
      apply_update(gan.discriminator, disc_graph.parameter_grads(), d_opt);

      // Generator step: non-saturating loss -log D(G(z)).
      joint.forward(gan.generator.merged(gan.discriminator), {{"z", std::move(z)}, {"t", Tensor({len}, 1.0)}});
      g_sum += joint.value(joint_loss)[0];
      joint.backward(joint_loss);
      apply_update(gan.generator, joint.parameter_grads().with_prefix("gen."), g_opt);
      ++steps;
    }
    result.history.discriminator_loss.push_back(d_sum / static_cast<double>(steps));
    result.history.generator_loss.push_back(g_sum / static_cast<double>(steps));
    const double var = generator_output_variance(gan, 256, cfg.seed + epoch);
    if (var < 1e-6)
      result.history.warnings.push_back("epoch " + std::to_string(epoch) + ": generator output variance " +
                                        format_number(var) + " below 1e-6 (possible mode collapse)");
  }
  return result;
}

}  // namespace hmexpr
