#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "hmexpr/errors.hpp"
#include "hmexpr/metrics.hpp"
#include "hmexpr/training.hpp"

using namespace hmexpr;

namespace {

const std::vector<CellCorpus>& fixture() {
  static const std::vector<CellCorpus> cells = [] {
    SyntheticSpec spec;
    spec.cells = 3;
    spec.genes_per_cell = 2000;
    return generate_synthetic_corpus(spec, 7);
  }();
  return cells;
}

TrainConfig linear_cfg(std::uint64_t seed = 1) {
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.max_epochs = 30;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST(Train, LinearRecoversPlantedRule) {
  const auto r = train_classifier(fixture()[0], ArchSpec::of(ArchKind::Linear), linear_cfg());
  EXPECT_GE(evaluate_auroc(r.model, fixture()[0].test), 0.90);
}

TEST(Train, HistorySelectsArgmax) {
  const auto r = train_classifier(fixture()[0], ArchSpec::of(ArchKind::Linear), linear_cfg());
  const auto& h = r.history;
  ASSERT_EQ(h.train_loss.size(), 30u);
  const auto best = std::max_element(h.val_auroc.begin(), h.val_auroc.end());
  EXPECT_EQ(h.selected_epoch, static_cast<std::size_t>(best - h.val_auroc.begin()) + 1);
  EXPECT_DOUBLE_EQ(evaluate_auroc(r.model, fixture()[0].validation), h.best_val_auroc());
}

TEST(Train, ShuffledLabelsCarryNoSignal) {
  SyntheticSpec spec;
  spec.cells = 1;
  spec.genes_per_cell = 3000;
  CellCorpus cell = generate_synthetic_corpus(spec, 13)[0];
  std::mt19937_64 rng(99);
  for (Split s : {Split::Train, Split::Validation, Split::Test}) {
    auto& v = cell.split(s);
    std::vector<int> labels;
    for (const auto& g : v) labels.push_back(g.label);
    std::shuffle(labels.begin(), labels.end(), rng);
    for (std::size_t i = 0; i < v.size(); ++i) v[i].label = labels[i];
  }
  const auto r = train_classifier(cell, ArchSpec::of(ArchKind::Linear), linear_cfg());
  const double auc = evaluate_auroc(r.model, cell.test);
  EXPECT_GE(auc, 0.45);
  EXPECT_LE(auc, 0.55);
}

TEST(Train, PooledNoWorseThanSingle) {
  std::vector<const CellCorpus*> all;
  for (const auto& c : fixture()) all.push_back(&c);
  const auto pooled = train_classifier(all, ArchSpec::of(ArchKind::Linear), linear_cfg());
  const auto single = train_classifier(fixture()[0], ArchSpec::of(ArchKind::Linear), linear_cfg());
  EXPECT_GE(evaluate_auroc(pooled.model, fixture()[0].test),
            evaluate_auroc(single.model, fixture()[0].test) - 0.02);
}

TEST(Train, DeterministicAndDoesNotMutateCorpus) {
  const CellCorpus before = fixture()[1];
  TrainConfig cfg = linear_cfg(4);
  cfg.max_epochs = 5;
  const auto a = train_classifier(fixture()[1], ArchSpec::of(ArchKind::Strided), cfg);
  const auto b = train_classifier(fixture()[1], ArchSpec::of(ArchKind::Strided), cfg);
  EXPECT_EQ(a.model.params, b.model.params);
  EXPECT_EQ(a.history.train_loss, b.history.train_loss);
  EXPECT_EQ(a.history.val_auroc, b.history.val_auroc);
  EXPECT_EQ(fixture()[1].train, before.train);
}

TEST(Train, EmptySplitRejected) {
  CellCorpus c = fixture()[0];
  c.validation.clear();
  EXPECT_THROW(train_classifier(c, ArchSpec::of(ArchKind::Linear), linear_cfg()), ConfigError);
  TrainConfig bad = linear_cfg();
  bad.batch_size = 0;
  EXPECT_THROW(train_classifier(fixture()[0], ArchSpec::of(ArchKind::Linear), bad), ConfigError);
}

TEST(Train, DivergenceCarriesHistory) {
  TrainConfig cfg = linear_cfg();
  cfg.optimizer = OptimizerKind::Sgd;
  cfg.learning_rate = 1e308;
  try {
    train_classifier(fixture()[0], ArchSpec::of(ArchKind::Linear), cfg);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_LE(e.history().train_loss.size(), 1u);
  }
}

TEST(Train, PatienceStopsEarly) {
  TrainConfig cfg = linear_cfg();
  cfg.max_epochs = 200;
  cfg.patience = 3;
  const auto r = train_classifier(fixture()[0], ArchSpec::of(ArchKind::Linear), cfg);
  EXPECT_LT(r.history.train_loss.size(), 200u);
  EXPECT_EQ(r.history.train_loss.size(), r.history.selected_epoch + 3);
}

TEST(BestOfK, KOneMatchesSingleRun) {
  const CellCorpus* one[] = {&fixture()[0]};
  TrainConfig cfg = linear_cfg(10);
  cfg.max_epochs = 5;
  const auto k1 = select_best_of_k(one, ArchSpec::of(ArchKind::Linear), 1, cfg);
  const auto plain = train_classifier(fixture()[0], ArchSpec::of(ArchKind::Linear), cfg);
  EXPECT_EQ(k1.best.model.params, plain.model.params);
}

TEST(BestOfK, PicksMaxAndIsDeterministic) {
  const CellCorpus* one[] = {&fixture()[0]};
  TrainConfig cfg = linear_cfg(20);
  cfg.max_epochs = 3;
  cfg.workers = 2;
  const auto a = select_best_of_k(one, ArchSpec::of(ArchKind::Linear), 5, cfg);
  const auto b = select_best_of_k(one, ArchSpec::of(ArchKind::Linear), 5, cfg);
  ASSERT_EQ(a.val_aurocs.size(), 5u);
  for (double v : a.val_aurocs) EXPECT_GE(a.best.history.best_val_auroc(), v);
  EXPECT_EQ(a.chosen, b.chosen);
  EXPECT_EQ(a.best.model.params, b.best.model.params);
  EXPECT_EQ(a.best.model.seed, 20 + a.chosen);
}

TEST(History, Csv) {
  TrainHistory h;
  h.train_loss = {0.5, 0.25};
  h.val_auroc = {0.75, 0.8};
  h.selected_epoch = 2;
  std::ostringstream os;
  write_history_csv(os, h);
  EXPECT_EQ(os.str(), "epoch,train_loss,val_auroc\n1,0.5,0.75\n2,0.25,0.8\n");
}

TEST(Gan, ShortRunIsDeterministicAndNonNegative) {
  GanTrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 5;
  const auto& real = fixture()[0].train;
  const auto a = train_gan(real, GanSpec{}, cfg);
  const auto b = train_gan(real, GanSpec{}, cfg);
  EXPECT_EQ(a.gan.generator, b.gan.generator);
  EXPECT_EQ(a.history.discriminator_loss, b.history.discriminator_loss);
  ASSERT_EQ(a.history.generator_loss.size(), 2u);
  for (double v : a.gan.generate(a.gan.sample_latent(200, 1)).data()) EXPECT_GE(v, 0.0);
  EXPECT_THROW(train_gan({}, GanSpec{}, cfg), ConfigError);
}

TEST(Gan, ConstantGeneratorHasZeroVariance) {
  Gan g = build_gan(GanSpec{}, 1);
  for (std::size_t i = 0; i < g.generator.size(); ++i) g.generator.tensor(i).fill(0.0);
  EXPECT_LT(generator_output_variance(g, 256, 3), 1e-20);
}
