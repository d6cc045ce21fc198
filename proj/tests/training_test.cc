#include "dpl/training.h"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <sstream>

#include "dpl/errors.h"
#include "json.hpp"

namespace dpl {
namespace {

namespace fs = std::filesystem;

SplitDataset RandomSplit(std::size_t users, std::size_t items, double density,
                         std::uint64_t seed) {
  ImplicitFeedback fb;
  for (std::size_t u = 0; u < users; ++u) fb.users.Intern("u" + std::to_string(u));
  for (std::size_t i = 0; i < items; ++i) fb.items.Intern("i" + std::to_string(i));
  Rng rng(seed);
  std::bernoulli_distribution keep(density);
  for (std::size_t u = 0; u < users; ++u) {
    fb.positives.emplace_back(u, u % items);
    for (std::size_t i = 0; i < items; ++i) {
      if (i != u % items && keep(rng)) fb.positives.emplace_back(u, i);
    }
  }
  std::sort(fb.positives.begin(), fb.positives.end());
  return SplitHoldout(fb, 0.2, seed);
}

TrainConfig SmallConfig(LossKind kind) {
  TrainConfig c;
  c.loss.kind = kind;
  c.loss.prior = ClassPrior(kind == LossKind::kBpr ||
                                    kind == LossKind::kInfoNce
                                ? 0.0
                                : 0.1);
  c.loss.m_extra_pos = 2;
  c.loss.n_neg = kind == LossKind::kBpr ? 1 : 3;
  c.loss.lambda_reg = 0.01;
  c.encoder.dim = 3;
  c.encoder.init_scale = 0.5;
  c.epochs = 2;
  c.batch_size = 16;
  c.learning_rate = 0.05;
  c.seed = 21;
  return c;
}

// Central differences of the batch objective over every parameter.
void ExpectGradientMatches(const TrainConfig& config) {
  const auto split = RandomSplit(5, 7, 0.4, 3);
  TrainState state = MakeTrainState(split, config);
  const std::size_t m =
      config.loss.kind == LossKind::kBpr || config.loss.kind == LossKind::kInfoNce
          ? 0
          : config.loss.m_extra_pos;
  const auto entries = SampleEpoch(split, m, config.loss.n_neg, state.rng);
  const std::span<const BatchEntry> batch(entries.data(),
                                          std::min<std::size_t>(6, entries.size()));
  const BipartiteGraph* graph =
      config.encoder.kind == EncoderKind::kLightGcn ? &state.graph : nullptr;
  const auto obj = ComputeBatchObjective(state.params, batch, config, graph);
  ASSERT_EQ(obj.clamped, 0u);

  EmbeddingTable probe = state.params;
  const double h = 1e-6;
  auto check = [&](std::vector<double>& data, const std::vector<double>& grad) {
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double saved = data[k];
      data[k] = saved + h;
      const double up =
          ComputeBatchObjective(probe, batch, config, graph).total();
      data[k] = saved - h;
      const double down =
          ComputeBatchObjective(probe, batch, config, graph).total();
      data[k] = saved;
      EXPECT_NEAR(grad[k], (up - down) / (2 * h), 1e-7) << "coordinate " << k;
    }
  };
  check(probe.user_data(), obj.grad.user_data());
  check(probe.item_data(), obj.grad.item_data());
}

TEST(BatchObjectiveTest, MfGradientMatchesFiniteDifferences) {
  for (LossKind kind : {LossKind::kBpr, LossKind::kInfoNce, LossKind::kDcl,
                        LossKind::kHcl, LossKind::kDpl}) {
    SCOPED_TRACE(LossKindName(kind));
    ExpectGradientMatches(SmallConfig(kind));
  }
}

TEST(BatchObjectiveTest, LightGcnGradientMatchesFiniteDifferences) {
  for (LossKind kind : {LossKind::kBpr, LossKind::kDpl}) {
    SCOPED_TRACE(LossKindName(kind));
    TrainConfig c = SmallConfig(kind);
    c.encoder.kind = EncoderKind::kLightGcn;
    c.encoder.num_layers = 2;
    ExpectGradientMatches(c);
  }
}

TEST(BatchObjectiveTest, RejectsEmptyBatchAndMissingGraph) {
  const TrainConfig c = SmallConfig(LossKind::kBpr);
  const EmbeddingTable t(2, 2, 3);
  EXPECT_THROW(ComputeBatchObjective(t, {}, c, nullptr), ConfigError);
  TrainConfig g = c;
  g.encoder.kind = EncoderKind::kLightGcn;
  const std::vector<BatchEntry> one = {{0, 0, {}, {1}}};
  EXPECT_THROW(ComputeBatchObjective(t, one, g, nullptr), ConfigError);
}

TEST(TrainConfigTest, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.Validate());
  c.learning_rate = -1.0;
  EXPECT_THROW(c.Validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.Validate(), ConfigError);
  c = {};
  c.encoder.score = ScoreKind::kCosine;
  EXPECT_THROW(c.Validate(), ConfigError);
  c = {};
  c.optimizer.beta1 = 1.0;
  EXPECT_THROW(c.Validate(), ConfigError);
  EXPECT_EQ(ParseOptimizerKind("sgd"), OptimizerKind::kSgd);
  EXPECT_THROW(ParseOptimizerKind("rmsprop"), ConfigError);
}

TEST(TrainingTest, ZeroLearningRateLeavesParametersUnchanged) {
  const auto split = RandomSplit(8, 10, 0.3, 4);
  for (OptimizerKind opt : {OptimizerKind::kSgd, OptimizerKind::kAdam}) {
    TrainConfig c = SmallConfig(LossKind::kDpl);
    c.optimizer.kind = opt;
    c.learning_rate = 0.0;
    const TrainState init = MakeTrainState(split, c);
    EXPECT_EQ(TrainOnSplit(split, c).params, init.params);
  }
}

TEST(TrainingTest, ZeroEpochsReturnsInitialEmbeddings) {
  const auto split = RandomSplit(8, 10, 0.3, 4);
  TrainConfig c = SmallConfig(LossKind::kBpr);
  c.epochs = 0;
  const auto r = TrainOnSplit(split, c);
  EXPECT_TRUE(r.report.epochs.empty());
  EXPECT_EQ(r.params, MakeTrainState(split, c).params);
  EXPECT_EQ(r.final_metrics.users_evaluated +
                r.final_metrics.users_skipped,
            split.num_users);
}

TEST(TrainingTest, SgdStepMovesOnlyTouchedRowsAlongGradient) {
  const auto split = RandomSplit(10, 12, 0.3, 5);
  TrainConfig c = SmallConfig(LossKind::kDcl);
  c.optimizer.kind = OptimizerKind::kSgd;
  TrainState state = MakeTrainState(split, c);
  const auto entries = SampleEpoch(split, 2, 3, state.rng);
  const std::span<const BatchEntry> batch(entries.data(), 4);
  const auto obj = ComputeBatchObjective(state.params, batch, c, nullptr);
  const EmbeddingTable before = state.params;
  ApplyUpdate(state, obj, c);
  for (std::size_t u = 0; u < split.num_users; ++u) {
    const bool touched = std::binary_search(obj.touched_users.begin(),
                                            obj.touched_users.end(), u);
    for (std::size_t k = 0; k < c.encoder.dim; ++k) {
      const double want =
          touched ? before.user(u)[k] - c.learning_rate * obj.grad.user(u)[k]
                  : before.user(u)[k];
      EXPECT_EQ(state.params.user(u)[k], want);
    }
  }
  // A small step along the negative gradient lowers the objective.
  const auto after = ComputeBatchObjective(state.params, batch, c, nullptr);
  EXPECT_LT(after.total(), obj.total());
}

TEST(TrainingTest, RunsAreBitwiseReproducible) {
  const auto split = RandomSplit(15, 20, 0.2, 6);
  for (OptimizerKind opt : {OptimizerKind::kSgd, OptimizerKind::kAdam}) {
    TrainConfig c = SmallConfig(LossKind::kHcl);
    c.optimizer.kind = opt;
    c.encoder.kind = EncoderKind::kLightGcn;
    const auto a = TrainOnSplit(split, c);
    const auto b = TrainOnSplit(split, c);
    EXPECT_EQ(a.params, b.params);
    EXPECT_EQ(a.report.epochs.back().loss_mean,
              b.report.epochs.back().loss_mean);
    c.seed += 1;
    EXPECT_NE(TrainOnSplit(split, c).params, a.params);
  }
}

TEST(TrainingTest, NonFiniteLossAbortsWithLocation) {
  const auto split = RandomSplit(6, 8, 0.3, 7);
  const TrainConfig c = SmallConfig(LossKind::kDpl);
  TrainState state = MakeTrainState(split, c);
  for (double& v : state.params.item_data()) {
    v = std::numeric_limits<double>::quiet_NaN();
  }
  try {
    TrainEpoch(state, split, c);
    FAIL() << "expected DomainError";
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1, batch 0"),
              std::string::npos)
        << e.what();
  }
}

TEST(TrainingTest, EvaluatesOnScheduleAndWritesReports) {
  const auto split = RandomSplit(12, 15, 0.25, 8);
  TrainConfig c = SmallConfig(LossKind::kDpl);
  c.epochs = 5;
  c.eval_every = 2;
  std::ostringstream log;
  const auto r = TrainOnSplit(split, c, &log);
  ASSERT_EQ(r.report.epochs.size(), 5u);
  EXPECT_FALSE(r.report.epochs[0].metrics.has_value());
  EXPECT_TRUE(r.report.epochs[1].metrics.has_value());
  EXPECT_TRUE(r.report.epochs[4].metrics.has_value());
  EXPECT_NE(log.str().find("epoch 5 loss"), std::string::npos);

  std::ostringstream tsv;
  WriteReportTsv(tsv, r.report);
  std::size_t lines = 0;
  for (char ch : tsv.str()) lines += ch == '\n';
  EXPECT_EQ(lines, 6u);

  std::ostringstream js;
  WriteReportJson(js, r.report, c, r.final_metrics);
  const auto j = nlohmann::json::parse(js.str());
  EXPECT_EQ(j["config"]["loss"], "dpl");
  EXPECT_EQ(j["epochs"].size(), 5u);
  EXPECT_DOUBLE_EQ(j["final_metrics"]["P@5"].get<double>(),
                   r.final_metrics.precision.at(5));
}

TEST(GradientCheckTest, SmoothLossesPass) {
  LossConfig c;
  c.kind = LossKind::kInfoNce;
  c.n_neg = 2;
  const ScoredEntry e{0.7, {}, {0.3, -0.2}};
  EXPECT_LT(GradientCheck(c, e), 1e-8);
}

fs::path MovieLensPath() {
  if (const char* dir = std::getenv("DPL_DATA_DIR")) {
    return fs::path(dir) / "ml-100k" / "u.data";
  }
  return fs::path(DPL_SOURCE_DIR) / "data" / "ml-100k" / "u.data";
}

TEST(MovieLensTest, DplLossDecreasesOverFirstEpochs) {
  const fs::path path = MovieLensPath();
  if (!fs::exists(path)) GTEST_SKIP() << "ML-100k not found at " << path;
  DatasetOptions data;
  data.path = path;
  const auto split = LoadSplit(data);
  TrainConfig c;
  c.loss.prior = ClassPrior(0.1);
  c.epochs = 5;
  c.batch_size = 1024;
  TrainState state = MakeTrainState(split, c);
  std::vector<double> losses;
  for (std::size_t e = 0; e < c.epochs; ++e) {
    losses.push_back(TrainEpoch(state, split, c).loss_mean);
  }
  EXPECT_LT(losses.back(), losses.front());
}

}  // namespace
}  // namespace dpl
