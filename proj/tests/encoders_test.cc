#include "dpl/encoders.h"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "dpl/errors.h"

namespace dpl {
namespace {

namespace fs = std::filesystem;

EmbeddingTable RandomTable(std::size_t users, std::size_t items,
                           std::size_t dim, std::uint64_t seed) {
  EncoderConfig c;
  c.dim = dim;
  c.init_scale = 1.0;
  return InitEmbeddings(users, items, c, seed);
}

TEST(EncoderKindTest, NamesRoundTrip) {
  EXPECT_EQ(ParseEncoderKind("lightgcn"), EncoderKind::kLightGcn);
  EXPECT_EQ(ParseEncoderKind(EncoderKindName(EncoderKind::kMf)),
            EncoderKind::kMf);
  EXPECT_EQ(ParseScoreKind("cosine"), ScoreKind::kCosine);
  EXPECT_THROW(ParseEncoderKind("ngcf"), ConfigError);
  EXPECT_THROW(ParseScoreKind("l2"), ConfigError);
}

TEST(InitEmbeddingsTest, SeededAndScaled) {
  EncoderConfig c;
  c.dim = 16;
  c.init_scale = 0.1;
  const auto a = InitEmbeddings(50, 80, c, 11);
  EXPECT_EQ(a, InitEmbeddings(50, 80, c, 11));
  EXPECT_NE(a, InitEmbeddings(50, 80, c, 12));
  double sq = 0.0;
  for (double v : a.user_data()) sq += v * v;
  for (double v : a.item_data()) sq += v * v;
  const double sd = std::sqrt(sq / (130.0 * 16.0));
  EXPECT_NEAR(sd, 0.1, 0.01);
  c.init_scale = 0.0;
  const auto zero = InitEmbeddings(3, 4, c, 1);
  for (double v : zero.item_data()) EXPECT_EQ(v, 0.0);
  c.init_scale = -1.0;
  EXPECT_THROW(InitEmbeddings(3, 4, c, 1), ConfigError);
}

TEST(InitEmbeddingsTest, RejectsEmptyShapes) {
  EncoderConfig c;
  EXPECT_THROW(InitEmbeddings(0, 4, c, 1), ConfigError);
  EXPECT_THROW(InitEmbeddings(4, 0, c, 1), ConfigError);
  c.dim = 0;
  EXPECT_THROW(InitEmbeddings(4, 4, c, 1), ConfigError);
}

TEST(MfScoreTest, DotAndCosine) {
  EmbeddingTable t(1, 2, 2);
  t.user(0)[0] = 3.0;
  t.user(0)[1] = 4.0;
  t.item(0)[0] = 1.0;
  t.item(0)[1] = 2.0;
  EXPECT_DOUBLE_EQ(MfScore(t, 0, 0), 11.0);
  EXPECT_NEAR(MfScore(t, 0, 0, ScoreKind::kCosine),
              (1.0 + 11.0 / (5.0 * std::sqrt(5.0))) / 2.0, 1e-15);
  EXPECT_THROW(MfScore(t, 0, 1, ScoreKind::kCosine), DomainError);
}

TEST(MfScoreTest, CosineStaysInUnitInterval) {
  const auto t = RandomTable(5, 9, 7, 3);
  for (std::size_t u = 0; u < 5; ++u) {
    for (std::size_t i = 0; i < 9; ++i) {
      const double s = MfScore(t, u, i, ScoreKind::kCosine);
      EXPECT_GE(s, 0.0);
      EXPECT_LE(s, 1.0);
    }
  }
}

TEST(BipartiteGraphTest, BuildsBothSidesAndDedups) {
  const std::vector<std::pair<std::size_t, std::size_t>> edges = {
      {0, 1}, {1, 0}, {0, 1}, {1, 2}};
  const BipartiteGraph g(2, 3, edges);
  EXPECT_EQ(g.num_edges(), 3u);
  EXPECT_EQ(g.user_degree(0), 1u);
  EXPECT_EQ(g.user_degree(1), 2u);
  EXPECT_EQ(g.item_degree(0), 1u);
  EXPECT_EQ(g.item_degree(1), 1u);
  EXPECT_EQ(g.users_of(2)[0], 1u);
  const std::vector<std::pair<std::size_t, std::size_t>> bad = {{2, 0}};
  EXPECT_THROW(BipartiteGraph(2, 3, bad), DomainError);
}

TEST(LightGcnTest, CompleteTwoByTwoMatchesDenseOracle) {
  // Oracle: dense normalised adjacency powers (derive_expected.py).
  EmbeddingTable t(2, 2, 2);
  const double users[] = {1, 0, 0, 2};
  const double items[] = {3, 1, -1, 1};
  std::copy(users, users + 4, t.user_data().begin());
  std::copy(items, items + 4, t.item_data().begin());
  const std::vector<std::pair<std::size_t, std::size_t>> edges = {
      {0, 0}, {0, 1}, {1, 0}, {1, 1}};
  const auto out = LightGcnPropagate(t, BipartiteGraph(2, 2, edges), 2);
  const double want_users[] = {0.83333333333333333, 0.66666666666666667, 0.5,
                               1.3333333333333333};
  const double want_items[] = {1.5, 1.0, 0.16666666666666667, 1.0};
  for (int k = 0; k < 4; ++k) {
    EXPECT_NEAR(out.user_data()[k], want_users[k], 1e-15);
    EXPECT_NEAR(out.item_data()[k], want_items[k], 1e-15);
  }
}

// Dense reference on an arbitrary graph, written independently of the CSR
// code: build the (U+I)^2 normalised adjacency and multiply.
EmbeddingTable DensePropagate(
    const EmbeddingTable& t,
    const std::vector<std::pair<std::size_t, std::size_t>>& edges,
    std::size_t layers) {
  const std::size_t nu = t.num_users(), ni = t.num_items(), d = t.dim();
  const std::size_t n = nu + ni;
  std::vector<double> a(n * n, 0.0), deg(n, 0.0);
  for (auto [u, i] : edges) {
    a[u * n + nu + i] = a[(nu + i) * n + u] = 1.0;
  }
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) deg[r] += a[r * n + c];
  }
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      if (a[r * n + c] != 0.0) a[r * n + c] /= std::sqrt(deg[r] * deg[c]);
    }
  }
  std::vector<double> cur(n * d), sum(n * d);
  for (std::size_t u = 0; u < nu; ++u) {
    for (std::size_t k = 0; k < d; ++k) cur[u * d + k] = t.user(u)[k];
  }
  for (std::size_t i = 0; i < ni; ++i) {
    for (std::size_t k = 0; k < d; ++k) cur[(nu + i) * d + k] = t.item(i)[k];
  }
  sum = cur;
  for (std::size_t l = 0; l < layers; ++l) {
    std::vector<double> next(n * d, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < n; ++c) {
        if (a[r * n + c] == 0.0) continue;
        for (std::size_t k = 0; k < d; ++k) {
          next[r * d + k] += a[r * n + c] * cur[c * d + k];
        }
      }
    }
    cur = next;
    for (std::size_t j = 0; j < n * d; ++j) sum[j] += cur[j];
  }
  EmbeddingTable out(nu, ni, d);
  const double scale = 1.0 / static_cast<double>(layers + 1);
  for (std::size_t u = 0; u < nu; ++u) {
    for (std::size_t k = 0; k < d; ++k) {
      out.user(u)[k] = sum[u * d + k] * scale;
    }
  }
  for (std::size_t i = 0; i < ni; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      out.item(i)[k] = sum[(nu + i) * d + k] * scale;
    }
  }
  return out;
}

TEST(LightGcnTest, RandomGraphMatchesDenseReference) {
  std::mt19937_64 rng(9);
  std::bernoulli_distribution edge(0.3);
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t u = 0; u < 7; ++u) {
    for (std::size_t i = 0; i < 9; ++i) {
      if (edge(rng)) edges.emplace_back(u, i);
    }
  }
  const auto t = RandomTable(7, 9, 3, 10);
  const BipartiteGraph g(7, 9, edges);
  for (std::size_t k : {1, 2, 3}) {
    const auto fast = LightGcnPropagate(t, g, k);
    const auto slow = DensePropagate(t, edges, k);
    for (std::size_t j = 0; j < fast.user_data().size(); ++j) {
      EXPECT_NEAR(fast.user_data()[j], slow.user_data()[j], 1e-13);
    }
    for (std::size_t j = 0; j < fast.item_data().size(); ++j) {
      EXPECT_NEAR(fast.item_data()[j], slow.item_data()[j], 1e-13);
    }
  }
}

TEST(LightGcnTest, ZeroLayersIsIdentityAndOperatorIsLinear) {
  const auto t = RandomTable(4, 5, 3, 12);
  const std::vector<std::pair<std::size_t, std::size_t>> edges = {
      {0, 0}, {1, 2}, {2, 2}, {3, 4}, {0, 3}};
  const BipartiteGraph g(4, 5, edges);
  EXPECT_EQ(LightGcnPropagate(t, g, 0), t);

  EmbeddingTable scaled = t;
  for (double& v : scaled.user_data()) v *= -2.5;
  for (double& v : scaled.item_data()) v *= -2.5;
  const auto a = LightGcnPropagate(t, g, 2);
  const auto b = LightGcnPropagate(scaled, g, 2);
  for (std::size_t j = 0; j < a.user_data().size(); ++j) {
    EXPECT_NEAR(b.user_data()[j], -2.5 * a.user_data()[j], 1e-13);
  }
  for (std::size_t j = 0; j < a.item_data().size(); ++j) {
    EXPECT_NEAR(b.item_data()[j], -2.5 * a.item_data()[j], 1e-13);
  }
}

TEST(LightGcnTest, MirroredGraphSwapsRoles) {
  const auto t = RandomTable(3, 3, 2, 13);
  EmbeddingTable mirror(3, 3, 2);
  mirror.user_data() = t.item_data();
  mirror.item_data() = t.user_data();
  const std::vector<std::pair<std::size_t, std::size_t>> edges = {
      {0, 1}, {1, 1}, {2, 0}, {2, 2}};
  std::vector<std::pair<std::size_t, std::size_t>> flipped;
  for (auto [u, i] : edges) flipped.emplace_back(i, u);
  const auto a = LightGcnPropagate(t, BipartiteGraph(3, 3, edges), 2);
  const auto b = LightGcnPropagate(mirror, BipartiteGraph(3, 3, flipped), 2);
  for (std::size_t j = 0; j < a.user_data().size(); ++j) {
    EXPECT_NEAR(a.user_data()[j], b.item_data()[j], 1e-15);
    EXPECT_NEAR(a.item_data()[j], b.user_data()[j], 1e-15);
  }
}

TEST(LightGcnTest, IsolatedNodesKeepScaledInput) {
  EmbeddingTable t(2, 2, 1);
  t.user_data() = {2.0, 5.0};
  t.item_data() = {1.0, 7.0};
  const std::vector<std::pair<std::size_t, std::size_t>> edges = {{0, 0}};
  const auto out = LightGcnPropagate(t, BipartiteGraph(2, 2, edges), 2);
  // No neighbours: higher layers are zero, the mean keeps 1/(K+1) of e^0.
  EXPECT_NEAR(out.user(1)[0], 5.0 / 3.0, 1e-15);
  EXPECT_NEAR(out.item(1)[0], 7.0 / 3.0, 1e-15);
}

TEST(L2PenaltyTest, SetSemantics) {
  EmbeddingTable t(2, 2, 2);
  t.user(0)[0] = 3.0;
  t.user(0)[1] = 4.0;
  t.item(1)[0] = 1.0;
  const std::vector<std::size_t> users = {0, 0, 0};
  const std::vector<std::size_t> items = {1, 1};
  EXPECT_DOUBLE_EQ(L2Penalty(t, users, {}, 1.0), 25.0);
  EXPECT_DOUBLE_EQ(L2Penalty(t, users, items, 0.5), 13.0);
  EXPECT_DOUBLE_EQ(L2Penalty(t, users, items, 0.0), 0.0);
}

TEST(CheckpointTest, RoundTripIsBitExact) {
  const auto t = RandomTable(6, 4, 5, 14);
  const fs::path path = fs::path(testing::TempDir()) / "ckpt_roundtrip.bin";
  CheckpointHeader h;
  h.encoder = EncoderKind::kLightGcn;
  h.num_layers = 3;
  h.seed = 99;
  SaveCheckpoint(path, t, h);
  const auto [back, hb] = LoadCheckpoint(path);
  EXPECT_EQ(back, t);
  EXPECT_EQ(hb.encoder, EncoderKind::kLightGcn);
  EXPECT_EQ(hb.num_layers, 3u);
  EXPECT_EQ(hb.seed, 99u);
  EXPECT_EQ(hb.num_users, 6u);
  EXPECT_EQ(hb.dim, 5u);
}

TEST(CheckpointTest, RejectsMissingAndTruncatedFiles) {
  const fs::path dir = testing::TempDir();
  EXPECT_THROW(LoadCheckpoint(dir / "does_not_exist.bin"), DataError);
  {
    std::ofstream os(dir / "garbage.bin");
    os << "hello\n";
  }
  EXPECT_THROW(LoadCheckpoint(dir / "garbage.bin"), DataError);

  const fs::path path = dir / "truncated.bin";
  SaveCheckpoint(path, RandomTable(3, 3, 4, 15), {});
  fs::resize_file(path, fs::file_size(path) - 8);
  EXPECT_THROW(LoadCheckpoint(path), DataError);
}

}  // namespace
}  // namespace dpl
