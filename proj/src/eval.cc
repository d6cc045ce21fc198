#include "dpl/eval.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>

#include "dpl/errors.h"

namespace dpl {

namespace {

bool Contains(std::span<const std::size_t> sorted, std::size_t x) {
  return std::binary_search(sorted.begin(), sorted.end(), x);
}

}  // namespace

std::vector<double> ItemScores(const EmbeddingTable& table, std::size_t u,
                               ScoreKind kind) {
  std::vector<double> scores(table.num_items());
  if (kind == ScoreKind::kDot) {
    const auto eu = table.user(u);
    for (std::size_t i = 0; i < scores.size(); ++i) {
      scores[i] = Dot(eu, table.item(i));
    }
  } else {
    for (std::size_t i = 0; i < scores.size(); ++i) {
      scores[i] = MfScore(table, u, i, kind);
    }
  }
  return scores;
}

std::vector<std::size_t> RankItems(std::span<const double> scores,
                                   std::span<const std::size_t> exclude,
                                   std::size_t limit) {
  std::vector<std::size_t> order;
  order.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!Contains(exclude, i)) order.push_back(i);
  }
  auto better = [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  if (limit > 0 && limit < order.size()) {
    std::partial_sort(order.begin(),
                      order.begin() + static_cast<std::ptrdiff_t>(limit),
                      order.end(), better);
    order.resize(limit);
  } else {
    std::sort(order.begin(), order.end(), better);
  }
  return order;
}

std::vector<std::size_t> RankItems(const EmbeddingTable& table, std::size_t u,
                                   std::span<const std::size_t> exclude,
                                   ScoreKind kind) {
  const auto scores = ItemScores(table, u, kind);
  return RankItems(scores, exclude);
}

TopKScores PrecisionRecallNdcg(std::span<const std::size_t> ranked,
                               std::span<const std::size_t> test,
                               std::size_t k) {
  if (k == 0) throw ConfigError("K must be >= 1");
  TopKScores out;
  if (test.empty()) return out;
  const std::size_t depth = std::min(k, ranked.size());
  std::size_t hits = 0;
  double dcg = 0.0;
  for (std::size_t r = 0; r < depth; ++r) {
    if (Contains(test, ranked[r])) {
      ++hits;
      dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    }
  }
  double idcg = 0.0;
  const std::size_t ideal = std::min(k, test.size());
  for (std::size_t r = 0; r < ideal; ++r) {
    idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  }
  out.precision = static_cast<double>(hits) / static_cast<double>(k);
  out.recall = static_cast<double>(hits) / static_cast<double>(test.size());
  out.ndcg = dcg / idcg;
  return out;
}

double UserAuc(std::span<const double> scores,
               std::span<const std::size_t> train,
               std::span<const std::size_t> test) {
  std::vector<double> neg;
  neg.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!Contains(train, i) && !Contains(test, i)) neg.push_back(scores[i]);
  }
  if (neg.empty() || test.empty()) return -1.0;
  std::sort(neg.begin(), neg.end());
  double correct = 0.0;
  for (std::size_t i : test) {
    const double s = scores[i];
    const auto lo = std::lower_bound(neg.begin(), neg.end(), s);
    const auto hi = std::upper_bound(lo, neg.end(), s);
    correct += static_cast<double>(lo - neg.begin()) +
               0.5 * static_cast<double>(hi - lo);
  }
  return correct /
         (static_cast<double>(test.size()) * static_cast<double>(neg.size()));
}

double Auc01(const EmbeddingTable& table, const SplitDataset& split,
             ScoreKind kind) {
  double sum = 0.0;
  std::size_t users = 0;
  for (std::size_t u = 0; u < split.num_users; ++u) {
    if (split.test_pos[u].empty()) continue;
    const auto scores = ItemScores(table, u, kind);
    const double a = UserAuc(scores, split.train_pos[u], split.test_pos[u]);
    if (a < 0.0) continue;
    sum += a;
    ++users;
  }
  if (users == 0) throw DataError("AUC needs at least one test positive");
  return sum / static_cast<double>(users);
}

RankingMetrics Evaluate(const EmbeddingTable& table, const SplitDataset& split,
                        const EvalOptions& options) {
  if (table.num_users() != split.num_users ||
      table.num_items() != split.num_items) {
    throw ConfigError("embedding table does not match the dataset catalog");
  }
  if (options.ks.empty()) throw ConfigError("no cut-off K requested");
  const std::size_t max_k =
      *std::max_element(options.ks.begin(), options.ks.end());
  RankingMetrics m;
  for (std::size_t k : options.ks) {
    m.precision[k] = m.recall[k] = m.ndcg[k] = 0.0;
  }
  double auc_sum = 0.0;
  std::size_t auc_users = 0;
  for (std::size_t u = 0; u < split.num_users; ++u) {
    const auto& test = split.test_pos[u];
    if (test.empty()) {
      ++m.users_skipped;
      continue;
    }
    ++m.users_evaluated;
    const auto scores = ItemScores(table, u, options.score);
    const auto top = RankItems(scores, split.train_pos[u], max_k);
    for (std::size_t k : options.ks) {
      const TopKScores s = PrecisionRecallNdcg(top, test, k);
      m.precision[k] += s.precision;
      m.recall[k] += s.recall;
      m.ndcg[k] += s.ndcg;
    }
    if (options.compute_auc) {
      const double a = UserAuc(scores, split.train_pos[u], test);
      if (a >= 0.0) {
        auc_sum += a;
        ++auc_users;
      }
    }
  }
  if (m.users_evaluated > 0) {
    const auto n = static_cast<double>(m.users_evaluated);
    for (std::size_t k : options.ks) {
      m.precision[k] /= n;
      m.recall[k] /= n;
      m.ndcg[k] /= n;
    }
  }
  if (auc_users > 0) m.auc = auc_sum / static_cast<double>(auc_users);
  return m;
}

void WriteMetricsTsv(std::ostream& os, const RankingMetrics& metrics,
                     bool with_auc) {
  bool first = true;
  auto sep = [&]() -> std::ostream& {
    if (!first) os << '\t';
    first = false;
    return os;
  };
  for (const auto& [k, v] : metrics.precision) {
    sep() << "P@" << k;
    sep() << "R@" << k;
    sep() << "NDCG@" << k;
  }
  if (with_auc) sep() << "AUC";
  os << '\n';
  first = true;
  os << std::fixed << std::setprecision(6);
  for (const auto& [k, v] : metrics.precision) {
    sep() << v;
    sep() << metrics.recall.at(k);
    sep() << metrics.ndcg.at(k);
  }
  if (with_auc) sep() << metrics.auc;
  os << '\n';
  os.unsetf(std::ios::floatfield);
}

}  // namespace dpl
