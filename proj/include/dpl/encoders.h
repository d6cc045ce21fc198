#ifndef DPL_ENCODERS_H_
#define DPL_ENCODERS_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace dpl {

enum class EncoderKind { kMf, kLightGcn };
enum class ScoreKind { kDot, kCosine };

std::string_view EncoderKindName(EncoderKind kind);
EncoderKind ParseEncoderKind(std::string_view name);  // "mf" | "lightgcn"
std::string_view ScoreKindName(ScoreKind kind);
ScoreKind ParseScoreKind(std::string_view name);  // "dot" | "cosine"

struct EncoderConfig {
  EncoderKind kind = EncoderKind::kMf;
  std::size_t dim = 64;
  std::size_t num_layers = 2;  // LightGCN only.
  ScoreKind score = ScoreKind::kDot;
  double init_scale = 0.1;
};

// One d-vector per user and per item, stored row-major.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::size_t num_users, std::size_t num_items,
                 std::size_t dim);

  std::size_t num_users() const { return num_users_; }
  std::size_t num_items() const { return num_items_; }
  std::size_t dim() const { return dim_; }

  std::span<double> user(std::size_t u) {
    return {user_.data() + u * dim_, dim_};
  }
  std::span<const double> user(std::size_t u) const {
    return {user_.data() + u * dim_, dim_};
  }
  std::span<double> item(std::size_t i) {
    return {item_.data() + i * dim_, dim_};
  }
  std::span<const double> item(std::size_t i) const {
    return {item_.data() + i * dim_, dim_};
  }

  std::vector<double>& user_data() { return user_; }
  const std::vector<double>& user_data() const { return user_; }
  std::vector<double>& item_data() { return item_; }
  const std::vector<double>& item_data() const { return item_; }

  bool SameShape(const EmbeddingTable& other) const {
    return num_users_ == other.num_users_ && num_items_ == other.num_items_ &&
           dim_ == other.dim_;
  }

  friend bool operator==(const EmbeddingTable&,
                         const EmbeddingTable&) = default;

 private:
  std::size_t num_users_ = 0;
  std::size_t num_items_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> user_;
  std::vector<double> item_;
};

// User-item interaction graph over training positives, in CSR form for
// both sides. Duplicate edges are collapsed on construction.
class BipartiteGraph {
 public:
  BipartiteGraph() = default;
  BipartiteGraph(std::size_t num_users, std::size_t num_items,
                 std::span<const std::pair<std::size_t, std::size_t>> edges);
  // Builds from per-user item lists (e.g. SplitDataset::train_pos).
  static BipartiteGraph FromAdjacency(
      std::size_t num_items, const std::vector<std::vector<std::size_t>>& adj);

  std::size_t num_users() const { return user_offsets_.size() - 1; }
  std::size_t num_items() const { return item_offsets_.size() - 1; }
  std::size_t num_edges() const { return user_neighbors_.size(); }

  std::span<const std::size_t> items_of(std::size_t u) const {
    return {user_neighbors_.data() + user_offsets_[u],
            user_offsets_[u + 1] - user_offsets_[u]};
  }
  std::span<const std::size_t> users_of(std::size_t i) const {
    return {item_neighbors_.data() + item_offsets_[i],
            item_offsets_[i + 1] - item_offsets_[i]};
  }
  std::size_t user_degree(std::size_t u) const { return items_of(u).size(); }
  std::size_t item_degree(std::size_t i) const { return users_of(i).size(); }

 private:
  std::vector<std::size_t> user_offsets_{0};
  std::vector<std::size_t> user_neighbors_;
  std::vector<std::size_t> item_offsets_{0};
  std::vector<std::size_t> item_neighbors_;
};

// Gaussian(0, init_scale^2) entries from a generator seeded with `seed`.
// Throws ConfigError on zero counts or zero dimension.
EmbeddingTable InitEmbeddings(std::size_t num_users, std::size_t num_items,
                              const EncoderConfig& config, std::uint64_t seed);

double Dot(std::span<const double> a, std::span<const double> b);

// Dot product, or cosine mapped to [0, 1] via (1 + cos) / 2. Cosine on a
// zero-norm vector throws DomainError.
double MfScore(const EmbeddingTable& table, std::size_t u, std::size_t i,
               ScoreKind kind = ScoreKind::kDot);

// Mean of layers 0..K of symmetric-normalised neighbour aggregation:
//   e_u^{k+1} = sum_{i in N(u)} e_i^k / sqrt(deg u * deg i),
// and symmetrically for items. The operator is symmetric, so applying it
// to a gradient table yields the gradient w.r.t. the input table.
EmbeddingTable LightGcnPropagate(const EmbeddingTable& table,
                                 const BipartiteGraph& graph,
                                 std::size_t num_layers);

// lambda * sum of squared norms over the given rows, each row counted
// once no matter how often it appears.
double L2Penalty(const EmbeddingTable& table,
                 std::span<const std::size_t> touched_users,
                 std::span<const std::size_t> touched_items, double lambda);

struct CheckpointHeader {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::size_t dim = 0;
  EncoderKind encoder = EncoderKind::kMf;
  std::size_t num_layers = 0;
  std::uint64_t seed = 0;
};

// Text header of key=value lines followed by raw little-endian doubles.
// Reading back reproduces the table bit for bit.
void SaveCheckpoint(const std::filesystem::path& path,
                    const EmbeddingTable& table,
                    const CheckpointHeader& header);
// Throws DataError on a missing or corrupt file.
std::pair<EmbeddingTable, CheckpointHeader> LoadCheckpoint(
    const std::filesystem::path& path);

}  // namespace dpl

#endif  // DPL_ENCODERS_H_
