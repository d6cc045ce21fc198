#include "dpl/encoders.h"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <unordered_set>

#include "dpl/errors.h"

namespace dpl {

namespace {

constexpr std::string_view kCheckpointMagic = "DPL-EMBEDDINGS v1";

std::string Lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

// One propagation layer: out = A_norm * in, both sides at once.
void PropagateOnce(const EmbeddingTable& in, const BipartiteGraph& graph,
                   const std::vector<double>& user_scale,
                   const std::vector<double>& item_scale,
                   EmbeddingTable& out) {
  const std::size_t d = in.dim();
  std::fill(out.user_data().begin(), out.user_data().end(), 0.0);
  std::fill(out.item_data().begin(), out.item_data().end(), 0.0);
  for (std::size_t u = 0; u < graph.num_users(); ++u) {
    auto dst = out.user(u);
    for (std::size_t i : graph.items_of(u)) {
      const double w = user_scale[u] * item_scale[i];
      auto src = in.item(i);
      for (std::size_t k = 0; k < d; ++k) dst[k] += w * src[k];
    }
  }
  for (std::size_t i = 0; i < graph.num_items(); ++i) {
    auto dst = out.item(i);
    for (std::size_t u : graph.users_of(i)) {
      const double w = user_scale[u] * item_scale[i];
      auto src = in.user(u);
      for (std::size_t k = 0; k < d; ++k) dst[k] += w * src[k];
    }
  }
}

void WriteDoubles(std::ostream& os, const std::vector<double>& values) {
  std::string bytes(values.size() * 8, '\0');
  for (std::size_t n = 0; n < values.size(); ++n) {
    const auto bits = std::bit_cast<std::uint64_t>(values[n]);
    for (int b = 0; b < 8; ++b) {
      bytes[n * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
  }
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void ReadDoubles(std::istream& is, std::vector<double>& values) {
  std::string bytes(values.size() * 8, '\0');
  is.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(is.gcount()) != bytes.size()) {
    throw DataError("checkpoint truncated");
  }
  for (std::size_t n = 0; n < values.size(); ++n) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(
                  static_cast<unsigned char>(bytes[n * 8 + b]))
              << (8 * b);
    }
    values[n] = std::bit_cast<double>(bits);
  }
}

}  // namespace

std::string_view EncoderKindName(EncoderKind kind) {
  return kind == EncoderKind::kMf ? "mf" : "lightgcn";
}

EncoderKind ParseEncoderKind(std::string_view name) {
  const std::string s = Lower(name);
  if (s == "mf") return EncoderKind::kMf;
  if (s == "lightgcn") return EncoderKind::kLightGcn;
  throw ConfigError("unknown encoder '" + std::string(name) + "'");
}

std::string_view ScoreKindName(ScoreKind kind) {
  return kind == ScoreKind::kDot ? "dot" : "cosine";
}

ScoreKind ParseScoreKind(std::string_view name) {
  const std::string s = Lower(name);
  if (s == "dot") return ScoreKind::kDot;
  if (s == "cosine") return ScoreKind::kCosine;
  throw ConfigError("unknown score kind '" + std::string(name) + "'");
}

EmbeddingTable::EmbeddingTable(std::size_t num_users, std::size_t num_items,
                               std::size_t dim)
    : num_users_(num_users),
      num_items_(num_items),
      dim_(dim),
      user_(num_users * dim, 0.0),
      item_(num_items * dim, 0.0) {}

BipartiteGraph::BipartiteGraph(
    std::size_t num_users, std::size_t num_items,
    std::span<const std::pair<std::size_t, std::size_t>> edges) {
  std::vector<std::pair<std::size_t, std::size_t>> sorted(edges.begin(),
                                                          edges.end());
  for (const auto& [u, i] : sorted) {
    if (u >= num_users || i >= num_items) {
      throw DomainError("graph edge index out of range");
    }
  }
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

  user_offsets_.assign(num_users + 1, 0);
  item_offsets_.assign(num_items + 1, 0);
  for (const auto& [u, i] : sorted) {
    ++user_offsets_[u + 1];
    ++item_offsets_[i + 1];
  }
  for (std::size_t u = 0; u < num_users; ++u) {
    user_offsets_[u + 1] += user_offsets_[u];
  }
  for (std::size_t i = 0; i < num_items; ++i) {
    item_offsets_[i + 1] += item_offsets_[i];
  }
  user_neighbors_.resize(sorted.size());
  item_neighbors_.resize(sorted.size());
  std::vector<std::size_t> ufill(user_offsets_.begin(), user_offsets_.end() - 1);
  std::vector<std::size_t> ifill(item_offsets_.begin(), item_offsets_.end() - 1);
  for (const auto& [u, i] : sorted) {
    user_neighbors_[ufill[u]++] = i;
    item_neighbors_[ifill[i]++] = u;
  }
}

BipartiteGraph BipartiteGraph::FromAdjacency(
    std::size_t num_items, const std::vector<std::vector<std::size_t>>& adj) {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t u = 0; u < adj.size(); ++u) {
    for (std::size_t i : adj[u]) edges.emplace_back(u, i);
  }
  return BipartiteGraph(adj.size(), num_items, edges);
}

EmbeddingTable InitEmbeddings(std::size_t num_users, std::size_t num_items,
                              const EncoderConfig& config,
                              std::uint64_t seed) {
  if (num_users == 0 || num_items == 0) {
    throw ConfigError("embedding table needs at least one user and one item");
  }
  if (config.dim == 0) throw ConfigError("embedding dimension must be >= 1");
  if (!(config.init_scale >= 0.0)) {
    throw ConfigError("init_scale must be nonnegative");
  }
  EmbeddingTable table(num_users, num_items, config.dim);
  if (config.init_scale == 0.0) return table;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, config.init_scale);
  for (double& x : table.user_data()) x = normal(rng);
  for (double& x : table.item_data()) x = normal(rng);
  return table;
}

double Dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

double MfScore(const EmbeddingTable& table, std::size_t u, std::size_t i,
               ScoreKind kind) {
  if (u >= table.num_users() || i >= table.num_items()) {
    throw DomainError("score index out of range");
  }
  const auto eu = table.user(u);
  const auto ei = table.item(i);
  const double dot = Dot(eu, ei);
  if (kind == ScoreKind::kDot) return dot;
  const double norm = std::sqrt(Dot(eu, eu) * Dot(ei, ei));
  if (norm == 0.0) throw DomainError("cosine score of a zero-norm vector");
  const double cos = std::clamp(dot / norm, -1.0, 1.0);
  return 0.5 * (1.0 + cos);
}

EmbeddingTable LightGcnPropagate(const EmbeddingTable& table,
                                 const BipartiteGraph& graph,
                                 std::size_t num_layers) {
  if (graph.num_users() != table.num_users() ||
      graph.num_items() != table.num_items()) {
    throw DomainError("graph and embedding table disagree on catalog size");
  }
  if (num_layers == 0) return table;

  std::vector<double> user_scale(graph.num_users(), 0.0);
  std::vector<double> item_scale(graph.num_items(), 0.0);
  for (std::size_t u = 0; u < graph.num_users(); ++u) {
    const auto deg = graph.user_degree(u);
    if (deg > 0) user_scale[u] = 1.0 / std::sqrt(static_cast<double>(deg));
  }
  for (std::size_t i = 0; i < graph.num_items(); ++i) {
    const auto deg = graph.item_degree(i);
    if (deg > 0) item_scale[i] = 1.0 / std::sqrt(static_cast<double>(deg));
  }

  EmbeddingTable sum = table;
  EmbeddingTable layer = table;
  EmbeddingTable next(table.num_users(), table.num_items(), table.dim());
  for (std::size_t k = 0; k < num_layers; ++k) {
    PropagateOnce(layer, graph, user_scale, item_scale, next);
    std::swap(layer, next);
    for (std::size_t n = 0; n < sum.user_data().size(); ++n) {
      sum.user_data()[n] += layer.user_data()[n];
    }
    for (std::size_t n = 0; n < sum.item_data().size(); ++n) {
      sum.item_data()[n] += layer.item_data()[n];
    }
  }
  const double inv = 1.0 / static_cast<double>(num_layers + 1);
  for (double& x : sum.user_data()) x *= inv;
  for (double& x : sum.item_data()) x *= inv;
  return sum;
}

double L2Penalty(const EmbeddingTable& table,
                 std::span<const std::size_t> touched_users,
                 std::span<const std::size_t> touched_items, double lambda) {
  if (lambda == 0.0) return 0.0;
  std::unordered_set<std::size_t> users(touched_users.begin(),
                                        touched_users.end());
  std::unordered_set<std::size_t> items(touched_items.begin(),
                                        touched_items.end());
  double sum = 0.0;
  for (std::size_t u : users) sum += Dot(table.user(u), table.user(u));
  for (std::size_t i : items) sum += Dot(table.item(i), table.item(i));
  return lambda * sum;
}

void SaveCheckpoint(const std::filesystem::path& path,
                    const EmbeddingTable& table,
                    const CheckpointHeader& header) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write checkpoint " + path.string());
  os << kCheckpointMagic << '\n'
     << "num_users=" << table.num_users() << '\n'
     << "num_items=" << table.num_items() << '\n'
     << "dim=" << table.dim() << '\n'
     << "encoder=" << EncoderKindName(header.encoder) << '\n'
     << "num_layers=" << header.num_layers << '\n'
     << "seed=" << header.seed << '\n'
     << "end\n";
  WriteDoubles(os, table.user_data());
  WriteDoubles(os, table.item_data());
  if (!os) throw DataError("failed writing checkpoint " + path.string());
}

std::pair<EmbeddingTable, CheckpointHeader> LoadCheckpoint(
    const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointMagic) {
    throw DataError(path.string() + " is not an embedding checkpoint");
  }
  CheckpointHeader h;
  bool saw_end = false;
  try {
    while (std::getline(is, line)) {
      if (line == "end") {
        saw_end = true;
        break;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw DataError("bad checkpoint header line '" + line + "'");
      }
      const std::string key = line.substr(0, eq);
      const std::string value = line.substr(eq + 1);
      if (key == "num_users") {
        h.num_users = std::stoull(value);
      } else if (key == "num_items") {
        h.num_items = std::stoull(value);
      } else if (key == "dim") {
        h.dim = std::stoull(value);
      } else if (key == "encoder") {
        h.encoder = ParseEncoderKind(value);
      } else if (key == "num_layers") {
        h.num_layers = std::stoull(value);
      } else if (key == "seed") {
        h.seed = std::stoull(value);
      }
    }
  } catch (const std::logic_error&) {
    throw DataError("corrupt checkpoint header in " + path.string());
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
  if (!saw_end || h.dim == 0) {
    throw DataError("incomplete checkpoint header in " + path.string());
  }
  EmbeddingTable table(h.num_users, h.num_items, h.dim);
  ReadDoubles(is, table.user_data());
  ReadDoubles(is, table.item_data());
  return {std::move(table), h};
}

}  // namespace dpl
