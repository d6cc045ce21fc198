#include "dpl/data.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_set>

#include "dpl/errors.h"

namespace dpl {

namespace {

std::string_view Trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> SplitFields(std::string_view line,
                                          std::string_view delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(Trim(line.substr(start)));
      break;
    }
    out.push_back(Trim(line.substr(start, pos - start)));
    start = pos + delim.size();
  }
  return out;
}

template <typename T>
bool ParseNumber(std::string_view s, T& out) {
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::string FormatDouble(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

}  // namespace

std::string_view SplitModeName(SplitMode mode) {
  return mode == SplitMode::kGlobal ? "global" : "per-user";
}

SplitMode ParseSplitMode(std::string_view name) {
  if (name == "global") return SplitMode::kGlobal;
  if (name == "per-user" || name == "per_user") return SplitMode::kPerUser;
  throw ConfigError("unknown split mode '" + std::string(name) +
                    "' (expected global or per-user)");
}

InputFormat InputFormat::Parse(std::string_view name) {
  if (name == "tab" || name == "tsv") return {"\t"};
  if (name == "double-colon" || name == "::" || name == "dat") return {"::"};
  if (name == "comma" || name == "csv" || name == ",") return {","};
  if (name.empty()) throw ConfigError("empty input format");
  return {std::string(name)};
}

std::string InputFormat::Name() const {
  if (delimiter == "\t") return "tab";
  if (delimiter == "::") return "double-colon";
  if (delimiter == ",") return "comma";
  return delimiter;
}

ParseResult ParseInteractions(std::istream& in, const InputFormat& format) {
  if (format.delimiter.empty()) throw ConfigError("empty field delimiter");
  ParseResult result;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view trimmed = Trim(line);
    if (trimmed.empty() || trimmed.front() == '#') continue;
    ++result.lines_read;
    const auto fields = SplitFields(trimmed, format.delimiter);
    auto reject = [&](const std::string& why) {
      result.malformed.push_back("line " + std::to_string(line_no) + ": " +
                                 why);
    };
    if (fields.size() < 2) {
      reject("expected at least 2 fields");
      continue;
    }
    if (fields[0].empty() || fields[1].empty()) {
      reject("empty user or item id");
      continue;
    }
    Interaction x{std::string(fields[0]), std::string(fields[1]), {}, {}};
    if (fields.size() >= 3 && !fields[2].empty()) {
      double rating = 0.0;
      if (!ParseNumber(fields[2], rating)) {
        reject("unparseable rating '" + std::string(fields[2]) + "'");
        continue;
      }
      x.rating = rating;
    }
    if (fields.size() >= 4 && !fields[3].empty()) {
      std::int64_t ts = 0;
      if (!ParseNumber(fields[3], ts)) {
        // Some exports store timestamps as floats.
        double tsf = 0.0;
        if (!ParseNumber(fields[3], tsf) || !std::isfinite(tsf)) {
          reject("unparseable timestamp '" + std::string(fields[3]) + "'");
          continue;
        }
        ts = static_cast<std::int64_t>(tsf);
      }
      x.timestamp = ts;
    }
    result.interactions.push_back(std::move(x));
  }
  if (result.interactions.empty()) {
    throw DataError("no valid interaction lines (" +
                    std::to_string(result.malformed.size()) + " malformed)");
  }
  return result;
}

ParseResult ParseDataset(const std::filesystem::path& path,
                         const InputFormat& format) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read dataset " + path.string());
  try {
    return ParseInteractions(in, format);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::size_t IdMap::Intern(const std::string& id) {
  const auto [it, inserted] = index_.try_emplace(id, external_.size());
  if (inserted) external_.push_back(id);
  return it->second;
}

std::optional<std::size_t> IdMap::Find(const std::string& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

ImplicitFeedback ToImplicit(const std::vector<Interaction>& interactions) {
  ImplicitFeedback out;
  out.positives.reserve(interactions.size());
  for (const Interaction& x : interactions) {
    out.positives.emplace_back(out.users.Intern(x.user),
                               out.items.Intern(x.item));
  }
  std::sort(out.positives.begin(), out.positives.end());
  out.positives.erase(std::unique(out.positives.begin(), out.positives.end()),
                      out.positives.end());
  return out;
}

std::size_t SplitDataset::num_train() const {
  std::size_t n = 0;
  for (const auto& v : train_pos) n += v.size();
  return n;
}

std::size_t SplitDataset::num_test() const {
  std::size_t n = 0;
  for (const auto& v : test_pos) n += v.size();
  return n;
}

bool SplitDataset::IsTrainPositive(std::size_t u, std::size_t i) const {
  const auto& v = train_pos[u];
  return std::binary_search(v.begin(), v.end(), i);
}

SplitDataset SplitHoldout(const ImplicitFeedback& data, double test_fraction,
                          std::uint64_t seed, SplitMode mode) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw ConfigError("test fraction must lie in [0, 1)");
  }
  SplitDataset split;
  split.num_users = data.users.size();
  split.num_items = data.items.size();
  split.users = data.users;
  split.items = data.items;
  split.train_pos.assign(split.num_users, {});
  split.test_pos.assign(split.num_users, {});

  Rng rng(seed);
  if (mode == SplitMode::kGlobal) {
    auto pairs = data.positives;
    std::shuffle(pairs.begin(), pairs.end(), rng);
    const auto n_test = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(pairs.size())));
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      auto& dst = k < n_test ? split.test_pos : split.train_pos;
      dst[pairs[k].first].push_back(pairs[k].second);
    }
  } else {
    std::vector<std::vector<std::size_t>> by_user(split.num_users);
    for (const auto& [u, i] : data.positives) by_user[u].push_back(i);
    for (std::size_t u = 0; u < split.num_users; ++u) {
      auto& items = by_user[u];
      std::shuffle(items.begin(), items.end(), rng);
      const auto n_test = static_cast<std::size_t>(
          std::llround(test_fraction * static_cast<double>(items.size())));
      for (std::size_t k = 0; k < items.size(); ++k) {
        (k < n_test ? split.test_pos : split.train_pos)[u].push_back(items[k]);
      }
    }
  }

  // Users left without an anchor get one test positive back.
  for (std::size_t u = 0; u < split.num_users; ++u) {
    auto& test = split.test_pos[u];
    if (split.train_pos[u].empty() && !test.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, test.size() - 1);
      const std::size_t k = pick(rng);
      split.train_pos[u].push_back(test[k]);
      test.erase(test.begin() + static_cast<std::ptrdiff_t>(k));
    }
  }
  for (auto& v : split.train_pos) std::sort(v.begin(), v.end());
  for (auto& v : split.test_pos) std::sort(v.begin(), v.end());
  split.density = ComputeDensity(split);
  return split;
}

double ComputeDensity(const SplitDataset& split) {
  if (split.num_users == 0 || split.num_items == 0) {
    throw DataError("density of an empty catalog");
  }
  return static_cast<double>(split.num_train() + split.num_test()) /
         (static_cast<double>(split.num_users) *
          static_cast<double>(split.num_items));
}

SplitManifest MakeSplitManifest(const SplitDataset& split, std::uint64_t seed,
                                double test_fraction, SplitMode mode,
                                const std::string& data_path,
                                const InputFormat& format) {
  SplitManifest m;
  m.seed = seed;
  m.test_fraction = test_fraction;
  m.mode = mode;
  m.num_users = split.num_users;
  m.num_items = split.num_items;
  m.num_train = split.num_train();
  m.num_test = split.num_test();
  m.density = split.density;
  m.data_path = data_path;
  m.format = format.Name();
  return m;
}

void WriteSplitManifest(const std::filesystem::path& path,
                        const SplitManifest& m) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write split manifest " + path.string());
  os << "# train/test split manifest\n"
     << "seed=" << m.seed << '\n'
     << "test_fraction=" << FormatDouble(m.test_fraction) << '\n'
     << "split_mode=" << SplitModeName(m.mode) << '\n'
     << "num_users=" << m.num_users << '\n'
     << "num_items=" << m.num_items << '\n'
     << "num_train=" << m.num_train << '\n'
     << "num_test=" << m.num_test << '\n'
     << "density=" << FormatDouble(m.density) << '\n'
     << "data_path=" << m.data_path << '\n'
     << "format=" << m.format << '\n';
}

std::map<std::string, std::string> ReadKeyValueFile(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const std::string_view t = Trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) {
      throw DataError(path.string() + ": expected key=value, got '" +
                      std::string(t) + "'");
    }
    out[std::string(Trim(t.substr(0, eq)))] = std::string(t.substr(eq + 1));
  }
  return out;
}

SplitManifest ReadSplitManifest(const std::filesystem::path& path) {
  const auto kv = ReadKeyValueFile(path);
  auto get = [&](const std::string& key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) {
      throw DataError(path.string() + ": missing key '" + key + "'");
    }
    return it->second;
  };
  SplitManifest m;
  try {
    m.seed = std::stoull(get("seed"));
    m.test_fraction = std::stod(get("test_fraction"));
    m.mode = ParseSplitMode(get("split_mode"));
    m.num_users = std::stoull(get("num_users"));
    m.num_items = std::stoull(get("num_items"));
    m.num_train = std::stoull(get("num_train"));
    m.num_test = std::stoull(get("num_test"));
    m.density = std::stod(get("density"));
  } catch (const ConfigError& e) {
    throw DataError(path.string() + ": " + e.what());
  } catch (const std::logic_error&) {
    throw DataError(path.string() + ": malformed numeric value");
  }
  m.data_path = get("data_path");
  m.format = get("format");
  return m;
}

std::optional<BatchEntry> SampleEntry(const SplitDataset& split, std::size_t u,
                                      std::size_t m, std::size_t n, Rng& rng) {
  if (n == 0) throw ConfigError("sampling needs n >= 1 negatives");
  const auto& pos = split.train_pos.at(u);
  if (pos.empty()) return std::nullopt;
  std::uniform_int_distribution<std::size_t> pick(0, pos.size() - 1);
  return SampleEntryFor(split, u, pos[pick(rng)], m, n, rng);
}

std::optional<BatchEntry> SampleEntryFor(const SplitDataset& split,
                                         std::size_t u, std::size_t item,
                                         std::size_t m, std::size_t n,
                                         Rng& rng) {
  if (n == 0) throw ConfigError("sampling needs n >= 1 negatives");
  const auto& pos = split.train_pos.at(u);
  if (pos.empty() || pos.size() >= split.num_items) return std::nullopt;
  const auto it = std::lower_bound(pos.begin(), pos.end(), item);
  if (it == pos.end() || *it != item) {
    throw DomainError("anchor item is not a training positive of the user");
  }
  const auto anchor_pos = static_cast<std::size_t>(it - pos.begin());

  BatchEntry entry;
  entry.user = u;
  entry.item = item;
  entry.extra_pos.reserve(m);
  const std::size_t others = pos.size() - 1;
  // Position k in [0, others) of train_pos[u] with the anchor removed.
  auto other_at = [&](std::size_t k) {
    return pos[k < anchor_pos ? k : k + 1];
  };
  if (m > 0 && others == 0) {
    entry.extra_pos.assign(m, item);
  } else if (m > 0 && others >= m) {
    // Floyd's algorithm: m distinct positions out of `others`.
    std::vector<std::size_t> chosen;
    chosen.reserve(m);
    for (std::size_t j = others - m; j < others; ++j) {
      std::uniform_int_distribution<std::size_t> d(0, j);
      const std::size_t t = d(rng);
      if (std::find(chosen.begin(), chosen.end(), t) == chosen.end()) {
        chosen.push_back(t);
      } else {
        chosen.push_back(j);
      }
    }
    for (std::size_t k : chosen) entry.extra_pos.push_back(other_at(k));
  } else if (m > 0) {
    std::uniform_int_distribution<std::size_t> d(0, others - 1);
    for (std::size_t k = 0; k < m; ++k) {
      entry.extra_pos.push_back(other_at(d(rng)));
    }
  }

  std::uniform_int_distribution<std::size_t> any_item(0, split.num_items - 1);
  entry.negs.reserve(n);
  while (entry.negs.size() < n) {
    const std::size_t j = any_item(rng);
    if (!std::binary_search(pos.begin(), pos.end(), j)) entry.negs.push_back(j);
  }
  return entry;
}

std::vector<BatchEntry> SampleEpoch(const SplitDataset& split, std::size_t m,
                                    std::size_t n, Rng& rng) {
  std::vector<std::pair<std::size_t, std::size_t>> order;
  order.reserve(split.num_train());
  for (std::size_t u = 0; u < split.num_users; ++u) {
    for (std::size_t i : split.train_pos[u]) order.emplace_back(u, i);
  }
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<BatchEntry> entries;
  entries.reserve(order.size());
  for (const auto& [u, i] : order) {
    if (auto e = SampleEntryFor(split, u, i, m, n, rng)) {
      entries.push_back(std::move(*e));
    }
  }
  return entries;
}

FileFingerprint FingerprintFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  FileFingerprint fp;
  fp.checksum = 14695981039346656037ull;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    const auto got = in.gcount();
    for (std::streamsize k = 0; k < got; ++k) {
      fp.checksum ^= static_cast<unsigned char>(buf[k]);
      fp.checksum *= 1099511628211ull;
      if (buf[k] == '\n') ++fp.lines;
    }
  }
  return fp;
}

}  // namespace dpl
