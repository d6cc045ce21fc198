#ifndef DPL_DATA_H_
#define DPL_DATA_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace dpl {

struct Interaction {
  std::string user;
  std::string item;
  std::optional<double> rating;
  std::optional<std::int64_t> timestamp;
};

// Field separator of an interaction file. Named presets cover the
// MovieLens layouts; anything else is taken literally.
struct InputFormat {
  std::string delimiter = "\t";

  // "tab", "double-colon" / "::", "comma" / "csv", or a literal delimiter.
  static InputFormat Parse(std::string_view name);
  std::string Name() const;
};

struct ParseResult {
  std::vector<Interaction> interactions;
  std::size_t lines_read = 0;
  // "line N: reason" for each malformed line that was skipped.
  std::vector<std::string> malformed;
};

// One interaction per non-empty line: user, item[, rating[, timestamp]].
// Blank lines and lines starting with '#' are ignored. Throws DataError if
// the input yields no valid line.
ParseResult ParseInteractions(std::istream& in, const InputFormat& format);
// As above; also throws DataError if the file cannot be opened.
ParseResult ParseDataset(const std::filesystem::path& path,
                         const InputFormat& format);

// External id <-> dense index bijection, indices assigned in order of
// first appearance.
class IdMap {
 public:
  std::size_t Intern(const std::string& id);
  std::optional<std::size_t> Find(const std::string& id) const;
  const std::string& External(std::size_t index) const {
    return external_[index];
  }
  std::size_t size() const { return external_.size(); }

 private:
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::string> external_;
};

struct ImplicitFeedback {
  IdMap users;
  IdMap items;
  // Unique (user, item) index pairs, sorted.
  std::vector<std::pair<std::size_t, std::size_t>> positives;
};

// Every rated pair becomes a positive, whatever the rating; duplicates
// collapse to one.
ImplicitFeedback ToImplicit(const std::vector<Interaction>& interactions);

enum class SplitMode {
  kGlobal,   // One shuffle over all positives.
  kPerUser,  // Each user's positives are split separately.
};

std::string_view SplitModeName(SplitMode mode);
SplitMode ParseSplitMode(std::string_view name);  // "global" | "per-user"

struct SplitDataset {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::vector<std::vector<std::size_t>> train_pos;  // sorted per user
  std::vector<std::vector<std::size_t>> test_pos;   // sorted per user
  double density = 0.0;
  IdMap users;
  IdMap items;

  std::size_t num_train() const;
  std::size_t num_test() const;
  bool IsTrainPositive(std::size_t u, std::size_t i) const;
};

// Seeded random holdout of test_fraction of the positives. A user whose
// positives all land in test gets one of them (chosen at random) moved
// back to train. Throws ConfigError unless 0 <= test_fraction < 1.
SplitDataset SplitHoldout(const ImplicitFeedback& data, double test_fraction,
                          std::uint64_t seed,
                          SplitMode mode = SplitMode::kGlobal);

// |train + test positives| / (num_users * num_items).
double ComputeDensity(const SplitDataset& split);

struct SplitManifest {
  std::uint64_t seed = 0;
  double test_fraction = 0.0;
  SplitMode mode = SplitMode::kGlobal;
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::size_t num_train = 0;
  std::size_t num_test = 0;
  double density = 0.0;
  std::string data_path;
  std::string format;
};

SplitManifest MakeSplitManifest(const SplitDataset& split, std::uint64_t seed,
                                double test_fraction, SplitMode mode,
                                const std::string& data_path,
                                const InputFormat& format);
void WriteSplitManifest(const std::filesystem::path& path,
                        const SplitManifest& manifest);
SplitManifest ReadSplitManifest(const std::filesystem::path& path);

// Reads a flat key=value file. '#' starts a comment line.
std::map<std::string, std::string> ReadKeyValueFile(
    const std::filesystem::path& path);

// The (u, i, i_1..i_M, j_1..j_N) training record.
struct BatchEntry {
  std::size_t user = 0;
  std::size_t item = 0;
  std::vector<std::size_t> extra_pos;
  std::vector<std::size_t> negs;
};

using Rng = std::mt19937_64;

// Samples an entry for user u with i drawn uniformly from train_pos[u].
// Returns nullopt (skip signal) when u has no training positives or no
// unlabeled items. Throws ConfigError if n == 0.
std::optional<BatchEntry> SampleEntry(const SplitDataset& split, std::size_t u,
                                      std::size_t m, std::size_t n, Rng& rng);

// As SampleEntry, with the labeled positive fixed to `item`.
//   extra_pos: m draws from train_pos[u] \ {item}, without replacement when
//              at least m are available, otherwise with replacement; a
//              user whose only positive is `item` gets `item` repeated.
//   negs:      n uniform draws with replacement from items outside
//              train_pos[u], by rejection.
std::optional<BatchEntry> SampleEntryFor(const SplitDataset& split,
                                         std::size_t u, std::size_t item,
                                         std::size_t m, std::size_t n,
                                         Rng& rng);

// One epoch worth of entries: one per training positive, in a shuffled
// order, each with freshly drawn extra positives and negatives.
std::vector<BatchEntry> SampleEpoch(const SplitDataset& split, std::size_t m,
                                    std::size_t n, Rng& rng);

// 64-bit FNV-1a over the file's bytes, plus its line count.
struct FileFingerprint {
  std::uint64_t checksum = 0;
  std::size_t lines = 0;
};
FileFingerprint FingerprintFile(const std::filesystem::path& path);

}  // namespace dpl

#endif  // DPL_DATA_H_
