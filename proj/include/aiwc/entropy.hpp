#pragma once

// Numeric kernels over access histograms and branch outcome histories.
// All entropies are in bits (log base 2).

#include "aiwc/error.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

namespace aiwc::entropy {

/// Occurrence counts keyed by address, opcode, branch site, ... Entries with a
/// zero count are never stored.
template <class Key> class BasicHistogram {
public:
  using map_type = std::unordered_map<Key, std::uint64_t>;

  void add(const Key &key, std::uint64_t n = 1) {
    if (n == 0)
      return;
    counts_[key] += n;
    total_ += n;
  }
  void merge(const BasicHistogram &other) {
    for (const auto &[k, c] : other.counts_)
      add(k, c);
  }
  std::uint64_t count(const Key &key) const {
    auto it = counts_.find(key);
    return it == counts_.end() ? 0 : it->second;
  }
  std::uint64_t total() const noexcept { return total_; }
  std::size_t size() const noexcept { return counts_.size(); }
  bool empty() const noexcept { return counts_.empty(); }
  const map_type &counts() const noexcept { return counts_; }
  auto begin() const { return counts_.begin(); }
  auto end() const { return counts_.end(); }

  /// (key, count) pairs in ascending key order.
  std::vector<std::pair<Key, std::uint64_t>> sorted() const {
    std::vector<std::pair<Key, std::uint64_t>> v(counts_.begin(), counts_.end());
    std::sort(v.begin(), v.end());
    return v;
  }

  friend bool operator==(const BasicHistogram &a, const BasicHistogram &b) {
    return a.total_ == b.total_ && a.counts_ == b.counts_;
  }

private:
  map_type counts_;
  std::uint64_t total_ = 0;
};

using Histogram = BasicHistogram<std::uint64_t>;

inline constexpr int kMaxSkip = 10;
inline constexpr unsigned kHistoryLength = 16;

/// -sum p log2 p over the histogram's relative frequencies. Summation runs
/// in ascending key order so the result does not depend on insertion order.
double shannon_entropy(const Histogram &h);

/// Entropy after dropping the `bits_skipped` low-order key bits (1..10).
double local_entropy(const Histogram &h, int bits_skipped);

/// local_entropy for skips 1..10 in one sort; element i is skip i+1.
std::array<double, kMaxSkip> local_entropies(const Histogram &h);

/// Smallest number of keys whose largest counts reach `fraction` of the
/// total (ties broken by ascending key). fraction must lie in [0, 1].
template <class Key>
std::size_t coverage_count(const BasicHistogram<Key> &h, double fraction = 0.9);

// The same three over (key, count) pairs already in ascending key order,
// for callers that hold sorted counts and want to avoid re-sorting.
using CountPairs = std::span<const std::pair<std::uint64_t, std::uint64_t>>;
double shannon_entropy(CountPairs sorted, std::uint64_t total);
std::array<double, kMaxSkip> local_entropies(CountPairs sorted, std::uint64_t total);
std::size_t coverage_count(CountPairs sorted, std::uint64_t total, double fraction = 0.9);

// ---- branch entropy ----

struct BranchRecord {
  std::uint64_t site = 0;
  std::vector<bool> outcomes; // program order, taken = true
};

struct PatternStats {
  std::uint32_t pattern = 0;
  std::uint64_t taken = 0;
  std::uint64_t total = 0;
  double p() const noexcept {
    return total == 0 ? 0.0 : static_cast<double>(taken) / static_cast<double>(total);
  }
};

/// Pooled (history pattern -> outcome) counts. Each record contributes one
/// observation per outcome after its first `history_len` outcomes; the
/// pattern is the record's previous `history_len` outcomes, newest in bit 0.
class PatternTable {
public:
  explicit PatternTable(unsigned history_len = kHistoryLength);

  void add_record(const std::vector<bool> &outcomes);
  void merge(const PatternTable &other);

  unsigned history_length() const noexcept { return history_len_; }
  std::uint64_t executions() const noexcept { return executions_; }
  std::uint64_t observations() const noexcept { return observations_; }
  /// Patterns with at least one observation, ascending.
  std::vector<PatternStats> patterns() const;
  /// Sum over patterns of min(taken, total - taken).
  std::uint64_t minority_outcomes() const noexcept;

  friend bool operator==(const PatternTable &, const PatternTable &) = default;

private:
  unsigned history_len_;
  std::vector<std::uint64_t> taken_;
  std::vector<std::uint64_t> total_;
  std::uint64_t executions_ = 0;
  std::uint64_t observations_ = 0;
};

/// Binary Shannon entropy, H(0) = H(1) = 0.
double binary_entropy(double p) noexcept;

struct BranchEntropy {
  double yokota = 0.0;
  double linear = 0.0;
  bool no_branches = true;
  std::uint64_t executions = 0;
  std::uint64_t observations = 0;
  double warmup_excluded_fraction = 0.0;
};

/// Both branch scores from a pooled table. `linear_scale` multiplies the
/// min(p, 1-p) score (1 gives a [0, 0.5] range, 2 gives [0, 1]).
BranchEntropy branch_entropy(const PatternTable &table, double linear_scale = 1.0);

double branch_entropy_yokota(std::span<const BranchRecord> records,
                             unsigned history_len = kHistoryLength);
double branch_entropy_linear(std::span<const BranchRecord> records,
                             unsigned history_len = kHistoryLength,
                             double linear_scale = 1.0);

// ---- template definitions ----

namespace detail {
bool reaches_fraction(std::uint64_t cumulative, std::uint64_t total, double fraction);
void check_fraction(double fraction);
} // namespace detail

template <class Key>
std::size_t coverage_count(const BasicHistogram<Key> &h, double fraction) {
  detail::check_fraction(fraction);
  if (h.total() == 0)
    throw EmptyHistogram();
  auto entries = h.sorted();
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto &a, const auto &b) { return a.second > b.second; });
  std::uint64_t cumulative = 0;
  std::size_t k = 0;
  while (!detail::reaches_fraction(cumulative, h.total(), fraction)) {
    cumulative += entries[k].second;
    ++k;
  }
  return k;
}

} // namespace aiwc::entropy
