#include "aiwc/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

namespace aiwc::entropy {

namespace {

// Entropy of the counts visited in the given order.
template <class It> double entropy_of(It first, It last, std::uint64_t total) {
  const double t = static_cast<double>(total);
  double h = 0.0;
  for (; first != last; ++first) {
    const double p = static_cast<double>(*first) / t;
    h -= p * std::log2(p);
  }
  return h <= 0.0 ? 0.0 : h;
}

// Entropy of the histogram with keys >> shift, computed from key-sorted
// pairs: equal shifted keys are contiguous so runs merge without hashing.
double shifted_entropy(CountPairs sorted, std::uint64_t total, int shift,
                       std::vector<std::uint64_t> &scratch) {
  scratch.clear();
  std::size_t i = 0;
  while (i < sorted.size()) {
    const std::uint64_t key = sorted[i].first >> shift;
    std::uint64_t c = 0;
    while (i < sorted.size() && (sorted[i].first >> shift) == key)
      c += sorted[i++].second;
    scratch.push_back(c);
  }
  return entropy_of(scratch.begin(), scratch.end(), total);
}

} // namespace

double shannon_entropy(CountPairs sorted, std::uint64_t total) {
  if (total == 0)
    throw EmptyHistogram();
  std::vector<std::uint64_t> scratch;
  return shifted_entropy(sorted, total, 0, scratch);
}

std::array<double, kMaxSkip> local_entropies(CountPairs sorted, std::uint64_t total) {
  if (total == 0)
    throw EmptyHistogram();
  std::vector<std::uint64_t> scratch;
  scratch.reserve(sorted.size());
  std::array<double, kMaxSkip> out{};
  for (int n = 1; n <= kMaxSkip; ++n)
    out[n - 1] = shifted_entropy(sorted, total, n, scratch);
  return out;
}

std::size_t coverage_count(CountPairs sorted, std::uint64_t total, double fraction) {
  detail::check_fraction(fraction);
  if (total == 0)
    throw EmptyHistogram();
  std::vector<std::uint64_t> counts(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i)
    counts[i] = sorted[i].second;
  std::sort(counts.begin(), counts.end(), std::greater<>());
  std::uint64_t cumulative = 0;
  std::size_t k = 0;
  while (!detail::reaches_fraction(cumulative, total, fraction))
    cumulative += counts[k++];
  return k;
}

double shannon_entropy(const Histogram &h) { return shannon_entropy(h.sorted(), h.total()); }

double local_entropy(const Histogram &h, int bits_skipped) {
  if (bits_skipped < 1 || bits_skipped > kMaxSkip)
    throw InvalidSkip(bits_skipped);
  if (h.total() == 0)
    throw EmptyHistogram();
  std::vector<std::uint64_t> scratch;
  return shifted_entropy(h.sorted(), h.total(), bits_skipped, scratch);
}

std::array<double, kMaxSkip> local_entropies(const Histogram &h) {
  return local_entropies(h.sorted(), h.total());
}

namespace detail {

void check_fraction(double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw Error("coverage fraction must lie in [0, 1], got " + std::to_string(fraction));
}

// cumulative >= fraction * total, with fraction rounded to 9 decimal places
// so that decimal thresholds such as 0.9 compare exactly.
bool reaches_fraction(std::uint64_t cumulative, std::uint64_t total, double fraction) {
  constexpr std::uint64_t kScale = 1'000'000'000;
  const auto num = static_cast<std::uint64_t>(std::llround(fraction * kScale));
  return static_cast<unsigned __int128>(cumulative) * kScale >=
         static_cast<unsigned __int128>(num) * total;
}

} // namespace detail

// ---------------------------------------------------------------------------

PatternTable::PatternTable(unsigned history_len) : history_len_(history_len) {
  if (history_len == 0 || history_len > 20)
    throw Error("branch history length must be in 1..20");
  taken_.assign(std::size_t{1} << history_len, 0);
  total_.assign(std::size_t{1} << history_len, 0);
}

void PatternTable::add_record(const std::vector<bool> &outcomes) {
  const std::uint32_t mask = (std::uint32_t{1} << history_len_) - 1;
  std::uint32_t pattern = 0;
  executions_ += outcomes.size();
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const bool bit = outcomes[i];
    if (i >= history_len_) {
      ++total_[pattern];
      taken_[pattern] += bit;
      ++observations_;
    }
    pattern = ((pattern << 1) | static_cast<std::uint32_t>(bit)) & mask;
  }
}

void PatternTable::merge(const PatternTable &other) {
  if (other.history_len_ != history_len_)
    throw Error("cannot merge pattern tables with different history lengths");
  for (std::size_t i = 0; i < total_.size(); ++i) {
    taken_[i] += other.taken_[i];
    total_[i] += other.total_[i];
  }
  executions_ += other.executions_;
  observations_ += other.observations_;
}

std::vector<PatternStats> PatternTable::patterns() const {
  std::vector<PatternStats> out;
  for (std::size_t i = 0; i < total_.size(); ++i)
    if (total_[i] != 0)
      out.push_back(PatternStats{static_cast<std::uint32_t>(i), taken_[i], total_[i]});
  return out;
}

std::uint64_t PatternTable::minority_outcomes() const noexcept {
  std::uint64_t m = 0;
  for (std::size_t i = 0; i < total_.size(); ++i)
    m += std::min(taken_[i], total_[i] - taken_[i]);
  return m;
}

double binary_entropy(double p) noexcept {
  if (p <= 0.0 || p >= 1.0)
    return 0.0;
  return -p * std::log2(p) - (1.0 - p) * std::log2(1.0 - p);
}

BranchEntropy branch_entropy(const PatternTable &table, double linear_scale) {
  BranchEntropy out;
  out.executions = table.executions();
  out.observations = table.observations();
  out.no_branches = table.executions() == 0;
  if (table.executions() > 0)
    out.warmup_excluded_fraction =
        static_cast<double>(table.executions() - table.observations()) /
        static_cast<double>(table.executions());
  if (table.observations() == 0)
    return out;
  const double n = static_cast<double>(table.observations());
  double yokota = 0.0;
  for (const auto &ps : table.patterns())
    yokota += static_cast<double>(ps.total) / n * binary_entropy(ps.p());
  out.yokota = yokota;
  out.linear = linear_scale * static_cast<double>(table.minority_outcomes()) / n;
  return out;
}

namespace {
PatternTable table_of(std::span<const BranchRecord> records, unsigned history_len) {
  PatternTable t(history_len);
  for (const auto &r : records)
    t.add_record(r.outcomes);
  return t;
}
} // namespace

double branch_entropy_yokota(std::span<const BranchRecord> records, unsigned history_len) {
  return branch_entropy(table_of(records, history_len)).yokota;
}

double branch_entropy_linear(std::span<const BranchRecord> records, unsigned history_len,
                             double linear_scale) {
  return branch_entropy(table_of(records, history_len), linear_scale).linear;
}

} // namespace aiwc::entropy
