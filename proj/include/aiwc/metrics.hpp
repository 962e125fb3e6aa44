#pragma once

// Single-pass metric collection over a trace stream and finalization into
// the full per-kernel metric report.

#include "aiwc/entropy.hpp"
#include "aiwc/trace.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace aiwc::metrics {

struct Limits {
  /// Approximate bound on histogram and branch-history memory.
  std::uint64_t memory_cap_bytes = std::uint64_t{8} << 30;
};

/// Reads AIWC_MEM_CAP_BYTES when set, otherwise returns `fallback`.
Limits limits_from_env(Limits fallback = {});

/// Per-kernel-invocation metric state. Branch outcomes are kept per
/// (work-group, site) while a group runs and folded into `branch_patterns`
/// when the group ends.
struct KernelAccumulator {
  std::string kernel_name;
  std::vector<std::uint64_t> invocations;

  entropy::BasicHistogram<std::string> opcode_histogram;
  entropy::Histogram read_addresses;
  entropy::Histogram write_addresses;
  entropy::PatternTable branch_patterns;
  entropy::Histogram branch_site_executions;
  std::vector<std::uint64_t> itb_samples;
  std::vector<std::uint64_t> ipt_samples;
  /// Result width -> number of instructions with that width.
  entropy::Histogram simd_widths;
  std::uint64_t barriers_hit = 0;
  std::uint64_t work_items = 0;
  std::uint64_t total_instructions = 0;
  std::uint64_t atomic_accesses = 0;

  /// LMAE per merged invocation; empty until a merge happens.
  std::vector<std::array<double, entropy::kMaxSkip>> invocation_lmae;

  /// Histograms add, sample lists concatenate. Throws IncompatibleReports
  /// on differing kernel names unless `allow_mixed_kernels`.
  void merge(const KernelAccumulator &other, bool allow_mixed_kernels = false);

  /// Throws InvalidStream naming the first broken accumulator invariant.
  void check_invariants() const;
};

/// Streaming consumer: validates each event and updates the accumulator.
/// Throws InvalidStream on the first rule violation and TraceTooLarge when
/// the memory cap is exceeded.
class Consumer final : public trace::EventSink {
public:
  explicit Consumer(Limits limits = {});
  ~Consumer() override;
  Consumer(Consumer &&) noexcept;
  Consumer &operator=(Consumer &&) noexcept;

  void on_event(const trace::TraceEvent &event) override;
  /// Completes end-of-stream validation and returns the accumulator.
  KernelAccumulator finish();

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

KernelAccumulator consume(std::span<const trace::TraceEvent> events, Limits limits = {});

struct DistributionSummary {
  std::uint64_t min = 0;
  std::uint64_t max = 0;
  double median = 0.0;
  double mean = 0.0;
  double sd = 0.0; // population
};

/// Throws EmptySample on an empty list. Even-sized samples use the midpoint
/// of the two central order statistics as median.
DistributionSummary summarize_distribution(std::span<const std::uint64_t> samples);

struct ReportFlags {
  bool no_branches = false;
  double warmup_excluded_fraction = 0.0;
  /// More than 10% of branch executions fell inside the history warm-up.
  bool warmup_excessive = false;
  bool unique_rw_ratio_infinite = false;
  bool no_reads = false;
  bool no_writes = false;
  bool no_memory = false;
  bool no_itb_samples = false;
  friend bool operator==(const ReportFlags &, const ReportFlags &) = default;
};

/// Finalized metric set for one kernel invocation or a merged run.
struct AiwcReport {
  std::string kernel;
  std::vector<std::uint64_t> invocations;

  // compute
  std::uint64_t opcode = 0;
  std::uint64_t total_instruction_count = 0;
  // parallelism
  std::uint64_t work_items = 0;
  std::uint64_t total_barriers_hit = 0;
  std::uint64_t min_itb = 0;
  std::uint64_t max_itb = 0;
  double median_itb = 0.0;
  std::uint64_t min_ipt = 0;
  std::uint64_t max_ipt = 0;
  double median_ipt = 0.0;
  std::uint64_t max_simd_width = 0;
  double mean_simd_width = 0.0;
  double sd_simd_width = 0.0;
  // memory
  std::uint64_t total_memory_footprint = 0;
  std::uint64_t footprint_90 = 0;
  std::uint64_t unique_reads = 0;
  std::uint64_t unique_writes = 0;
  double unique_rw_ratio = 0.0; // +inf when unique_writes == 0
  std::uint64_t total_reads = 0;
  std::uint64_t total_writes = 0;
  double reread_ratio = 0.0;
  double rewrite_ratio = 0.0;
  double gmae = 0.0;
  std::array<double, entropy::kMaxSkip> lmae{};
  // control
  std::uint64_t total_unique_branch_instructions = 0;
  std::uint64_t branch_90 = 0;
  double yokota_entropy = 0.0;
  double linear_entropy = 0.0;

  // auxiliary
  double mean_itb = 0.0;
  std::uint64_t itb_sample_count = 0;
  std::uint64_t simd_width_sum = 0;
  std::vector<std::array<double, entropy::kMaxSkip>> lmae_per_invocation;

  ReportFlags flags;

  friend bool operator==(const AiwcReport &, const AiwcReport &) = default;
};

struct FinalizeOptions {
  /// 1 reports min(p, 1-p); 2 gives the [0, 1] scaling.
  double linear_entropy_scale = 1.0;
};

AiwcReport finalize(const KernelAccumulator &acc, const FinalizeOptions &options = {});

/// Throws InvalidStream describing the first violated report invariant.
void check_report_invariants(const AiwcReport &report);

} // namespace aiwc::metrics
