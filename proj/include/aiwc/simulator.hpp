#pragma once

// Deterministic NDRange interpreter for the `.aiwck` IR. Work-items of a
// group run one at a time in lexicographic local-id order until they hit a
// barrier or return; once every member waits at the barrier they resume in
// the same order.

#include "aiwc/kernel.hpp"
#include "aiwc/trace.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace aiwc::sim {

/// Bytes per buffer element used for address generation.
inline constexpr std::uint64_t kElementBytes = 4;
inline constexpr std::uint64_t kDefaultStepLimit = 100'000'000;

struct BufferData {
  std::vector<std::int64_t> values;
  /// Byte address of element 0; assigned automatically when absent.
  std::optional<std::uint64_t> base;
};

struct NDRangeConfig {
  trace::Dim3 global_size{1, 1, 1};
  trace::Dim3 local_size{1, 1, 1};
  std::map<std::string, BufferData> buffers;
};

struct SimOptions {
  std::uint64_t step_limit = kDefaultStepLimit;
  std::uint64_t invocation = 0;
  /// Execution order of work-groups as linear indices (dimension 0 most
  /// significant). Empty means lexicographic. Must be a permutation.
  std::vector<std::uint64_t> group_order;
};

struct SimResult {
  std::uint64_t instructions = 0;
  std::uint64_t work_items = 0;
  /// Buffer contents after the kernel finished.
  std::map<std::string, BufferData> buffers;
};

/// Throws ConfigError when local does not divide global, a size is zero,
/// or buffer address ranges overlap.
void validate_config(const NDRangeConfig &cfg);

/// Assigns base addresses to buffers that lack one: buffers are laid out in
/// name order from 0x10000, each starting on a 4096-byte boundary after the
/// previous buffer (or explicitly placed buffer) ends.
void assign_base_addresses(NDRangeConfig &cfg);

/// Runs the kernel and streams its events into `sink`. Throws
/// BarrierDivergence, OutOfBoundsAccess, StepLimitExceeded or ConfigError.
SimResult simulate(const kernel::KernelProgram &program, const NDRangeConfig &cfg,
                   trace::EventSink &sink, const SimOptions &options = {});

/// Materialized form: the whole trace stream, KernelBegin first.
std::vector<trace::TraceEvent> simulate(const kernel::KernelProgram &program,
                                        const NDRangeConfig &cfg,
                                        const SimOptions &options = {});

} // namespace aiwc::sim
