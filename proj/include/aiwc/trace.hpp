#pragma once

// Execution-event vocabulary shared by the simulator, the metrics engine and
// external producers, plus the line-oriented `.aiwctrace` codec.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace aiwc::trace {

using Dim3 = std::array<std::uint64_t, 3>;

struct WorkItemId {
  Dim3 global_id{};
  Dim3 local_id{};
  Dim3 group_id{};
  friend bool operator==(const WorkItemId &, const WorkItemId &) = default;
};

struct KernelBegin {
  std::string kernel_name;
  std::uint64_t invocation = 0;
  Dim3 global_size{1, 1, 1};
  Dim3 local_size{1, 1, 1};
  friend bool operator==(const KernelBegin &, const KernelBegin &) = default;
};
struct KernelEnd {
  friend bool operator==(const KernelEnd &, const KernelEnd &) = default;
};
struct WorkGroupBegin {
  Dim3 group_id{};
  friend bool operator==(const WorkGroupBegin &, const WorkGroupBegin &) = default;
};
struct WorkGroupEnd {
  Dim3 group_id{};
  friend bool operator==(const WorkGroupEnd &, const WorkGroupEnd &) = default;
};
struct WorkItemBegin {
  WorkItemId work_item;
  friend bool operator==(const WorkItemBegin &, const WorkItemBegin &) = default;
};
struct WorkItemResume {
  WorkItemId work_item;
  friend bool operator==(const WorkItemResume &, const WorkItemResume &) = default;
};
struct WorkItemEnd {
  WorkItemId work_item;
  friend bool operator==(const WorkItemEnd &, const WorkItemEnd &) = default;
};
/// One executed instruction; `width` is the result vector element count.
struct Instruction {
  std::string opcode;
  std::uint32_t width = 1;
  friend bool operator==(const Instruction &, const Instruction &) = default;
};
/// Resolution of a two-target conditional branch. `site` is the source line.
struct Branch {
  std::uint64_t site = 0;
  bool taken = false;
  friend bool operator==(const Branch &, const Branch &) = default;
};

enum class MemOp : std::uint8_t { load, store, atomic_load, atomic_store };

constexpr bool is_read(MemOp op) noexcept {
  return op == MemOp::load || op == MemOp::atomic_load;
}
std::string_view to_string(MemOp op) noexcept;

struct Memory {
  MemOp op = MemOp::load;
  std::uint64_t addr = 0;
  friend bool operator==(const Memory &, const Memory &) = default;
};
struct Barrier {
  friend bool operator==(const Barrier &, const Barrier &) = default;
};

using TraceEvent =
    std::variant<KernelBegin, KernelEnd, WorkGroupBegin, WorkGroupEnd,
                 WorkItemBegin, WorkItemResume, WorkItemEnd, Instruction,
                 Branch, Memory, Barrier>;

/// Variant tag as written in the `ev` field.
std::string_view tag_of(const TraceEvent &event) noexcept;

/// Canonical single-line encoding (no trailing newline).
std::string encode_event(const TraceEvent &event);

/// Throws MalformedEvent carrying `line_no` on any syntax or schema problem.
TraceEvent decode_event(std::string_view line, std::size_t line_no = 1);

/// Receiver of a stream of events, in emission order.
class EventSink {
public:
  virtual ~EventSink() = default;
  virtual void on_event(const TraceEvent &event) = 0;
};

class CollectingSink final : public EventSink {
public:
  void on_event(const TraceEvent &event) override { events.push_back(event); }
  std::vector<TraceEvent> events;
};

/// Fans each event out to several sinks in order.
class TeeSink final : public EventSink {
public:
  explicit TeeSink(std::vector<EventSink *> sinks) : sinks_(std::move(sinks)) {}
  void on_event(const TraceEvent &event) override {
    for (auto *s : sinks_)
      s->on_event(event);
  }

private:
  std::vector<EventSink *> sinks_;
};

/// Writes `.aiwctrace` lines.
class TraceWriter final : public EventSink {
public:
  explicit TraceWriter(std::ostream &out) : out_(out) {}
  void on_event(const TraceEvent &event) override;

private:
  std::ostream &out_;
};

/// Streams a `.aiwctrace` file, skipping `#` comments. Blank lines are
/// malformed. Line numbers are 1-based physical lines.
void read_trace(std::istream &in,
                const std::function<void(const TraceEvent &, std::size_t line_no)> &fn);
std::vector<TraceEvent> read_trace(std::istream &in);

// ---- stream validation ----

enum class Rule : std::uint8_t {
  missing_kernel_begin,
  duplicate_kernel_begin,
  event_after_kernel_end,
  missing_kernel_end,
  group_nesting,
  group_out_of_range,
  group_repeated,
  work_item_nesting,
  work_item_identity,
  work_item_repeated,
  resume_without_barrier,
  event_outside_segment,
  branch_without_instruction,
  invalid_payload,
  barrier_divergence,
  incomplete_group,
};
std::string_view to_string(Rule rule) noexcept;

struct Violation {
  std::size_t event_index = 0;
  Rule rule{};
  std::string detail;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const noexcept { return violations.empty(); }
};

/// Incremental checker for the stream nesting rules. Feed events with
/// observe(), then call finish() once.
class StreamValidator {
public:
  StreamValidator();
  ~StreamValidator();
  StreamValidator(StreamValidator &&) noexcept;
  StreamValidator &operator=(StreamValidator &&) noexcept;

  /// Returns false if this event produced at least one new violation.
  bool observe(const TraceEvent &event) {
    if (fast_) {
      if (const auto *ins = std::get_if<Instruction>(&event)) {
        if (ins->width != 0 && !ins->opcode.empty()) {
          fast_prev_br_ = ins->opcode.size() == 2 && ins->opcode[0] == 'b' && ins->opcode[1] == 'r';
          ++fast_count_;
          return true;
        }
      } else if (std::holds_alternative<Memory>(event) ||
                 (fast_prev_br_ && std::holds_alternative<Branch>(event))) {
        fast_prev_br_ = false;
        ++fast_count_;
        return true;
      }
    }
    return observe_slow(event);
  }
  /// Runs end-of-stream checks and hands back the accumulated report.
  ValidationReport finish();
  const std::vector<Violation> &violations() const noexcept;

private:
  struct State;
  bool observe_slow(const TraceEvent &event);
  void sync();

  std::unique_ptr<State> state_;
  // Inside an open work-item segment, instr/mem/branch events only need the
  // checks above; the full state catches up on the next other event.
  bool fast_ = false;
  bool fast_prev_br_ = false;
  std::size_t fast_count_ = 0;
};

ValidationReport validate_stream(std::span<const TraceEvent> events);

} // namespace aiwc::trace
