#include "aiwc/metrics.hpp"

#include "aiwc/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <unordered_map>

namespace aiwc::metrics {

using trace::TraceEvent;

Limits limits_from_env(Limits fallback) {
  if (const char *v = std::getenv("AIWC_MEM_CAP_BYTES"); v && *v) {
    char *end = nullptr;
    const unsigned long long cap = std::strtoull(v, &end, 10);
    if (end && *end == '\0')
      fallback.memory_cap_bytes = cap;
  }
  return fallback;
}

// ---------------------------------------------------------------------------
// Accumulator

namespace {

// Read and write counts combined per address, ascending by address.
std::vector<std::pair<std::uint64_t, std::uint64_t>> merged_addresses(const KernelAccumulator &acc) {
  const auto reads = acc.read_addresses.sorted();
  const auto writes = acc.write_addresses.sorted();
  std::vector<std::pair<std::uint64_t, std::uint64_t>> out;
  out.reserve(reads.size() + writes.size());
  std::size_t i = 0, j = 0;
  while (i < reads.size() || j < writes.size()) {
    if (j == writes.size() || (i < reads.size() && reads[i].first < writes[j].first)) {
      out.push_back(reads[i++]);
    } else if (i == reads.size() || writes[j].first < reads[i].first) {
      out.push_back(writes[j++]);
    } else {
      out.emplace_back(reads[i].first, reads[i].second + writes[j].second);
      ++i;
      ++j;
    }
  }
  return out;
}

std::array<double, entropy::kMaxSkip> lmae_of(const KernelAccumulator &acc) {
  const std::uint64_t total = acc.read_addresses.total() + acc.write_addresses.total();
  if (total == 0)
    return {};
  return entropy::local_entropies(merged_addresses(acc), total);
}

std::uint64_t sum(const std::vector<std::uint64_t> &v) {
  return std::accumulate(v.begin(), v.end(), std::uint64_t{0});
}

} // namespace

void KernelAccumulator::merge(const KernelAccumulator &other, bool allow_mixed_kernels) {
  if (invocations.empty() && total_instructions == 0 && work_items == 0) {
    *this = other;
    return;
  }
  if (other.kernel_name != kernel_name && !allow_mixed_kernels)
    throw IncompatibleReports("cannot merge kernel '" + other.kernel_name + "' into '" +
                              kernel_name + "'");
  if (invocation_lmae.empty())
    invocation_lmae.push_back(lmae_of(*this));
  if (other.invocation_lmae.empty())
    invocation_lmae.push_back(lmae_of(other));
  else
    invocation_lmae.insert(invocation_lmae.end(), other.invocation_lmae.begin(),
                           other.invocation_lmae.end());
  if (other.kernel_name != kernel_name && kernel_name.find(other.kernel_name) == std::string::npos)
    kernel_name += "+" + other.kernel_name;

  invocations.insert(invocations.end(), other.invocations.begin(), other.invocations.end());
  opcode_histogram.merge(other.opcode_histogram);
  read_addresses.merge(other.read_addresses);
  write_addresses.merge(other.write_addresses);
  branch_patterns.merge(other.branch_patterns);
  branch_site_executions.merge(other.branch_site_executions);
  itb_samples.insert(itb_samples.end(), other.itb_samples.begin(), other.itb_samples.end());
  ipt_samples.insert(ipt_samples.end(), other.ipt_samples.begin(), other.ipt_samples.end());
  simd_widths.merge(other.simd_widths);
  barriers_hit += other.barriers_hit;
  work_items += other.work_items;
  total_instructions += other.total_instructions;
  atomic_accesses += other.atomic_accesses;
}

void KernelAccumulator::check_invariants() const {
  auto require = [](bool ok, const char *what) {
    if (!ok)
      throw InvalidStream(std::string("accumulator invariant violated: ") + what);
  };
  require(opcode_histogram.total() == total_instructions,
          "opcode counts sum to total_instructions");
  require(sum(itb_samples) == total_instructions, "ITB samples sum to total_instructions");
  require(sum(ipt_samples) == total_instructions, "IPT samples sum to total_instructions");
  require(ipt_samples.size() == work_items, "one IPT sample per work-item");
  require(simd_widths.total() == total_instructions, "one SIMD width per instruction");
  require(branch_site_executions.total() == branch_patterns.executions(),
          "branch site counts match recorded outcomes");
}

// ---------------------------------------------------------------------------
// Consumer

namespace {

struct WorkItemAccumulator {
  std::uint64_t instructions_this_segment = 0;
  std::uint64_t instructions_total = 0;
  bool open = false;
};

constexpr std::uint64_t kHistogramEntryBytes = 48;
constexpr std::size_t kOpcodeCacheSlots = 1024;
constexpr std::uint32_t kSmallWidths = 65;

constexpr std::size_t kDenseSites = 1 << 16;

struct OpcodeSlot {
  const char *ptr = nullptr;
  const char *name = nullptr; // stored copy of the opcode text
  std::size_t size = 0;
  std::uint64_t *counter = nullptr;
};

} // namespace

struct Consumer::Impl {
  Limits limits;
  trace::StreamValidator validator;
  KernelAccumulator acc;
  std::size_t index = 0;

  trace::Dim3 local_size{1, 1, 1};
  std::vector<WorkItemAccumulator> items;
  WorkItemAccumulator *open = nullptr;

  // The cache maps the address of an event's opcode text to its counter;
  // hits are confirmed by comparing the text, so reused addresses cannot
  // miscount. Map nodes are stable, so the cached pointers stay valid.
  std::unordered_map<std::string, std::uint64_t> opcodes;
  std::array<OpcodeSlot, kOpcodeCacheSlots> opcode_cache{};
  std::array<std::uint64_t, kSmallWidths> small_widths{};

  // Branch outcomes of the running group: small site ids index a dense
  // table, anything else goes through the map.
  std::vector<std::vector<bool>> dense_branches;
  std::vector<std::uint64_t> dense_touched;
  std::unordered_map<std::uint64_t, std::vector<bool>> sparse_branches;
  std::uint64_t branch_bits = 0;
  std::size_t tracked_entries = 0;

  std::size_t linear_local(const trace::WorkItemId &id) const {
    return static_cast<std::size_t>(
        (id.local_id[0] * local_size[1] + id.local_id[1]) * local_size[2] + id.local_id[2]);
  }

  void check_cap() {
    const std::uint64_t bytes = kHistogramEntryBytes * tracked_entries + branch_bits / 8 +
                                8 * (acc.itb_samples.size() + acc.ipt_samples.size());
    if (bytes > limits.memory_cap_bytes)
      throw TraceTooLarge("trace exceeds the metric memory cap of " +
                          std::to_string(limits.memory_cap_bytes) +
                          " bytes (raise AIWC_MEM_CAP_BYTES)");
  }

  [[gnu::always_inline]] void count_opcode(const std::string &op) {
    const char *p = op.data();
    const std::size_t n = op.size();
    OpcodeSlot &slot =
        opcode_cache[(reinterpret_cast<std::uintptr_t>(p) * 0x9E3779B97F4A7C15ull) >> 54];
    if (slot.ptr == p && slot.size == n) {
      std::size_t i = 0;
      while (i < n && slot.name[i] == p[i])
        ++i;
      if (i == n) {
        ++*slot.counter;
        return;
      }
    }
    count_opcode_slow(op, slot);
  }

  void count_opcode_slow(const std::string &op, OpcodeSlot &slot) {
    auto [it, inserted] = opcodes.try_emplace(op, 0);
    ++it->second;
    slot.ptr = op.data();
    slot.name = it->first.data();
    slot.size = it->first.size();
    slot.counter = &it->second;
  }

  void add_address(entropy::Histogram &h, std::uint64_t addr) {
    const std::size_t before = h.size();
    h.add(addr);
    if (h.size() != before) {
      ++tracked_entries;
      if ((tracked_entries & 0x3ff) == 0)
        check_cap();
    }
  }

  void close_segment(WorkItemAccumulator &wi) {
    wi.instructions_total += wi.instructions_this_segment;
    if (wi.instructions_this_segment > 0)
      acc.itb_samples.push_back(wi.instructions_this_segment);
    wi.instructions_this_segment = 0;
    wi.open = false;
  }

  std::vector<bool> &branch_record(std::uint64_t site) {
    if (site < kDenseSites) {
      if (dense_branches.size() <= site)
        dense_branches.resize(site + 1);
      auto &rec = dense_branches[site];
      if (rec.empty())
        dense_touched.push_back(site);
      return rec;
    }
    return sparse_branches[site];
  }

  void fold_group_branches() {
    std::vector<std::uint64_t> sites = dense_touched;
    for (const auto &[site, outcomes] : sparse_branches)
      sites.push_back(site);
    std::sort(sites.begin(), sites.end());
    for (std::uint64_t site : sites) {
      auto &outcomes = site < kDenseSites ? dense_branches[site] : sparse_branches[site];
      acc.branch_patterns.add_record(outcomes);
      acc.branch_site_executions.add(site, outcomes.size());
      outcomes.clear();
    }
    dense_touched.clear();
    sparse_branches.clear();
    branch_bits = 0;
  }

  [[noreturn, gnu::noinline]] void reject() {
    const auto &v = validator.violations().back();
    throw InvalidStream("event " + std::to_string(v.event_index) + ": " +
                        std::string(to_string(v.rule)) + ": " + v.detail);
  }

  // Hot events are handled inline; everything else goes through on_other so
  // the common path stays small.
  void on_event(const TraceEvent &event) {
    if (!validator.observe(event))
      reject();
    if (const auto *e = std::get_if<trace::Instruction>(&event)) {
      ++open->instructions_this_segment;
      ++acc.total_instructions;
      count_opcode(e->opcode);
      if (e->width < kSmallWidths)
        ++small_widths[e->width];
      else
        acc.simd_widths.add(e->width);
      return;
    }
    if (const auto *e = std::get_if<trace::Branch>(&event)) {
      branch_record(e->site).push_back(e->taken);
      if ((++branch_bits & 0xffff) == 0)
        check_cap();
      return;
    }
    on_other(event);
  }

  [[gnu::noinline]] void on_other(const TraceEvent &event) {
    switch (event.index()) {
    case 0: { // KernelBegin
      const auto &e = std::get<trace::KernelBegin>(event);
      acc.kernel_name = e.kernel_name;
      acc.invocations.push_back(e.invocation);
      local_size = e.local_size;
      break;
    }
    case 1: // KernelEnd
      break;
    case 2: { // WorkGroupBegin
      items.assign(static_cast<std::size_t>(local_size[0] * local_size[1] * local_size[2]),
                   WorkItemAccumulator{});
      open = nullptr;
      break;
    }
    case 3: // WorkGroupEnd
      fold_group_branches();
      break;
    case 4: { // WorkItemBegin
      const auto &e = std::get<trace::WorkItemBegin>(event);
      ++acc.work_items;
      open = &items[linear_local(e.work_item)];
      open->open = true;
      break;
    }
    case 5: { // WorkItemResume
      const auto &e = std::get<trace::WorkItemResume>(event);
      open = &items[linear_local(e.work_item)];
      open->open = true;
      break;
    }
    case 6: { // WorkItemEnd
      close_segment(*open);
      acc.ipt_samples.push_back(open->instructions_total);
      open = nullptr;
      break;
    }
    case 7:
    case 8:
      break;
    case 9: { // Memory
      const auto &e = std::get<trace::Memory>(event);
      if (e.op == trace::MemOp::atomic_load || e.op == trace::MemOp::atomic_store)
        ++acc.atomic_accesses;
      add_address(trace::is_read(e.op) ? acc.read_addresses : acc.write_addresses, e.addr);
      break;
    }
    case 10: // Barrier
      ++acc.barriers_hit;
      close_segment(*open);
      open = nullptr;
      break;
    }
  }

  KernelAccumulator finish() {
    auto report = validator.finish();
    if (!report.ok()) {
      const auto &v = report.violations.front();
      throw InvalidStream("event " + std::to_string(v.event_index) + ": " +
                          std::string(to_string(v.rule)) + ": " + v.detail);
    }
    std::vector<std::pair<std::string, std::uint64_t>> ops(opcodes.begin(), opcodes.end());
    std::sort(ops.begin(), ops.end());
    for (const auto &[name, count] : ops)
      acc.opcode_histogram.add(name, count);
    for (std::uint32_t w = 0; w < kSmallWidths; ++w)
      acc.simd_widths.add(w, small_widths[w]);
    check_cap();
    return std::move(acc);
  }
};

Consumer::Consumer(Limits limits) : impl_(std::make_unique<Impl>()) {
  impl_->limits = limits;
}
Consumer::~Consumer() = default;
Consumer::Consumer(Consumer &&) noexcept = default;
Consumer &Consumer::operator=(Consumer &&) noexcept = default;

void Consumer::on_event(const TraceEvent &event) { impl_->on_event(event); }

KernelAccumulator Consumer::finish() { return impl_->finish(); }

KernelAccumulator consume(std::span<const TraceEvent> events, Limits limits) {
  Consumer c(limits);
  for (const auto &e : events)
    c.on_event(e);
  return c.finish();
}

// ---------------------------------------------------------------------------
// Finalization

DistributionSummary summarize_distribution(std::span<const std::uint64_t> samples) {
  if (samples.empty())
    throw EmptySample();
  std::vector<std::uint64_t> v(samples.begin(), samples.end());
  std::sort(v.begin(), v.end());
  DistributionSummary s;
  const std::size_t n = v.size();
  s.min = v.front();
  s.max = v.back();
  s.median = n % 2 == 1 ? static_cast<double>(v[n / 2])
                        : (static_cast<double>(v[n / 2 - 1]) + static_cast<double>(v[n / 2])) / 2.0;
  long double total = 0;
  for (auto x : v)
    total += static_cast<long double>(x);
  const long double mean = total / static_cast<long double>(n);
  long double sq = 0;
  for (auto x : v) {
    const long double d = static_cast<long double>(x) - mean;
    sq += d * d;
  }
  s.mean = static_cast<double>(mean);
  s.sd = static_cast<double>(std::sqrt(sq / static_cast<long double>(n)));
  return s;
}

AiwcReport finalize(const KernelAccumulator &acc, const FinalizeOptions &options) {
  AiwcReport r;
  r.kernel = acc.kernel_name;
  r.invocations = acc.invocations;

  r.total_instruction_count = acc.total_instructions;
  r.opcode = acc.opcode_histogram.total() ? entropy::coverage_count(acc.opcode_histogram, 0.9) : 0;

  r.work_items = acc.work_items;
  r.total_barriers_hit = acc.barriers_hit;
  if (!acc.itb_samples.empty()) {
    const auto itb = summarize_distribution(acc.itb_samples);
    r.min_itb = itb.min;
    r.max_itb = itb.max;
    r.median_itb = itb.median;
    r.mean_itb = itb.mean;
  } else {
    r.flags.no_itb_samples = true;
  }
  r.itb_sample_count = acc.itb_samples.size();
  if (!acc.ipt_samples.empty()) {
    const auto ipt = summarize_distribution(acc.ipt_samples);
    r.min_ipt = ipt.min;
    r.max_ipt = ipt.max;
    r.median_ipt = ipt.median;
  }

  if (acc.simd_widths.total() > 0) {
    const auto widths = acc.simd_widths.sorted();
    long double n = 0, s = 0;
    for (const auto &[w, c] : widths) {
      r.max_simd_width = std::max(r.max_simd_width, w);
      n += static_cast<long double>(c);
      s += static_cast<long double>(w) * static_cast<long double>(c);
      r.simd_width_sum += w * c;
    }
    const long double mean = s / n;
    long double var = 0;
    for (const auto &[w, c] : widths) {
      const long double d = static_cast<long double>(w) - mean;
      var += d * d * static_cast<long double>(c);
    }
    r.mean_simd_width = static_cast<double>(mean);
    r.sd_simd_width = static_cast<double>(std::sqrt(var / n));
  }

  const auto merged = merged_addresses(acc);
  const std::uint64_t merged_total = acc.read_addresses.total() + acc.write_addresses.total();
  r.unique_reads = acc.read_addresses.size();
  r.unique_writes = acc.write_addresses.size();
  r.total_reads = acc.read_addresses.total();
  r.total_writes = acc.write_addresses.total();
  r.total_memory_footprint = merged.size();
  if (r.unique_writes == 0) {
    r.unique_rw_ratio = std::numeric_limits<double>::infinity();
    r.flags.unique_rw_ratio_infinite = true;
  } else {
    r.unique_rw_ratio = static_cast<double>(r.unique_reads) / static_cast<double>(r.unique_writes);
  }
  if (r.total_reads == 0)
    r.flags.no_reads = true;
  else
    r.reread_ratio = static_cast<double>(r.unique_reads) / static_cast<double>(r.total_reads);
  if (r.total_writes == 0)
    r.flags.no_writes = true;
  else
    r.rewrite_ratio = static_cast<double>(r.unique_writes) / static_cast<double>(r.total_writes);
  if (merged_total == 0) {
    r.flags.no_memory = true;
  } else {
    r.footprint_90 = entropy::coverage_count(merged, merged_total, 0.9);
    r.gmae = entropy::shannon_entropy(merged, merged_total);
    r.lmae = entropy::local_entropies(merged, merged_total);
  }
  if (acc.invocation_lmae.empty())
    r.lmae_per_invocation.push_back(r.lmae);
  else
    r.lmae_per_invocation = acc.invocation_lmae;

  r.total_unique_branch_instructions = acc.branch_site_executions.size();
  if (acc.branch_site_executions.total() > 0)
    r.branch_90 = entropy::coverage_count(acc.branch_site_executions, 0.9);
  const auto be = entropy::branch_entropy(acc.branch_patterns, options.linear_entropy_scale);
  r.yokota_entropy = be.yokota;
  r.linear_entropy = be.linear;
  r.flags.no_branches = be.no_branches;
  r.flags.warmup_excluded_fraction = be.warmup_excluded_fraction;
  r.flags.warmup_excessive = be.warmup_excluded_fraction > 0.1;
  return r;
}

void check_report_invariants(const AiwcReport &r) {
  auto require = [](bool ok, const char *what) {
    if (!ok)
      throw InvalidStream(std::string("report invariant violated: ") + what);
  };
  require(r.unique_reads <= r.total_reads, "unique_reads <= total_reads");
  require(r.unique_writes <= r.total_writes, "unique_writes <= total_writes");
  require(r.total_memory_footprint <= r.unique_reads + r.unique_writes,
          "footprint <= unique_reads + unique_writes");
  require(r.footprint_90 <= r.total_memory_footprint, "footprint_90 <= footprint");
  require(static_cast<double>(r.min_itb) <= r.median_itb &&
              r.median_itb <= static_cast<double>(r.max_itb),
          "min <= median <= max ITB");
  require(static_cast<double>(r.min_ipt) <= r.median_ipt &&
              r.median_ipt <= static_cast<double>(r.max_ipt),
          "min <= median <= max IPT");
  for (std::size_t i = 1; i < r.lmae.size(); ++i)
    require(r.lmae[i] <= r.lmae[i - 1], "lmae non-increasing over skips");
  require(r.yokota_entropy >= 0.0 && r.yokota_entropy <= 1.0, "yokota in [0,1]");
  require(r.linear_entropy >= 0.0, "linear entropy non-negative");
}

} // namespace aiwc::metrics
