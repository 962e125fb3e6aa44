#include "aiwc/error.hpp"
#include "aiwc/metrics.hpp"
#include "aiwc/report.hpp"
#include "aiwc/simulator.hpp"

#include "support/generators.hpp"
#include "support/oracle.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

using namespace aiwc;
using namespace aiwc::trace;

namespace {

sim::NDRangeConfig range(Dim3 global, Dim3 local) {
  sim::NDRangeConfig cfg;
  cfg.global_size = global;
  cfg.local_size = local;
  return cfg;
}

std::vector<TraceEvent> run(const std::string &src, const sim::NDRangeConfig &cfg,
                            const sim::SimOptions &opts = {}) {
  return sim::simulate(kernel::parse_kernel(src), cfg, opts);
}

std::string encode_all(const std::vector<TraceEvent> &events) {
  std::string s;
  for (const auto &e : events)
    s += encode_event(e) + "\n";
  return s;
}

template <class T> std::size_t count_of(const std::vector<TraceEvent> &events) {
  return static_cast<std::size_t>(std::count_if(
      events.begin(), events.end(), [](const TraceEvent &e) { return std::holds_alternative<T>(e); }));
}

} // namespace

TEST_SUITE("sim") {

TEST_CASE("single work-item straight-line kernel") {
  const auto ev = run("  mov r0, 1\n  add r1, r0, 2\n  mul r2, r1, r1\n  ret\n",
                      range({1, 1, 1}, {1, 1, 1}));
  CHECK(count_of<Instruction>(ev) == 3);
  CHECK(count_of<WorkItemBegin>(ev) == 1);
  CHECK(count_of<WorkItemResume>(ev) == 0);
  CHECK(count_of<Barrier>(ev) == 0);
  CHECK(std::holds_alternative<KernelBegin>(ev.front()));
  CHECK(std::holds_alternative<KernelEnd>(ev.back()));
  const auto r = metrics::finalize(metrics::consume(ev));
  CHECK(r.min_itb == 3);
  CHECK(r.max_itb == 3);
  CHECK(r.total_barriers_hit == 0);
}

TEST_CASE("24 compute + barrier per item gives 25-instruction segments") {
  std::string src;
  for (int i = 0; i < 24; ++i)
    src += i == 0 ? "  mov r0, gid0\n" : "  add r0, r0, 1\n";
  src += "  barrier\n  ret\n";
  const auto ev = run(src, range({4, 1, 1}, {4, 1, 1}));
  const auto acc = metrics::consume(ev);
  // The ret after the barrier closes an empty segment, which adds no sample.
  CHECK(acc.itb_samples == std::vector<std::uint64_t>{25, 25, 25, 25});
  const auto doc = report::make_document(metrics::finalize(acc));
  CHECK(doc.report.mean_itb == 25.0);
  REQUIRE(doc.derived.barriers_per_instruction.has_value());
  CHECK(*doc.derived.barriers_per_instruction == 1.0 / 25.0);
}

TEST_CASE("event order for a two-item group with one barrier") {
  const char *src = "kernel k(a)\n"
                    "  load r0, a[gid0]\n" // line 2
                    "  barrier\n"
                    "  lt r1, lid0, 1\n"
                    "  br r1, x, y\n" // line 5
                    "x:\n"
                    "  ret\n"
                    "y:\n"
                    "  jmp z\n"
                    "z:\n"
                    "  ret\n";
  auto cfg = range({2, 1, 1}, {2, 1, 1});
  cfg.buffers["a"].values = {7, 8};
  const auto ev = run(src, cfg);
  WorkItemId a, b;
  b.local_id = b.global_id = {1, 0, 0};
  const std::vector<TraceEvent> want{
      KernelBegin{"k", 0, {2, 1, 1}, {2, 1, 1}},
      WorkGroupBegin{},
      WorkItemBegin{a},
      Instruction{"load", 1},
      Memory{MemOp::load, 0x10000},
      Instruction{"barrier", 1},
      Barrier{},
      WorkItemBegin{b},
      Instruction{"load", 1},
      Memory{MemOp::load, 0x10004},
      Instruction{"barrier", 1},
      Barrier{},
      WorkItemResume{a},
      Instruction{"lt", 1},
      Instruction{"br", 1},
      Branch{5, true},
      WorkItemEnd{a},
      WorkItemResume{b},
      Instruction{"lt", 1},
      Instruction{"br", 1},
      Branch{5, false},
      Instruction{"jmp", 1},
      WorkItemEnd{b},
      WorkGroupEnd{},
      KernelEnd{}};
  CHECK(encode_all(ev) == encode_all(want));
}

TEST_CASE("groups and items run in lexicographic order") {
  const auto ev = run("  ret\n", range({2, 2, 2}, {1, 2, 1}));
  std::vector<Dim3> groups;
  std::vector<std::vector<Dim3>> locals;
  for (const auto &e : ev) {
    if (auto *g = std::get_if<WorkGroupBegin>(&e)) {
      groups.push_back(g->group_id);
      locals.emplace_back();
    }
    if (auto *w = std::get_if<WorkItemBegin>(&e))
      locals.back().push_back(w->work_item.local_id);
  }
  CHECK(groups == std::vector<Dim3>{{0, 0, 0}, {0, 0, 1}, {1, 0, 0}, {1, 0, 1}});
  for (const auto &l : locals)
    CHECK(l == std::vector<Dim3>{{0, 0, 0}, {0, 1, 0}});
}

TEST_CASE("buffer layout and vector lanes") {
  const char *src = "kernel k(b, a)\n"
                    "  load.x4 r0, a[1]\n"
                    "  fmul.x4 r1, r0, 2\n"
                    "  store.x4 b[0], r1\n"
                    "  atomic_store b[4], 9\n"
                    "  atomic_load r2, buf[a][0]\n"
                    "  ret\n";
  auto cfg = range({1, 1, 1}, {1, 1, 1});
  cfg.buffers["a"].values = {1, 2, 3, 4, 5};
  cfg.buffers["b"].values.assign(1500, 0);
  trace::CollectingSink sink;
  const auto res = sim::simulate(kernel::parse_kernel(src), cfg, sink);
  std::vector<Memory> mem;
  for (const auto &e : sink.events)
    if (auto *m = std::get_if<Memory>(&e))
      mem.push_back(*m);
  // a: 0x10000 (20 bytes); b starts on the next 4096 boundary.
  REQUIRE(mem.size() == 10);
  CHECK(mem[0] == Memory{MemOp::load, 0x10004});
  CHECK(mem[3] == Memory{MemOp::load, 0x10010});
  CHECK(mem[4] == Memory{MemOp::store, 0x11000});
  CHECK(mem[7] == Memory{MemOp::store, 0x1100c});
  CHECK(mem[8] == Memory{MemOp::atomic_store, 0x11010});
  CHECK(mem[9] == Memory{MemOp::atomic_load, 0x10000});
  const auto &out = res.buffers.at("b").values;
  CHECK(std::vector<std::int64_t>(out.begin(), out.begin() + 5) ==
        std::vector<std::int64_t>{4, 6, 8, 10, 9});
  CHECK(res.instructions == 5);
  CHECK(res.work_items == 1);
  const auto instr = std::find_if(sink.events.begin(), sink.events.end(), [](const TraceEvent &e) {
    return std::holds_alternative<Instruction>(e);
  });
  CHECK(std::get<Instruction>(*instr) == Instruction{"load", 4});
}

TEST_CASE("explicit base addresses") {
  auto cfg = range({1, 1, 1}, {1, 1, 1});
  cfg.buffers["a"] = {{1, 2}, 0x400000};
  cfg.buffers["b"] = {{1}, std::nullopt};
  sim::assign_base_addresses(cfg);
  CHECK(*cfg.buffers["a"].base == 0x400000);
  CHECK(*cfg.buffers["b"].base == 0x401000);

  auto clash = range({1, 1, 1}, {1, 1, 1});
  clash.buffers["a"] = {{1, 2, 3}, 100};
  clash.buffers["b"] = {{1}, 104};
  CHECK_THROWS_AS(sim::validate_config(clash), ConfigError);
}

TEST_CASE("configuration errors") {
  CHECK_THROWS_AS(run("  ret\n", range({10, 1, 1}, {4, 1, 1})), ConfigError);
  CHECK_THROWS_AS(run("  ret\n", range({0, 1, 1}, {1, 1, 1})), ConfigError);
  CHECK_THROWS_AS(run("kernel k(a)\n  ret\n", range({1, 1, 1}, {1, 1, 1})), ConfigError);
  sim::SimOptions bad_order;
  bad_order.group_order = {0, 0};
  CHECK_THROWS_AS(run("  ret\n", range({2, 1, 1}, {1, 1, 1}), bad_order), ConfigError);
}

TEST_CASE("barrier divergence names both lines") {
  const char *src = "kernel k(out)\n"
                    "  lt r0, lid0, 1\n"
                    "  br r0, sync, skip\n" // line 3
                    "sync:\n"
                    "  barrier\n" // line 5
                    "  ret\n"
                    "skip:\n"
                    "  ret\n";
  auto cfg = range({2, 1, 1}, {2, 1, 1});
  cfg.buffers["out"].values.assign(2, 0);
  try {
    run(src, cfg);
    FAIL("no divergence detected");
  } catch (const BarrierDivergence &e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 5") != std::string::npos);
    CHECK(msg.find("line 3") != std::string::npos);
  }
  // The same kernel with a single-item group is fine.
  cfg.local_size = {1, 1, 1};
  CHECK_NOTHROW(run(src, cfg));
}

TEST_CASE("differing barrier counts inside a loop diverge") {
  const char *src = "  mov r0, 0\n"
                    "  add r1, lid0, 1\n"
                    "  jmp l\n"
                    "l:\n"
                    "  barrier\n"
                    "  add r0, r0, 1\n"
                    "  lt r2, r0, r1\n"
                    "  br r2, l, e\n"
                    "e:\n"
                    "  ret\n";
  CHECK_THROWS_AS(run(src, range({2, 1, 1}, {2, 1, 1})), BarrierDivergence);
}

TEST_CASE("out-of-bounds access") {
  auto cfg = range({4, 1, 1}, {4, 1, 1});
  cfg.buffers["a"].values.assign(3, 0);
  try {
    run("kernel k(a)\n  load r0, a[gid0]\n  ret\n", cfg);
    FAIL("no fault");
  } catch (const OutOfBoundsAccess &e) {
    CHECK(e.buffer() == "a");
    CHECK(e.index() == 3);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(run("kernel k(a)\n  sub r0, 0, 1\n  store a[r0], 1\n  ret\n", cfg),
                  OutOfBoundsAccess);
  // The last lane of a vector access is checked too.
  CHECK_THROWS_AS(run("kernel k(a)\n  load.x2 r0, a[2]\n  ret\n", range({1, 1, 1}, {1, 1, 1})),
                  ConfigError); // missing buffer
  auto one = range({1, 1, 1}, {1, 1, 1});
  one.buffers["a"].values.assign(3, 0);
  CHECK_THROWS_AS(run("kernel k(a)\n  load.x2 r0, a[2]\n  ret\n", one), OutOfBoundsAccess);
}

TEST_CASE("step limit") {
  sim::SimOptions opts;
  opts.step_limit = 100;
  const char *forever = "l:\n  jmp l\n";
  CHECK_THROWS_AS(run(forever, range({1, 1, 1}, {1, 1, 1}), opts), StepLimitExceeded);
  opts.step_limit = 3;
  CHECK_NOTHROW(run("  mov r0, 1\n  mov r0, 2\n  mov r0, 3\n  ret\n", range({1, 1, 1}, {1, 1, 1}), opts));
  CHECK_THROWS_AS(run("  mov r0, 1\n  mov r0, 2\n  mov r0, 3\n  mov r0, 4\n  ret\n",
                      range({1, 1, 1}, {1, 1, 1}), opts),
                  StepLimitExceeded);
}

TEST_CASE("integer semantics at the edges") {
  const char *src = "kernel k(o)\n"
                    "  div r0, 7, 0\n"
                    "  rem r1, 7, 0\n"
                    "  shl r2, 1, 65\n"
                    "  select r3, 0, 5, 6\n"
                    "  neg r4, -9223372036854775808\n"
                    "  vendor_op r5, 11, 12\n"
                    "  fma r6, 2, 3, 4\n"
                    "  store o[0], r0\n"
                    "  store o[1], r1\n"
                    "  store o[2], r2\n"
                    "  store o[3], r3\n"
                    "  store o[4], r4\n"
                    "  store o[5], r5\n"
                    "  store o[6], r6\n"
                    "  ret\n";
  auto cfg = range({1, 1, 1}, {1, 1, 1});
  cfg.buffers["o"].values.assign(7, -1);
  trace::CollectingSink sink;
  const auto res = sim::simulate(kernel::parse_kernel(src), cfg, sink);
  CHECK(res.buffers.at("o").values ==
        std::vector<std::int64_t>{0, 0, 2, 6, INT64_MIN, 11, 10});
}

TEST_CASE("determinism: byte-identical traces") {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 30; ++i) {
    const auto k = testing::random_kernel(rng);
    const auto p = kernel::parse_kernel(k.source);
    CHECK(encode_all(sim::simulate(p, k.cfg)) == encode_all(sim::simulate(p, k.cfg)));
  }
}

TEST_CASE("simulated streams validate") {
  std::mt19937_64 rng(22);
  for (int i = 0; i < 150; ++i) {
    const auto k = testing::random_kernel(rng);
    INFO(k.source);
    const auto ev = sim::simulate(kernel::parse_kernel(k.source), k.cfg);
    const auto r = validate_stream(ev);
    REQUIRE(r.ok());
  }
}

TEST_CASE("per-item events match single work-item re-execution") {
  std::mt19937_64 rng(23);
  for (int i = 0; i < 150; ++i) {
    const auto k = testing::random_kernel(rng);
    INFO(k.source);
    const auto p = kernel::parse_kernel(k.source);
    const auto ev = sim::simulate(p, k.cfg);
    const auto per_item = testing::events_by_work_item(ev);
    const auto volume = k.cfg.global_size[0] * k.cfg.global_size[1] * k.cfg.global_size[2];
    REQUIRE(per_item.size() == volume);
    std::uint64_t total = 0;
    for (const auto &[gid, events] : per_item) {
      const auto want = testing::reexecute_work_item(p, k.cfg, gid);
      REQUIRE(encode_all(events) == encode_all(want));
      total += count_of<Instruction>(want);
    }
    CHECK(total == count_of<Instruction>(ev));
  }
}

TEST_CASE("permuting work-group order leaves reports unchanged") {
  std::mt19937_64 rng(24);
  int permuted = 0;
  for (int i = 0; i < 60; ++i) {
    const auto k = testing::random_kernel(rng);
    const auto p = kernel::parse_kernel(k.source);
    Dim3 groups;
    for (int d = 0; d < 3; ++d)
      groups[d] = k.cfg.global_size[d] / k.cfg.local_size[d];
    sim::SimOptions opts;
    opts.group_order.resize(groups[0] * groups[1] * groups[2]);
    std::iota(opts.group_order.begin(), opts.group_order.end(), 0);
    std::shuffle(opts.group_order.begin(), opts.group_order.end(), rng);
    permuted += !std::is_sorted(opts.group_order.begin(), opts.group_order.end());
    const auto base = metrics::finalize(metrics::consume(sim::simulate(p, k.cfg)));
    const auto shuffled = metrics::finalize(metrics::consume(sim::simulate(p, k.cfg, opts)));
    CHECK(report::emit_report(report::make_document(base), report::Format::json) ==
          report::emit_report(report::make_document(shuffled), report::Format::json));
  }
  CHECK(permuted > 10);
}

} // TEST_SUITE
