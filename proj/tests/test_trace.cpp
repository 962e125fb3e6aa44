#include "aiwc/error.hpp"
#include "aiwc/trace.hpp"

#include "support/generators.hpp"

#include <doctest.h>

#include <random>
#include <sstream>

using namespace aiwc;
using namespace aiwc::trace;

namespace {

WorkItemId item(Dim3 local, Dim3 group, Dim3 local_size) {
  WorkItemId id;
  id.local_id = local;
  id.group_id = group;
  for (int d = 0; d < 3; ++d)
    id.global_id[d] = group[d] * local_size[d] + local[d];
  return id;
}

bool has_rule(const ValidationReport &r, Rule rule) {
  for (const auto &v : r.violations)
    if (v.rule == rule)
      return true;
  return false;
}

std::vector<TraceEvent> single_item(std::vector<TraceEvent> body) {
  const auto id = item({0, 0, 0}, {0, 0, 0}, {1, 1, 1});
  std::vector<TraceEvent> s{KernelBegin{"k", 0, {1, 1, 1}, {1, 1, 1}}, WorkGroupBegin{},
                            WorkItemBegin{id}};
  s.insert(s.end(), body.begin(), body.end());
  s.push_back(WorkItemEnd{id});
  s.push_back(WorkGroupEnd{});
  s.push_back(KernelEnd{});
  return s;
}

} // namespace

TEST_SUITE("trace") {

TEST_CASE("encode examples") {
  CHECK(encode_event(Barrier{}) == R"({"ev":"barrier"})");
  CHECK(encode_event(Instruction{"fmul", 4}) == R"({"ev":"instr","opcode":"fmul","width":4})");
  CHECK(encode_event(Memory{MemOp::load, 4096}) == R"({"ev":"mem","op":"load","addr":4096})");
  CHECK(encode_event(Branch{17, true}) == R"({"ev":"branch","site":17,"taken":true})");
  CHECK(encode_event(KernelBegin{"nw", 3, {64, 1, 1}, {16, 1, 1}}) ==
        R"({"ev":"kernel_begin","kernel":"nw","invocation":3,"global":[64,1,1],"local":[16,1,1]})");
  CHECK(encode_event(WorkItemResume{item({1, 0, 0}, {2, 0, 0}, {4, 1, 1})}) ==
        R"({"ev":"wi_resume","global":[9,0,0],"local":[1,0,0],"group":[2,0,0]})");
  CHECK(encode_event(KernelEnd{}) == R"({"ev":"kernel_end"})");
}

TEST_CASE("decode examples") {
  CHECK(decode_event(R"({"ev":"instr","opcode":"fmul","width":4})") ==
        TraceEvent{Instruction{"fmul", 4}});
  CHECK(decode_event(R"({"ev":"mem","op":"atomic_store","addr":18446744073709551615})") ==
        TraceEvent{Memory{MemOp::atomic_store, UINT64_MAX}});
  CHECK(decode_event(R"({ "width" : 2 , "ev":"instr","opcode":"add"})") ==
        TraceEvent{Instruction{"add", 2}});
}

TEST_CASE("decode rejects malformed records with the line number") {
  auto rejects = [](const char *line) {
    try {
      decode_event(line, 42);
    } catch (const MalformedEvent &e) {
      CHECK(e.line_no() == 42);
      return true;
    }
    return false;
  };
  CHECK(rejects(R"({"ev":"instr","opcode":"fmul","width":0})"));
  CHECK(rejects(R"({"ev":"warp_vote"})"));
  CHECK(rejects(R"({"ev":"instr","opcode":"fmul"})"));
  CHECK(rejects(R"({"ev":"instr","opcode":"","width":1})"));
  CHECK(rejects(R"({"ev":"instr","opcode":"add","width":1,"lane":3})"));
  CHECK(rejects(R"({"ev":"mem","op":"prefetch","addr":1})"));
  CHECK(rejects(R"({"ev":"mem","op":"load","addr":-4})"));
  CHECK(rejects(R"({"ev":"branch","site":1,"taken":1})"));
  CHECK(rejects(R"({"ev":"wg_begin","group":[0,0]})"));
  CHECK(rejects(R"({"ev":"barrier")"));
  CHECK(rejects(R"([1,2,3])"));
  CHECK(rejects(R"({"opcode":"add"})"));
}

TEST_CASE("codec round-trip over generated events") {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 50; ++t) {
    for (const auto &e : testing::random_trace(rng, {2000, 3, true})) {
      const std::string line = encode_event(e);
      CHECK(line.find('\n') == std::string::npos);
      REQUIRE(decode_event(line) == e);
      CHECK(encode_event(decode_event(line)) == line);
    }
  }
  // Opcode strings needing escapes survive too.
  const TraceEvent odd = Instruction{"we\"ird\\op\t", 7};
  CHECK(decode_event(encode_event(odd)) == odd);
}

TEST_CASE("reader skips comments and rejects blank lines") {
  std::istringstream ok("# header\n{\"ev\":\"barrier\"}\n# mid\n{\"ev\":\"kernel_end\"}\n");
  const auto events = read_trace(ok);
  REQUIRE(events.size() == 2);
  CHECK(std::holds_alternative<Barrier>(events[0]));

  std::istringstream blank("{\"ev\":\"barrier\"}\n\n{\"ev\":\"barrier\"}\n");
  try {
    read_trace(blank);
    FAIL("blank line accepted");
  } catch (const MalformedEvent &e) {
    CHECK(e.line_no() == 2);
  }

  std::istringstream bad_third("{\"ev\":\"barrier\"}\n# c\n{\"ev\":\"nope\"}\n");
  try {
    read_trace(bad_third);
    FAIL("unknown variant accepted");
  } catch (const MalformedEvent &e) {
    CHECK(e.line_no() == 3);
  }
}

TEST_CASE("writer output reads back identically") {
  std::mt19937_64 rng(5);
  const auto events = testing::random_trace(rng);
  std::ostringstream out;
  TraceWriter w(out);
  for (const auto &e : events)
    w.on_event(e);
  std::istringstream in(out.str());
  CHECK(read_trace(in) == events);
}

TEST_CASE("well-formed single work-item stream validates") {
  const auto s = single_item({Instruction{"add", 1}, Instruction{"br", 1}, Branch{3, true},
                              Memory{MemOp::load, 8}});
  CHECK(validate_stream(s).ok());
}

TEST_CASE("memory event between work-items is one violation") {
  const Dim3 ls{2, 1, 1};
  const auto a = item({0, 0, 0}, {0, 0, 0}, ls), b = item({1, 0, 0}, {0, 0, 0}, ls);
  std::vector<TraceEvent> s{KernelBegin{"k", 0, {2, 1, 1}, ls},
                            WorkGroupBegin{},
                            WorkItemBegin{a},
                            Instruction{"add", 1},
                            WorkItemEnd{a},
                            Memory{MemOp::load, 4},
                            WorkItemBegin{b},
                            WorkItemEnd{b},
                            WorkGroupEnd{},
                            KernelEnd{}};
  const auto r = validate_stream(s);
  REQUIRE(r.violations.size() == 1);
  CHECK(r.violations[0].rule == Rule::event_outside_segment);
  CHECK(r.violations[0].event_index == 5);
}

TEST_CASE("barrier divergence in a two-item group is flagged") {
  // Item 0 reaches the barrier, resumes and ends; item 1 never reaches it.
  const Dim3 ls{2, 1, 1};
  const auto a = item({0, 0, 0}, {0, 0, 0}, ls), b = item({1, 0, 0}, {0, 0, 0}, ls);
  std::vector<TraceEvent> s{KernelBegin{"k", 0, {2, 1, 1}, ls},
                            WorkGroupBegin{},
                            WorkItemBegin{a},
                            Instruction{"barrier", 1},
                            Barrier{},
                            WorkItemBegin{b},
                            Instruction{"add", 1},
                            WorkItemEnd{b},
                            WorkItemResume{a},
                            WorkItemEnd{a},
                            WorkGroupEnd{},
                            KernelEnd{}};
  const auto r = validate_stream(s);
  CHECK(has_rule(r, Rule::barrier_divergence));
  CHECK(r.violations.size() == 1);
}

TEST_CASE("individual nesting rules") {
  const auto id = item({0, 0, 0}, {0, 0, 0}, {1, 1, 1});
  const KernelBegin kb{"k", 0, {1, 1, 1}, {1, 1, 1}};

  SUBCASE("resume without barrier") {
    std::vector<TraceEvent> s{kb, WorkGroupBegin{}, WorkItemBegin{id}, WorkItemEnd{id},
                              WorkItemResume{id}, WorkItemEnd{id}, WorkGroupEnd{}, KernelEnd{}};
    CHECK(has_rule(validate_stream(s), Rule::resume_without_barrier));
  }
  SUBCASE("missing kernel_end") {
    std::vector<TraceEvent> s{kb, WorkGroupBegin{}, WorkItemBegin{id}, WorkItemEnd{id},
                              WorkGroupEnd{}};
    CHECK(has_rule(validate_stream(s), Rule::missing_kernel_end));
  }
  SUBCASE("missing kernel_begin") {
    std::vector<TraceEvent> s{WorkGroupBegin{}, WorkGroupEnd{}, KernelEnd{}};
    CHECK(has_rule(validate_stream(s), Rule::missing_kernel_begin));
  }
  SUBCASE("empty stream") { CHECK(has_rule(validate_stream({}), Rule::missing_kernel_begin)); }
  SUBCASE("second kernel_begin") {
    std::vector<TraceEvent> s{kb, kb, KernelEnd{}};
    CHECK(has_rule(validate_stream(s), Rule::duplicate_kernel_begin));
  }
  SUBCASE("event after kernel_end") {
    auto s = single_item({});
    s.push_back(Barrier{});
    CHECK(has_rule(validate_stream(s), Rule::event_after_kernel_end));
  }
  SUBCASE("branch without br instruction") {
    CHECK(has_rule(validate_stream(single_item({Instruction{"add", 1}, Branch{1, true}})),
                   Rule::branch_without_instruction));
    CHECK(has_rule(validate_stream(single_item({Instruction{"br", 1}, Memory{}, Branch{1, true}})),
                   Rule::branch_without_instruction));
  }
  SUBCASE("group outside the NDRange") {
    std::vector<TraceEvent> s{kb, WorkGroupBegin{{1, 0, 0}}, WorkGroupEnd{{1, 0, 0}}, KernelEnd{}};
    CHECK(has_rule(validate_stream(s), Rule::group_out_of_range));
  }
  SUBCASE("group repeated") {
    std::vector<TraceEvent> s{kb, WorkGroupBegin{}, WorkItemBegin{id}, WorkItemEnd{id},
                              WorkGroupEnd{}, WorkGroupBegin{}, WorkGroupEnd{}, KernelEnd{}};
    CHECK(has_rule(validate_stream(s), Rule::group_repeated));
  }
  SUBCASE("nested groups") {
    std::vector<TraceEvent> s{kb, WorkGroupBegin{}, WorkGroupBegin{}, KernelEnd{}};
    CHECK(has_rule(validate_stream(s), Rule::group_nesting));
  }
  SUBCASE("inconsistent work-item ids") {
    WorkItemId bad = id;
    bad.global_id = {5, 0, 0};
    std::vector<TraceEvent> s{kb, WorkGroupBegin{}, WorkItemBegin{bad}, WorkItemEnd{bad},
                              WorkGroupEnd{}, KernelEnd{}};
    CHECK(has_rule(validate_stream(s), Rule::work_item_identity));
  }
  SUBCASE("work-item begun twice") {
    std::vector<TraceEvent> s{kb, WorkGroupBegin{}, WorkItemBegin{id}, WorkItemEnd{id},
                              WorkItemBegin{id}, WorkItemEnd{id}, WorkGroupEnd{}, KernelEnd{}};
    CHECK(has_rule(validate_stream(s), Rule::work_item_repeated));
  }
  SUBCASE("interleaved segments") {
    const Dim3 ls{2, 1, 1};
    const auto a = item({0, 0, 0}, {0, 0, 0}, ls), b = item({1, 0, 0}, {0, 0, 0}, ls);
    std::vector<TraceEvent> s{KernelBegin{"k", 0, {2, 1, 1}, ls}, WorkGroupBegin{},
                              WorkItemBegin{a}, WorkItemBegin{b}, WorkItemEnd{b},
                              WorkItemEnd{a}, WorkGroupEnd{}, KernelEnd{}};
    CHECK(has_rule(validate_stream(s), Rule::work_item_nesting));
  }
  SUBCASE("group missing a work-item") {
    const Dim3 ls{2, 1, 1};
    const auto a = item({0, 0, 0}, {0, 0, 0}, ls);
    std::vector<TraceEvent> s{KernelBegin{"k", 0, {2, 1, 1}, ls}, WorkGroupBegin{},
                              WorkItemBegin{a}, WorkItemEnd{a}, WorkGroupEnd{}, KernelEnd{}};
    CHECK(has_rule(validate_stream(s), Rule::incomplete_group));
  }
  SUBCASE("zero-width instruction and bad geometry") {
    CHECK(has_rule(validate_stream(single_item({Instruction{"add", 0}})), Rule::invalid_payload));
    std::vector<TraceEvent> s{KernelBegin{"k", 0, {10, 1, 1}, {4, 1, 1}}, KernelEnd{}};
    CHECK(has_rule(validate_stream(s), Rule::invalid_payload));
  }
}

TEST_CASE("generated streams validate and violation indices are exact") {
  std::mt19937_64 rng(99);
  for (int t = 0; t < 100; ++t) {
    auto s = testing::random_trace(rng, {3000, 3, true});
    REQUIRE(validate_stream(s).ok());
    // A stray event after the first work-item end is located precisely,
    // including when the preceding run went through the fast path.
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (std::holds_alternative<WorkItemEnd>(s[i])) {
        s.insert(s.begin() + static_cast<std::ptrdiff_t>(i) + 1, Memory{MemOp::store, 0});
        const auto r = validate_stream(s);
        REQUIRE(!r.ok());
        CHECK(r.violations.front().event_index == i + 1);
        CHECK(r.violations.front().rule == Rule::event_outside_segment);
        break;
      }
    }
  }
}

TEST_CASE("incremental validator agrees with the batch form") {
  std::mt19937_64 rng(3);
  const auto s = testing::random_trace(rng);
  StreamValidator v;
  for (const auto &e : s)
    CHECK(v.observe(e));
  CHECK(v.finish().ok());
}

} // TEST_SUITE
