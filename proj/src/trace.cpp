#include "aiwc/trace.hpp"

#include "aiwc/error.hpp"

#include <json.hpp>

#include <istream>
#include <map>
#include <ostream>
#include <unordered_set>

namespace aiwc::trace {

namespace {

template <class... Ts> struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts> overloaded(Ts...) -> overloaded<Ts...>;

void append_uint(std::string &out, std::uint64_t v) {
  out += std::to_string(v);
}

void append_string(std::string &out, const std::string &s) {
  out += nlohmann::json(s).dump();
}

void append_dim3(std::string &out, const Dim3 &d) {
  out += '[';
  append_uint(out, d[0]);
  out += ',';
  append_uint(out, d[1]);
  out += ',';
  append_uint(out, d[2]);
  out += ']';
}

void append_work_item(std::string &out, std::string_view tag, const WorkItemId &id) {
  out += R"({"ev":")";
  out += tag;
  out += R"(","global":)";
  append_dim3(out, id.global_id);
  out += R"(,"local":)";
  append_dim3(out, id.local_id);
  out += R"(,"group":)";
  append_dim3(out, id.group_id);
  out += '}';
}

} // namespace

std::string_view to_string(MemOp op) noexcept {
  switch (op) {
  case MemOp::load:
    return "load";
  case MemOp::store:
    return "store";
  case MemOp::atomic_load:
    return "atomic_load";
  case MemOp::atomic_store:
    return "atomic_store";
  }
  return "?";
}

std::string_view tag_of(const TraceEvent &event) noexcept {
  static constexpr std::string_view tags[] = {
      "kernel_begin", "kernel_end", "wg_begin", "wg_end", "wi_begin", "wi_resume",
      "wi_end",       "instr",      "branch",   "mem",    "barrier"};
  return tags[event.index()];
}

std::string encode_event(const TraceEvent &event) {
  std::string out;
  out.reserve(64);
  std::visit(
      overloaded{
          [&](const KernelBegin &e) {
            out += R"({"ev":"kernel_begin","kernel":)";
            append_string(out, e.kernel_name);
            out += R"(,"invocation":)";
            append_uint(out, e.invocation);
            out += R"(,"global":)";
            append_dim3(out, e.global_size);
            out += R"(,"local":)";
            append_dim3(out, e.local_size);
            out += '}';
          },
          [&](const KernelEnd &) { out += R"({"ev":"kernel_end"})"; },
          [&](const WorkGroupBegin &e) {
            out += R"({"ev":"wg_begin","group":)";
            append_dim3(out, e.group_id);
            out += '}';
          },
          [&](const WorkGroupEnd &e) {
            out += R"({"ev":"wg_end","group":)";
            append_dim3(out, e.group_id);
            out += '}';
          },
          [&](const WorkItemBegin &e) { append_work_item(out, "wi_begin", e.work_item); },
          [&](const WorkItemResume &e) { append_work_item(out, "wi_resume", e.work_item); },
          [&](const WorkItemEnd &e) { append_work_item(out, "wi_end", e.work_item); },
          [&](const Instruction &e) {
            out += R"({"ev":"instr","opcode":)";
            append_string(out, e.opcode);
            out += R"(,"width":)";
            append_uint(out, e.width);
            out += '}';
          },
          [&](const Branch &e) {
            out += R"({"ev":"branch","site":)";
            append_uint(out, e.site);
            out += e.taken ? R"(,"taken":true})" : R"(,"taken":false})";
          },
          [&](const Memory &e) {
            out += R"({"ev":"mem","op":")";
            out += to_string(e.op);
            out += R"(","addr":)";
            append_uint(out, e.addr);
            out += '}';
          },
          [&](const Barrier &) { out += R"({"ev":"barrier"})"; },
      },
      event);
  return out;
}

namespace {

using nlohmann::json;

class FieldReader {
public:
  FieldReader(const json &obj, std::size_t line_no) : obj_(obj), line_no_(line_no) {}

  [[noreturn]] void fail(const std::string &reason) const {
    throw MalformedEvent(line_no_, reason);
  }

  const json &field(const char *key) {
    auto it = obj_.find(key);
    if (it == obj_.end())
      fail(std::string("missing field '") + key + "'");
    ++used_;
    return *it;
  }

  std::uint64_t uint(const char *key) {
    const json &v = field(key);
    if (!v.is_number_unsigned())
      fail(std::string("field '") + key + "' must be a non-negative integer");
    return v.get<std::uint64_t>();
  }

  std::string str(const char *key) {
    const json &v = field(key);
    if (!v.is_string())
      fail(std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
  }

  bool boolean(const char *key) {
    const json &v = field(key);
    if (!v.is_boolean())
      fail(std::string("field '") + key + "' must be a boolean");
    return v.get<bool>();
  }

  Dim3 dim3(const char *key) {
    const json &v = field(key);
    if (!v.is_array() || v.size() != 3)
      fail(std::string("field '") + key + "' must be a 3-element array");
    Dim3 d{};
    for (std::size_t i = 0; i < 3; ++i) {
      if (!v[i].is_number_unsigned())
        fail(std::string("field '") + key + "' must hold non-negative integers");
      d[i] = v[i].get<std::uint64_t>();
    }
    return d;
  }

  WorkItemId work_item() {
    return WorkItemId{dim3("global"), dim3("local"), dim3("group")};
  }

  /// Every key present must have been consumed, plus "ev".
  void finish() const {
    if (obj_.size() != used_ + 1) {
      for (auto it = obj_.begin(); it != obj_.end(); ++it) {
        static const std::unordered_set<std::string> known{
            "ev",   "kernel", "invocation", "global", "local", "group", "opcode",
            "width", "site",  "taken",      "op",     "addr"};
        if (!known.count(it.key()))
          fail("unknown key '" + it.key() + "'");
      }
      fail("unexpected extra key for this event type");
    }
  }

private:
  const json &obj_;
  std::size_t line_no_;
  std::size_t used_ = 0;
};

} // namespace

TraceEvent decode_event(std::string_view line, std::size_t line_no) {
  json obj = json::parse(line.begin(), line.end(), nullptr, /*allow_exceptions=*/false);
  if (obj.is_discarded())
    throw MalformedEvent(line_no, "not a valid JSON object");
  if (!obj.is_object())
    throw MalformedEvent(line_no, "record must be a JSON object");

  FieldReader r(obj, line_no);
  auto ev_it = obj.find("ev");
  if (ev_it == obj.end() || !ev_it->is_string())
    r.fail("missing variant tag 'ev'");
  const std::string tag = ev_it->get<std::string>();

  TraceEvent out;
  if (tag == "kernel_begin") {
    KernelBegin e;
    e.kernel_name = r.str("kernel");
    e.invocation = r.uint("invocation");
    e.global_size = r.dim3("global");
    e.local_size = r.dim3("local");
    out = std::move(e);
  } else if (tag == "kernel_end") {
    out = KernelEnd{};
  } else if (tag == "wg_begin") {
    out = WorkGroupBegin{r.dim3("group")};
  } else if (tag == "wg_end") {
    out = WorkGroupEnd{r.dim3("group")};
  } else if (tag == "wi_begin") {
    out = WorkItemBegin{r.work_item()};
  } else if (tag == "wi_resume") {
    out = WorkItemResume{r.work_item()};
  } else if (tag == "wi_end") {
    out = WorkItemEnd{r.work_item()};
  } else if (tag == "instr") {
    Instruction e;
    e.opcode = r.str("opcode");
    const std::uint64_t w = r.uint("width");
    if (w == 0)
      r.fail("width must be >= 1");
    if (w > UINT32_MAX)
      r.fail("width out of range");
    if (e.opcode.empty())
      r.fail("opcode must be non-empty");
    e.width = static_cast<std::uint32_t>(w);
    out = std::move(e);
  } else if (tag == "branch") {
    Branch e;
    e.site = r.uint("site");
    e.taken = r.boolean("taken");
    out = e;
  } else if (tag == "mem") {
    Memory e;
    const std::string op = r.str("op");
    if (op == "load")
      e.op = MemOp::load;
    else if (op == "store")
      e.op = MemOp::store;
    else if (op == "atomic_load")
      e.op = MemOp::atomic_load;
    else if (op == "atomic_store")
      e.op = MemOp::atomic_store;
    else
      r.fail("unknown memory op '" + op + "'");
    e.addr = r.uint("addr");
    out = e;
  } else if (tag == "barrier") {
    out = Barrier{};
  } else {
    r.fail("unknown variant '" + tag + "'");
  }
  r.finish();
  return out;
}

void TraceWriter::on_event(const TraceEvent &event) {
  out_ << encode_event(event) << '\n';
}

void read_trace(std::istream &in,
                const std::function<void(const TraceEvent &, std::size_t)> &fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.front() == '#')
      continue;
    if (line.empty())
      throw MalformedEvent(line_no, "blank line");
    if (line.back() == '\r')
      throw MalformedEvent(line_no, "CR line ending");
    fn(decode_event(line, line_no), line_no);
  }
}

std::vector<TraceEvent> read_trace(std::istream &in) {
  std::vector<TraceEvent> events;
  read_trace(in, [&](const TraceEvent &e, std::size_t) { events.push_back(e); });
  return events;
}

// ---------------------------------------------------------------------------
// Validation

std::string_view to_string(Rule rule) noexcept {
  switch (rule) {
  case Rule::missing_kernel_begin:
    return "missing_kernel_begin";
  case Rule::duplicate_kernel_begin:
    return "duplicate_kernel_begin";
  case Rule::event_after_kernel_end:
    return "event_after_kernel_end";
  case Rule::missing_kernel_end:
    return "missing_kernel_end";
  case Rule::group_nesting:
    return "group_nesting";
  case Rule::group_out_of_range:
    return "group_out_of_range";
  case Rule::group_repeated:
    return "group_repeated";
  case Rule::work_item_nesting:
    return "work_item_nesting";
  case Rule::work_item_identity:
    return "work_item_identity";
  case Rule::work_item_repeated:
    return "work_item_repeated";
  case Rule::resume_without_barrier:
    return "resume_without_barrier";
  case Rule::event_outside_segment:
    return "event_outside_segment";
  case Rule::branch_without_instruction:
    return "branch_without_instruction";
  case Rule::invalid_payload:
    return "invalid_payload";
  case Rule::barrier_divergence:
    return "barrier_divergence";
  case Rule::incomplete_group:
    return "incomplete_group";
  }
  return "?";
}

namespace {

struct ItemState {
  bool open = false;
  bool ended = false;
  bool last_segment_barrier = false;
  std::uint64_t barriers = 0;
};

std::string dim_str(const Dim3 &d) {
  return "(" + std::to_string(d[0]) + "," + std::to_string(d[1]) + "," +
         std::to_string(d[2]) + ")";
}

} // namespace

struct StreamValidator::State {
  std::size_t index = 0;
  bool seen_begin = false;
  bool seen_end = false;
  bool geometry_ok = false;
  KernelBegin header;
  Dim3 num_groups{};
  std::uint64_t local_volume = 0;

  bool group_open = false;
  Dim3 group{};
  std::map<Dim3, ItemState> items;
  ItemState *open_item = nullptr;
  Dim3 open_local{};
  std::unordered_set<std::uint64_t> groups_seen;
  bool prev_was_br = false;

  std::vector<Violation> violations;

  void flag(Rule rule, std::string detail) {
    violations.push_back(Violation{index, rule, std::move(detail)});
  }

  void on_kernel_begin(const KernelBegin &e) {
    if (seen_begin) {
      flag(Rule::duplicate_kernel_begin, "second kernel_begin");
      return;
    }
    if (index != 0)
      flag(Rule::missing_kernel_begin, "kernel_begin is not the first event");
    seen_begin = true;
    header = e;
    geometry_ok = true;
    local_volume = 1;
    for (int d = 0; d < 3; ++d) {
      if (e.global_size[d] == 0 || e.local_size[d] == 0 ||
          e.global_size[d] % e.local_size[d] != 0) {
        geometry_ok = false;
        continue;
      }
      num_groups[d] = e.global_size[d] / e.local_size[d];
      local_volume *= e.local_size[d];
    }
    if (!geometry_ok)
      flag(Rule::invalid_payload,
           "launch geometry " + dim_str(e.global_size) + "/" + dim_str(e.local_size) +
               " is not a positive divisible NDRange");
  }

  void close_group_checks() {
    if (open_item)
      flag(Rule::work_item_nesting, "work-group ends inside an open work-item segment");
    std::uint64_t lo = UINT64_MAX, hi = 0;
    for (const auto &[lid, st] : items) {
      if (!st.ended)
        flag(Rule::incomplete_group, "work-item " + dim_str(lid) + " never reached wi_end");
      lo = std::min(lo, st.barriers);
      hi = std::max(hi, st.barriers);
    }
    if (!items.empty() && lo != hi)
      flag(Rule::barrier_divergence, "work-items of group " + dim_str(group) +
                                         " hit between " + std::to_string(lo) + " and " +
                                         std::to_string(hi) + " barriers");
    if (geometry_ok && items.size() != local_volume)
      flag(Rule::incomplete_group, "group " + dim_str(group) + " ran " +
                                       std::to_string(items.size()) + " of " +
                                       std::to_string(local_volume) + " work-items");
  }

  void on_group_begin(const WorkGroupBegin &e) {
    if (group_open) {
      flag(Rule::group_nesting, "wg_begin while group " + dim_str(group) + " is open");
      return;
    }
    group_open = true;
    group = e.group_id;
    items.clear();
    open_item = nullptr;
    if (geometry_ok) {
      for (int d = 0; d < 3; ++d) {
        if (e.group_id[d] >= num_groups[d]) {
          flag(Rule::group_out_of_range, "group " + dim_str(e.group_id) + " outside NDRange");
          return;
        }
      }
      const std::uint64_t linear =
          (e.group_id[0] * num_groups[1] + e.group_id[1]) * num_groups[2] + e.group_id[2];
      if (!groups_seen.insert(linear).second)
        flag(Rule::group_repeated, "group " + dim_str(e.group_id) + " executed twice");
    }
  }

  void on_group_end(const WorkGroupEnd &e) {
    if (!group_open) {
      flag(Rule::group_nesting, "wg_end without open group");
      return;
    }
    if (e.group_id != group)
      flag(Rule::group_nesting, "wg_end " + dim_str(e.group_id) + " closes group " +
                                    dim_str(group));
    close_group_checks();
    group_open = false;
    items.clear();
    open_item = nullptr;
  }

  bool check_identity(const WorkItemId &id) {
    if (id.group_id != group) {
      flag(Rule::work_item_identity, "work-item group " + dim_str(id.group_id) +
                                         " differs from open group " + dim_str(group));
      return false;
    }
    if (!geometry_ok)
      return true;
    for (int d = 0; d < 3; ++d) {
      if (id.local_id[d] >= header.local_size[d] ||
          id.global_id[d] != id.group_id[d] * header.local_size[d] + id.local_id[d]) {
        flag(Rule::work_item_identity, "inconsistent ids global=" + dim_str(id.global_id) +
                                           " local=" + dim_str(id.local_id));
        return false;
      }
    }
    return true;
  }

  void on_item_begin(const WorkItemId &id) {
    if (!group_open) {
      flag(Rule::work_item_nesting, "wi_begin outside a work-group");
      return;
    }
    if (open_item) {
      flag(Rule::work_item_nesting, "wi_begin while another segment is open");
      return;
    }
    check_identity(id);
    auto [it, inserted] = items.try_emplace(id.local_id);
    if (!inserted) {
      flag(Rule::work_item_repeated, "work-item " + dim_str(id.local_id) + " began twice");
      return;
    }
    it->second.open = true;
    open_item = &it->second;
    open_local = id.local_id;
  }

  void on_item_resume(const WorkItemId &id) {
    if (!group_open) {
      flag(Rule::work_item_nesting, "wi_resume outside a work-group");
      return;
    }
    if (open_item) {
      flag(Rule::work_item_nesting, "wi_resume while another segment is open");
      return;
    }
    check_identity(id);
    auto it = items.find(id.local_id);
    if (it == items.end() || it->second.ended || !it->second.last_segment_barrier) {
      flag(Rule::resume_without_barrier,
           "work-item " + dim_str(id.local_id) + " resumed without a preceding barrier");
      return;
    }
    it->second.open = true;
    it->second.last_segment_barrier = false;
    open_item = &it->second;
    open_local = id.local_id;
  }

  void on_item_end(const WorkItemId &id) {
    if (!open_item) {
      flag(Rule::work_item_nesting, "wi_end without an open segment");
      return;
    }
    if (id.local_id != open_local) {
      flag(Rule::work_item_nesting, "wi_end for " + dim_str(id.local_id) +
                                        " closes segment of " + dim_str(open_local));
    }
    open_item->open = false;
    open_item->ended = true;
    open_item = nullptr;
  }

  void in_segment(const char *what) {
    if (!open_item)
      flag(Rule::event_outside_segment, std::string(what) + " outside a work-item segment");
  }
};

StreamValidator::StreamValidator() : state_(std::make_unique<State>()) {}
StreamValidator::~StreamValidator() = default;
StreamValidator::StreamValidator(StreamValidator &&) noexcept = default;
StreamValidator &StreamValidator::operator=(StreamValidator &&) noexcept = default;

void StreamValidator::sync() {
  State &s = *state_;
  s.index += fast_count_;
  fast_count_ = 0;
  if (fast_)
    s.prev_was_br = fast_prev_br_;
}

bool StreamValidator::observe_slow(const TraceEvent &event) {
  sync();
  State &s = *state_;
  const std::size_t before = s.violations.size();
  if (s.seen_end) {
    s.flag(Rule::event_after_kernel_end, std::string(tag_of(event)) + " after kernel_end");
    ++s.index;
    return false;
  }
  if (s.index == 0 && !std::holds_alternative<KernelBegin>(event))
    s.flag(Rule::missing_kernel_begin, "stream does not start with kernel_begin");

  const bool was_br = s.prev_was_br;
  s.prev_was_br = false;

  std::visit(overloaded{
                 [&](const KernelBegin &e) { s.on_kernel_begin(e); },
                 [&](const KernelEnd &) {
                   if (s.group_open)
                     s.flag(Rule::group_nesting, "kernel_end inside group " + dim_str(s.group));
                   s.seen_end = true;
                 },
                 [&](const WorkGroupBegin &e) { s.on_group_begin(e); },
                 [&](const WorkGroupEnd &e) { s.on_group_end(e); },
                 [&](const WorkItemBegin &e) { s.on_item_begin(e.work_item); },
                 [&](const WorkItemResume &e) { s.on_item_resume(e.work_item); },
                 [&](const WorkItemEnd &e) { s.on_item_end(e.work_item); },
                 [&](const Instruction &e) {
                   s.in_segment("instr");
                   if (e.width == 0)
                     s.flag(Rule::invalid_payload, "instruction width 0");
                   if (e.opcode.empty())
                     s.flag(Rule::invalid_payload, "empty opcode");
                   s.prev_was_br = e.opcode == "br";
                 },
                 [&](const Branch &) {
                   s.in_segment("branch");
                   if (!was_br)
                     s.flag(Rule::branch_without_instruction,
                            "branch not immediately preceded by a br instruction");
                 },
                 [&](const Memory &) { s.in_segment("mem"); },
                 [&](const Barrier &) {
                   s.in_segment("barrier");
                   if (s.open_item) {
                     s.open_item->open = false;
                     s.open_item->last_segment_barrier = true;
                     ++s.open_item->barriers;
                     s.open_item = nullptr;
                   }
                 },
             },
             event);
  ++s.index;
  fast_ = s.open_item != nullptr && !s.seen_end;
  fast_prev_br_ = s.prev_was_br;
  return s.violations.size() == before;
}

ValidationReport StreamValidator::finish() {
  sync();
  fast_ = false;
  State &s = *state_;
  if (s.index == 0)
    s.flag(Rule::missing_kernel_begin, "empty stream");
  if (!s.seen_end) {
    if (s.group_open)
      s.flag(Rule::group_nesting, "stream ends inside group " + dim_str(s.group));
    s.flag(Rule::missing_kernel_end, "stream has no kernel_end");
  }
  return ValidationReport{s.violations};
}

const std::vector<Violation> &StreamValidator::violations() const noexcept {
  return state_->violations;
}

ValidationReport validate_stream(std::span<const TraceEvent> events) {
  StreamValidator v;
  for (const auto &e : events)
    v.observe(e);
  return v.finish();
}

} // namespace aiwc::trace
