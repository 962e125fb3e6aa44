#include "aiwc/simulator.hpp"

#include "aiwc/error.hpp"

#include <algorithm>
#include <array>
#include <numeric>

namespace aiwc::sim {

using trace::Dim3;
using trace::TraceEvent;

namespace {

template <class... Ts> struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts> overloaded(Ts...) -> overloaded<Ts...>;

std::string dim_str(const Dim3 &d) {
  return "(" + std::to_string(d[0]) + "," + std::to_string(d[1]) + "," +
         std::to_string(d[2]) + ")";
}

enum class OpKind : std::uint8_t { compute, load, store, condbr, jump, barrier, ret };

enum class Alu : std::uint8_t {
  mov, bit_not, neg, add, sub, mul, div, rem, bit_and, bit_or, bit_xor, shl, shr,
  min, max, lt, le, gt, ge, eq, ne, mad, select, opaque
};

Alu alu_for(std::string_view op) {
  if (op.size() > 1 && op.front() == 'f' && kernel::known_arity(op)) {
    if (op == "fma")
      return Alu::mad;
    op.remove_prefix(1);
  }
  static const std::pair<std::string_view, Alu> table[] = {
      {"mov", Alu::mov}, {"not", Alu::bit_not}, {"neg", Alu::neg}, {"add", Alu::add},
      {"sub", Alu::sub}, {"mul", Alu::mul},     {"div", Alu::div}, {"rem", Alu::rem},
      {"and", Alu::bit_and}, {"or", Alu::bit_or}, {"xor", Alu::bit_xor},
      {"shl", Alu::shl}, {"shr", Alu::shr},     {"min", Alu::min}, {"max", Alu::max},
      {"lt", Alu::lt},   {"le", Alu::le},       {"gt", Alu::gt},   {"ge", Alu::ge},
      {"eq", Alu::eq},   {"ne", Alu::ne},       {"mad", Alu::mad}, {"select", Alu::select}};
  for (auto [name, alu] : table)
    if (name == op)
      return alu;
  return Alu::opaque;
}

enum class OperandKind : std::uint8_t { reg, builtin, imm };

struct COperand {
  OperandKind kind = OperandKind::imm;
  std::uint32_t index = 0;
  std::int64_t imm = 0;
};

constexpr std::size_t kBuiltinSlots = 15;

COperand compile_operand(const kernel::Operand &op) {
  return std::visit(overloaded{
                        [](const kernel::Register &r) {
                          return COperand{OperandKind::reg, r.index, 0};
                        },
                        [](const kernel::BuiltinRef &b) {
                          return COperand{OperandKind::builtin,
                                          static_cast<std::uint32_t>(b.which) * 3u + b.dim, 0};
                        },
                        [](const kernel::Immediate &i) {
                          return COperand{OperandKind::imm, 0, i.value};
                        },
                    },
                    op);
}

struct CInstr {
  OpKind kind = OpKind::ret;
  Alu alu = Alu::opaque;
  std::uint32_t width = 1;
  std::uint32_t dst = 0;
  std::uint8_t nsrc = 0;
  std::array<COperand, 3> src{};
  std::vector<COperand> index;
  std::uint32_t buffer = 0;
  trace::MemOp memop = trace::MemOp::load;
  std::uint32_t then_pc = 0;
  std::uint32_t else_pc = 0;
  std::size_t line = 0;
  TraceEvent event; // prebuilt Instruction event
};

struct Compiled {
  std::vector<CInstr> code;
  std::uint32_t nregs = 1;
  std::uint32_t max_width = 1;
};

Compiled compile(const kernel::KernelProgram &prog,
                 const std::vector<std::string> &buffer_names) {
  Compiled out;
  std::vector<std::uint32_t> block_start;
  std::uint32_t pc = 0;
  for (const auto &b : prog.blocks) {
    block_start.push_back(pc);
    pc += static_cast<std::uint32_t>(b.instructions.size());
  }
  auto target = [&](const std::string &label) {
    return block_start[*prog.block_index(label)];
  };
  auto buffer_id = [&](const std::string &name) {
    auto it = std::find(buffer_names.begin(), buffer_names.end(), name);
    return static_cast<std::uint32_t>(it - buffer_names.begin());
  };
  out.nregs = std::max<std::uint32_t>(1, prog.register_count());
  for (const auto &b : prog.blocks) {
    for (const auto &ins : b.instructions) {
      CInstr c;
      c.line = ins.line;
      std::visit(
          overloaded{
              [&](const kernel::Compute &k) {
                c.kind = OpKind::compute;
                c.alu = alu_for(k.opcode);
                c.width = k.width;
                c.dst = k.dst.index;
                c.nsrc = static_cast<std::uint8_t>(std::min<std::size_t>(k.srcs.size(), 3));
                for (std::size_t i = 0; i < c.nsrc; ++i)
                  c.src[i] = compile_operand(k.srcs[i]);
                c.event = trace::Instruction{k.opcode, k.width};
              },
              [&](const kernel::Load &l) {
                c.kind = OpKind::load;
                c.width = l.width;
                c.dst = l.dst.index;
                for (const auto &t : l.index.terms)
                  c.index.push_back(compile_operand(t));
                c.buffer = buffer_id(l.buffer);
                c.memop = l.atomic ? trace::MemOp::atomic_load : trace::MemOp::load;
                c.event = trace::Instruction{l.atomic ? "atomic_load" : "load", l.width};
              },
              [&](const kernel::Store &s) {
                c.kind = OpKind::store;
                c.width = s.width;
                c.nsrc = 1;
                c.src[0] = compile_operand(s.src);
                for (const auto &t : s.index.terms)
                  c.index.push_back(compile_operand(t));
                c.buffer = buffer_id(s.buffer);
                c.memop = s.atomic ? trace::MemOp::atomic_store : trace::MemOp::store;
                c.event = trace::Instruction{s.atomic ? "atomic_store" : "store", s.width};
              },
              [&](const kernel::CondBr &br) {
                c.kind = OpKind::condbr;
                c.nsrc = 1;
                c.src[0] = compile_operand(br.cond);
                c.then_pc = target(br.then_label);
                c.else_pc = target(br.else_label);
                c.event = trace::Instruction{"br", 1};
              },
              [&](const kernel::Jump &j) {
                c.kind = OpKind::jump;
                c.then_pc = target(j.label);
                c.event = trace::Instruction{"jmp", 1};
              },
              [&](const kernel::BarrierOp &) {
                c.kind = OpKind::barrier;
                c.event = trace::Instruction{"barrier", 1};
              },
              [&](const kernel::Ret &) { c.kind = OpKind::ret; },
          },
          ins.op);
      out.max_width = std::max(out.max_width, c.width);
      out.code.push_back(std::move(c));
    }
  }
  return out;
}

std::int64_t apply(Alu alu, std::int64_t a, std::int64_t b, std::int64_t c) {
  const auto ua = static_cast<std::uint64_t>(a);
  const auto ub = static_cast<std::uint64_t>(b);
  switch (alu) {
  case Alu::mov:
  case Alu::opaque:
    return a;
  case Alu::bit_not:
    return static_cast<std::int64_t>(~ua);
  case Alu::neg:
    return static_cast<std::int64_t>(0 - ua);
  case Alu::add:
    return static_cast<std::int64_t>(ua + ub);
  case Alu::sub:
    return static_cast<std::int64_t>(ua - ub);
  case Alu::mul:
    return static_cast<std::int64_t>(ua * ub);
  case Alu::div:
    if (b == 0)
      return 0;
    if (a == INT64_MIN && b == -1)
      return a;
    return a / b;
  case Alu::rem:
    if (b == 0 || (a == INT64_MIN && b == -1))
      return 0;
    return a % b;
  case Alu::bit_and:
    return static_cast<std::int64_t>(ua & ub);
  case Alu::bit_or:
    return static_cast<std::int64_t>(ua | ub);
  case Alu::bit_xor:
    return static_cast<std::int64_t>(ua ^ ub);
  case Alu::shl:
    return static_cast<std::int64_t>(ua << (ub & 63));
  case Alu::shr:
    return static_cast<std::int64_t>(ua >> (ub & 63));
  case Alu::min:
    return std::min(a, b);
  case Alu::max:
    return std::max(a, b);
  case Alu::lt:
    return a < b;
  case Alu::le:
    return a <= b;
  case Alu::gt:
    return a > b;
  case Alu::ge:
    return a >= b;
  case Alu::eq:
    return a == b;
  case Alu::ne:
    return a != b;
  case Alu::mad:
    return static_cast<std::int64_t>(ua * ub + static_cast<std::uint64_t>(c));
  case Alu::select:
    return a != 0 ? b : c;
  }
  return 0;
}

enum class Status : std::uint8_t { ready, at_barrier, done };

struct Item {
  std::uint32_t pc = 0;
  Status status = Status::ready;
  bool started = false;
  std::uint64_t barriers = 0;
  std::size_t barrier_line = 0;
  std::size_t last_branch_line = 0;
  trace::WorkItemId id;
  std::array<std::int64_t, kBuiltinSlots> builtins{};
};

struct Buffer {
  std::string name;
  std::vector<std::int64_t> values;
  std::uint64_t base = 0;
};

class Machine {
public:
  Machine(const Compiled &compiled, std::vector<Buffer> &buffers, trace::EventSink &sink,
          const NDRangeConfig &cfg, const SimOptions &opts)
      : code_(compiled.code), nregs_(compiled.nregs), maxw_(compiled.max_width),
        buffers_(buffers), sink_(sink), cfg_(cfg), opts_(opts) {
    mem_event_ = trace::Memory{};
    branch_event_ = trace::Branch{};
    barrier_event_ = trace::Barrier{};
  }

  std::uint64_t steps() const { return steps_; }

  void run_group(const Dim3 &group) {
    const Dim3 &ls = cfg_.local_size;
    const std::size_t n = static_cast<std::size_t>(ls[0] * ls[1] * ls[2]);
    items_.assign(n, Item{});
    regs_.assign(n * nregs_ * maxw_, 0);
    widths_.assign(n * nregs_, 1);
    for (std::size_t i = 0; i < n; ++i) {
      Item &it = items_[i];
      const Dim3 lid{i / (ls[1] * ls[2]), (i / ls[2]) % ls[1], i % ls[2]};
      it.id.local_id = lid;
      it.id.group_id = group;
      for (int d = 0; d < 3; ++d) {
        it.id.global_id[d] = group[d] * ls[d] + lid[d];
        it.builtins[0 + d] = static_cast<std::int64_t>(it.id.global_id[d]);
        it.builtins[3 + d] = static_cast<std::int64_t>(lid[d]);
        it.builtins[6 + d] = static_cast<std::int64_t>(group[d]);
        it.builtins[9 + d] = static_cast<std::int64_t>(cfg_.global_size[d]);
        it.builtins[12 + d] = static_cast<std::int64_t>(ls[d]);
      }
    }

    sink_.on_event(trace::WorkGroupBegin{group});
    for (;;) {
      for (std::size_t i = 0; i < n; ++i)
        if (items_[i].status == Status::ready)
          run_item(i);
      const Item *waiting = nullptr;
      const Item *finished = nullptr;
      for (const Item &it : items_) {
        if (it.status == Status::at_barrier && !waiting)
          waiting = &it;
        if (it.status == Status::done && !finished)
          finished = &it;
      }
      if (!waiting)
        break;
      if (finished)
        throw BarrierDivergence(divergence_message(*finished, *waiting));
      for (Item &it : items_)
        it.status = Status::ready;
    }
    sink_.on_event(trace::WorkGroupEnd{group});
  }

private:
  std::string divergence_message(const Item &finished, const Item &waiting) const {
    std::string msg = "barrier divergence in work-group " + dim_str(waiting.id.group_id) +
                      ": work-item " + dim_str(finished.id.local_id) +
                      " returned after " + std::to_string(finished.barriers) +
                      " barrier(s) while work-item " + dim_str(waiting.id.local_id) +
                      " waits at the barrier on line " + std::to_string(waiting.barrier_line);
    if (finished.last_branch_line)
      msg += "; work-item " + dim_str(finished.id.local_id) + " last branched at line " +
             std::to_string(finished.last_branch_line);
    if (waiting.last_branch_line)
      msg += "; work-item " + dim_str(waiting.id.local_id) + " last branched at line " +
             std::to_string(waiting.last_branch_line);
    return msg;
  }

  std::int64_t read(const COperand &op, std::uint32_t lane, const std::int64_t *regs,
                    const std::uint32_t *widths, const Item &it) const {
    switch (op.kind) {
    case OperandKind::reg: {
      const std::uint32_t w = widths[op.index];
      return regs[op.index * maxw_ + (w == 1 ? 0 : lane % w)];
    }
    case OperandKind::builtin:
      return it.builtins[op.index];
    case OperandKind::imm:
      return op.imm;
    }
    return 0;
  }

  void count_step() {
    if (++steps_ > opts_.step_limit)
      throw StepLimitExceeded("step limit of " + std::to_string(opts_.step_limit) +
                              " instructions exceeded");
  }

  std::int64_t element_index(const CInstr &in, const std::int64_t *regs,
                             const std::uint32_t *widths, const Item &it) const {
    std::uint64_t sum = 0;
    for (const auto &t : in.index)
      sum += static_cast<std::uint64_t>(read(t, 0, regs, widths, it));
    return static_cast<std::int64_t>(sum);
  }

  void run_item(std::size_t idx) {
    Item &it = items_[idx];
    std::int64_t *regs = regs_.data() + idx * nregs_ * maxw_;
    std::uint32_t *widths = widths_.data() + idx * nregs_;
    if (!it.started) {
      it.started = true;
      sink_.on_event(trace::WorkItemBegin{it.id});
    } else {
      sink_.on_event(trace::WorkItemResume{it.id});
    }
    std::array<std::int64_t, 64> lanes{};
    auto &mem = std::get<trace::Memory>(mem_event_);
    auto &br = std::get<trace::Branch>(branch_event_);

    for (;;) {
      const CInstr &in = code_[it.pc];
      switch (in.kind) {
      case OpKind::compute: {
        count_step();
        sink_.on_event(in.event);
        if (in.width == 1) {
          const std::int64_t a = in.nsrc > 0 ? read(in.src[0], 0, regs, widths, it) : 0;
          const std::int64_t b = in.nsrc > 1 ? read(in.src[1], 0, regs, widths, it) : 0;
          const std::int64_t c = in.nsrc > 2 ? read(in.src[2], 0, regs, widths, it) : 0;
          regs[in.dst * maxw_] = apply(in.alu, a, b, c);
          widths[in.dst] = 1;
          ++it.pc;
          break;
        }
        for (std::uint32_t l = 0; l < in.width; ++l) {
          const std::int64_t a = in.nsrc > 0 ? read(in.src[0], l, regs, widths, it) : 0;
          const std::int64_t b = in.nsrc > 1 ? read(in.src[1], l, regs, widths, it) : 0;
          const std::int64_t c = in.nsrc > 2 ? read(in.src[2], l, regs, widths, it) : 0;
          lanes[l] = apply(in.alu, a, b, c);
        }
        std::copy_n(lanes.begin(), in.width, regs + in.dst * maxw_);
        widths[in.dst] = in.width;
        ++it.pc;
        break;
      }
      case OpKind::load:
      case OpKind::store: {
        count_step();
        sink_.on_event(in.event);
        Buffer &buf = buffers_[in.buffer];
        const std::int64_t base_index = element_index(in, regs, widths, it);
        mem.op = in.memop;
        for (std::uint32_t l = 0; l < in.width; ++l) {
          const std::int64_t e = base_index + static_cast<std::int64_t>(l);
          if (e < 0 || static_cast<std::uint64_t>(e) >= buf.values.size())
            throw OutOfBoundsAccess(buf.name, e, in.line);
          mem.addr = buf.base + kElementBytes * static_cast<std::uint64_t>(e);
          sink_.on_event(mem_event_);
          if (in.kind == OpKind::load)
            lanes[l] = buf.values[static_cast<std::size_t>(e)];
          else
            buf.values[static_cast<std::size_t>(e)] = read(in.src[0], l, regs, widths, it);
        }
        if (in.kind == OpKind::load) {
          std::copy_n(lanes.begin(), in.width, regs + in.dst * maxw_);
          widths[in.dst] = in.width;
        }
        ++it.pc;
        break;
      }
      case OpKind::condbr: {
        count_step();
        sink_.on_event(in.event);
        const bool taken = read(in.src[0], 0, regs, widths, it) != 0;
        br.site = in.line;
        br.taken = taken;
        sink_.on_event(branch_event_);
        it.last_branch_line = in.line;
        it.pc = taken ? in.then_pc : in.else_pc;
        break;
      }
      case OpKind::jump:
        count_step();
        sink_.on_event(in.event);
        it.pc = in.then_pc;
        break;
      case OpKind::barrier:
        count_step();
        sink_.on_event(in.event);
        sink_.on_event(barrier_event_);
        ++it.barriers;
        it.barrier_line = in.line;
        it.status = Status::at_barrier;
        ++it.pc;
        return;
      case OpKind::ret:
        sink_.on_event(trace::WorkItemEnd{it.id});
        it.status = Status::done;
        return;
      }
    }
  }

  const std::vector<CInstr> &code_;
  std::uint32_t nregs_;
  std::uint32_t maxw_;
  std::vector<Buffer> &buffers_;
  trace::EventSink &sink_;
  const NDRangeConfig &cfg_;
  const SimOptions &opts_;

  std::vector<Item> items_;
  std::vector<std::int64_t> regs_;
  std::vector<std::uint32_t> widths_;
  std::uint64_t steps_ = 0;
  TraceEvent mem_event_;
  TraceEvent branch_event_;
  TraceEvent barrier_event_;
};

} // namespace

void validate_config(const NDRangeConfig &cfg) {
  for (int d = 0; d < 3; ++d) {
    if (cfg.global_size[d] == 0 || cfg.local_size[d] == 0)
      throw ConfigError("NDRange sizes must be positive");
    if (cfg.global_size[d] % cfg.local_size[d] != 0)
      throw ConfigError("local size " + std::to_string(cfg.local_size[d]) +
                        " does not divide global size " +
                        std::to_string(cfg.global_size[d]) + " in dimension " +
                        std::to_string(d));
  }
  std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
  std::vector<std::string> names;
  for (const auto &[name, buf] : cfg.buffers) {
    if (!buf.base || buf.values.empty())
      continue;
    const std::uint64_t len = kElementBytes * buf.values.size();
    if (*buf.base > UINT64_MAX - len)
      throw ConfigError("buffer '" + name + "' extends past the end of the address space");
    ranges.emplace_back(*buf.base, *buf.base + len);
    names.push_back(name);
  }
  for (std::size_t i = 0; i < ranges.size(); ++i)
    for (std::size_t j = i + 1; j < ranges.size(); ++j)
      if (ranges[i].first < ranges[j].second && ranges[j].first < ranges[i].second)
        throw ConfigError("buffers '" + names[i] + "' and '" + names[j] + "' overlap");
}

void assign_base_addresses(NDRangeConfig &cfg) {
  constexpr std::uint64_t kStart = 0x10000;
  constexpr std::uint64_t kAlign = 4096;
  std::uint64_t next = kStart;
  for (const auto &[name, buf] : cfg.buffers)
    if (buf.base)
      next = std::max(next, *buf.base + kElementBytes * buf.values.size());
  for (auto &[name, buf] : cfg.buffers) {
    if (buf.base)
      continue;
    next = (next + kAlign - 1) / kAlign * kAlign;
    buf.base = next;
    next += std::max<std::uint64_t>(kElementBytes * buf.values.size(), kElementBytes);
  }
}

SimResult simulate(const kernel::KernelProgram &program, const NDRangeConfig &cfg_in,
                   trace::EventSink &sink, const SimOptions &options) {
  NDRangeConfig cfg = cfg_in;
  assign_base_addresses(cfg);
  validate_config(cfg);

  std::vector<Buffer> buffers;
  for (const auto &name : program.params) {
    auto it = cfg.buffers.find(name);
    if (it == cfg.buffers.end())
      throw ConfigError("kernel parameter '" + name + "' has no buffer");
    buffers.push_back(Buffer{name, it->second.values, *it->second.base});
  }
  const Compiled compiled = compile(program, program.params);

  Dim3 groups{};
  for (int d = 0; d < 3; ++d)
    groups[d] = cfg.global_size[d] / cfg.local_size[d];
  const std::uint64_t ngroups = groups[0] * groups[1] * groups[2];
  std::vector<std::uint64_t> order = options.group_order;
  if (order.empty()) {
    order.resize(ngroups);
    std::iota(order.begin(), order.end(), std::uint64_t{0});
  } else {
    std::vector<std::uint64_t> check = order;
    std::sort(check.begin(), check.end());
    for (std::uint64_t i = 0; i < check.size(); ++i)
      if (check.size() != ngroups || check[i] != i)
        throw ConfigError("group_order is not a permutation of the work-groups");
  }

  sink.on_event(trace::KernelBegin{program.name, options.invocation, cfg.global_size,
                                   cfg.local_size});
  Machine machine(compiled, buffers, sink, cfg, options);
  for (std::uint64_t linear : order) {
    const Dim3 g{linear / (groups[1] * groups[2]), (linear / groups[2]) % groups[1],
                 linear % groups[2]};
    machine.run_group(g);
  }
  sink.on_event(trace::KernelEnd{});

  SimResult result;
  result.instructions = machine.steps();
  result.work_items = cfg.global_size[0] * cfg.global_size[1] * cfg.global_size[2];
  result.buffers = cfg.buffers;
  for (auto &b : buffers)
    result.buffers[b.name].values = std::move(b.values);
  return result;
}

std::vector<TraceEvent> simulate(const kernel::KernelProgram &program,
                                 const NDRangeConfig &cfg, const SimOptions &options) {
  trace::CollectingSink sink;
  simulate(program, cfg, sink, options);
  return std::move(sink.events);
}

} // namespace aiwc::sim
