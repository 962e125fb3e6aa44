#include "aiwc/kernel.hpp"

#include "aiwc/error.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <map>
#include <set>
#include <unordered_map>

namespace aiwc::kernel {

std::optional<std::size_t> KernelProgram::block_index(std::string_view label) const {
  for (std::size_t i = 0; i < blocks.size(); ++i)
    if (blocks[i].label == label)
      return i;
  return std::nullopt;
}

std::size_t KernelProgram::instruction_count() const {
  std::size_t n = 0;
  for (const auto &b : blocks)
    n += b.instructions.size();
  return n;
}

namespace {

template <class... Ts> struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts> overloaded(Ts...) -> overloaded<Ts...>;

void note_reg(std::uint32_t &hi, const Operand &op) {
  if (auto *r = std::get_if<Register>(&op))
    hi = std::max(hi, r->index + 1);
}

} // namespace

std::uint32_t KernelProgram::register_count() const {
  std::uint32_t hi = 0;
  for (const auto &b : blocks) {
    for (const auto &ins : b.instructions) {
      std::visit(overloaded{
                     [&](const Compute &c) {
                       hi = std::max(hi, c.dst.index + 1);
                       for (const auto &s : c.srcs)
                         note_reg(hi, s);
                     },
                     [&](const Load &l) {
                       hi = std::max(hi, l.dst.index + 1);
                       for (const auto &t : l.index.terms)
                         note_reg(hi, t);
                     },
                     [&](const Store &s) {
                       note_reg(hi, s.src);
                       for (const auto &t : s.index.terms)
                         note_reg(hi, t);
                     },
                     [&](const CondBr &c) { note_reg(hi, c.cond); },
                     [](const auto &) {},
                 },
                 ins.op);
    }
  }
  return hi;
}

std::optional<std::size_t> known_arity(std::string_view opcode) {
  static const std::unordered_map<std::string_view, std::size_t> table{
      {"mov", 1},    {"not", 1},  {"neg", 1},    {"add", 2},  {"sub", 2},  {"mul", 2},
      {"div", 2},    {"rem", 2},  {"and", 2},    {"or", 2},   {"xor", 2},  {"shl", 2},
      {"shr", 2},    {"min", 2},  {"max", 2},    {"lt", 2},   {"le", 2},   {"gt", 2},
      {"ge", 2},     {"eq", 2},   {"ne", 2},     {"mad", 3},  {"select", 3},
      {"fadd", 2},   {"fsub", 2}, {"fmul", 2},   {"fdiv", 2}, {"fmin", 2}, {"fmax", 2},
      {"fmad", 3},   {"fma", 3},  {"fneg", 1},   {"fmov", 1},
  };
  auto it = table.find(opcode);
  if (it == table.end())
    return std::nullopt;
  return it->second;
}

namespace {

constexpr std::size_t kMaxRegisters = 4096;
constexpr std::uint32_t kMaxWidth = 64;

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
    s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
    s.remove_suffix(1);
  return s;
}

bool is_ident_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '.';
}
bool is_ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
}
bool is_identifier(std::string_view s) {
  if (s.empty() || !is_ident_start(s.front()))
    return false;
  return std::all_of(s.begin(), s.end(), is_ident_char);
}

std::vector<std::string_view> split_commas(std::string_view s) {
  std::vector<std::string_view> out;
  if (trim(s).empty())
    return out;
  int depth = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '[')
      ++depth;
    else if (s[i] == ']')
      --depth;
    else if (s[i] == ',' && depth == 0) {
      out.push_back(trim(s.substr(start, i - start)));
      start = i + 1;
    }
  }
  out.push_back(trim(s.substr(start)));
  return out;
}

class Parser {
public:
  explicit Parser(std::string_view source) : source_(source) {}

  KernelProgram run() {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= source_.size()) {
      const std::size_t eol = source_.find('\n', pos);
      std::string_view raw = source_.substr(
          pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
      ++line_no;
      line_ = line_no;
      handle_line(raw);
      if (eol == std::string_view::npos)
        break;
      pos = eol + 1;
    }
    finish();
    return std::move(prog_);
  }

private:
  [[noreturn]] void syntax(const std::string &why) const { throw SyntaxError(line_, why); }

  void handle_line(std::string_view raw) {
    if (auto semi = raw.find(';'); semi != std::string_view::npos)
      raw = raw.substr(0, semi);
    std::string_view text = trim(raw);
    if (text.empty())
      return;

    if (!saw_statement_ && (text.rfind("kernel ", 0) == 0 || text.rfind("kernel\t", 0) == 0)) {
      parse_header(trim(text.substr(6)));
      saw_statement_ = true;
      return;
    }
    saw_statement_ = true;

    // Optional `label:` prefix.
    std::size_t i = 0;
    while (i < text.size() && is_ident_char(text[i]))
      ++i;
    std::size_t j = i;
    while (j < text.size() && std::isspace(static_cast<unsigned char>(text[j])))
      ++j;
    if (i > 0 && j < text.size() && text[j] == ':') {
      std::string_view label = text.substr(0, i);
      if (!is_identifier(label))
        syntax("invalid label '" + std::string(label) + "'");
      open_block(std::string(label));
      text = trim(text.substr(j + 1));
      if (text.empty())
        return;
    }
    parse_instruction(text);
  }

  void parse_header(std::string_view rest) {
    std::string_view name = rest;
    auto paren = rest.find('(');
    if (paren != std::string_view::npos) {
      if (rest.back() != ')')
        syntax("kernel header parameter list must end with ')'");
      name = trim(rest.substr(0, paren));
      for (auto p : split_commas(rest.substr(paren + 1, rest.size() - paren - 2))) {
        if (!is_identifier(p))
          syntax("invalid parameter name '" + std::string(p) + "'");
        if (std::find(prog_.params.begin(), prog_.params.end(), p) != prog_.params.end())
          syntax("duplicate parameter '" + std::string(p) + "'");
        prog_.params.emplace_back(p);
      }
      declared_params_ = true;
    }
    if (!is_identifier(name))
      syntax("invalid kernel name '" + std::string(name) + "'");
    prog_.name = std::string(name);
  }

  void open_block(std::string label) {
    for (const auto &b : prog_.blocks)
      if (b.label == label)
        syntax("duplicate label '" + label + "'");
    close_block_check();
    prog_.blocks.push_back(BasicBlock{std::move(label), {}, line_});
  }

  void close_block_check() const {
    if (prog_.blocks.empty())
      return;
    const auto &b = prog_.blocks.back();
    if (b.instructions.empty() || !is_terminator(b.instructions.back()))
      throw MissingTerminator(b.instructions.empty() ? b.line : b.instructions.back().line,
                              "block '" + b.label + "' does not end in br, jmp or ret");
  }

  BasicBlock &current_block() {
    if (prog_.blocks.empty())
      prog_.blocks.push_back(BasicBlock{"entry", {}, line_});
    BasicBlock &b = prog_.blocks.back();
    if (!b.instructions.empty() && is_terminator(b.instructions.back()))
      syntax("instruction after terminator of block '" + b.label + "' (add a label)");
    return b;
  }

  Register parse_register(std::string_view s) {
    auto op = parse_operand(s);
    if (auto *r = std::get_if<Register>(&op))
      return *r;
    syntax("expected a register, got '" + std::string(s) + "'");
  }

  Operand parse_operand(std::string_view s) {
    s = trim(s);
    if (s.empty())
      syntax("missing operand");
    if (s.size() >= 2 && s[0] == 'r' && std::all_of(s.begin() + 1, s.end(), [](char c) {
          return std::isdigit(static_cast<unsigned char>(c));
        })) {
      std::size_t idx = 0;
      auto [p, ec] = std::from_chars(s.data() + 1, s.data() + s.size(), idx);
      if (ec != std::errc() || idx >= kMaxRegisters)
        syntax("register index out of range in '" + std::string(s) + "'");
      return Register{static_cast<std::uint32_t>(idx)};
    }
    if (s.size() == 4 && s[3] >= '0' && s[3] <= '2') {
      static const std::pair<std::string_view, Builtin> names[] = {
          {"gid", Builtin::gid}, {"lid", Builtin::lid}, {"grp", Builtin::grp},
          {"gsz", Builtin::gsz}, {"lsz", Builtin::lsz}};
      for (auto [n, b] : names)
        if (s.substr(0, 3) == n)
          return BuiltinRef{b, static_cast<std::uint8_t>(s[3] - '0')};
    }
    const bool neg = s.front() == '-';
    std::string_view digits = neg ? s.substr(1) : s;
    if (!digits.empty() && std::all_of(digits.begin(), digits.end(), [](char c) {
          return std::isdigit(static_cast<unsigned char>(c));
        })) {
      std::uint64_t mag = 0;
      auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), mag);
      if (ec != std::errc())
        syntax("immediate out of range '" + std::string(s) + "'");
      if (neg && mag > (std::uint64_t{1} << 63))
        syntax("immediate out of range '" + std::string(s) + "'");
      const std::uint64_t bits = neg ? (~mag + 1) : mag;
      return Immediate{static_cast<std::int64_t>(bits)};
    }
    syntax("unknown operand '" + std::string(s) + "'");
  }

  // `buf[name][index]` or `name[index]`; index is `term (+ term)*`.
  std::pair<std::string, IndexExpr> parse_memory_operand(std::string_view s) {
    s = trim(s);
    std::vector<std::string_view> groups;
    auto lb = s.find('[');
    if (lb == std::string_view::npos || s.back() != ']')
      syntax("expected memory operand like buf[name][index], got '" + std::string(s) + "'");
    std::string_view head = trim(s.substr(0, lb));
    std::size_t pos = lb;
    while (pos < s.size()) {
      if (s[pos] != '[')
        syntax("malformed memory operand '" + std::string(s) + "'");
      auto rb = s.find(']', pos);
      if (rb == std::string_view::npos)
        syntax("unbalanced '[' in '" + std::string(s) + "'");
      groups.push_back(trim(s.substr(pos + 1, rb - pos - 1)));
      pos = rb + 1;
      while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos])))
        ++pos;
    }
    std::string_view name, index;
    if (head == "buf" && groups.size() == 2) {
      name = groups[0];
      index = groups[1];
    } else if (groups.size() == 1) {
      name = head;
      index = groups[0];
    } else {
      syntax("malformed memory operand '" + std::string(s) + "'");
    }
    if (!is_identifier(name))
      syntax("invalid buffer name '" + std::string(name) + "'");
    if (declared_params_ &&
        std::find(prog_.params.begin(), prog_.params.end(), name) == prog_.params.end())
      syntax("buffer '" + std::string(name) + "' is not a kernel parameter");
    if (!declared_params_ &&
        std::find(prog_.params.begin(), prog_.params.end(), name) == prog_.params.end())
      prog_.params.emplace_back(name);

    IndexExpr expr;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= index.size(); ++i) {
      if (i == index.size() || index[i] == '+') {
        expr.terms.push_back(parse_operand(index.substr(start, i - start)));
        start = i + 1;
      }
    }
    return {std::string(name), std::move(expr)};
  }

  void expect_count(const std::vector<std::string_view> &ops, std::size_t n,
                    std::string_view mnemonic) {
    if (ops.size() != n)
      syntax(std::string(mnemonic) + " takes " + std::to_string(n) + " operand(s), got " +
             std::to_string(ops.size()));
  }

  void parse_instruction(std::string_view text) {
    std::size_t sp = 0;
    while (sp < text.size() && !std::isspace(static_cast<unsigned char>(text[sp])))
      ++sp;
    std::string_view mnemonic = text.substr(0, sp);
    const auto ops = split_commas(text.substr(sp));

    std::uint32_t width = 1;
    bool has_width = false;
    if (auto dot = mnemonic.find(".x"); dot != std::string_view::npos) {
      std::string_view w = mnemonic.substr(dot + 2);
      auto [p, ec] = std::from_chars(w.data(), w.data() + w.size(), width);
      if (ec != std::errc() || p != w.data() + w.size() || width == 0 || width > kMaxWidth)
        syntax("invalid vector width suffix in '" + std::string(mnemonic) + "'");
      mnemonic = mnemonic.substr(0, dot);
      has_width = true;
    }
    if (mnemonic.empty() || !std::isalpha(static_cast<unsigned char>(mnemonic.front())) ||
        !std::all_of(mnemonic.begin(), mnemonic.end(), [](char c) {
          return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
        }))
      syntax("invalid opcode '" + std::string(mnemonic) + "'");

    Instr ins;
    ins.line = line_;
    if (mnemonic == "load" || mnemonic == "atomic_load") {
      expect_count(ops, 2, mnemonic);
      Load l;
      l.dst = parse_register(ops[0]);
      std::tie(l.buffer, l.index) = parse_memory_operand(ops[1]);
      l.width = width;
      l.atomic = mnemonic == "atomic_load";
      ins.op = std::move(l);
    } else if (mnemonic == "store" || mnemonic == "atomic_store") {
      expect_count(ops, 2, mnemonic);
      Store s;
      std::tie(s.buffer, s.index) = parse_memory_operand(ops[0]);
      s.src = parse_operand(ops[1]);
      s.width = width;
      s.atomic = mnemonic == "atomic_store";
      ins.op = std::move(s);
    } else if (mnemonic == "br" || mnemonic == "jmp" || mnemonic == "barrier" ||
               mnemonic == "ret") {
      if (has_width)
        syntax("'" + std::string(mnemonic) + "' takes no width suffix");
      if (mnemonic == "br") {
        expect_count(ops, 3, mnemonic);
        for (std::size_t k = 1; k < 3; ++k)
          if (!is_identifier(ops[k]))
            syntax("invalid label '" + std::string(ops[k]) + "'");
        ins.op = CondBr{parse_operand(ops[0]), std::string(ops[1]), std::string(ops[2])};
      } else if (mnemonic == "jmp") {
        expect_count(ops, 1, mnemonic);
        if (!is_identifier(ops[0]))
          syntax("invalid label '" + std::string(ops[0]) + "'");
        ins.op = Jump{std::string(ops[0])};
      } else if (mnemonic == "barrier") {
        expect_count(ops, 0, mnemonic);
        ins.op = BarrierOp{};
      } else {
        expect_count(ops, 0, mnemonic);
        ins.op = Ret{};
      }
    } else {
      if (ops.empty())
        syntax("'" + std::string(mnemonic) + "' needs a destination register");
      Compute c;
      c.opcode = std::string(mnemonic);
      c.dst = parse_register(ops[0]);
      for (std::size_t k = 1; k < ops.size(); ++k)
        c.srcs.push_back(parse_operand(ops[k]));
      if (auto arity = known_arity(c.opcode); arity && *arity != c.srcs.size())
        syntax("'" + c.opcode + "' takes " + std::to_string(*arity) + " source operand(s)");
      c.width = width;
      ins.op = std::move(c);
    }
    current_block().instructions.push_back(std::move(ins));
  }

  void finish() {
    if (prog_.blocks.empty())
      throw SyntaxError(line_, "kernel has no instructions");
    close_block_check();
    if (prog_.name.empty())
      prog_.name = "kernel";
    check_labels();
    check_definitions();
  }

  void check_labels() const {
    for (const auto &b : prog_.blocks) {
      for (const auto &ins : b.instructions) {
        auto need = [&](const std::string &label) {
          if (!prog_.block_index(label))
            throw UndefinedLabel(ins.line, "branch to undefined label '" + label + "'");
        };
        if (auto *c = std::get_if<CondBr>(&ins.op)) {
          need(c->then_label);
          need(c->else_label);
        } else if (auto *j = std::get_if<Jump>(&ins.op)) {
          need(j->label);
        }
      }
    }
  }

  // Must-defined analysis over the CFG: a register may be read only if every
  // path from the entry writes it first.
  void check_definitions() const {
    const std::size_t nregs = prog_.register_count();
    const std::size_t nblocks = prog_.blocks.size();
    using Set = std::vector<bool>;
    std::vector<std::vector<std::size_t>> succ(nblocks);
    for (std::size_t b = 0; b < nblocks; ++b) {
      const Instr &t = prog_.blocks[b].instructions.back();
      if (auto *c = std::get_if<CondBr>(&t.op)) {
        succ[b].push_back(*prog_.block_index(c->then_label));
        succ[b].push_back(*prog_.block_index(c->else_label));
      } else if (auto *j = std::get_if<Jump>(&t.op)) {
        succ[b].push_back(*prog_.block_index(j->label));
      }
    }
    auto transfer = [&](std::size_t b, Set in) {
      for (const auto &ins : prog_.blocks[b].instructions) {
        if (auto *c = std::get_if<Compute>(&ins.op))
          in[c->dst.index] = true;
        else if (auto *l = std::get_if<Load>(&ins.op))
          in[l->dst.index] = true;
      }
      return in;
    };
    std::vector<Set> in(nblocks, Set(nregs, true));
    in[0] = Set(nregs, false);
    bool changed = true;
    while (changed) {
      changed = false;
      for (std::size_t b = 0; b < nblocks; ++b) {
        Set out = transfer(b, in[b]);
        for (std::size_t s : succ[b]) {
          Set merged = in[s];
          for (std::size_t r = 0; r < nregs; ++r)
            merged[r] = merged[r] && out[r];
          if (s == 0)
            continue; // entry has no defined registers on kernel start
          if (merged != in[s]) {
            in[s] = std::move(merged);
            changed = true;
          }
        }
      }
    }
    for (std::size_t b = 0; b < nblocks; ++b) {
      Set defined = in[b];
      for (const auto &ins : prog_.blocks[b].instructions) {
        auto use = [&](const Operand &op) {
          if (auto *r = std::get_if<Register>(&op); r && !defined[r->index])
            throw UseBeforeDef(ins.line, "register r" + std::to_string(r->index) +
                                             " may be read before it is written");
        };
        std::visit(overloaded{
                       [&](const Compute &c) {
                         for (const auto &s : c.srcs)
                           use(s);
                         defined[c.dst.index] = true;
                       },
                       [&](const Load &l) {
                         for (const auto &t : l.index.terms)
                           use(t);
                         defined[l.dst.index] = true;
                       },
                       [&](const Store &s) {
                         for (const auto &t : s.index.terms)
                           use(t);
                         use(s.src);
                       },
                       [&](const CondBr &c) { use(c.cond); },
                       [](const auto &) {},
                   },
                   ins.op);
      }
    }
  }

  std::string_view source_;
  std::size_t line_ = 0;
  bool saw_statement_ = false;
  bool declared_params_ = false;
  KernelProgram prog_;
};

} // namespace

KernelProgram parse_kernel(std::string_view source) { return Parser(source).run(); }

} // namespace aiwc::kernel
