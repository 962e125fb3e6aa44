#pragma once

// The `.aiwck` mini-IR: labeled basic blocks of width-annotated instructions
// over per-work-item 64-bit registers.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace aiwc::kernel {

enum class Builtin : std::uint8_t { gid, lid, grp, gsz, lsz };

struct Register {
  std::uint32_t index = 0;
  friend bool operator==(const Register &, const Register &) = default;
};
struct BuiltinRef {
  Builtin which = Builtin::gid;
  std::uint8_t dim = 0;
  friend bool operator==(const BuiltinRef &, const BuiltinRef &) = default;
};
struct Immediate {
  std::int64_t value = 0;
  friend bool operator==(const Immediate &, const Immediate &) = default;
};
using Operand = std::variant<Register, BuiltinRef, Immediate>;

/// Sum of operands, in elements.
struct IndexExpr {
  std::vector<Operand> terms;
};

struct Compute {
  std::string opcode;
  Register dst;
  std::vector<Operand> srcs;
  std::uint32_t width = 1;
};
struct Load {
  Register dst;
  std::string buffer;
  IndexExpr index;
  std::uint32_t width = 1;
  bool atomic = false;
};
struct Store {
  std::string buffer;
  IndexExpr index;
  Operand src;
  std::uint32_t width = 1;
  bool atomic = false;
};
/// Two-target conditional branch; taken means control goes to then_label.
struct CondBr {
  Operand cond;
  std::string then_label;
  std::string else_label;
};
struct Jump {
  std::string label;
};
struct BarrierOp {};
struct Ret {};

struct Instr {
  std::variant<Compute, Load, Store, CondBr, Jump, BarrierOp, Ret> op;
  std::size_t line = 0; // 1-based source line
};

constexpr bool is_terminator(const Instr &i) noexcept {
  return std::holds_alternative<CondBr>(i.op) || std::holds_alternative<Jump>(i.op) ||
         std::holds_alternative<Ret>(i.op);
}

struct BasicBlock {
  std::string label;
  std::vector<Instr> instructions;
  std::size_t line = 0;
};

struct KernelProgram {
  std::string name;
  std::vector<std::string> params;
  std::vector<BasicBlock> blocks; // blocks.front() is the entry

  std::optional<std::size_t> block_index(std::string_view label) const;
  std::size_t instruction_count() const;
  std::uint32_t register_count() const;
};

/// Arity of opcodes with defined integer semantics; nullopt for opcodes
/// outside the built-in table (accepted, see Compute semantics in the docs).
std::optional<std::size_t> known_arity(std::string_view opcode);

/// Throws SyntaxError, UndefinedLabel, UseBeforeDef or MissingTerminator,
/// each carrying the offending 1-based line.
KernelProgram parse_kernel(std::string_view source);

} // namespace aiwc::kernel
