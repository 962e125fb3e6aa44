#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace aiwc {

/// Base of every error raised by the library. The CLI maps the subclasses
/// onto its documented exit codes.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// ---- trace codec / stream ----

class MalformedEvent : public Error {
public:
  MalformedEvent(std::size_t line_no, std::string reason)
      : Error("line " + std::to_string(line_no) + ": " + reason),
        line_no_(line_no), reason_(std::move(reason)) {}
  std::size_t line_no() const noexcept { return line_no_; }
  const std::string &reason() const noexcept { return reason_; }

private:
  std::size_t line_no_;
  std::string reason_;
};

class InvalidStream : public Error {
public:
  using Error::Error;
};

// ---- kernel IR ----

class KernelParseError : public Error {
public:
  KernelParseError(std::size_t line, const std::string &what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

class SyntaxError : public KernelParseError {
public:
  using KernelParseError::KernelParseError;
};
class UndefinedLabel : public KernelParseError {
public:
  using KernelParseError::KernelParseError;
};
class UseBeforeDef : public KernelParseError {
public:
  using KernelParseError::KernelParseError;
};
class MissingTerminator : public KernelParseError {
public:
  using KernelParseError::KernelParseError;
};

/// Invalid launch geometry or buffer setup.
class ConfigError : public Error {
public:
  using Error::Error;
};

// ---- simulation faults ----

class SimulationFault : public Error {
public:
  using Error::Error;
};
class BarrierDivergence : public SimulationFault {
public:
  using SimulationFault::SimulationFault;
};
class OutOfBoundsAccess : public SimulationFault {
public:
  OutOfBoundsAccess(std::string buffer, std::int64_t index, std::size_t line)
      : SimulationFault("line " + std::to_string(line) +
                        ": out-of-bounds access " + buffer + "[" +
                        std::to_string(index) + "]"),
        buffer_(std::move(buffer)), index_(index) {}
  const std::string &buffer() const noexcept { return buffer_; }
  std::int64_t index() const noexcept { return index_; }

private:
  std::string buffer_;
  std::int64_t index_;
};

/// Resource caps (step limit, histogram memory cap).
class CapExceeded : public Error {
public:
  using Error::Error;
};
class StepLimitExceeded : public CapExceeded {
public:
  using CapExceeded::CapExceeded;
};
class TraceTooLarge : public CapExceeded {
public:
  using CapExceeded::CapExceeded;
};

// ---- numerics / reports ----

class EmptyHistogram : public Error {
public:
  EmptyHistogram() : Error("histogram is empty") {}
};
class InvalidSkip : public Error {
public:
  explicit InvalidSkip(int bits)
      : Error("bits_skipped must be in 1..10, got " + std::to_string(bits)) {}
};
class EmptySample : public Error {
public:
  EmptySample() : Error("sample list is empty") {}
};
class IncompatibleReports : public Error {
public:
  using Error::Error;
};
class EmptySuite : public Error {
public:
  EmptySuite() : Error("suite contains no reports") {}
};
class SchemaMismatch : public Error {
public:
  using Error::Error;
};

} // namespace aiwc
