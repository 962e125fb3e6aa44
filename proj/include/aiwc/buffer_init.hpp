#pragma once

// Declarative buffer initializers for command-line runs:
//
//   name=zeros:n=1024
//   name=iota:n=1024
//   name=const:5:n=16
//   name=bernoulli:0.5:n=4096:seed=7[:pack=64]
//   name=file:data.txt            (whitespace-separated integers)
//
// Any form also accepts `base=<byte address>`.

#include "aiwc/simulator.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>

namespace aiwc::sim {

struct BufferSpec {
  enum class Kind { zeros, iota, constant, bernoulli, file };
  std::string name;
  Kind kind = Kind::zeros;
  std::uint64_t count = 0;
  std::int64_t constant = 0;
  double probability = 0.5;
  /// Bernoulli draws packed per element, bit k holding draw k.
  unsigned pack = 1;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> base;
  std::string path;
};

/// Throws ConfigError on malformed specs.
BufferSpec parse_buffer_spec(std::string_view text);

/// Materializes the buffer. `default_seed` applies when the spec has none.
/// Bernoulli draws use mt19937_64 and compare (x >> 11) * 2^-53 < p, so the
/// output is identical on every platform.
BufferData make_buffer(const BufferSpec &spec, std::uint64_t default_seed);

} // namespace aiwc::sim
