#include "aiwc/buffer_init.hpp"

#include "aiwc/error.hpp"

#include <charconv>
#include <fstream>
#include <random>
#include <vector>

namespace aiwc::sim {

namespace {

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos)
      return out;
    start = pos + 1;
  }
}

template <class T> T number(std::string_view s, std::string_view what) {
  T v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || s.empty())
    throw ConfigError("invalid " + std::string(what) + " '" + std::string(s) + "'");
  return v;
}

double probability(std::string_view s) {
  const std::string str(s);
  std::size_t used = 0;
  double p = -1.0;
  try {
    p = std::stod(str, &used);
  } catch (const std::exception &) {
    used = 0;
  }
  if (used != str.size() || str.empty() || !(p >= 0.0 && p <= 1.0))
    throw ConfigError("bernoulli probability must lie in [0, 1], got '" + str + "'");
  return p;
}

} // namespace

BufferSpec parse_buffer_spec(std::string_view text) {
  BufferSpec spec;
  const auto eq = text.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ConfigError("buffer spec must look like name=kind[:...], got '" + std::string(text) + "'");
  spec.name = std::string(text.substr(0, eq));
  const std::string_view rest = text.substr(eq + 1);

  if (rest.starts_with("file:")) {
    spec.kind = BufferSpec::Kind::file;
    spec.path = std::string(rest.substr(5));
    if (spec.path.empty())
      throw ConfigError("buffer '" + spec.name + "': file path is empty");
    return spec;
  }

  const auto parts = split(rest, ':');
  std::size_t i = 1;
  const std::string_view kind = parts[0];
  if (kind == "zeros") {
    spec.kind = BufferSpec::Kind::zeros;
  } else if (kind == "iota") {
    spec.kind = BufferSpec::Kind::iota;
  } else if (kind == "const") {
    spec.kind = BufferSpec::Kind::constant;
    if (parts.size() < 2)
      throw ConfigError("buffer '" + spec.name + "': const needs a value");
    spec.constant = number<std::int64_t>(parts[i++], "constant");
  } else if (kind == "bernoulli") {
    spec.kind = BufferSpec::Kind::bernoulli;
    if (parts.size() < 2)
      throw ConfigError("buffer '" + spec.name + "': bernoulli needs a probability");
    spec.probability = probability(parts[i++]);
  } else {
    throw ConfigError("buffer '" + spec.name + "': unknown kind '" + std::string(kind) + "'");
  }

  bool have_n = false;
  for (; i < parts.size(); ++i) {
    const auto kv = parts[i];
    const auto e = kv.find('=');
    if (e == std::string_view::npos)
      throw ConfigError("buffer '" + spec.name + "': expected key=value, got '" +
                        std::string(kv) + "'");
    const auto key = kv.substr(0, e), value = kv.substr(e + 1);
    if (key == "n") {
      spec.count = number<std::uint64_t>(value, "element count");
      have_n = true;
    } else if (key == "seed") {
      spec.seed = number<std::uint64_t>(value, "seed");
    } else if (key == "base") {
      spec.base = number<std::uint64_t>(value, "base address");
    } else if (key == "pack" && spec.kind == BufferSpec::Kind::bernoulli) {
      spec.pack = number<unsigned>(value, "pack");
      if (spec.pack < 1 || spec.pack > 64)
        throw ConfigError("buffer '" + spec.name + "': pack must be in 1..64");
    } else {
      throw ConfigError("buffer '" + spec.name + "': unknown option '" + std::string(key) + "'");
    }
  }
  if (!have_n || spec.count == 0)
    throw ConfigError("buffer '" + spec.name + "': n=<count> (>= 1) is required");
  return spec;
}

BufferData make_buffer(const BufferSpec &spec, std::uint64_t default_seed) {
  BufferData out;
  out.base = spec.base;
  switch (spec.kind) {
  case BufferSpec::Kind::zeros:
    out.values.assign(spec.count, 0);
    break;
  case BufferSpec::Kind::iota:
    out.values.resize(spec.count);
    for (std::uint64_t i = 0; i < spec.count; ++i)
      out.values[i] = static_cast<std::int64_t>(i);
    break;
  case BufferSpec::Kind::constant:
    out.values.assign(spec.count, spec.constant);
    break;
  case BufferSpec::Kind::bernoulli: {
    std::mt19937_64 rng(spec.seed.value_or(default_seed));
    auto draw = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53 < spec.probability; };
    out.values.resize(spec.count);
    for (auto &v : out.values) {
      std::uint64_t bits = 0;
      for (unsigned k = 0; k < spec.pack; ++k)
        bits |= static_cast<std::uint64_t>(draw()) << k;
      v = static_cast<std::int64_t>(bits);
    }
    break;
  }
  case BufferSpec::Kind::file: {
    std::ifstream in(spec.path);
    if (!in)
      throw ConfigError("buffer '" + spec.name + "': cannot open '" + spec.path + "'");
    std::string token;
    while (in >> token)
      out.values.push_back(number<std::int64_t>(token, "integer in " + spec.path));
    if (out.values.empty())
      throw ConfigError("buffer '" + spec.name + "': '" + spec.path + "' holds no values");
    break;
  }
  }
  return out;
}

} // namespace aiwc::sim
