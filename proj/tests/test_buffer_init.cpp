#include "aiwc/buffer_init.hpp"
#include "aiwc/error.hpp"

#include <doctest.h>

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace aiwc;
using namespace aiwc::sim;

TEST_SUITE("buffers") {

TEST_CASE("spec parsing") {
  auto s = parse_buffer_spec("a=zeros:n=4");
  CHECK(s.name == "a");
  CHECK(s.kind == BufferSpec::Kind::zeros);
  CHECK(s.count == 4);
  CHECK_FALSE(s.base.has_value());

  s = parse_buffer_spec("b=const:-5:n=3:base=8192");
  CHECK(s.kind == BufferSpec::Kind::constant);
  CHECK(s.constant == -5);
  CHECK(s.base == 8192u);

  s = parse_buffer_spec("f=bernoulli:0.25:n=10:seed=3:pack=64");
  CHECK(s.probability == 0.25);
  CHECK(s.seed == 3u);
  CHECK(s.pack == 64);

  s = parse_buffer_spec("x=file:some/path.txt");
  CHECK(s.kind == BufferSpec::Kind::file);
  CHECK(s.path == "some/path.txt");
}

TEST_CASE("malformed specs") {
  for (const char *bad : {"zeros:n=4", "=zeros:n=4", "a=zeros", "a=zeros:n=0", "a=ones:n=4",
                          "a=const:n=4", "a=const:x:n=4", "a=bernoulli:1.5:n=4",
                          "a=bernoulli:n=4", "a=bernoulli:0.5:n=4:pack=65", "a=zeros:n=4:pack=2",
                          "a=iota:n=4:color=red", "a=iota:n=4:junk", "a=file:", "a=iota:n=-1"}) {
    INFO(bad);
    CHECK_THROWS_AS(parse_buffer_spec(bad), ConfigError);
  }
}

TEST_CASE("materialization") {
  CHECK(make_buffer(parse_buffer_spec("a=iota:n=5"), 0).values ==
        std::vector<std::int64_t>{0, 1, 2, 3, 4});
  CHECK(make_buffer(parse_buffer_spec("a=const:7:n=3"), 0).values ==
        std::vector<std::int64_t>{7, 7, 7});
  CHECK(make_buffer(parse_buffer_spec("a=zeros:n=2:base=4096"), 0).base == 4096u);

  const auto spec = parse_buffer_spec("a=bernoulli:0.5:n=4096");
  const auto x = make_buffer(spec, 1), y = make_buffer(spec, 1), z = make_buffer(spec, 2);
  CHECK(x.values == y.values);
  CHECK(x.values != z.values);
  std::int64_t ones = 0;
  for (auto v : x.values) {
    CHECK((v == 0 || v == 1));
    ones += v;
  }
  // 4096 fair draws: mean 2048, sd 32.
  CHECK(ones > 2048 - 200);
  CHECK(ones < 2048 + 200);
  // An explicit seed overrides the default.
  CHECK(make_buffer(parse_buffer_spec("a=bernoulli:0.5:n=64:seed=9"), 1).values ==
        make_buffer(parse_buffer_spec("a=bernoulli:0.5:n=64:seed=9"), 2).values);

  CHECK(make_buffer(parse_buffer_spec("a=bernoulli:0:n=8:pack=64"), 0).values ==
        std::vector<std::int64_t>(8, 0));
  CHECK(make_buffer(parse_buffer_spec("a=bernoulli:1:n=2:pack=64"), 0).values ==
        std::vector<std::int64_t>(2, -1));

  // Packing keeps the draw sequence: bit k of word w is draw 64w + k.
  const auto packed = make_buffer(parse_buffer_spec("a=bernoulli:0.3:n=4:pack=64:seed=5"), 0);
  const auto flat = make_buffer(parse_buffer_spec("a=bernoulli:0.3:n=256:seed=5"), 0);
  for (std::size_t i = 0; i < 256; ++i)
    CHECK(((static_cast<std::uint64_t>(packed.values[i / 64]) >> (i % 64)) & 1) ==
          static_cast<std::uint64_t>(flat.values[i]));
}

TEST_CASE("file buffers") {
  const auto path = std::filesystem::temp_directory_path() / "aiwc_buffer_test.txt";
  {
    std::ofstream out(path);
    out << "3 -4\n  17\n";
  }
  const auto spec = parse_buffer_spec("a=file:" + path.string());
  CHECK(make_buffer(spec, 0).values == std::vector<std::int64_t>{3, -4, 17});
  {
    std::ofstream out(path);
    out << "1 two 3\n";
  }
  CHECK_THROWS_AS(make_buffer(spec, 0), ConfigError);
  {
    std::ofstream out(path);
  }
  CHECK_THROWS_AS(make_buffer(spec, 0), ConfigError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(make_buffer(spec, 0), ConfigError);
}

} // TEST_SUITE
