#include "clbench/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <set>

using namespace clbench;

TEST_CASE("streams are deterministic and purpose-independent") {
  auto a = rng::make_stream(42, rng::Stream::shuffle);
  auto b = rng::make_stream(42, rng::Stream::shuffle);
  for (int i = 0; i < 100; ++i) CHECK(a() == b());

  auto c = rng::make_stream(42, rng::Stream::init);
  auto d = rng::make_stream(42, rng::Stream::shuffle);
  bool all_same = true;
  for (int i = 0; i < 16; ++i) all_same &= c() == d();
  CHECK_FALSE(all_same);

  auto e = rng::make_stream(42, rng::Stream::shuffle, 1);
  auto f = rng::make_stream(42, rng::Stream::shuffle, 2);
  all_same = true;
  for (int i = 0; i < 16; ++i) all_same &= e() == f();
  CHECK_FALSE(all_same);
}

TEST_CASE("next_below stays in range and covers small supports") {
  auto g = rng::make_stream(7, rng::Stream::misc);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    auto v = rng::next_below(g, 5);
    CHECK(v < 5);
    seen.insert(v);
  }
  CHECK(seen.size() == 5);
  CHECK_THROWS(rng::next_below(g, 0));
}

TEST_CASE("real01 and uniform bounds") {
  auto g = rng::make_stream(9, rng::Stream::misc);
  for (int i = 0; i < 1000; ++i) {
    double r = rng::real01(g);
    CHECK(r >= 0.0);
    CHECK(r < 1.0);
    float u = rng::uniform(g, -2.0f, 3.0f);
    CHECK(u >= -2.0f);
    CHECK(u < 3.0f);
  }
}

TEST_CASE("shuffle is a bijection; sampling without replacement is distinct") {
  auto g = rng::make_stream(11, rng::Stream::misc);
  std::vector<int> v = rng::identity_permutation(257);
  rng::shuffle(v, g);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == rng::identity_permutation(257));

  auto s = rng::sample_without_replacement(100, 40, g);
  CHECK(s.size() == 40);
  std::set<int> distinct(s.begin(), s.end());
  CHECK(distinct.size() == 40);
  for (int x : s) CHECK(x < 100);
  CHECK_THROWS(rng::sample_without_replacement(3, 4, g));
}
