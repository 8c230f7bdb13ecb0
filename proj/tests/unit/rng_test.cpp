#include "smoothhess/parallel.hpp"
#include "smoothhess/rng.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <stdexcept>

namespace smoothhess {
namespace {

// Known-answer vectors for Philox4x32-10 from the Random123 distribution.
TEST(Philox, KnownAnswerZero) {
  const auto b = Philox4x32(0, 0).block(0);
  EXPECT_EQ(b[0], 0x6627e8d5u);
  EXPECT_EQ(b[1], 0xe169c58du);
  EXPECT_EQ(b[2], 0xbc57ac4cu);
  EXPECT_EQ(b[3], 0x9b00dbd8u);
}

TEST(Philox, KnownAnswerOnes) {
  const auto b = Philox4x32(~0ULL, ~0ULL).block(~0ULL);
  EXPECT_EQ(b[0], 0x408f276du);
  EXPECT_EQ(b[1], 0x41c83b0eu);
  EXPECT_EQ(b[2], 0xa20bc7c6u);
  EXPECT_EQ(b[3], 0x6d5451fdu);
}

TEST(Philox, KnownAnswerPi) {
  const auto b = Philox4x32(0x299f31d0a4093822ULL, 0x0370734413198a2eULL).block(0x85a308d3243f6a88ULL);
  EXPECT_EQ(b[0], 0xd16cfe09u);
  EXPECT_EQ(b[1], 0x94fdccebu);
  EXPECT_EQ(b[2], 0x5001e420u);
  EXPECT_EQ(b[3], 0x24126ea1u);
}

TEST(RandomStream, ReproducibleAndStreamsDiffer) {
  RandomStream a(7, 3), b(7, 3), c(7, 4);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    EXPECT_NE(x, c.next_u64());
  }
}

TEST(RandomStream, NormalMoments) {
  RandomStream rng(1, 0);
  double s = 0, q = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    q += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(q / n, 1.0, 0.015);
}

TEST(RandomStream, UniformRanges) {
  RandomStream rng(2, 0);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    const double v = rng.uniform_open_low();
    EXPECT_GT(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_LT(rng.below(7), 7u);
  }
}

TEST(Parallel, VisitsEveryIndexOnce) {
  set_thread_count(4);
  std::vector<std::atomic<int>> hits(1000);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; });
  for (auto& h : hits) EXPECT_EQ(h.load(), 1);
  set_thread_count(1);
}

TEST(Parallel, RethrowsLowestFailure) {
  set_thread_count(4);
  try {
    parallel_for(100, [](std::size_t i) {
      if (i % 10 == 3) throw std::runtime_error(std::to_string(i));
    });
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "3");
  }
  set_thread_count(1);
}

}  // namespace
}  // namespace smoothhess
