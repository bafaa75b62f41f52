// Copyright 2026 The SUA Workbench Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <set>
#include <string>

#include <gtest/gtest.h>

#include "sua/rng.hpp"

namespace sua {
namespace {

TEST(RngTest, StreamsAreReproducible) {
  Rng a = make_stream(42, "init");
  Rng b = make_stream(42, "init");
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a(), b());
}

TEST(RngTest, NamesSeedsAndIndicesSeparateStreams) {
  std::set<std::uint64_t> firsts;
  for (std::uint64_t seed : {0ULL, 1ULL, 2ULL}) {
    for (const char* name : {"init", "order", "perturb", "data"}) {
      for (std::uint64_t index : {0ULL, 1ULL}) firsts.insert(make_stream(seed, name, index)());
    }
  }
  EXPECT_EQ(firsts.size(), 24u);
}

TEST(RngTest, Fnv1aKnownValue) {
  // 64-bit FNV-1a of "a".
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
}

TEST(RngTest, UniformHelpersStayInRange) {
  Rng rng = make_stream(3, "range");
  for (int i = 0; i < 10000; ++i) {
    const double u = uniform01(rng);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const int k = uniform_int(rng, -2, 5);
    ASSERT_GE(k, -2);
    ASSERT_LE(k, 5);
  }
}

}  // namespace
}  // namespace sua
