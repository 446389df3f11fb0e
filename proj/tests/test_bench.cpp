// Copyright 2026 The ctcprune Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "ctcprune/bench.hpp"
#include "ctcprune/error.hpp"

using namespace ctcprune;
using namespace ctcprune::bench;

namespace {

const EncoderModel& desk_model() {
  static const EncoderModel m = EncoderModel::create(EncoderConfig{});
  return m;
}

const Dataset& bench_set() {
  static const Dataset d = generate_dataset(SyntheticTaskSpec{}, "bench", 40);
  return d;
}

}  // namespace

TEST_CASE("full depth only: one row with unit speedup") {
  const BenchReport r = benchmark_depths(desk_model(), bench_set(), {8}, 3, 1);
  REQUIRE(r.rows.size() == 1);
  CHECK(r.rows[0].speedup == 1.0);
  CHECK(r.rows[0].rep_ms.size() == 3);
  CHECK(r.rows[0].fps > 0.0);
  CHECK(r.utterances == 40);
}

TEST_CASE("half depth is faster than full depth") {
  const BenchReport r = benchmark_depths(desk_model(), bench_set(), {4}, 5, 1);
  REQUIRE(r.rows.size() == 1);
  MESSAGE("speedup at depth 4: " << r.rows[0].speedup);
  CHECK(r.rows[0].speedup > 1.0);
}

TEST_CASE("argument checks") {
  CHECK_THROWS_AS(benchmark_depths(desk_model(), bench_set(), {8}, 2, 0), ConfigError);
  CHECK_THROWS_AS(benchmark_depths(desk_model(), {}, {8}, 3, 0), DataError);
  CHECK_THROWS_AS(benchmark_depths(desk_model(), bench_set(), {9}, 3, 0), ConfigError);
  CHECK_THROWS_AS(benchmark_depths(desk_model(), bench_set(), {}, 3, 0), ConfigError);
}

TEST_CASE("CSV columns") {
  BenchReport r;
  r.rows.push_back({8, 1.5, 1000.0, 1.0, {}});
  const auto path = (std::filesystem::temp_directory_path() / "ctcprune_bench.csv").string();
  write_bench_csv(r, path);
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "depth,median_ms,fps,speedup");
  CHECK(row == "8,1.500000,1000.00,1.0000");
  std::filesystem::remove(path);
}

TEST_CASE("parallel throughput mode") {
  const auto fps = parallel_fps(desk_model(), bench_set(), {2, 8}, 2, 3);
  REQUIRE(fps.size() == 2);
  CHECK(fps[0] > 0.0);
  CHECK(fps[1] > 0.0);
  CHECK_THROWS_AS(parallel_fps(desk_model(), bench_set(), {0}, 2, 3), ConfigError);
  CHECK_THROWS_AS(parallel_fps(desk_model(), {}, {1}, 2, 3), DataError);
}
