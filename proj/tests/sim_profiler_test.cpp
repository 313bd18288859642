/* Copyright 2026 The piep Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "piep/sim_profiler.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "gtest/gtest.h"

namespace piep {
namespace {

SimParams quiet_params() {
  SimParams p;
  p.noise_rel = 0.0;
  return p;
}

std::string record_bytes(const MeasurementRecord& r) {
  return detail::record_to_json(r).dump();
}

TEST(Skew, SampleValidationAndShape) {
  SimParams p;
  Rng rng(1);
  EXPECT_THROW(sample_skew(1, 10, p, rng), ValidationError);
  EXPECT_THROW(sample_skew(2, -1, p, rng), ValidationError);
  const auto waits = sample_skew(2, 100, p, rng);
  ASSERT_EQ(waits.size(), 100u);
  for (double w : waits) EXPECT_GT(w, 0.0);
}

TEST(Skew, ExpectedValueClosedForm) {
  SimParams p;
  p.skew_scale = 3e-4;
  p.skew_sigma = 0.5;
  EXPECT_DOUBLE_EQ(expected_skew(p), 3e-4 * std::exp(0.125));
}

TEST(Skew, SampleMeanConvergesToExpectation) {
  SimParams p;
  Rng rng(7);
  const int n = 20000;
  const auto waits = sample_skew(4, n, p, rng);
  double sum = 0.0, sum2 = 0.0;
  for (double w : waits) {
    sum += w;
    sum2 += w * w;
  }
  const double mean = sum / n;
  const double var = (sum2 - n * mean * mean) / (n - 1);
  const double se = std::sqrt(var / n);
  EXPECT_NEAR(mean, expected_skew(p), 3.0 * se);
}

TEST(SimParamsValidation, EachRuleFires) {
  SimParams p;
  EXPECT_TRUE(validate_sim_params(p).empty());
  p.energy_per_flop = -1.0;
  p.link_bandwidth = 0.0;
  p.noise_rel = 0.9;
  const auto v = validate_sim_params(p);
  EXPECT_EQ(v.size(), 3u);
  EXPECT_THROW(validate_sim_params_or_throw(p), ValidationError);
}

TEST(SimulateRun, RecordShapeMatchesTree) {
  const ModelArch arch = preset("vicuna-tiny");
  const ParallelismConfig par{Strategy::kTensorParallel, 2};
  const WorkloadConfig work{2, 8, 4};
  Rng rng(0);
  const MeasurementRecord rec =
      simulate_run(arch, par, work, quiet_params(), rng);
  const ModelTree t = build_tree(arch, par);
  std::int64_t node_count = 0;
  for_each_node(t.root, [&](const TreeNode&) { ++node_count; });
  ASSERT_EQ(static_cast<std::int64_t>(rec.nodes.size()), node_count);
  for (std::size_t i = 0; i < rec.nodes.size(); ++i) {
    EXPECT_EQ(rec.nodes[i].id, static_cast<std::int64_t>(i));
  }
  EXPECT_EQ(rec.runtime.gpus.size(), 2u);
  EXPECT_GT(rec.wall_time, 0.0);
  EXPECT_GT(rec.model_total_energy, 0.0);
}

TEST(SimulateRun, EnergiesAreAdditiveBottomUp) {
  const ModelArch arch = preset("mistral-tiny");
  const ParallelismConfig par{Strategy::kPipelineParallel, 2};
  const WorkloadConfig work{3, 16, 8};
  SimParams p;  // default noise on: additivity must hold regardless
  Rng rng(3);
  const MeasurementRecord rec = simulate_run(arch, par, work, p, rng);
  const ModelTree t = build_tree(arch, par);
  for_each_node(t.root, [&](const TreeNode& n) {
    const NodeEnergy& e = rec.nodes[static_cast<std::size_t>(n.id)];
    EXPECT_NEAR(e.total, e.compute + e.transfer + e.wait,
                1e-9 * std::max(1.0, std::abs(e.total)));
    if (n.children.empty()) return;
    double c = 0.0, tr = 0.0, w = 0.0;
    for (const auto& child : n.children) {
      const NodeEnergy& ce = rec.nodes[static_cast<std::size_t>(child.id)];
      c += ce.compute;
      tr += ce.transfer;
      w += ce.wait;
    }
    EXPECT_NEAR(e.compute, c, 1e-9 * std::max(1.0, c));
    EXPECT_NEAR(e.transfer, tr, 1e-9 * std::max(1.0, tr));
    EXPECT_NEAR(e.wait, w, 1e-9 * std::max(1.0, w));
  });
}

TEST(SimulateRun, CounterUnderReportsTotal) {
  // The on-device counters see compute and transfer but not waits or host
  // base power, so their sum must undercut the modeled total.
  for (const auto par :
       {ParallelismConfig{Strategy::kTensorParallel, 1},
        ParallelismConfig{Strategy::kTensorParallel, 4},
        ParallelismConfig{Strategy::kDataParallel, 2}}) {
    Rng rng(5);
    const MeasurementRecord rec = simulate_run(
        preset("llama-tiny"), par, {2, 16, 8}, quiet_params(), rng);
    EXPECT_LT(gpu_energy_counter_sum(rec), rec.model_total_energy)
        << "degree " << par.degree;
    EXPECT_NEAR(gpu_energy_counter_sum(rec),
                rec.nodes[0].compute + rec.nodes[0].transfer,
                1e-9 * rec.model_total_energy);
  }
}

TEST(SimulateRun, SingleGpuHasNoCommunicationEnergy) {
  Rng rng(2);
  const MeasurementRecord rec =
      simulate_run(preset("qwen-tiny"), {Strategy::kTensorParallel, 1},
                   {1, 8, 8}, quiet_params(), rng);
  EXPECT_DOUBLE_EQ(rec.nodes[0].transfer, 0.0);
  EXPECT_DOUBLE_EQ(rec.nodes[0].wait, 0.0);
  for (const auto& n : rec.nodes) EXPECT_FALSE(is_comm_kind(n.kind) && n.total > 0.0);
}

TEST(SimulateRun, SameStreamSameBytes) {
  Rng a = Rng::stream(9, 1), b = Rng::stream(9, 1);
  const auto r1 = simulate_run(preset("vicuna-tiny"),
                               {Strategy::kTensorParallel, 2}, {2, 8, 4},
                               SimParams{}, a);
  const auto r2 = simulate_run(preset("vicuna-tiny"),
                               {Strategy::kTensorParallel, 2}, {2, 8, 4},
                               SimParams{}, b);
  EXPECT_EQ(record_bytes(r1), record_bytes(r2));
}

TEST(SimulateRun, ExpectationModeIsStreamIndependent) {
  Rng a(123), b(98765);
  const auto r1 = simulate_run(preset("vicuna-tiny"),
                               {Strategy::kTensorParallel, 4}, {4, 64, 32},
                               quiet_params(), a, SimMode::kExpected);
  const auto r2 = simulate_run(preset("vicuna-tiny"),
                               {Strategy::kTensorParallel, 4}, {4, 64, 32},
                               quiet_params(), b, SimMode::kExpected);
  EXPECT_DOUBLE_EQ(r1.wall_time, r2.wall_time);
  EXPECT_DOUBLE_EQ(r1.model_total_energy, r2.model_total_energy);
  for (std::size_t i = 0; i < r1.nodes.size(); ++i) {
    EXPECT_DOUBLE_EQ(r1.nodes[i].total, r2.nodes[i].total);
  }
}

TEST(SimulateRun, SampledWaitsConvergeToExpectationMode) {
  const ModelArch arch = preset("vicuna-tiny");
  const ParallelismConfig par{Strategy::kTensorParallel, 2};
  const WorkloadConfig work{1, 8, 4};
  const SimParams p = quiet_params();
  Rng ref_rng(0);
  const double expected_wait =
      simulate_run(arch, par, work, p, ref_rng, SimMode::kExpected)
          .nodes[0]
          .wait;
  const int n = 1000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::stream(42, static_cast<std::uint64_t>(i));
    const double w = simulate_run(arch, par, work, p, rng).nodes[0].wait;
    sum += w;
    sum2 += w * w;
  }
  const double mean = sum / n;
  const double var = (sum2 - n * mean * mean) / (n - 1);
  const double se = std::sqrt(var / n);
  EXPECT_NEAR(mean, expected_wait, 3.0 * se);
}

TEST(SimulateRun, TensorParallelSpeedsUpThisWorkload) {
  // With the default profile, splitting the desk presets across two GPUs
  // buys wall time even after paying communication: the premise of showing
  // an energy/latency trade-off at all.
  const WorkloadConfig work{4, 64, 32};
  for (const auto& arch : desk_presets()) {
    Rng r1(0), r2(0);
    const double t1 = simulate_run(arch, {Strategy::kTensorParallel, 1}, work,
                                   quiet_params(), r1, SimMode::kExpected)
                          .wall_time;
    const double t2 = simulate_run(arch, {Strategy::kTensorParallel, 2}, work,
                                   quiet_params(), r2, SimMode::kExpected)
                          .wall_time;
    EXPECT_LT(t2, t1) << arch.variant_name;
  }
}

TEST(SimulateRun, RejectsInvalidInputs) {
  Rng rng(0);
  SimParams bad;
  bad.noise_rel = 2.0;
  EXPECT_THROW(simulate_run(preset("vicuna-tiny"),
                            {Strategy::kTensorParallel, 2}, {1, 4, 4}, bad,
                            rng),
               ValidationError);
  EXPECT_THROW(simulate_run(preset("vicuna-tiny"),
                            {Strategy::kTensorParallel, 3}, {1, 4, 4},
                            quiet_params(), rng),
               ValidationError);
  EXPECT_THROW(simulate_run(preset("vicuna-tiny"),
                            {Strategy::kTensorParallel, 2}, {0, 4, 4},
                            quiet_params(), rng),
               ValidationError);
}

TEST(Grid, ExpandOrderAndCount) {
  ConfigSet cfg;
  cfg.architectures = {preset("vicuna-tiny"), preset("qwen-tiny")};
  cfg.parallelism = {{Strategy::kTensorParallel, 1},
                     {Strategy::kTensorParallel, 2}};
  cfg.workloads = {{1, 4, 4}, {2, 8, 4}, {1, 16, 2}};
  const auto cells = expand_grid(cfg);
  ASSERT_EQ(cells.size(), 12u);
  // Architectures outermost, workloads innermost.
  EXPECT_EQ(cells[0].arch.variant_name, "vicuna-tiny");
  EXPECT_EQ(cells[0].par.degree, 1);
  EXPECT_EQ(cells[0].work.batch_size, 1);
  EXPECT_EQ(cells[1].work.batch_size, 2);
  EXPECT_EQ(cells[3].par.degree, 2);
  EXPECT_EQ(cells[6].arch.variant_name, "qwen-tiny");
}

TEST(Grid, CellStreamKeysSeparateCellsAndRuns) {
  const GridCell a{preset("vicuna-tiny"), {Strategy::kTensorParallel, 2},
                   {1, 4, 4}};
  GridCell b = a;
  b.work.seq_out = 5;
  EXPECT_NE(cell_stream_key(a, 0), cell_stream_key(a, 1));
  EXPECT_NE(cell_stream_key(a, 0), cell_stream_key(b, 0));
  EXPECT_EQ(cell_stream_key(a, 3), cell_stream_key(GridCell(a), 3));
}

TEST(GenDataset, SubsetGenerationIsConsistent) {
  // Generating a cell alone must reproduce exactly the records it gets as
  // part of a larger grid; protocol code depends on this to subset safely.
  const GridCell c1{preset("vicuna-tiny"), {Strategy::kTensorParallel, 2},
                    {1, 8, 4}};
  const GridCell c2{preset("qwen-tiny"), {Strategy::kDataParallel, 2},
                    {2, 8, 4}};
  SimParams p;
  p.seed = 11;
  const Dataset full = gen_dataset({c1, c2}, 3, p);
  const Dataset only_c2 = gen_dataset({c2}, 3, p);
  ASSERT_EQ(full.records.size(), 6u);
  ASSERT_EQ(only_c2.records.size(), 3u);
  for (int r = 0; r < 3; ++r) {
    EXPECT_EQ(record_bytes(full.records[static_cast<std::size_t>(3 + r)]),
              record_bytes(only_c2.records[static_cast<std::size_t>(r)]));
  }
}

TEST(GenDataset, ThreadCountDoesNotChangeBytes) {
  ConfigSet cfg;
  cfg.architectures = desk_presets();
  cfg.parallelism = {{Strategy::kTensorParallel, 1},
                     {Strategy::kTensorParallel, 2}};
  cfg.workloads = {{2, 16, 8}};
  const auto cells = expand_grid(cfg);
  SimParams p;
  p.seed = 5;
  const Dataset one = gen_dataset(cells, 2, p, 1);
  const Dataset four = gen_dataset(cells, 2, p, 4);
  EXPECT_EQ(serialize_dataset(one), serialize_dataset(four));
}

TEST(GenDataset, RejectsDegenerateRequests) {
  const GridCell c{preset("vicuna-tiny"), {Strategy::kTensorParallel, 1},
                   {1, 4, 4}};
  EXPECT_THROW(gen_dataset({}, 1, SimParams{}), DataError);
  EXPECT_THROW(gen_dataset({c}, 0, SimParams{}), DataError);
}

TEST(DatasetIo, RoundTripIsByteIdentical) {
  const GridCell c{preset("mistral-tiny"), {Strategy::kPipelineParallel, 2},
                   {2, 8, 8}};
  SimParams p;
  p.seed = 21;
  const Dataset ds = gen_dataset({c}, 2, p);
  const std::string text = serialize_dataset(ds);
  const Dataset back = parse_dataset(text);
  EXPECT_EQ(serialize_dataset(back), text);
  EXPECT_EQ(back.params, ds.params);
  ASSERT_EQ(back.records.size(), ds.records.size());
  EXPECT_EQ(record_bytes(back.records[0]), record_bytes(ds.records[0]));
}

TEST(DatasetIo, DetectsTruncationAndBadHeaders) {
  const GridCell c{preset("vicuna-tiny"), {Strategy::kTensorParallel, 1},
                   {1, 4, 4}};
  const Dataset ds = gen_dataset({c}, 2, SimParams{});
  std::string text = serialize_dataset(ds);

  // Drop the last record line: header count no longer matches.
  const std::size_t cut = text.rfind('\n', text.size() - 2);
  EXPECT_THROW(parse_dataset(text.substr(0, cut + 1)), ParseError);
  EXPECT_THROW(parse_dataset(""), ParseError);
  EXPECT_THROW(parse_dataset("{\"schema\": \"bogus/v9\"}\n"), ParseError);
  EXPECT_THROW(parse_dataset("not structured\n"), ParseError);
}

TEST(SimParamsIo, RoundTripAndStrictKeys) {
  SimParams p;
  p.energy_per_flop = 1e-10;
  p.skew_sigma = 0.25;
  p.seed = 77;
  const SimParams back =
      parse_sim_params(detail::sim_params_to_json(p).dump());
  EXPECT_EQ(back, p);
  EXPECT_THROW(parse_sim_params(R"({"idle_watts": 10})"), ParseError);
  EXPECT_THROW(parse_sim_params(R"({"idle_power": "lots"})"), ParseError);
  EXPECT_THROW(parse_sim_params("[]"), ParseError);
  // Partial documents inherit defaults.
  const SimParams partial = parse_sim_params(R"({"noise_rel": 0.0})");
  EXPECT_EQ(partial.noise_rel, 0.0);
  EXPECT_EQ(partial.idle_power, SimParams{}.idle_power);
}

TEST(RecordFeatures, ReflectRunShape) {
  Rng rng(4);
  const MeasurementRecord rec =
      simulate_run(preset("vicuna-tiny"), {Strategy::kTensorParallel, 2},
                   {2, 8, 4}, quiet_params(), rng);
  const AggregatedFeatures f = record_features(rec);
  EXPECT_DOUBLE_EQ(f.num_gpus, 2.0);
  EXPECT_DOUBLE_EQ(f.batch_size, 2.0);
  EXPECT_DOUBLE_EQ(f.sequence_length, 12.0);
  EXPECT_DOUBLE_EQ(f.execution_time, rec.wall_time);
}

}  // namespace
}  // namespace piep
