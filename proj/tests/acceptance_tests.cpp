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

// Release acceptance suite. Every check prints a single trailing
// "[criterion N] <label>: PASS|FAIL" line so the verdict can be read straight
// from the log. The checks are end-to-end: structural facts are compared
// against brute-force oracles, learned predictors against the simulator they
// are supposed to explain.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gtest/gtest.h"
#include "piep/cli.hpp"
#include "support/oracles.hpp"

namespace piep {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Prints the verdict on scope exit so a fatal assertion that returns early
// still reports its criterion.
class Banner {
 public:
  Banner(int n, const char* label) : n_(n), label_(label) {}
  ~Banner() {
    std::cout << "[criterion " << n_ << "] " << label_ << ": "
              << (testing::Test::HasFailure() ? "FAIL" : "PASS") << "\n";
  }

 private:
  int n_;
  const char* label_;
};

// Dataset shared by the held-out-error and holdout-hygiene checks:
// every desk-scale preset, tensor degrees {1, 2, 4}, three workload shapes,
// fifty runs per cell at the default 5% relative measurement noise.
const Dataset& grid_dataset() {
  static const Dataset ds = [] {
    ConfigSet cfg;
    cfg.architectures = desk_presets();
    cfg.parallelism = {{Strategy::kTensorParallel, 1},
                       {Strategy::kTensorParallel, 2},
                       {Strategy::kTensorParallel, 4}};
    cfg.workloads = {{4, 64, 32}, {2, 32, 48}, {1, 48, 16}};
    SimParams params;
    return gen_dataset(expand_grid(cfg), 50, params);
  }();
  return ds;
}

// Small grid used to fit leaf models for the composer-mechanics checks.
const Dataset& mech_dataset() {
  static const Dataset ds = [] {
    ConfigSet cfg;
    cfg.architectures = {preset("vicuna-tiny"), preset("mistral-tiny")};
    cfg.parallelism = {{Strategy::kTensorParallel, 1},
                       {Strategy::kTensorParallel, 2}};
    cfg.workloads = {{2, 16, 8}, {4, 8, 8}};
    SimParams params;
    params.seed = 17;
    return gen_dataset(expand_grid(cfg), 15, params);
  }();
  return ds;
}

const PredictorParams& mech_params() {
  static const PredictorParams params = [] {
    FitOptions opts;
    opts.composer.epochs = 0;  // leaves only; the gate stays at identity
    return fit_predictor(mech_dataset(), opts);
  }();
  return params;
}

double mape_of(const EvalReport& rep, const std::string& name) {
  for (const auto& r : rep.results) {
    if (r.name == name) return r.mape;
  }
  ADD_FAILURE() << "no result named " << name;
  return std::numeric_limits<double>::quiet_NaN();
}

TEST(Acceptance, Criterion1TreeShapes) {
  Banner banner(1, "communication node counts per strategy");
  const auto start = Clock::now();
  for (const ModelArch& arch : all_presets()) {
    const std::int64_t layers = arch.num_layers;
    for (const std::int64_t p : {std::int64_t{2}, std::int64_t{4}}) {
      const ModelTree tp =
          build_tree(arch, {Strategy::kTensorParallel, p});
      EXPECT_EQ(count_kind(tp.root, ModuleKind::kAllReduce), 2 * layers)
          << arch.variant_name << " tensor degree " << p;
      EXPECT_EQ(count_kind(tp.root, ModuleKind::kP2PTransfer), 0);
      EXPECT_EQ(count_kind(tp.root, ModuleKind::kBatchOutputAllGather), 0);

      const ModelTree pp =
          build_tree(arch, {Strategy::kPipelineParallel, p});
      EXPECT_EQ(count_kind(pp.root, ModuleKind::kP2PTransfer), p - 1)
          << arch.variant_name << " pipeline degree " << p;
      EXPECT_EQ(count_kind(pp.root, ModuleKind::kAllReduce), 0);
      EXPECT_EQ(count_kind(pp.root, ModuleKind::kBatchOutputAllGather), 0);

      const ModelTree dp = build_tree(arch, {Strategy::kDataParallel, p});
      EXPECT_EQ(count_kind(dp.root, ModuleKind::kBatchOutputAllGather), 1)
          << arch.variant_name << " data degree " << p;
      EXPECT_EQ(count_kind(dp.root, ModuleKind::kAllReduce), 0);
      EXPECT_EQ(count_kind(dp.root, ModuleKind::kP2PTransfer), 0);
    }
    for (const Strategy s : {Strategy::kTensorParallel,
                             Strategy::kPipelineParallel,
                             Strategy::kDataParallel}) {
      const ModelTree single = build_tree(arch, {s, 1});
      EXPECT_EQ(count_kind(single.root, ModuleKind::kAllReduce), 0);
      EXPECT_EQ(count_kind(single.root, ModuleKind::kP2PTransfer), 0);
      EXPECT_EQ(count_kind(single.root, ModuleKind::kBatchOutputAllGather),
                0);
    }
  }
  EXPECT_LT(seconds_since(start), 1.0);
}

TEST(Acceptance, Criterion2RingSchedule) {
  Banner banner(2, "ring all-reduce steps and bytes vs enumerator");
  const auto start = Clock::now();
  // Sizes divisible by every rank count in range keep chunk sizes integral,
  // so the simulated byte count and the closed form agree bit for bit.
  for (std::int64_t p = 1; p <= 8; ++p) {
    for (const double bytes : {840.0, 40320.0, 860160.0}) {
      const RingSchedule got = ring_schedule(p, bytes);
      const piep_test::RingSimResult want =
          piep_test::simulate_ring_allreduce(p, bytes);
      ASSERT_TRUE(want.fully_reduced) << "p=" << p;
      EXPECT_EQ(got.total_steps, p == 1 ? 0 : 2 * (p - 1));
      EXPECT_EQ(got.total_steps, want.total_steps) << "p=" << p;
      EXPECT_EQ(want.chunks_sent_per_gpu, p == 1 ? 0 : 2 * (p - 1));
      EXPECT_DOUBLE_EQ(got.bytes_sent_per_gpu, want.bytes_sent_per_gpu)
          << "p=" << p << " bytes=" << bytes;
      const double closed_form =
          p == 1 ? 0.0
                 : 2.0 * static_cast<double>(p - 1) /
                       static_cast<double>(p) * bytes;
      EXPECT_DOUBLE_EQ(got.bytes_sent_per_gpu, closed_form);
    }
  }
  EXPECT_LT(seconds_since(start), 1.0);
}

TEST(Acceptance, Criterion3ComposerMechanics) {
  Banner banner(3, "gate band, identity reduction, analytic gradient");
  const auto start = Clock::now();

  // (a) The gate stays strictly inside (1 - 1/tau, 1 + 1/tau). Weight and
  // feature magnitudes keep |arg| below ~19, where tanh would round to
  // exactly +/-1 and park alpha on the closed boundary.
  {
    Rng rng(101);
    ComposerParams gate;
    gate.tau = 2.0;
    gate.weights.resize(static_cast<std::size_t>(kFeatureCount));
    for (auto& w : gate.weights) w = rng.uniform(-0.05, 0.05);
    gate.bias = rng.uniform(-1.0, 1.0);
    std::vector<double> z(static_cast<std::size_t>(kFeatureCount));
    int inside = 0;
    for (int i = 0; i < 100000; ++i) {
      for (auto& v : z) v = rng.uniform(-5.0, 5.0);
      const double a = composer_alpha(gate, z);
      if (a > 0.5 && a < 1.5) ++inside;
    }
    EXPECT_EQ(inside, 100000);
  }

  // (b) With zero gate weights the composed root is exactly the leaf sum.
  const PredictorParams& params = mech_params();
  for (const double w : params.composer.weights) {
    ASSERT_EQ(w, 0.0);
  }
  ASSERT_EQ(params.composer.bias, 0.0);
  const Dataset& ds = mech_dataset();
  for (const std::size_t idx : {std::size_t{0}, ds.records.size() / 2,
                                ds.records.size() - 1}) {
    const MeasurementRecord& rec = ds.records[idx];
    const std::map<std::int64_t, double> values =
        predict_record(rec, params);
    const ModelTree tree = build_tree(rec.arch, rec.par);
    const std::function<double(const TreeNode&)> nested =
        [&](const TreeNode& n) -> double {
      if (n.children.empty()) return values.at(n.id);
      double sum = 0.0;
      for (const auto& c : n.children) sum += nested(c);
      EXPECT_DOUBLE_EQ(values.at(n.id), sum) << "node " << n.id;
      return sum;
    };
    nested(tree.root);
  }

  // (c) Analytic gate gradient against central finite differences on every
  // coordinate (57 weights + bias).
  {
    const MeasurementRecord* two_gpu = nullptr;
    for (const auto& rec : ds.records) {
      if (rec.par.degree == 2) two_gpu = &rec;
    }
    ASSERT_NE(two_gpu, nullptr);
    const ModelTree tree = build_tree(two_gpu->arch, two_gpu->par);
    const detail::ComposeNode ctx = detail::build_compose_node(
        tree.root, record_features(*two_gpu), two_gpu->arch, two_gpu->par,
        two_gpu->work, params);

    Rng rng(31);
    const std::size_t dim = static_cast<std::size_t>(kFeatureCount);
    std::vector<double> point(dim + 1);
    for (std::size_t j = 0; j < dim; ++j) point[j] = rng.uniform(-0.05, 0.05);
    point[dim] = 0.03;

    const auto unpack = [dim](const std::vector<double>& v) {
      ComposerParams c;
      c.weights.assign(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(dim));
      c.bias = v[dim];
      c.tau = 2.0;
      return c;
    };
    ComposerParams base = unpack(point);
    std::vector<double> grad(dim + 1);
    detail::compose_grad(ctx, base, &grad);
    const std::vector<double> fd = piep_test::central_difference_gradient(
        [&](const std::vector<double>& v) {
          const ComposerParams c = unpack(v);
          return detail::compose_value(ctx, c, nullptr);
        },
        point, 1e-5);

    double gmax = 0.0;
    for (const double g : grad) gmax = std::max(gmax, std::abs(g));
    ASSERT_GT(gmax, 0.0);
    ASSERT_GE(grad.size(), 20u);
    for (std::size_t j = 0; j < grad.size(); ++j) {
      const double denom = std::max(std::abs(grad[j]), std::abs(fd[j]));
      if (denom < 1e-9 * gmax) {
        // Both sides are zero at this scale; demand agreement in absolute
        // terms instead of an ill-posed ratio.
        EXPECT_NEAR(grad[j], fd[j], 1e-6 * gmax) << "coordinate " << j;
      } else {
        EXPECT_LE(std::abs(grad[j] - fd[j]) / denom, 1e-4)
            << "coordinate " << j;
      }
    }
  }
  EXPECT_LT(seconds_since(start), 10.0);
}

TEST(Acceptance, Criterion4TokenRecovery) {
  Banner banner(4, "token baseline coefficient recovery");
  const auto start = Clock::now();
  std::vector<MeasurementRecord> recs;
  for (const auto& [si, so] :
       std::vector<std::pair<std::int64_t, std::int64_t>>{
           {8, 4}, {16, 2}, {5, 9}, {12, 12}, {3, 7}, {20, 10}}) {
    MeasurementRecord r;
    r.work = {1, si, so};
    r.model_total_energy = static_cast<double>(si) +
                           2.0 * static_cast<double>(so) +
                           0.1 * static_cast<double>(si * so);
    recs.push_back(r);
  }
  std::vector<const MeasurementRecord*> ptrs;
  for (const auto& r : recs) ptrs.push_back(&r);
  const TokenRegressionParams p = fit_token_regression(ptrs);
  EXPECT_NEAR(p.a_in, 1.0, 1e-6);
  EXPECT_NEAR(p.a_out, 2.0, 1e-6);
  EXPECT_NEAR(p.a_cross, 0.1, 1e-6);
  // 10 + 40 + 0.1 * 200; the recovered coefficients carry only solver-level
  // rounding, so the prediction lands within float noise of 70.
  EXPECT_NEAR(predict_token_regression(p, {1, 10, 20}), 70.0, 1e-9);
  EXPECT_LT(seconds_since(start), 1.0);
}

TEST(Acceptance, Criterion5HeldOutOrdering) {
  Banner banner(5, "held-out error and baseline ordering");
  const auto start = Clock::now();
  const Dataset& ds = grid_dataset();
  ASSERT_EQ(ds.records.size(), 4u * 3u * 3u * 50u);

  double comm = 0.0, total = 0.0;
  for (const auto& rec : ds.records) {
    total += rec.model_total_energy;
    for (const auto& node : rec.nodes) {
      if (is_comm_kind(node.kind)) comm += node.total;
    }
  }
  const double comm_share = 100.0 * comm / total;
  EXPECT_GE(comm_share, 15.0);

  EvalOptions opts;
  opts.scheme = SplitScheme::kKFold;
  opts.k = 3;
  opts.seed = 0;
  opts.composer.epochs = 120;
  opts.predictors = {"piep", "comm_blind", "piep_no_wait",
                     "token_regression", "proxy"};
  const EvalReport rep = run_protocol(ds, opts);

  const double m_piep = mape_of(rep, "piep");
  const double m_blind = mape_of(rep, "comm_blind");
  const double m_no_wait = mape_of(rep, "piep_no_wait");
  const double m_token = mape_of(rep, "token_regression");
  const double m_proxy = mape_of(rep, "proxy");
  std::cout << "  comm share " << comm_share << "%, mape piep " << m_piep
            << ", comm_blind " << m_blind << ", no_wait " << m_no_wait
            << ", token " << m_token << ", proxy " << m_proxy << "\n";

  EXPECT_LE(m_piep, 10.0);
  EXPECT_LT(m_piep, m_blind);
  EXPECT_LT(m_piep, m_no_wait);
  EXPECT_LT(m_piep, m_token);
  EXPECT_LT(m_piep, m_proxy);
  EXPECT_LT(seconds_since(start), 300.0);
}

TEST(Acceptance, Criterion6StrategyAsymmetry) {
  Banner banner(6, "communication blindness hurts pipeline more than data");
  const auto gap_for = [](Strategy s) {
    ConfigSet cfg;
    cfg.architectures = desk_presets();
    cfg.parallelism = {{s, 2}, {s, 4}};
    cfg.workloads = {{4, 64, 32}, {2, 32, 48}};
    SimParams params;
    const Dataset ds = gen_dataset(expand_grid(cfg), 30, params);
    EvalOptions opts;
    opts.scheme = SplitScheme::kKFold;
    opts.k = 2;
    opts.seed = 0;
    opts.composer.epochs = 80;
    opts.predictors = {"piep", "comm_blind"};
    const EvalReport rep = run_protocol(ds, opts);
    return mape_of(rep, "comm_blind") - mape_of(rep, "piep");
  };
  const double gap_pipeline = gap_for(Strategy::kPipelineParallel);
  const double gap_data = gap_for(Strategy::kDataParallel);
  std::cout << "  blindness gap: pipeline " << gap_pipeline << ", data "
            << gap_data << "\n";
  EXPECT_GT(gap_pipeline, gap_data);
}

TEST(Acceptance, Criterion7AllReduceShareTrend) {
  Banner banner(7, "all-reduce energy share grows with tensor degree");
  SimParams quiet;
  quiet.noise_rel = 0.0;
  const WorkloadConfig work{4, 64, 32};
  for (const ModelArch& arch : all_presets()) {
    const auto share = [&](std::int64_t p) {
      Rng rng(1);
      const MeasurementRecord rec =
          simulate_run(arch, {Strategy::kTensorParallel, p}, work, quiet,
                       rng, SimMode::kExpected);
      double comm = 0.0;
      for (const auto& node : rec.nodes) {
        if (node.kind == ModuleKind::kAllReduce) comm += node.total;
      }
      return comm / rec.model_total_energy;
    };
    EXPECT_LT(share(2), share(4)) << arch.variant_name;
  }
}

TEST(Acceptance, Criterion8HoldoutHygiene) {
  Banner banner(8, "group holdout exclusion and oracle exactness");
  const Dataset& ds = grid_dataset();
  const auto key_of = [](const MeasurementRecord& r, SplitScheme s) {
    switch (s) {
      case SplitScheme::kHoldoutVariant:
        return std::string(to_string(r.par.strategy)) + "x" +
               std::to_string(r.par.degree);
      case SplitScheme::kHoldoutBatch:
        return "batch" + std::to_string(r.work.batch_size);
      default:
        return r.arch.family_name;
    }
  };
  for (const SplitScheme scheme :
       {SplitScheme::kHoldoutVariant, SplitScheme::kHoldoutBatch,
        SplitScheme::kHoldoutFamily}) {
    const auto folds = make_splits(ds, scheme, 0, 0);
    EXPECT_GE(folds.size(), 3u);
    std::size_t covered = 0;
    for (const auto& fold : folds) {
      ASSERT_FALSE(fold.test.empty());
      const std::string held = key_of(ds.records[fold.test.front()], scheme);
      std::size_t leaked = 0;
      for (const std::size_t i : fold.test) {
        if (key_of(ds.records[i], scheme) != held) ++leaked;
      }
      for (const std::size_t i : fold.train) {
        if (key_of(ds.records[i], scheme) == held) ++leaked;
      }
      EXPECT_EQ(leaked, 0u) << scheme_name(scheme) << " fold " << fold.label;
      covered += fold.test.size();
    }
    EXPECT_EQ(covered, ds.records.size()) << scheme_name(scheme);
  }

  for (const SplitScheme scheme :
       {SplitScheme::kKFold, SplitScheme::kHoldoutVariant,
        SplitScheme::kHoldoutBatch, SplitScheme::kHoldoutFamily}) {
    EvalOptions opts;
    opts.scheme = scheme;
    opts.k = 4;
    opts.predictors = {"oracle"};
    const EvalReport rep = run_protocol(ds, opts);
    ASSERT_EQ(rep.results.size(), 1u);
    EXPECT_DOUBLE_EQ(rep.results[0].mape, 0.0) << scheme_name(scheme);
    EXPECT_EQ(rep.results[0].n_predictions, ds.records.size());
  }
}

int run_cli_line(const std::vector<std::string>& args, std::string* err_text) {
  std::vector<std::string> full;
  full.push_back("piep");
  full.insert(full.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : full) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code =
      cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (err_text) *err_text = err.str();
  return code;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

TEST(Acceptance, Criterion9PipelineDeterminism) {
  Banner banner(9, "byte-identical artifacts across reruns and threads");
  const std::string dir = testing::TempDir();
  const std::string config = dir + "acc9_config.json";
  const std::string dataset = dir + "acc9_dataset.json";
  const std::string model = dir + "acc9_model.json";
  const std::string report = dir + "acc9_report.json";
  {
    std::ofstream f(config, std::ios::binary);
    f << R"({
      "architectures": ["vicuna-tiny", "qwen-tiny"],
      "parallelism": [
        {"strategy": "tensor_parallel", "degree": 1},
        {"strategy": "tensor_parallel", "degree": 2}
      ],
      "workloads": [
        {"batch_size": 2, "seq_in": 8, "seq_out": 4},
        {"batch_size": 1, "seq_in": 6, "seq_out": 6},
        {"batch_size": 4, "seq_in": 12, "seq_out": 2}
      ]
    })";
  }

  std::string err;
  const auto run_pipeline = [&](int threads) {
    ASSERT_EQ(run_cli_line({"gen-profile", "--config", config, "--out",
                            dataset, "--runs-per-cell", "25", "--seed", "9",
                            "--threads", std::to_string(threads)},
                           &err),
              0)
        << err;
    ASSERT_EQ(run_cli_line({"train", "--dataset", dataset, "--out", model,
                            "--epochs", "15"},
                           &err),
              0)
        << err;
    ASSERT_EQ(run_cli_line({"evaluate", "--dataset", dataset, "--out", report,
                            "--predictors", "piep,oracle", "--k", "2",
                            "--epochs", "15", "--seed", "3"},
                           &err),
              0)
        << err;
  };

  run_pipeline(1);
  const std::string ds_a = slurp(dataset);
  const std::string model_a = slurp(model);
  const std::string report_a = slurp(report);
  ASSERT_FALSE(ds_a.empty());

  run_pipeline(1);
  EXPECT_EQ(slurp(dataset), ds_a);
  EXPECT_EQ(slurp(model), model_a);
  EXPECT_EQ(slurp(report), report_a);

  run_pipeline(3);
  EXPECT_EQ(slurp(dataset), ds_a);
  EXPECT_EQ(slurp(model), model_a);
  EXPECT_EQ(slurp(report), report_a);
}

TEST(Acceptance, Criterion10SpearmanSanity) {
  Banner banner(10, "rank correlation saturation and tie handling");
  const std::vector<double> x{0.1, 0.7, 1.3, 2.2, 3.9, 4.4, 7.0};
  std::vector<double> up, down;
  for (const double v : x) {
    up.push_back(std::exp(v));
    down.push_back(-v * v * v);
  }
  EXPECT_DOUBLE_EQ(spearman(x, up), 1.0);
  EXPECT_DOUBLE_EQ(spearman(x, down), -1.0);

  EXPECT_NEAR(spearman({1.0, 2.0, 2.0, 3.0}, {1.0, 2.0, 3.0, 4.0}),
              piep_test::spearman_reference({1.0, 2.0, 2.0, 3.0},
                                            {1.0, 2.0, 3.0, 4.0}),
              1e-12);
  Rng rng(45);
  int compared = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(25), b(25);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = static_cast<double>(rng.next_u64() % 6);
      b[i] = static_cast<double>(rng.next_u64() % 6);
    }
    if (*std::max_element(a.begin(), a.end()) ==
            *std::min_element(a.begin(), a.end()) ||
        *std::max_element(b.begin(), b.end()) ==
            *std::min_element(b.begin(), b.end())) {
      continue;
    }
    EXPECT_NEAR(spearman(a, b), piep_test::spearman_reference(a, b), 1e-12);
    ++compared;
  }
  EXPECT_GE(compared, 90);
}

}  // namespace
}  // namespace piep
