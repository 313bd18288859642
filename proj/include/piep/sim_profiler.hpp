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

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "piep/config.hpp"
#include "piep/errors.hpp"
#include "piep/features.hpp"
#include "piep/model_tree.hpp"
#include "piep/rng.hpp"
#include "piep/version.hpp"

namespace piep {

// A closed-form stand-in for a profiled multi-GPU serving stack. Energies
// are Wh, times are seconds, powers are W. No claim of physical fidelity;
// the point is a ground truth with the right *shape*: additive per-module
// energies, communication that grows with the ring schedule, a skew-driven
// waiting phase, an on-device counter that under-reports, and measurement
// noise.

// Defaults put the desk-scale presets in a regime where synchronization
// waits carry a large energy share at higher degrees: that is the part of
// the ground truth a wait-blind or communication-blind predictor cannot
// express, which is exactly what the comparative evaluations probe.
struct SimParams {
  double energy_per_flop = 2e-11;    // Wh per FLOP of leaf work
  double energy_per_byte = 4e-9;     // Wh per byte crossing a link
  double idle_power = 2000.0;        // W burned across GPUs stalled at a sync
  double base_system_power = 60.0;   // W of host draw outside the counter
  double link_bandwidth = 2e8;       // bytes/s per link
  double compute_throughput = 1e10;  // FLOP/s aggregate at degree 1
  double skew_sigma = 0.6;           // log-space spread of per-step skew
  double skew_scale = 4e-5;          // median per-step skew wait, seconds
  double noise_rel = 0.05;           // multiplicative measurement noise bound
  std::uint64_t seed = 0;

  bool operator==(const SimParams&) const = default;
};

inline std::vector<std::string> validate_sim_params(const SimParams& p) {
  std::vector<std::string> v;
  if (!(p.energy_per_flop >= 0)) v.push_back("energy_per_flop must be >= 0");
  if (!(p.energy_per_byte >= 0)) v.push_back("energy_per_byte must be >= 0");
  if (!(p.idle_power >= 0)) v.push_back("idle_power must be >= 0");
  if (!(p.base_system_power >= 0)) {
    v.push_back("base_system_power must be >= 0");
  }
  if (!(p.link_bandwidth > 0)) v.push_back("link_bandwidth must be > 0");
  if (!(p.compute_throughput > 0)) {
    v.push_back("compute_throughput must be > 0");
  }
  if (!(p.skew_sigma >= 0)) v.push_back("skew_sigma must be >= 0");
  if (!(p.skew_scale >= 0)) v.push_back("skew_scale must be >= 0");
  if (!(p.noise_rel >= 0.0 && p.noise_rel <= 0.5)) {
    v.push_back("noise_rel must be in [0, 0.5]");
  }
  return v;
}

inline void validate_sim_params_or_throw(const SimParams& p) {
  const auto v = validate_sim_params(p);
  if (v.empty()) return;
  std::string msg = "invalid simulation parameters:";
  for (const auto& s : v) msg += "\n  - " + s;
  throw ValidationError(msg);
}

// Per-step straggler waits at a synchronization point: i.i.d. log-normal
// with median skew_scale and log-space sigma skew_sigma. Requires at least
// two participants; with one GPU there is nobody to wait for.
inline std::vector<double> sample_skew(std::int64_t degree,
                                       std::int64_t steps,
                                       const SimParams& params, Rng& rng) {
  if (degree < 2) {
    throw ValidationError("sample_skew: degree must be >= 2, got " +
                          std::to_string(degree));
  }
  if (steps < 0) throw ValidationError("sample_skew: steps must be >= 0");
  std::vector<double> waits(static_cast<std::size_t>(steps));
  for (auto& w : waits) {
    w = rng.lognormal_median(params.skew_scale, params.skew_sigma);
  }
  return waits;
}

// Mean of the per-step wait distribution.
inline double expected_skew(const SimParams& params) {
  return params.skew_scale *
         std::exp(0.5 * params.skew_sigma * params.skew_sigma);
}

struct NodeEnergy {
  std::int64_t id = -1;
  ModuleKind kind = ModuleKind::kRoot;
  double compute = 0.0;   // Wh
  double transfer = 0.0;  // Wh
  double wait = 0.0;      // Wh
  double total = 0.0;     // Wh, == compute + transfer + wait
};

struct MeasurementRecord {
  ModelArch arch;
  ParallelismConfig par;
  WorkloadConfig work;
  std::uint64_t run_index = 0;
  double wall_time = 0.0;           // seconds
  double model_total_energy = 0.0;  // Wh, includes the base-power term
  std::vector<NodeEnergy> nodes;    // preorder; nodes[i].id == i
  RuntimeSample runtime;
};

inline AggregatedFeatures record_features(const MeasurementRecord& r) {
  return make_aggregated_features(r.arch, r.par, r.work, r.runtime,
                                  r.wall_time);
}

inline double gpu_energy_counter_sum(const MeasurementRecord& r) {
  double s = 0.0;
  for (const auto& g : r.runtime.gpus) s += g.gpu_energy_counter;
  return s;
}

enum class SimMode {
  kSampled,   // skew waits drawn from the log-normal
  kExpected,  // every wait replaced by the distribution mean
};

namespace detail {

// Fills interior energies bottom-up; returns the index of the node in
// `out`, which is preorder so out[node.id] is the node's slot.
inline NodeEnergy sum_subtree(const TreeNode& n,
                              std::vector<NodeEnergy>* out) {
  NodeEnergy& e = (*out)[static_cast<std::size_t>(n.id)];
  e.id = n.id;
  e.kind = n.kind;
  for (const auto& c : n.children) {
    const NodeEnergy ce = sum_subtree(c, out);
    e.compute += ce.compute;
    e.transfer += ce.transfer;
    e.wait += ce.wait;
  }
  if (!n.children.empty()) {
    e.total = e.compute + e.transfer + e.wait;
  }
  return e;
}

}  // namespace detail

// Simulates one inference run (prefill of seq_in tokens plus seq_out
// single-token decode steps) and returns the measured record. Wall time is
// composed per strategy: tensor and data parallel divide compute across the
// group, pipeline parallel pays a fill term of (stages-1) microbatch stage
// times, with one microbatch per sequence in the batch; communication
// transfer and wait times are added on top.
inline MeasurementRecord simulate_run(
    const ModelArch& arch, const ParallelismConfig& par,
    const WorkloadConfig& work, const SimParams& params, Rng& rng,
    SimMode mode = SimMode::kSampled, std::uint64_t run_index = 0) {
  validate_or_throw(arch, par, work);
  validate_sim_params_or_throw(params);

  const ModelTree tree = build_tree(arch, par);
  const std::int64_t p = par.degree;
  const double tokens_total =
      static_cast<double>(work.batch_size) *
      static_cast<double>(work.seq_in + work.seq_out);

  std::int64_t node_count = 0;
  for_each_node(tree.root, [&](const TreeNode&) { ++node_count; });
  std::vector<NodeEnergy> nodes(static_cast<std::size_t>(node_count));

  // Leaf phase energies, preorder so the draw sequence is fixed.
  double total_flops = 0.0;
  double transfer_time = 0.0;
  double wait_time = 0.0;
  for_each_node(tree.root, [&](const TreeNode& n) {
    if (!n.children.empty()) return;
    NodeEnergy& e = nodes[static_cast<std::size_t>(n.id)];
    e.id = n.id;
    e.kind = n.kind;
    if (is_comm_kind(n.kind)) {
      const double run_bytes = run_total_comm_bytes(arch, work, *n.site);
      const std::int64_t steps =
          comm_firings(n.kind, work) * sync_steps_per_firing(n.kind, p);
      double node_wait_time = 0.0;
      if (mode == SimMode::kSampled) {
        for (double w : sample_skew(p, steps, params, rng)) {
          node_wait_time += w;
        }
      } else {
        node_wait_time = static_cast<double>(steps) * expected_skew(params);
      }
      const double link_bytes = link_bytes_total(n.kind, p, run_bytes);
      // Ring phases overlap across ranks, so a rank's sends serialize; a
      // stage hop is a single link carrying the whole tensor.
      const double node_transfer_time =
          (n.kind == ModuleKind::kP2PTransfer
               ? run_bytes
               : link_bytes / static_cast<double>(p)) /
          params.link_bandwidth;
      e.transfer = params.energy_per_byte * link_bytes;
      e.wait = params.idle_power * node_wait_time *
               static_cast<double>(p - 1) / 3600.0;
      transfer_time += node_transfer_time;
      wait_time += node_wait_time;
    } else {
      const double flops =
          node_flops_per_token(n.kind, arch) * tokens_total;
      e.compute = params.energy_per_flop * flops;
      total_flops += flops;
    }
    e.total = e.compute + e.transfer + e.wait;
  });

  // Wall-time composition.
  const double compute_time = total_flops / params.compute_throughput;
  double wall = 0.0;
  if (p == 1) {
    wall = compute_time;
  } else if (par.strategy == Strategy::kPipelineParallel) {
    const double s = static_cast<double>(p);
    const double m = static_cast<double>(work.batch_size);
    wall = compute_time * (s + m - 1.0) / (s * m) + transfer_time + wait_time;
  } else {
    // Tensor parallel splits every GEMM; data parallel splits the batch.
    wall = compute_time / static_cast<double>(p) + transfer_time + wait_time;
  }

  // Measurement noise: one multiplicative factor per leaf (scaling all of
  // its phases alike) and one for the base-power term. Draws happen even at
  // noise_rel = 0 so the stream stays aligned across noise settings.
  for_each_node(tree.root, [&](const TreeNode& n) {
    if (!n.children.empty()) return;
    const double f = 1.0 + params.noise_rel * rng.uniform(-1.0, 1.0);
    NodeEnergy& e = nodes[static_cast<std::size_t>(n.id)];
    e.compute *= f;
    e.transfer *= f;
    e.wait *= f;
    e.total = e.compute + e.transfer + e.wait;
  });
  const double base_noise = 1.0 + params.noise_rel * rng.uniform(-1.0, 1.0);

  detail::sum_subtree(tree.root, &nodes);
  const double base_energy =
      base_noise * params.base_system_power * wall / 3600.0;
  const double model_total = nodes[0].total + base_energy;

  // Synthesized per-GPU monitor readings. The counters split the measured
  // compute+transfer energy across GPUs (waits and host base power are
  // invisible to them); utilization and clocks are smooth functions of load
  // with per-GPU jitter.
  const double counted = nodes[0].compute + nodes[0].transfer;
  const double param_bytes = flops_per_token(arch) / 2.0 *
                             static_cast<double>(arch.dtype_bytes);
  const double act_bytes = tokens_total *
                           static_cast<double>(arch.hidden_size) *
                           static_cast<double>(arch.dtype_bytes);
  const double busy =
      wall > 0.0
          ? std::clamp((compute_time / static_cast<double>(p) +
                        transfer_time) /
                           wall,
                       0.0, 1.0)
          : 0.0;
  RuntimeSample sample;
  std::vector<double> weights(static_cast<std::size_t>(p));
  double weight_sum = 0.0;
  for (auto& w : weights) {
    w = 1.0 + 0.08 * rng.uniform(-1.0, 1.0);
    weight_sum += w;
  }
  for (std::int64_t g = 0; g < p; ++g) {
    const double ju = rng.uniform(-1.0, 1.0);
    const double jc = rng.uniform(-1.0, 1.0);
    const double jm = rng.uniform(-1.0, 1.0);
    GpuMetrics gm;
    gm.gpu_util = std::clamp(busy * (1.0 + 0.05 * ju), 0.01, 1.0);
    gm.gpu_mem_util = std::clamp(
        0.05 + (param_bytes / static_cast<double>(p) + act_bytes) / 8e9 *
                   (1.0 + 0.03 * jm),
        0.0, 0.99);
    gm.cpu_util = std::clamp(
        0.06 + 0.01 * static_cast<double>(p) + 0.02 * ju, 0.0, 1.0);
    gm.cpu_mem_util = std::clamp(0.08 + param_bytes / 6.4e10 + 0.01 * jm,
                                 0.0, 1.0);
    gm.cpu_clock = 2.6 + 0.08 * jc;
    gm.cpu_mem_clock = 1.6 + 0.02 * jc;
    gm.memory_bytes = (param_bytes / static_cast<double>(p) + act_bytes) *
                      (1.0 + 0.02 * jm);
    gm.gpu_clock = 1.1 + 0.5 * gm.gpu_util + 0.03 * jc;
    gm.gpu_mem_clock = 5.0 + 1.0 * gm.gpu_util + 0.05 * jc;
    gm.gpu_energy_counter =
        counted * weights[static_cast<std::size_t>(g)] / weight_sum;
    sample.gpus.push_back(gm);
  }

  MeasurementRecord rec;
  rec.arch = arch;
  rec.par = par;
  rec.work = work;
  rec.run_index = run_index;
  rec.wall_time = wall;
  rec.model_total_energy = model_total;
  rec.nodes = std::move(nodes);
  rec.runtime = std::move(sample);
  return rec;
}

// ---------------------------------------------------------------------------
// Grid generation.

struct GridCell {
  ModelArch arch;
  ParallelismConfig par;
  WorkloadConfig work;
};

// Cross product in declaration order: architectures outermost, workloads
// innermost.
inline std::vector<GridCell> expand_grid(const ConfigSet& cfg) {
  std::vector<GridCell> cells;
  for (const auto& a : cfg.architectures) {
    for (const auto& p : cfg.parallelism) {
      for (const auto& w : cfg.workloads) {
        cells.push_back({a, p, w});
      }
    }
  }
  return cells;
}

namespace detail {

using nlohmann::json;

inline json work_to_json(const WorkloadConfig& w) {
  return json{{"batch_size", w.batch_size},
              {"seq_in", w.seq_in},
              {"seq_out", w.seq_out}};
}

inline json par_to_json(const ParallelismConfig& p) {
  return json{{"strategy", to_string(p.strategy)}, {"degree", p.degree}};
}

// Canonical content key of a cell. Streams are derived from this, so the
// records of a cell do not depend on where the cell sits in the grid or on
// which other cells are generated alongside it.
inline std::string cell_canonical(const GridCell& c) {
  json j;
  j["arch"] = arch_to_json(c.arch);
  j["par"] = par_to_json(c.par);
  j["work"] = work_to_json(c.work);
  return j.dump();
}

}  // namespace detail

inline std::uint64_t cell_stream_key(const GridCell& cell,
                                     std::uint64_t run_index) {
  const std::uint64_t h = fnv1a64(detail::cell_canonical(cell));
  return splitmix64(h + 0x9E3779B97F4A7C15ULL * (run_index + 1));
}

struct Dataset {
  SimParams params;
  std::vector<MeasurementRecord> records;
};

// Generates runs_per_cell records for every cell, cell-major. Each record
// gets its own stream keyed by (seed, cell content, run index), so any
// thread count, generation order, or grid subsetting yields byte-identical
// records.
inline Dataset gen_dataset(const std::vector<GridCell>& cells,
                           std::int64_t runs_per_cell, const SimParams& params,
                           int n_threads = 1) {
  validate_sim_params_or_throw(params);
  if (runs_per_cell < 1) {
    throw DataError("gen_dataset: runs_per_cell must be >= 1");
  }
  if (cells.empty()) {
    throw DataError("gen_dataset: empty grid");
  }
  for (const auto& c : cells) validate_or_throw(c.arch, c.par, c.work);

  Dataset ds;
  ds.params = params;
  ds.records.resize(cells.size() * static_cast<std::size_t>(runs_per_cell));

  const auto fill_cell = [&](std::size_t ci) {
    for (std::int64_t r = 0; r < runs_per_cell; ++r) {
      Rng rng = Rng::stream(
          params.seed, cell_stream_key(cells[ci], static_cast<std::uint64_t>(r)));
      ds.records[ci * static_cast<std::size_t>(runs_per_cell) +
                 static_cast<std::size_t>(r)] =
          simulate_run(cells[ci].arch, cells[ci].par, cells[ci].work, params,
                       rng, SimMode::kSampled, static_cast<std::uint64_t>(r));
    }
  };

  if (n_threads <= 1 || cells.size() == 1) {
    for (std::size_t ci = 0; ci < cells.size(); ++ci) fill_cell(ci);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const int workers =
        std::min<int>(n_threads, static_cast<int>(cells.size()));
    pool.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (std::size_t ci = next.fetch_add(1); ci < cells.size();
             ci = next.fetch_add(1)) {
          fill_cell(ci);
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Dataset file format: line-delimited structured text. Line 1 is a header
// `{"records": N, "schema": ..., "seed": ..., "sim": {...}, "tool_version":
// ...}`; each following line is one record. Serialization is canonical
// (sorted keys, shortest round-trip floats), so load-then-save is
// byte-identical.

namespace detail {

inline json sim_params_to_json(const SimParams& p) {
  return json{{"energy_per_flop", p.energy_per_flop},
              {"energy_per_byte", p.energy_per_byte},
              {"idle_power", p.idle_power},
              {"base_system_power", p.base_system_power},
              {"link_bandwidth", p.link_bandwidth},
              {"compute_throughput", p.compute_throughput},
              {"skew_sigma", p.skew_sigma},
              {"skew_scale", p.skew_scale},
              {"noise_rel", p.noise_rel},
              {"seed", p.seed}};
}

inline double get_double(const json& obj, const char* key,
                         const std::string& where) {
  if (!obj.contains(key)) {
    throw ParseError(where + ": missing field '" + key + "'");
  }
  const json& v = obj.at(key);
  if (!v.is_number()) {
    throw ParseError(where + ": field '" + key + "' must be a number");
  }
  return v.get<double>();
}

inline SimParams sim_params_from_json(const json& obj,
                                      const std::string& where) {
  if (!obj.is_object()) throw ParseError(where + ": must be an object");
  check_keys(obj,
             {"energy_per_flop", "energy_per_byte", "idle_power",
              "base_system_power", "link_bandwidth", "compute_throughput",
              "skew_sigma", "skew_scale", "noise_rel", "seed"},
             where);
  SimParams p;
  if (obj.contains("energy_per_flop")) {
    p.energy_per_flop = get_double(obj, "energy_per_flop", where);
  }
  if (obj.contains("energy_per_byte")) {
    p.energy_per_byte = get_double(obj, "energy_per_byte", where);
  }
  if (obj.contains("idle_power")) {
    p.idle_power = get_double(obj, "idle_power", where);
  }
  if (obj.contains("base_system_power")) {
    p.base_system_power = get_double(obj, "base_system_power", where);
  }
  if (obj.contains("link_bandwidth")) {
    p.link_bandwidth = get_double(obj, "link_bandwidth", where);
  }
  if (obj.contains("compute_throughput")) {
    p.compute_throughput = get_double(obj, "compute_throughput", where);
  }
  if (obj.contains("skew_sigma")) {
    p.skew_sigma = get_double(obj, "skew_sigma", where);
  }
  if (obj.contains("skew_scale")) {
    p.skew_scale = get_double(obj, "skew_scale", where);
  }
  if (obj.contains("noise_rel")) {
    p.noise_rel = get_double(obj, "noise_rel", where);
  }
  if (obj.contains("seed")) {
    if (!obj.at("seed").is_number_unsigned() &&
        !obj.at("seed").is_number_integer()) {
      throw ParseError(where + ": field 'seed' must be an integer");
    }
    p.seed = obj.at("seed").get<std::uint64_t>();
  }
  return p;
}

inline json record_to_json(const MeasurementRecord& r) {
  json nodes = json::array();
  for (const auto& n : r.nodes) {
    nodes.push_back(json::array({n.id, kind_name(n.kind), n.compute,
                                 n.transfer, n.wait, n.total}));
  }
  json gpus = json::array();
  for (const auto& g : r.runtime.gpus) {
    json row = json::array();
    for (double x : g.as_array()) row.push_back(x);
    gpus.push_back(row);
  }
  return json{{"arch", arch_to_json(r.arch)},
              {"par", par_to_json(r.par)},
              {"work", work_to_json(r.work)},
              {"run", r.run_index},
              {"wall_time", r.wall_time},
              {"model_total_energy", r.model_total_energy},
              {"nodes", nodes},
              {"gpus", gpus}};
}

inline MeasurementRecord record_from_json(const json& j,
                                          const std::string& where) {
  if (!j.is_object()) throw ParseError(where + ": record must be an object");
  check_keys(j,
             {"arch", "par", "work", "run", "wall_time", "model_total_energy",
              "nodes", "gpus"},
             where);
  MeasurementRecord r;
  r.arch = parse_arch(j.at("arch"), where + ": arch");
  {
    const json& p = j.at("par");
    check_keys(p, {"strategy", "degree"}, where + ": par");
    r.par.strategy =
        parse_strategy(get_string(p, "strategy", where), where + ": par");
    r.par.degree = get_int(p, "degree", where + ": par");
  }
  {
    const json& w = j.at("work");
    check_keys(w, {"batch_size", "seq_in", "seq_out"}, where + ": work");
    r.work.batch_size = get_int(w, "batch_size", where + ": work");
    r.work.seq_in = get_int(w, "seq_in", where + ": work");
    r.work.seq_out = get_int(w, "seq_out", where + ": work");
  }
  r.run_index = j.at("run").get<std::uint64_t>();
  r.wall_time = get_double(j, "wall_time", where);
  r.model_total_energy = get_double(j, "model_total_energy", where);
  for (std::size_t i = 0; i < j.at("nodes").size(); ++i) {
    const json& n = j.at("nodes")[i];
    if (!n.is_array() || n.size() != 6) {
      throw ParseError(where + ": nodes[" + std::to_string(i) +
                       "] must be [id, kind, compute, transfer, wait, total]");
    }
    NodeEnergy e;
    e.id = n[0].get<std::int64_t>();
    e.kind = kind_from_name(n[1].get<std::string>());
    e.compute = n[2].get<double>();
    e.transfer = n[3].get<double>();
    e.wait = n[4].get<double>();
    e.total = n[5].get<double>();
    if (e.id != static_cast<std::int64_t>(i)) {
      throw ParseError(where + ": node ids must be preorder 0..n-1");
    }
    r.nodes.push_back(e);
  }
  for (std::size_t g = 0; g < j.at("gpus").size(); ++g) {
    const json& row = j.at("gpus")[g];
    if (!row.is_array() || row.size() != kNumRuntimeMetrics) {
      throw ParseError(where + ": gpus[" + std::to_string(g) + "] must have " +
                       std::to_string(kNumRuntimeMetrics) + " entries");
    }
    std::array<double, kNumRuntimeMetrics> a{};
    for (int m = 0; m < kNumRuntimeMetrics; ++m) a[m] = row[m].get<double>();
    r.runtime.gpus.push_back(GpuMetrics::from_array(a));
  }
  const auto sample_violations = validate_runtime_sample(r.runtime);
  if (!sample_violations.empty()) {
    throw ParseError(where + ": " + sample_violations.front());
  }
  return r;
}

}  // namespace detail

inline std::string serialize_dataset(const Dataset& ds) {
  nlohmann::json header{{"schema", kDatasetSchema},
                        {"seed", ds.params.seed},
                        {"sim", detail::sim_params_to_json(ds.params)},
                        {"records", ds.records.size()},
                        {"tool_version", kToolVersion}};
  std::string out = header.dump();
  out += "\n";
  for (const auto& r : ds.records) {
    out += detail::record_to_json(r).dump();
    out += "\n";
  }
  return out;
}

inline Dataset parse_dataset(const std::string& text,
                             const std::string& source = "dataset") {
  Dataset ds;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  bool has_header = false;
  std::size_t declared = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(source + ": line " + std::to_string(line_no) + ": " +
                       e.what());
    }
    const std::string where = source + ": line " + std::to_string(line_no);
    if (!has_header) {
      detail::check_keys(j, {"schema", "seed", "sim", "records", "tool_version"},
                         where);
      const std::string schema = detail::get_string(j, "schema", where);
      if (schema != kDatasetSchema) {
        throw ParseError(where + ": dataset schema '" + schema +
                         "' does not match expected '" + kDatasetSchema + "'");
      }
      ds.params = detail::sim_params_from_json(j.at("sim"), where + ": sim");
      ds.params.seed = j.at("seed").get<std::uint64_t>();
      declared = j.at("records").get<std::size_t>();
      has_header = true;
      continue;
    }
    ds.records.push_back(detail::record_from_json(j, where));
  }
  if (!has_header) {
    throw ParseError(source + ": missing header line");
  }
  if (ds.records.size() != declared) {
    throw ParseError(source + ": header declares " + std::to_string(declared) +
                     " records but file holds " +
                     std::to_string(ds.records.size()) +
                     " (truncated or corrupted)");
  }
  return ds;
}

inline void save_dataset_file(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open for writing: " + path);
  out << serialize_dataset(ds);
}

inline Dataset load_dataset_file(const std::string& path) {
  return parse_dataset(read_file(path), path);
}

inline SimParams parse_sim_params(const std::string& text,
                                  const std::string& source = "sim params") {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(source + ": " + e.what());
  }
  return detail::sim_params_from_json(doc, source);
}

}  // namespace piep
