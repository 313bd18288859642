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

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "piep/errors.hpp"
#include "piep/model_tree.hpp"

namespace piep {

// ---------------------------------------------------------------------------
// Runtime samples: what a profiler reports per GPU for one run.

inline constexpr int kNumRuntimeMetrics = 10;

inline const std::array<const char*, kNumRuntimeMetrics>& runtime_metric_names() {
  static const std::array<const char*, kNumRuntimeMetrics> names = {
      "cpu_util",      "cpu_mem_util", "gpu_util",
      "gpu_mem_util",  "cpu_clock",    "cpu_mem_clock",
      "memory_bytes",  "gpu_clock",    "gpu_mem_clock",
      "gpu_energy_counter"};
  return names;
}

struct GpuMetrics {
  double cpu_util = 0.0;       // fraction [0, 1]
  double cpu_mem_util = 0.0;   // fraction [0, 1]
  double gpu_util = 0.0;       // fraction [0, 1]
  double gpu_mem_util = 0.0;   // fraction [0, 1]
  double cpu_clock = 0.0;      // GHz
  double cpu_mem_clock = 0.0;  // GHz
  double memory_bytes = 0.0;
  double gpu_clock = 0.0;      // GHz
  double gpu_mem_clock = 0.0;  // GHz
  double gpu_energy_counter = 0.0;  // Wh, on-device counter

  std::array<double, kNumRuntimeMetrics> as_array() const {
    return {cpu_util,      cpu_mem_util, gpu_util,
            gpu_mem_util,  cpu_clock,    cpu_mem_clock,
            memory_bytes,  gpu_clock,    gpu_mem_clock,
            gpu_energy_counter};
  }

  static GpuMetrics from_array(const std::array<double, kNumRuntimeMetrics>& a) {
    return {a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8], a[9]};
  }

  bool operator==(const GpuMetrics&) const = default;
};

struct RuntimeSample {
  std::vector<GpuMetrics> gpus;

  bool operator==(const RuntimeSample&) const = default;
};

inline std::vector<std::string> validate_runtime_sample(
    const RuntimeSample& s) {
  std::vector<std::string> v;
  if (s.gpus.empty()) {
    v.push_back("runtime sample: needs at least one GPU record");
    return v;
  }
  for (std::size_t g = 0; g < s.gpus.size(); ++g) {
    const auto a = s.gpus[g].as_array();
    const std::string who = "gpu[" + std::to_string(g) + "]: ";
    for (int m = 0; m < 4; ++m) {
      if (a[m] < 0.0 || a[m] > 1.0) {
        v.push_back(who + runtime_metric_names()[m] + " outside [0, 1]");
      }
    }
    for (int m = 4; m < kNumRuntimeMetrics; ++m) {
      if (a[m] < 0.0) {
        v.push_back(who + runtime_metric_names()[m] + " negative");
      }
    }
  }
  return v;
}

struct MetricStats {
  double mean = 0.0;
  double stddev = 0.0;  // population
  double minv = 0.0;
  double maxv = 0.0;
};

struct RuntimeAggregates {
  std::array<MetricStats, kNumRuntimeMetrics> stats;
};

// Cross-GPU mean / population-std / min / max per metric. Permutation
// invariant by construction.
inline RuntimeAggregates aggregate(const RuntimeSample& sample) {
  if (sample.gpus.empty()) {
    throw DataError("aggregate: runtime sample has no GPU records");
  }
  RuntimeAggregates agg;
  const double n = static_cast<double>(sample.gpus.size());
  for (int m = 0; m < kNumRuntimeMetrics; ++m) {
    double sum = 0.0, sum2 = 0.0;
    double mn = sample.gpus[0].as_array()[m];
    double mx = mn;
    for (const auto& g : sample.gpus) {
      const double x = g.as_array()[m];
      sum += x;
      sum2 += x * x;
      if (x < mn) mn = x;
      if (x > mx) mx = x;
    }
    MetricStats& st = agg.stats[m];
    st.mean = sum / n;
    const double var = sum2 / n - st.mean * st.mean;
    st.stddev = var > 0.0 ? std::sqrt(var) : 0.0;
    st.minv = mn;
    st.maxv = mx;
  }
  return agg;
}

// ---------------------------------------------------------------------------
// FLOPs per token. Projection GEMMs only for the block terms (2 FLOPs per
// multiply-accumulate); attention score/value matmuls and softmax are
// excluded, so the totals are comparable across sequence lengths.

inline double attention_flops_per_token(const ModelArch& a) {
  const double h = static_cast<double>(a.hidden_size);
  const double kv_dim = h * static_cast<double>(a.num_kv_heads) /
                        static_cast<double>(a.num_heads);
  // Q and output projections are h x h, K and V are h x kv_dim each.
  return 2.0 * (h * h + 2.0 * h * kv_dim + h * h);
}

inline double mlp_flops_per_token(const ModelArch& a) {
  const double h = static_cast<double>(a.hidden_size);
  const double f = static_cast<double>(a.ffn_dim);
  // Plain MLP: up + down. Gated adds a second input branch.
  return (a.activation_kind == ActivationKind::kGated ? 6.0 : 4.0) * h * f;
}

inline double block_flops_per_token(const ModelArch& a) {
  return attention_flops_per_token(a) + mlp_flops_per_token(a);
}

inline double lm_head_flops_per_token(const ModelArch& a) {
  return 2.0 * static_cast<double>(a.hidden_size) *
         static_cast<double>(a.vocab_size);
}

// Whole-model FLOPs per token: L blocks plus the vocabulary projection.
inline double flops_per_token(const ModelArch& a) {
  return static_cast<double>(a.num_layers) * block_flops_per_token(a) +
         lm_head_flops_per_token(a);
}

// Normalization and embedding leaves are not part of flops_per_token (they
// are vector ops, not GEMMs) but the per-node accounting still needs a
// nonzero cost for them.
inline double norm_flops_per_token(const ModelArch& a) {
  const double h = static_cast<double>(a.hidden_size);
  return (a.norm_kind == NormKind::kLayerNorm ? 5.0 : 4.0) * h;
}

inline double embedding_flops_per_token(const ModelArch& a) {
  return 2.0 * static_cast<double>(a.hidden_size);
}

inline double node_flops_per_token(ModuleKind kind, const ModelArch& a) {
  switch (kind) {
    case ModuleKind::kEmbedding: return embedding_flops_per_token(a);
    case ModuleKind::kSelfAttention: return attention_flops_per_token(a);
    case ModuleKind::kMlp: return mlp_flops_per_token(a);
    case ModuleKind::kNorm: return norm_flops_per_token(a);
    case ModuleKind::kLmHead: return lm_head_flops_per_token(a);
    default: return 0.0;  // communication and interior kinds carry none
  }
}

inline double subtree_flops_per_token(const TreeNode& n, const ModelArch& a) {
  if (n.children.empty()) return node_flops_per_token(n.kind, a);
  double sum = 0.0;
  for (const auto& c : n.children) sum += subtree_flops_per_token(c, a);
  return sum;
}

// ---------------------------------------------------------------------------
// The record-level feature block shared by every node of a run.

struct AggregatedFeatures {
  RuntimeAggregates runtime;
  double num_gpus = 1.0;
  double batch_size = 1.0;
  double sequence_length = 1.0;  // seq_in + seq_out
  double flops_per_token = 0.0;
  double execution_time = 0.0;  // seconds of wall time
  double ffn_dim = 0.0;
  double num_layers = 0.0;
  double hidden_size = 0.0;
  double num_heads = 0.0;
  double num_kv_heads = 0.0;
};

inline AggregatedFeatures make_aggregated_features(
    const ModelArch& arch, const ParallelismConfig& par,
    const WorkloadConfig& work, const RuntimeSample& sample,
    double execution_time) {
  AggregatedFeatures f;
  f.runtime = aggregate(sample);
  f.num_gpus = static_cast<double>(par.degree);
  f.batch_size = static_cast<double>(work.batch_size);
  f.sequence_length = static_cast<double>(work.seq_in + work.seq_out);
  f.flops_per_token = flops_per_token(arch);
  f.execution_time = execution_time;
  f.ffn_dim = static_cast<double>(arch.ffn_dim);
  f.num_layers = static_cast<double>(arch.num_layers);
  f.hidden_size = static_cast<double>(arch.hidden_size);
  f.num_heads = static_cast<double>(arch.num_heads);
  f.num_kv_heads = static_cast<double>(arch.num_kv_heads);
  return f;
}

// ---------------------------------------------------------------------------
// Feature vectors. The ordering below is schema piep.features/v1 and is
// frozen: serialized models name it and refuse anything else.
//
//   [0..39]  runtime metric aggregates, metric-major (mean, std, min, max)
//   [40]     num_gpus
//   [41]     batch_size
//   [42]     sequence_length
//   [43]     flops_per_token
//   [44]     execution_time
//   [45..49] structure: ffn_dim, num_layers, hidden_size, num_heads,
//            num_kv_heads
//   [50]     tokens_total = batch_size * sequence_length
//   [51]     node_flops_per_token (subtree total for interior nodes)
//   [52]     node_flops_run = node_flops_per_token * tokens_total
//   [53]     comm_tensor_bytes (prefill firing; 0 on compute nodes)
//   [54]     ring_steps per firing (0 on compute nodes)
//   [55]     link_bytes_total over the run (0 on compute nodes)
//   [56]     wait_step_weight = (degree - 1) * total sync steps in the run
//
// 53 and 54 carry the communication tensor size and ring step count; 55 and
// 56 are the run totals the transfer/wait costs actually scale with.

inline constexpr int kFeatureCount = 57;
inline constexpr int kStructureFeatureBegin = 45;
inline constexpr int kStructureFeatureEnd = 50;  // exclusive

inline const std::vector<std::string>& feature_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const char* metric : runtime_metric_names()) {
      for (const char* stat : {"mean", "std", "min", "max"}) {
        n.push_back(std::string(metric) + "_" + stat);
      }
    }
    for (const char* s :
         {"num_gpus", "batch_size", "sequence_length", "flops_per_token",
          "execution_time", "ffn_dim", "num_layers", "hidden_size",
          "num_heads", "num_kv_heads", "tokens_total", "node_flops_per_token",
          "node_flops_run", "comm_tensor_bytes", "ring_steps",
          "link_bytes_total", "wait_step_weight"}) {
      n.push_back(s);
    }
    return n;
  }();
  return names;
}

inline int feature_index(const std::string& name) {
  const auto& names = feature_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<int>(i);
  }
  throw DataError("unknown feature name '" + name + "'");
}

inline std::vector<double> feature_vector(const TreeNode& node,
                                          const AggregatedFeatures& agg,
                                          const ModelArch& arch,
                                          const ParallelismConfig& par,
                                          const WorkloadConfig& work) {
  std::vector<double> x(kFeatureCount, 0.0);
  int i = 0;
  for (int m = 0; m < kNumRuntimeMetrics; ++m) {
    const MetricStats& st = agg.runtime.stats[m];
    x[i++] = st.mean;
    x[i++] = st.stddev;
    x[i++] = st.minv;
    x[i++] = st.maxv;
  }
  x[i++] = agg.num_gpus;
  x[i++] = agg.batch_size;
  x[i++] = agg.sequence_length;
  x[i++] = agg.flops_per_token;
  x[i++] = agg.execution_time;
  x[i++] = agg.ffn_dim;
  x[i++] = agg.num_layers;
  x[i++] = agg.hidden_size;
  x[i++] = agg.num_heads;
  x[i++] = agg.num_kv_heads;
  const double tokens_total = agg.batch_size * agg.sequence_length;
  x[i++] = tokens_total;
  const double node_flops = subtree_flops_per_token(node, arch);
  x[i++] = node_flops;
  x[i++] = node_flops * tokens_total;
  if (node.site && is_comm_kind(node.kind) && par.degree >= 2) {
    const double run_bytes = run_total_comm_bytes(arch, work, *node.site);
    const double steps_per_firing = static_cast<double>(
        sync_steps_per_firing(node.kind, par.degree));
    const double firings = static_cast<double>(comm_firings(node.kind, work));
    x[i++] = comm_tensor_bytes(arch, work, *node.site, Phase::kPrefill);
    x[i++] = steps_per_firing;
    x[i++] = link_bytes_total(node.kind, par.degree, run_bytes);
    x[i++] = static_cast<double>(par.degree - 1) * steps_per_firing * firings;
  } else {
    i += 4;
  }
  return x;
}

// ---------------------------------------------------------------------------
// Standardization. Population statistics; coordinates that are constant on
// the fit set map to exactly 0.

struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;  // 0 flags a constant coordinate

  bool fitted() const { return !mean.empty(); }

  void fit(const std::vector<std::vector<double>>& rows) {
    if (rows.size() < 2) {
      throw DataError("standardizer: needs at least 2 samples, got " +
                      std::to_string(rows.size()));
    }
    const std::size_t dim = rows[0].size();
    for (const auto& r : rows) {
      if (r.size() != dim) {
        throw DataError("standardizer: inconsistent vector lengths");
      }
    }
    mean.assign(dim, 0.0);
    stddev.assign(dim, 0.0);
    const double n = static_cast<double>(rows.size());
    for (const auto& r : rows) {
      for (std::size_t j = 0; j < dim; ++j) mean[j] += r[j];
    }
    for (std::size_t j = 0; j < dim; ++j) mean[j] /= n;
    for (const auto& r : rows) {
      for (std::size_t j = 0; j < dim; ++j) {
        const double d = r[j] - mean[j];
        stddev[j] += d * d;
      }
    }
    for (std::size_t j = 0; j < dim; ++j) {
      stddev[j] = stddev[j] > 0.0 ? std::sqrt(stddev[j] / n) : 0.0;
    }
  }

  std::vector<double> apply(const std::vector<double>& x) const {
    if (x.size() != mean.size()) {
      throw DataError("standardizer: vector length " +
                      std::to_string(x.size()) + " != fitted length " +
                      std::to_string(mean.size()));
    }
    std::vector<double> z(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) {
      z[j] = stddev[j] > 0.0 ? (x[j] - mean[j]) / stddev[j] : 0.0;
    }
    return z;
  }

  // Maps standardized coordinates back; constant coordinates return their
  // fitted mean.
  std::vector<double> invert(const std::vector<double>& z) const {
    if (z.size() != mean.size()) {
      throw DataError("standardizer: vector length mismatch in invert");
    }
    std::vector<double> x(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) {
      x[j] = stddev[j] > 0.0 ? z[j] * stddev[j] + mean[j] : mean[j];
    }
    return x;
  }
};

}  // namespace piep
