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

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "piep/config.hpp"
#include "piep/errors.hpp"

namespace piep {

// A model is a tree of modules. Leaves do work (compute or communication),
// interior nodes group leaves; a node covers exactly the union of its
// children's work, so energies compose bottom-up by (weighted) summation.

enum class ModuleKind {
  kEmbedding,
  kSelfAttention,
  kMlp,
  kNorm,
  kLmHead,
  kAllReduce,
  kP2PTransfer,
  kBatchOutputAllGather,
  kTransformerBlock,
  kStage,
  kRoot,
};

inline const char* kind_name(ModuleKind k) {
  switch (k) {
    case ModuleKind::kEmbedding: return "Embedding";
    case ModuleKind::kSelfAttention: return "SelfAttention";
    case ModuleKind::kMlp: return "MLP";
    case ModuleKind::kNorm: return "Norm";
    case ModuleKind::kLmHead: return "LMHead";
    case ModuleKind::kAllReduce: return "AllReduce";
    case ModuleKind::kP2PTransfer: return "P2PTransfer";
    case ModuleKind::kBatchOutputAllGather: return "BatchOutputAllGather";
    case ModuleKind::kTransformerBlock: return "TransformerBlock";
    case ModuleKind::kStage: return "Stage";
    case ModuleKind::kRoot: return "Root";
  }
  return "?";
}

inline ModuleKind kind_from_name(const std::string& s) {
  for (ModuleKind k :
       {ModuleKind::kEmbedding, ModuleKind::kSelfAttention, ModuleKind::kMlp,
        ModuleKind::kNorm, ModuleKind::kLmHead, ModuleKind::kAllReduce,
        ModuleKind::kP2PTransfer, ModuleKind::kBatchOutputAllGather,
        ModuleKind::kTransformerBlock, ModuleKind::kStage, ModuleKind::kRoot}) {
    if (s == kind_name(k)) return k;
  }
  throw ParseError("unknown module kind '" + s + "'");
}

inline bool is_comm_kind(ModuleKind k) {
  return k == ModuleKind::kAllReduce || k == ModuleKind::kP2PTransfer ||
         k == ModuleKind::kBatchOutputAllGather;
}

inline bool is_interior_kind(ModuleKind k) {
  return k == ModuleKind::kTransformerBlock || k == ModuleKind::kStage ||
         k == ModuleKind::kRoot;
}

inline bool is_leaf_kind(ModuleKind k) { return !is_interior_kind(k); }

// Leaf kinds in canonical order, used for per-kind regressor tables.
inline const std::vector<ModuleKind>& leaf_kinds() {
  static const std::vector<ModuleKind> kinds = {
      ModuleKind::kEmbedding,   ModuleKind::kSelfAttention,
      ModuleKind::kMlp,         ModuleKind::kNorm,
      ModuleKind::kLmHead,      ModuleKind::kAllReduce,
      ModuleKind::kP2PTransfer, ModuleKind::kBatchOutputAllGather};
  return kinds;
}

// Where in the forward pass a communication leaf sits. `index` is the layer
// for reduction points, the boundary number for stage transfers, and 0 for
// the batch-output gather.
struct CommSite {
  enum class Point {
    kAttentionOutput,
    kMlpOutput,
    kStageBoundary,
    kBatchOutput,
  };
  Point point = Point::kAttentionOutput;
  std::int64_t index = 0;

  bool operator==(const CommSite&) const = default;
};

inline const char* point_name(CommSite::Point p) {
  switch (p) {
    case CommSite::Point::kAttentionOutput: return "attention_output";
    case CommSite::Point::kMlpOutput: return "mlp_output";
    case CommSite::Point::kStageBoundary: return "stage_boundary";
    case CommSite::Point::kBatchOutput: return "batch_output";
  }
  return "?";
}

struct TreeNode {
  std::int64_t id = -1;  // preorder position, unique within the tree
  ModuleKind kind = ModuleKind::kRoot;
  std::optional<CommSite> site;
  std::vector<TreeNode> children;
};

struct ModelTree {
  ModelArch arch;
  ParallelismConfig par;
  TreeNode root;
};

template <typename F>
void for_each_node(const TreeNode& n, F&& f) {
  f(n);
  for (const auto& c : n.children) for_each_node(c, f);
}

inline std::int64_t count_kind(const TreeNode& root, ModuleKind k) {
  std::int64_t n = 0;
  for_each_node(root, [&](const TreeNode& node) {
    if (node.kind == k) ++n;
  });
  return n;
}

inline std::vector<const TreeNode*> collect_leaves(const TreeNode& root) {
  std::vector<const TreeNode*> out;
  for_each_node(root, [&](const TreeNode& node) {
    if (node.children.empty()) out.push_back(&node);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Construction.

// Contiguous, balanced, front-loaded layer ranges: sizes differ by at most
// one and the earlier stages take the remainder. Returns [begin, end) pairs.
inline std::vector<std::pair<std::int64_t, std::int64_t>> stage_partition(
    std::int64_t num_layers, std::int64_t num_stages) {
  if (num_stages < 1 || num_layers < num_stages) {
    throw ValidationError("stage_partition: need 1 <= num_stages <= num_layers, got " +
                          std::to_string(num_stages) + " stages for " +
                          std::to_string(num_layers) + " layers");
  }
  std::vector<std::pair<std::int64_t, std::int64_t>> ranges;
  const std::int64_t base = num_layers / num_stages;
  const std::int64_t rem = num_layers % num_stages;
  std::int64_t begin = 0;
  for (std::int64_t s = 0; s < num_stages; ++s) {
    const std::int64_t len = base + (s < rem ? 1 : 0);
    ranges.emplace_back(begin, begin + len);
    begin += len;
  }
  return ranges;
}

namespace detail {

inline TreeNode make_block(std::int64_t layer, bool tensor_parallel) {
  TreeNode block{-1, ModuleKind::kTransformerBlock, std::nullopt, {}};
  block.children.push_back({-1, ModuleKind::kNorm, std::nullopt, {}});
  block.children.push_back({-1, ModuleKind::kSelfAttention, std::nullopt, {}});
  if (tensor_parallel) {
    block.children.push_back(
        {-1, ModuleKind::kAllReduce,
         CommSite{CommSite::Point::kAttentionOutput, layer}, {}});
  }
  block.children.push_back({-1, ModuleKind::kNorm, std::nullopt, {}});
  block.children.push_back({-1, ModuleKind::kMlp, std::nullopt, {}});
  if (tensor_parallel) {
    block.children.push_back(
        {-1, ModuleKind::kAllReduce,
         CommSite{CommSite::Point::kMlpOutput, layer}, {}});
  }
  return block;
}

inline void number_preorder(TreeNode* n, std::int64_t* next) {
  n->id = (*next)++;
  for (auto& c : n->children) number_preorder(&c, next);
}

}  // namespace detail

// Builds the module tree for one replica group under the given parallelism.
// Deterministic: the same inputs produce the same shape and the same
// preorder ids.
inline ModelTree build_tree(const ModelArch& arch,
                            const ParallelismConfig& par) {
  std::vector<std::string> v;
  append_arch_violations(arch, &v);
  append_parallelism_violations(arch, par, &v);
  if (!v.empty()) {
    // Single line, matching how configuration errors read everywhere else.
    std::string msg = "build_tree: invalid configuration: ";
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i > 0) msg += "; ";
      msg += v[i];
    }
    throw ValidationError(msg);
  }

  const bool tp =
      par.strategy == Strategy::kTensorParallel && par.degree >= 2;
  const bool pp =
      par.strategy == Strategy::kPipelineParallel && par.degree >= 2;
  const bool dp = par.strategy == Strategy::kDataParallel && par.degree >= 2;

  TreeNode root{-1, ModuleKind::kRoot, std::nullopt, {}};

  if (pp) {
    const auto ranges = stage_partition(arch.num_layers, par.degree);
    for (std::int64_t s = 0; s < par.degree; ++s) {
      TreeNode stage{-1, ModuleKind::kStage, std::nullopt, {}};
      if (s == 0) {
        stage.children.push_back({-1, ModuleKind::kEmbedding, std::nullopt, {}});
      }
      for (std::int64_t layer = ranges[s].first; layer < ranges[s].second;
           ++layer) {
        stage.children.push_back(detail::make_block(layer, false));
      }
      if (s == par.degree - 1) {
        stage.children.push_back({-1, ModuleKind::kNorm, std::nullopt, {}});
        stage.children.push_back({-1, ModuleKind::kLmHead, std::nullopt, {}});
      }
      root.children.push_back(std::move(stage));
      if (s + 1 < par.degree) {
        root.children.push_back(
            {-1, ModuleKind::kP2PTransfer,
             CommSite{CommSite::Point::kStageBoundary, s}, {}});
      }
    }
  } else {
    root.children.push_back({-1, ModuleKind::kEmbedding, std::nullopt, {}});
    for (std::int64_t layer = 0; layer < arch.num_layers; ++layer) {
      root.children.push_back(detail::make_block(layer, tp));
    }
    root.children.push_back({-1, ModuleKind::kNorm, std::nullopt, {}});
    root.children.push_back({-1, ModuleKind::kLmHead, std::nullopt, {}});
    if (dp) {
      root.children.push_back({-1, ModuleKind::kBatchOutputAllGather,
                               CommSite{CommSite::Point::kBatchOutput, 0}, {}});
    }
  }

  std::int64_t next = 0;
  detail::number_preorder(&root, &next);
  return ModelTree{arch, par, std::move(root)};
}

// ---------------------------------------------------------------------------
// Communication sizing.

enum class Phase { kPrefill, kDecode };

// Bytes moved through a site by a single firing in the given phase. Hidden
// activations cross reduction points and stage boundaries (seq_in tokens at
// prefill, one token per decode step, KV cache assumed); the batch-output
// gather moves per-sequence logits once per decode step.
inline double comm_tensor_bytes(const ModelArch& arch,
                                const WorkloadConfig& work,
                                const CommSite& site, Phase phase) {
  const double b = static_cast<double>(work.batch_size);
  const double dtype = static_cast<double>(arch.dtype_bytes);
  switch (site.point) {
    case CommSite::Point::kAttentionOutput:
    case CommSite::Point::kMlpOutput:
    case CommSite::Point::kStageBoundary: {
      const double tokens =
          phase == Phase::kPrefill ? static_cast<double>(work.seq_in) : 1.0;
      return b * tokens * static_cast<double>(arch.hidden_size) * dtype;
    }
    case CommSite::Point::kBatchOutput:
      if (phase == Phase::kPrefill) return 0.0;
      return b * static_cast<double>(arch.vocab_size) * dtype;
  }
  return 0.0;
}

// Total bytes a site moves over a whole run: one prefill plus seq_out
// single-token decode steps.
inline double run_total_comm_bytes(const ModelArch& arch,
                                   const WorkloadConfig& work,
                                   const CommSite& site) {
  return comm_tensor_bytes(arch, work, site, Phase::kPrefill) +
         static_cast<double>(work.seq_out) *
             comm_tensor_bytes(arch, work, site, Phase::kDecode);
}

// Synchronization events a communication leaf sees across a run. Collectives
// fire once per forward pass; stage transfers fire per microbatch hop (one
// microbatch per sequence in the batch).
inline std::int64_t comm_firings(ModuleKind kind, const WorkloadConfig& work) {
  switch (kind) {
    case ModuleKind::kAllReduce: return 1 + work.seq_out;
    case ModuleKind::kP2PTransfer:
      return (1 + work.seq_out) * work.batch_size;
    case ModuleKind::kBatchOutputAllGather: return work.seq_out;
    default: return 0;
  }
}

// Ring steps per firing: an all-reduce is a reduce-scatter phase plus an
// all-gather phase of p-1 steps each; a plain all-gather is one phase; a
// point-to-point transfer is a single hop.
inline std::int64_t sync_steps_per_firing(ModuleKind kind, std::int64_t degree) {
  if (degree < 2) return 0;
  switch (kind) {
    case ModuleKind::kAllReduce: return 2 * (degree - 1);
    case ModuleKind::kBatchOutputAllGather: return degree - 1;
    case ModuleKind::kP2PTransfer: return 1;
    default: return 0;
  }
}

// Bytes crossing links, totalled over all participants, for `run_bytes`
// worth of tensor traffic through a leaf of the given kind.
inline double link_bytes_total(ModuleKind kind, std::int64_t degree,
                               double run_bytes) {
  if (degree < 2) return 0.0;
  const double p = static_cast<double>(degree);
  switch (kind) {
    case ModuleKind::kAllReduce: return 2.0 * (p - 1.0) * run_bytes;
    case ModuleKind::kBatchOutputAllGather: return (p - 1.0) * run_bytes;
    case ModuleKind::kP2PTransfer: return run_bytes;
    default: return 0.0;
  }
}

// Ring all-reduce schedule for a tensor of `tensor_bytes` across p ranks:
// p-1 reduce-scatter steps then p-1 all-gather steps, each rank sending one
// 1/p chunk per step. Degenerates to an empty schedule at p = 1.
struct RingSchedule {
  std::int64_t total_steps = 0;
  std::int64_t reduce_scatter_steps = 0;
  std::int64_t all_gather_steps = 0;
  double bytes_sent_per_gpu = 0.0;
};

inline RingSchedule ring_schedule(std::int64_t p, double tensor_bytes) {
  if (p < 1) throw ValidationError("ring_schedule: p must be >= 1");
  if (tensor_bytes < 0) {
    throw ValidationError("ring_schedule: tensor_bytes must be >= 0");
  }
  RingSchedule s;
  if (p == 1) return s;
  s.reduce_scatter_steps = p - 1;
  s.all_gather_steps = p - 1;
  s.total_steps = 2 * (p - 1);
  s.bytes_sent_per_gpu =
      2.0 * static_cast<double>(p - 1) / static_cast<double>(p) * tensor_bytes;
  return s;
}

// ---------------------------------------------------------------------------
// Dumps.

inline std::string site_label(const CommSite& site) {
  return std::string(point_name(site.point)) + ":" +
         std::to_string(site.index);
}

inline void render_tree_text(const TreeNode& n, std::string* out,
                             int depth = 0) {
  out->append(static_cast<std::size_t>(2 * depth), ' ');
  *out += std::to_string(n.id);
  *out += " ";
  *out += kind_name(n.kind);
  if (n.site) {
    *out += " [";
    *out += site_label(*n.site);
    *out += "]";
  }
  *out += "\n";
  for (const auto& c : n.children) render_tree_text(c, out, depth + 1);
}

inline std::string render_tree_text(const ModelTree& tree) {
  std::string out = tree.arch.variant_name;
  out += " / ";
  out += to_string(tree.par.strategy);
  out += " degree ";
  out += std::to_string(tree.par.degree);
  out += "\n";
  render_tree_text(tree.root, &out, 0);
  return out;
}

inline nlohmann::json tree_to_json(const TreeNode& n) {
  nlohmann::json j;
  j["id"] = n.id;
  j["kind"] = kind_name(n.kind);
  if (n.site) {
    j["site"] = {{"point", point_name(n.site->point)},
                 {"index", n.site->index}};
  }
  j["children"] = nlohmann::json::array();
  for (const auto& c : n.children) j["children"].push_back(tree_to_json(c));
  return j;
}

}  // namespace piep
