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
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "piep/errors.hpp"

namespace piep {

enum class ActivationKind { kPlain, kGated };
enum class NormKind { kLayerNorm, kRmsNorm };
enum class Strategy { kTensorParallel, kPipelineParallel, kDataParallel };

// Static description of a decoder-only transformer. Dimensions are whatever
// the feature formulas need; weights never exist here.
struct ModelArch {
  std::string family_name;
  std::string variant_name;
  std::int64_t hidden_size = 0;
  std::int64_t num_layers = 0;
  std::int64_t num_heads = 0;
  std::int64_t num_kv_heads = 0;
  std::int64_t ffn_dim = 0;   // per-branch width; gated MLPs have two in-branches
  std::int64_t vocab_size = 0;
  ActivationKind activation_kind = ActivationKind::kPlain;
  NormKind norm_kind = NormKind::kLayerNorm;
  std::int64_t dtype_bytes = 2;

  bool operator==(const ModelArch&) const = default;
};

struct ParallelismConfig {
  Strategy strategy = Strategy::kTensorParallel;
  std::int64_t degree = 1;

  bool operator==(const ParallelismConfig&) const = default;
};

struct WorkloadConfig {
  std::int64_t batch_size = 1;
  std::int64_t seq_in = 1;   // prompt tokens per request
  std::int64_t seq_out = 1;  // generated tokens per request

  bool operator==(const WorkloadConfig&) const = default;
};

struct ConfigSet {
  std::vector<ModelArch> architectures;
  std::vector<ParallelismConfig> parallelism;
  std::vector<WorkloadConfig> workloads;

  bool operator==(const ConfigSet&) const = default;
};

inline const char* to_string(ActivationKind k) {
  return k == ActivationKind::kPlain ? "plain" : "gated";
}
inline const char* to_string(NormKind k) {
  return k == NormKind::kLayerNorm ? "layer_norm" : "rms_norm";
}
inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::kTensorParallel: return "tensor_parallel";
    case Strategy::kPipelineParallel: return "pipeline_parallel";
    default: return "data_parallel";
  }
}

// ---------------------------------------------------------------------------
// Validation. Violations are data, not exceptions: callers get the full list
// in one pass and decide what to do with it.

inline void append_arch_violations(const ModelArch& a,
                                   std::vector<std::string>* out) {
  const std::string who = "architecture '" + a.variant_name + "': ";
  struct Dim {
    const char* name;
    std::int64_t value;
  };
  for (const Dim& d : {Dim{"hidden_size", a.hidden_size},
                       Dim{"num_layers", a.num_layers},
                       Dim{"num_heads", a.num_heads},
                       Dim{"num_kv_heads", a.num_kv_heads},
                       Dim{"ffn_dim", a.ffn_dim},
                       Dim{"vocab_size", a.vocab_size},
                       Dim{"dtype_bytes", a.dtype_bytes}}) {
    if (d.value < 1) {
      out->push_back(who + std::string(d.name) + " must be >= 1, got " +
                     std::to_string(d.value));
    }
  }
  if (a.num_heads >= 1 && a.num_kv_heads >= 1 &&
      a.num_heads % a.num_kv_heads != 0) {
    out->push_back(who + "num_heads (" + std::to_string(a.num_heads) +
                   ") not divisible by num_kv_heads (" +
                   std::to_string(a.num_kv_heads) + ")");
  }
  if (a.hidden_size >= 1 && a.num_heads >= 1 &&
      a.hidden_size % a.num_heads != 0) {
    out->push_back(who + "hidden_size (" + std::to_string(a.hidden_size) +
                   ") not divisible by num_heads (" +
                   std::to_string(a.num_heads) + ")");
  }
}

inline void append_parallelism_violations(const ModelArch& a,
                                          const ParallelismConfig& p,
                                          std::vector<std::string>* out) {
  const std::string who =
      "parallelism (" + std::string(to_string(p.strategy)) + ", degree " +
      std::to_string(p.degree) + ") on '" + a.variant_name + "': ";
  if (p.degree < 1) {
    out->push_back(who + "degree must be >= 1");
    return;
  }
  if (p.strategy == Strategy::kTensorParallel && a.num_heads >= 1 &&
      a.num_heads % p.degree != 0) {
    out->push_back(who + "num_heads (" + std::to_string(a.num_heads) +
                   ") not divisible by tensor-parallel degree");
  }
  if (p.strategy == Strategy::kPipelineParallel && a.num_layers >= 1 &&
      p.degree > a.num_layers) {
    out->push_back(who + "degree exceeds num_layers (" +
                   std::to_string(a.num_layers) + ")");
  }
}

inline void append_workload_violations(const WorkloadConfig& w,
                                       std::vector<std::string>* out) {
  if (w.batch_size < 1) out->push_back("workload: batch_size must be >= 1");
  if (w.seq_in < 1) out->push_back("workload: seq_in must be >= 1");
  if (w.seq_out < 1) out->push_back("workload: seq_out must be >= 1");
}

// Every violated invariant across the triple, in a deterministic order.
// Empty result means the combination is legal.
inline std::vector<std::string> validate(const ModelArch& arch,
                                         const ParallelismConfig& par,
                                         const WorkloadConfig& work) {
  std::vector<std::string> v;
  append_arch_violations(arch, &v);
  append_parallelism_violations(arch, par, &v);
  append_workload_violations(work, &v);
  return v;
}

// Throwing form for internal call sites that cannot proceed.
inline void validate_or_throw(const ModelArch& arch,
                              const ParallelismConfig& par,
                              const WorkloadConfig& work) {
  const auto v = validate(arch, par, work);
  if (v.empty()) return;
  // One line, semicolon-joined, so command-line consumers see a single
  // stderr line no matter how many rules fired.
  std::string msg = "invalid configuration: ";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) msg += "; ";
    msg += v[i];
  }
  throw ValidationError(msg);
}

// ---------------------------------------------------------------------------
// Presets. Desk-scale variants are stylized so a full profile/train/eval
// cycle stays interactive; they are not claims about any shipped checkpoint.
// Full-scale descriptors carry public dimensions for feature computation
// (FLOPs/token, parameter-volume style features) and for single-run analytic
// checks; training datasets in the tests stay at desk scale.

inline const std::vector<ModelArch>& all_presets() {
  static const std::vector<ModelArch> presets = {
      // Desk scale. One family keeps the plain-MLP + LayerNorm path covered;
      // the others use gated MLPs + RMSNorm with varied KV sharing.
      {"vicuna", "vicuna-tiny", 256, 4, 8, 8, 1024, 128,
       ActivationKind::kPlain, NormKind::kLayerNorm, 2},
      {"mistral", "mistral-tiny", 256, 5, 8, 2, 896, 128,
       ActivationKind::kGated, NormKind::kRmsNorm, 2},
      {"llama", "llama-tiny", 320, 4, 8, 4, 864, 160, ActivationKind::kGated,
       NormKind::kRmsNorm, 2},
      {"qwen", "qwen-tiny", 192, 6, 8, 1, 768, 96, ActivationKind::kGated,
       NormKind::kRmsNorm, 2},
      // Full scale (best-effort public dimensions).
      {"vicuna", "vicuna-7b", 4096, 32, 32, 32, 11008, 32000,
       ActivationKind::kGated, NormKind::kRmsNorm, 2},
      {"vicuna", "vicuna-13b", 5120, 40, 40, 40, 13824, 32000,
       ActivationKind::kGated, NormKind::kRmsNorm, 2},
      {"vicuna", "vicuna-33b", 6656, 60, 52, 52, 17920, 32000,
       ActivationKind::kGated, NormKind::kRmsNorm, 2},
      {"mistral", "mistral-7b", 4096, 32, 32, 8, 14336, 32000,
       ActivationKind::kGated, NormKind::kRmsNorm, 2},
      {"llama", "llama-7b", 4096, 32, 32, 32, 11008, 32000,
       ActivationKind::kGated, NormKind::kRmsNorm, 2},
      {"llama", "llama-13b", 5120, 40, 40, 40, 13824, 32000,
       ActivationKind::kGated, NormKind::kRmsNorm, 2},
      {"qwen", "qwen-7b", 4096, 32, 32, 32, 11008, 151936,
       ActivationKind::kGated, NormKind::kRmsNorm, 2},
  };
  return presets;
}

// The four desk-scale presets, one per family.
inline std::vector<ModelArch> desk_presets() {
  std::vector<ModelArch> out;
  for (const auto& a : all_presets()) {
    if (a.variant_name.ends_with("-tiny")) out.push_back(a);
  }
  return out;
}

inline const ModelArch& preset(const std::string& name) {
  for (const auto& a : all_presets()) {
    if (a.variant_name == name) return a;
  }
  std::string known;
  for (const auto& a : all_presets()) {
    if (!known.empty()) known += ", ";
    known += a.variant_name;
  }
  throw ParseError("unknown architecture preset '" + name +
                   "'; known presets: " + known);
}

// ---------------------------------------------------------------------------
// Structured-text configuration documents. Exactly three top-level lists
// ("architectures", "parallelism", "workloads"); unknown keys anywhere are
// errors, missing lists mean empty. Architecture entries are either inline
// objects or preset-name strings.

namespace detail {

using nlohmann::json;

inline void check_keys(const json& obj,
                       std::initializer_list<const char*> allowed,
                       const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      throw ParseError(where + ": unknown field '" + it.key() + "'");
    }
  }
}

inline std::int64_t get_int(const json& obj, const char* key,
                            const std::string& where) {
  if (!obj.contains(key)) {
    throw ParseError(where + ": missing field '" + key + "'");
  }
  const json& v = obj.at(key);
  if (!v.is_number_integer()) {
    throw ParseError(where + ": field '" + key + "' must be an integer");
  }
  return v.get<std::int64_t>();
}

inline std::string get_string(const json& obj, const char* key,
                              const std::string& where) {
  if (!obj.contains(key)) {
    throw ParseError(where + ": missing field '" + key + "'");
  }
  const json& v = obj.at(key);
  if (!v.is_string()) {
    throw ParseError(where + ": field '" + key + "' must be a string");
  }
  return v.get<std::string>();
}

inline ActivationKind parse_activation(const std::string& s,
                                       const std::string& where) {
  if (s == "plain") return ActivationKind::kPlain;
  if (s == "gated") return ActivationKind::kGated;
  throw ParseError(where + ": activation_kind must be 'plain' or 'gated', got '" +
                   s + "'");
}

inline NormKind parse_norm(const std::string& s, const std::string& where) {
  if (s == "layer_norm") return NormKind::kLayerNorm;
  if (s == "rms_norm") return NormKind::kRmsNorm;
  throw ParseError(where +
                   ": norm_kind must be 'layer_norm' or 'rms_norm', got '" + s +
                   "'");
}

inline Strategy parse_strategy(const std::string& s, const std::string& where) {
  if (s == "tensor_parallel") return Strategy::kTensorParallel;
  if (s == "pipeline_parallel") return Strategy::kPipelineParallel;
  if (s == "data_parallel") return Strategy::kDataParallel;
  throw ParseError(where +
                   ": strategy must be one of 'tensor_parallel', "
                   "'pipeline_parallel', 'data_parallel', got '" +
                   s + "'");
}

inline ModelArch parse_arch(const json& entry, const std::string& where) {
  if (entry.is_string()) return preset(entry.get<std::string>());
  if (!entry.is_object()) {
    throw ParseError(where + ": must be an object or a preset-name string");
  }
  check_keys(entry,
             {"family_name", "variant_name", "hidden_size", "num_layers",
              "num_heads", "num_kv_heads", "ffn_dim", "vocab_size",
              "activation_kind", "norm_kind", "dtype_bytes"},
             where);
  ModelArch a;
  a.family_name = get_string(entry, "family_name", where);
  a.variant_name = get_string(entry, "variant_name", where);
  a.hidden_size = get_int(entry, "hidden_size", where);
  a.num_layers = get_int(entry, "num_layers", where);
  a.num_heads = get_int(entry, "num_heads", where);
  a.num_kv_heads = get_int(entry, "num_kv_heads", where);
  a.ffn_dim = get_int(entry, "ffn_dim", where);
  a.vocab_size = get_int(entry, "vocab_size", where);
  a.activation_kind =
      parse_activation(get_string(entry, "activation_kind", where), where);
  a.norm_kind = parse_norm(get_string(entry, "norm_kind", where), where);
  a.dtype_bytes = entry.contains("dtype_bytes")
                      ? get_int(entry, "dtype_bytes", where)
                      : 2;
  return a;
}

inline json arch_to_json(const ModelArch& a) {
  return json{{"family_name", a.family_name},
              {"variant_name", a.variant_name},
              {"hidden_size", a.hidden_size},
              {"num_layers", a.num_layers},
              {"num_heads", a.num_heads},
              {"num_kv_heads", a.num_kv_heads},
              {"ffn_dim", a.ffn_dim},
              {"vocab_size", a.vocab_size},
              {"activation_kind", to_string(a.activation_kind)},
              {"norm_kind", to_string(a.norm_kind)},
              {"dtype_bytes", a.dtype_bytes}};
}

}  // namespace detail

inline ConfigSet load_configs(const std::string& text,
                              const std::string& source = "config") {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(source + ": " + e.what());
  }
  if (!doc.is_object()) {
    throw ParseError(source + ": top level must be an object");
  }
  detail::check_keys(doc, {"architectures", "parallelism", "workloads"},
                     source);
  ConfigSet cfg;
  if (doc.contains("architectures")) {
    const auto& list = doc.at("architectures");
    if (!list.is_array()) {
      throw ParseError(source + ": 'architectures' must be a list");
    }
    for (std::size_t i = 0; i < list.size(); ++i) {
      cfg.architectures.push_back(detail::parse_arch(
          list[i], source + ": architectures[" + std::to_string(i) + "]"));
    }
  }
  if (doc.contains("parallelism")) {
    const auto& list = doc.at("parallelism");
    if (!list.is_array()) {
      throw ParseError(source + ": 'parallelism' must be a list");
    }
    for (std::size_t i = 0; i < list.size(); ++i) {
      const std::string where =
          source + ": parallelism[" + std::to_string(i) + "]";
      const auto& entry = list[i];
      if (!entry.is_object()) throw ParseError(where + ": must be an object");
      detail::check_keys(entry, {"strategy", "degree"}, where);
      ParallelismConfig p;
      p.strategy = detail::parse_strategy(
          detail::get_string(entry, "strategy", where), where);
      p.degree = detail::get_int(entry, "degree", where);
      cfg.parallelism.push_back(p);
    }
  }
  if (doc.contains("workloads")) {
    const auto& list = doc.at("workloads");
    if (!list.is_array()) {
      throw ParseError(source + ": 'workloads' must be a list");
    }
    for (std::size_t i = 0; i < list.size(); ++i) {
      const std::string where =
          source + ": workloads[" + std::to_string(i) + "]";
      const auto& entry = list[i];
      if (!entry.is_object()) throw ParseError(where + ": must be an object");
      detail::check_keys(entry, {"batch_size", "seq_in", "seq_out"}, where);
      WorkloadConfig w;
      w.batch_size = detail::get_int(entry, "batch_size", where);
      w.seq_in = detail::get_int(entry, "seq_in", where);
      w.seq_out = detail::get_int(entry, "seq_out", where);
      cfg.workloads.push_back(w);
    }
  }
  return cfg;
}

inline std::string serialize_configs(const ConfigSet& cfg) {
  nlohmann::json doc;
  doc["architectures"] = nlohmann::json::array();
  for (const auto& a : cfg.architectures) {
    doc["architectures"].push_back(detail::arch_to_json(a));
  }
  doc["parallelism"] = nlohmann::json::array();
  for (const auto& p : cfg.parallelism) {
    doc["parallelism"].push_back(nlohmann::json{
        {"strategy", to_string(p.strategy)}, {"degree", p.degree}});
  }
  doc["workloads"] = nlohmann::json::array();
  for (const auto& w : cfg.workloads) {
    doc["workloads"].push_back(nlohmann::json{{"batch_size", w.batch_size},
                                              {"seq_in", w.seq_in},
                                              {"seq_out", w.seq_out}});
  }
  return doc.dump(2) + "\n";
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline ConfigSet load_configs_file(const std::string& path) {
  return load_configs(read_file(path), path);
}

}  // namespace piep
