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
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "piep/baselines.hpp"
#include "piep/predictor.hpp"
#include "piep/rng.hpp"
#include "piep/sim_profiler.hpp"
#include "piep/version.hpp"

namespace piep {

// ---------------------------------------------------------------------------
// Error metrics.

inline std::vector<double> percentage_errors(const std::vector<double>& pred,
                                             const std::vector<double>& truth) {
  if (pred.size() != truth.size()) {
    throw DataError("percentage_errors: length mismatch");
  }
  if (pred.empty()) throw DataError("percentage_errors: empty input");
  std::vector<double> out(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (truth[i] == 0.0) {
      throw DataError("percentage_errors: true value at index " +
                      std::to_string(i) + " is zero");
    }
    out[i] = 100.0 * std::abs(pred[i] - truth[i]) / std::abs(truth[i]);
  }
  return out;
}

inline double mape(const std::vector<double>& pred,
                   const std::vector<double>& truth) {
  const auto e = percentage_errors(pred, truth);
  return std::accumulate(e.begin(), e.end(), 0.0) /
         static_cast<double>(e.size());
}

// Sample standard error of the mean percentage error.
inline double mape_standard_error(const std::vector<double>& errors) {
  const std::size_t n = errors.size();
  if (n < 2) return 0.0;
  const double m =
      std::accumulate(errors.begin(), errors.end(), 0.0) /
      static_cast<double>(n);
  double ss = 0.0;
  for (double e : errors) ss += (e - m) * (e - m);
  const double var = ss / static_cast<double>(n - 1);
  return std::sqrt(var / static_cast<double>(n));
}

// Average ranks, ties getting the mean of the positions they span.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 +
                     1.0;  // 1-based
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

// Rank correlation: Pearson correlation of average ranks. Constant inputs
// have no ordering to correlate; that is a numeric error the caller must
// filter out beforehand.
inline double spearman(const std::vector<double>& a,
                       const std::vector<double>& b) {
  if (a.size() != b.size()) throw DataError("spearman: length mismatch");
  if (a.size() < 2) throw DataError("spearman: needs at least 2 pairs");
  const std::vector<double> ra = average_ranks(a);
  const std::vector<double> rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = ra[i] - ma;
    const double db = rb[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) {
    throw NumericError("spearman: an input is constant; correlation undefined");
  }
  return sab / std::sqrt(saa * sbb);
}

// ---------------------------------------------------------------------------
// Splits. All schemes are deterministic functions of (dataset, seed).

enum class SplitScheme { kKFold, kHoldoutVariant, kHoldoutBatch, kHoldoutFamily };

inline const char* scheme_name(SplitScheme s) {
  switch (s) {
    case SplitScheme::kKFold: return "kfold";
    case SplitScheme::kHoldoutVariant: return "variant";
    case SplitScheme::kHoldoutBatch: return "batch";
    case SplitScheme::kHoldoutFamily: return "family";
  }
  return "?";
}

inline SplitScheme parse_scheme(const std::string& s) {
  if (s == "kfold") return SplitScheme::kKFold;
  if (s == "variant") return SplitScheme::kHoldoutVariant;
  if (s == "batch") return SplitScheme::kHoldoutBatch;
  if (s == "family") return SplitScheme::kHoldoutFamily;
  throw ParseError(
      "unknown split scheme '" + s +
      "'; expected one of kfold, variant, batch, family");
}

struct Fold {
  std::string label;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

inline std::vector<Fold> make_splits(const Dataset& ds, SplitScheme scheme,
                                     int k, std::uint64_t seed) {
  const std::size_t n = ds.records.size();
  if (n < 2) throw DataError("make_splits: needs at least 2 records");

  std::vector<Fold> folds;
  if (scheme == SplitScheme::kKFold) {
    if (k < 2) throw ValidationError("make_splits: k must be >= 2");
    if (static_cast<std::size_t>(k) > n) {
      throw DataError("make_splits: k exceeds record count");
    }
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng = Rng::stream(seed, fnv1a64("splits/kfold"));
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j =
          static_cast<std::size_t>(rng.next_u64() % static_cast<std::uint64_t>(i));
      std::swap(idx[i - 1], idx[j]);
    }
    folds.resize(static_cast<std::size_t>(k));
    for (int f = 0; f < k; ++f) {
      folds[static_cast<std::size_t>(f)].label =
          "fold" + std::to_string(f);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t f = i % static_cast<std::size_t>(k);
      folds[f].test.push_back(idx[i]);
    }
    for (auto& fold : folds) {
      std::sort(fold.test.begin(), fold.test.end());
      std::set<std::size_t> test_set(fold.test.begin(), fold.test.end());
      for (std::size_t i = 0; i < n; ++i) {
        if (!test_set.count(i)) fold.train.push_back(i);
      }
    }
    return folds;
  }

  // Group holdout: each distinct group value becomes one test fold.
  const auto group_of = [&](const MeasurementRecord& r) -> std::string {
    switch (scheme) {
      case SplitScheme::kHoldoutVariant:
        return std::string(to_string(r.par.strategy)) + "x" +
               std::to_string(r.par.degree);
      case SplitScheme::kHoldoutBatch:
        return "batch" + std::to_string(r.work.batch_size);
      case SplitScheme::kHoldoutFamily:
        return r.arch.family_name;
      default:
        return "";
    }
  };
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) {
    groups[group_of(ds.records[i])].push_back(i);
  }
  if (groups.size() < 2) {
    throw DataError(std::string("make_splits: scheme '") +
                    scheme_name(scheme) +
                    "' needs at least 2 distinct groups, dataset has " +
                    std::to_string(groups.size()));
  }
  for (const auto& [label, test] : groups) {
    Fold fold;
    fold.label = label;
    fold.test = test;
    std::set<std::size_t> test_set(test.begin(), test.end());
    for (std::size_t i = 0; i < n; ++i) {
      if (!test_set.count(i)) fold.train.push_back(i);
    }
    folds.push_back(std::move(fold));
  }
  return folds;
}

// ---------------------------------------------------------------------------
// Named predictors the protocol can run side by side on shared splits.

inline const std::vector<std::string>& known_predictors() {
  static const std::vector<std::string> names = {
      "piep",       "piep_no_wait",     "comm_blind",
      "piep_no_structure", "token_regression", "proxy",
      "oracle"};
  return names;
}

// "piep_no_comm" and "comm_blind" are the same predictor; both names are
// accepted everywhere and reported under the canonical "comm_blind".
inline std::string canonical_predictor_name(const std::string& name) {
  if (name == "piep_no_comm") return "comm_blind";
  return name;
}

struct EvalOptions {
  SplitScheme scheme = SplitScheme::kKFold;
  int k = 3;
  std::uint64_t seed = 0;
  double ridge_lambda = 1e-6;
  ComposerHyper composer;
  std::vector<std::string> predictors;  // empty selects every known one
};

struct PredictorResult {
  std::string name;
  std::size_t n_predictions = 0;
  double mape = 0.0;
  double mape_se = 0.0;
  // Kind name -> MAPE of per-node predictions (mean over instances within a
  // record, then over records). Only hierarchical predictors fill this.
  std::map<std::string, double> per_module_mape;
};

struct EvalReport {
  std::string scheme;
  int folds = 0;
  std::uint64_t seed = 0;
  std::size_t n_records = 0;
  std::vector<PredictorResult> results;
};

namespace detail {

inline std::vector<const MeasurementRecord*> select_records(
    const Dataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<const MeasurementRecord*> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(&ds.records[i]);
  return out;
}

struct ModuleErrorAccum {
  std::map<std::string, std::vector<double>> per_record_means;
};

// Node-level absolute percentage errors for one record, averaged per kind.
inline void accumulate_module_errors(const MeasurementRecord& rec,
                                     const std::map<std::int64_t, double>& pred,
                                     ModuleErrorAccum* accum) {
  const ModelTree tree = build_tree(rec.arch, rec.par);
  std::map<std::string, std::pair<double, int>> sums;
  for_each_node(tree.root, [&](const TreeNode& n) {
    if (n.kind == ModuleKind::kRoot) return;
    const auto it = pred.find(n.id);
    if (it == pred.end()) return;  // dropped by an ablation
    const double truth = rec.nodes[static_cast<std::size_t>(n.id)].total;
    if (truth == 0.0) return;
    const double e = 100.0 * std::abs(it->second - truth) / std::abs(truth);
    auto& slot = sums[kind_name(n.kind)];
    slot.first += e;
    slot.second += 1;
  });
  for (const auto& [kind, se] : sums) {
    accum->per_record_means[kind].push_back(se.first /
                                            static_cast<double>(se.second));
  }
}

}  // namespace detail

// Fits every requested predictor on each fold's training records, predicts
// the fold's test records, and pools percentage errors across folds. All
// predictors see identical splits.
inline EvalReport run_protocol(const Dataset& ds, const EvalOptions& opts) {
  const std::vector<Fold> folds =
      make_splits(ds, opts.scheme, opts.k, opts.seed);
  std::vector<std::string> names =
      opts.predictors.empty() ? known_predictors() : opts.predictors;
  for (auto& n : names) n = canonical_predictor_name(n);
  for (const auto& n : names) {
    if (std::find(known_predictors().begin(), known_predictors().end(), n) ==
        known_predictors().end()) {
      std::string known;
      for (const auto& k : known_predictors()) {
        if (!known.empty()) known += ", ";
        known += k;
      }
      throw ParseError("unknown predictor '" + n + "'; known: " + known);
    }
  }

  EvalReport report;
  report.scheme = scheme_name(opts.scheme);
  report.folds = static_cast<int>(folds.size());
  report.seed = opts.seed;
  report.n_records = ds.records.size();

  for (const auto& name : names) {
    PredictorResult res;
    res.name = name;
    std::vector<double> pred, truth;
    detail::ModuleErrorAccum modules;

    for (const Fold& fold : folds) {
      const auto train = detail::select_records(ds, fold.train);
      const bool hierarchical = name.rfind("piep", 0) == 0 ||
                                name == "comm_blind";
      if (hierarchical) {
        FitOptions fit_opts;
        fit_opts.ridge_lambda = opts.ridge_lambda;
        fit_opts.composer = opts.composer;
        if (name == "piep_no_wait") fit_opts.ablations.no_wait = true;
        if (name == "comm_blind") fit_opts.ablations.no_comm = true;
        if (name == "piep_no_structure") {
          fit_opts.ablations.no_structure = true;
        }
        const PredictorParams params = fit_predictor(train, fit_opts);
        for (std::size_t i : fold.test) {
          const MeasurementRecord& rec = ds.records[i];
          const auto node_pred = predict_record(rec, params);
          pred.push_back(node_pred.at(0));
          truth.push_back(rec.model_total_energy);
          detail::accumulate_module_errors(rec, node_pred, &modules);
        }
      } else if (name == "token_regression") {
        const TokenRegressionParams params = fit_token_regression(train);
        for (std::size_t i : fold.test) {
          pred.push_back(
              predict_token_regression(params, ds.records[i].work));
          truth.push_back(ds.records[i].model_total_energy);
        }
      } else if (name == "proxy") {
        const ProxyRegressionParams params = fit_proxy_regression(train);
        for (std::size_t i : fold.test) {
          pred.push_back(predict_proxy_regression(params, ds.records[i]));
          truth.push_back(ds.records[i].model_total_energy);
        }
      } else {  // oracle
        for (std::size_t i : fold.test) {
          pred.push_back(ds.records[i].model_total_energy);
          truth.push_back(ds.records[i].model_total_energy);
        }
      }
    }

    const auto errors = percentage_errors(pred, truth);
    res.n_predictions = errors.size();
    res.mape = std::accumulate(errors.begin(), errors.end(), 0.0) /
               static_cast<double>(errors.size());
    res.mape_se = mape_standard_error(errors);
    for (const auto& [kind, means] : modules.per_record_means) {
      res.per_module_mape[kind] =
          std::accumulate(means.begin(), means.end(), 0.0) /
          static_cast<double>(means.size());
    }
    report.results.push_back(std::move(res));
  }
  return report;
}

inline std::string serialize_report(
    const EvalReport& r,
    const nlohmann::json& provenance = nlohmann::json::object()) {
  nlohmann::json j;
  j["schema"] = kReportSchema;
  j["scheme"] = r.scheme;
  j["folds"] = r.folds;
  j["seed"] = r.seed;
  j["n_records"] = r.n_records;
  j["results"] = nlohmann::json::array();
  for (const auto& res : r.results) {
    nlohmann::json rj;
    rj["predictor"] = res.name;
    rj["n_predictions"] = res.n_predictions;
    rj["mape"] = res.mape;
    rj["mape_se"] = res.mape_se;
    rj["per_module_mape"] = res.per_module_mape;
    j["results"].push_back(rj);
  }
  j["provenance"] = provenance;
  return j.dump(2) + "\n";
}

inline std::string report_tsv(const EvalReport& r) {
  std::ostringstream out;
  out << "predictor\tn\tmape\tmape_se\n";
  out.setf(std::ios::fixed);
  out.precision(6);
  for (const auto& res : r.results) {
    out << res.name << "\t" << res.n_predictions << "\t" << res.mape << "\t"
        << res.mape_se << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Rank-quality summary: how well predictions order the runs.

struct CorrelationReport {
  std::size_t n = 0;
  double spearman_rho = 0.0;
};

inline CorrelationReport correlation_report(
    const std::vector<double>& pred, const std::vector<double>& truth) {
  CorrelationReport r;
  r.n = pred.size();
  r.spearman_rho = spearman(pred, truth);
  return r;
}

// ---------------------------------------------------------------------------
// Deployment-choice table: one row per (architecture, degree), predicted
// energy per generated token against simulated time per token, with each
// architecture's Pareto-optimal rows flagged. Time comes from an
// expectation-mode, noise-free simulation so the table is a property of the
// configuration rather than of one noisy run; energy comes from the trained
// predictor applied to that run.

struct ParetoRow {
  std::string variant;
  std::int64_t degree = 1;
  double time_per_token = 0.0;    // seconds per generated token
  double energy_per_token = 0.0;  // predicted Wh per generated token
  bool optimal = false;
};

inline std::vector<ParetoRow> pareto_table(
    const PredictorParams& params, const std::vector<ModelArch>& archs,
    Strategy strategy, const std::vector<std::int64_t>& degrees,
    const WorkloadConfig& work, const SimParams& sim) {
  detail::check_params(params);
  if (archs.empty()) throw DataError("pareto_table: no architectures given");
  if (degrees.empty()) return {};
  SimParams quiet = sim;
  quiet.noise_rel = 0.0;
  const double gen_tokens = static_cast<double>(work.batch_size) *
                            static_cast<double>(work.seq_out);
  std::vector<ParetoRow> rows;
  for (const auto& arch : archs) {
    for (std::int64_t d : degrees) {
      const ParallelismConfig par{strategy, d};
      Rng rng = Rng::stream(quiet.seed,
                            cell_stream_key(GridCell{arch, par, work}, 0));
      const MeasurementRecord rec =
          simulate_run(arch, par, work, quiet, rng, SimMode::kExpected, 0);
      ParetoRow row;
      row.variant = arch.variant_name;
      row.degree = d;
      row.time_per_token = rec.wall_time / gen_tokens;
      row.energy_per_token = predict_record(rec, params).at(0) / gen_tokens;
      rows.push_back(row);
    }
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const ParetoRow& a, const ParetoRow& b) {
                     if (a.variant != b.variant) return a.variant < b.variant;
                     return a.degree < b.degree;
                   });
  // Pareto dominance within each architecture.
  for (auto& row : rows) {
    bool dominated = false;
    for (const auto& other : rows) {
      if (other.variant != row.variant) continue;
      const bool no_worse = other.time_per_token <= row.time_per_token &&
                            other.energy_per_token <= row.energy_per_token;
      const bool better = other.time_per_token < row.time_per_token ||
                          other.energy_per_token < row.energy_per_token;
      if (no_worse && better) {
        dominated = true;
        break;
      }
    }
    row.optimal = !dominated;
  }
  return rows;
}

inline std::string pareto_tsv(const std::vector<ParetoRow>& rows) {
  std::ostringstream out;
  out << "arch\tdegree\ttime_per_token_s\tenergy_per_token_wh\toptimal\n";
  out.setf(std::ios::scientific);
  out.precision(9);
  for (const auto& r : rows) {
    out << r.variant << "\t" << r.degree << "\t" << r.time_per_token << "\t"
        << r.energy_per_token << "\t" << (r.optimal ? 1 : 0) << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Feature-table export: one row per (record, node), for inspection and for
// fitting models outside this library.

inline std::string feature_table_tsv(const Dataset& ds) {
  std::ostringstream out;
  out << "record\tnode\tkind\tenergy_wh";
  for (const auto& name : feature_names()) out << "\t" << name;
  out << "\n";
  out.setf(std::ios::scientific);
  out.precision(9);
  for (std::size_t r = 0; r < ds.records.size(); ++r) {
    const MeasurementRecord& rec = ds.records[r];
    const ModelTree tree = build_tree(rec.arch, rec.par);
    const AggregatedFeatures agg = record_features(rec);
    for_each_node(tree.root, [&](const TreeNode& n) {
      out << r << "\t" << n.id << "\t" << kind_name(n.kind) << "\t"
          << rec.nodes[static_cast<std::size_t>(n.id)].total;
      for (double x : feature_vector(n, agg, rec.arch, rec.par, rec.work)) {
        out << "\t" << x;
      }
      out << "\n";
    });
  }
  return out.str();
}

}  // namespace piep
