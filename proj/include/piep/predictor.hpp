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

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "piep/errors.hpp"
#include "piep/features.hpp"
#include "piep/model_tree.hpp"
#include "piep/sim_profiler.hpp"
#include "piep/version.hpp"

namespace piep {

// Hierarchical energy prediction: per-kind linear regressors score the
// leaves, and energies roll up the tree through a learned gate
//
//   alpha(c) = 1 + tanh(W . feat(c) + b) / tau
//
// so a parent is sum_c alpha(c) * E(c). tau bounds the gate inside
// (1 - 1/tau, 1 + 1/tau); it can stretch or shrink a child's contribution
// to absorb systematically unattributed draw, but never invert or erase it.

struct AblationFlags {
  bool no_wait = false;       // drop the waiting-phase submodel of comm leaves
  bool no_comm = false;       // remove communication leaves before composing
  bool no_structure = false;  // zero the model-structure feature block

  bool operator==(const AblationFlags&) const = default;
};

// Linear model over standardized features. `standardizer` is shared with
// the predictor that owns the regressor.
struct LeafRegressor {
  ModuleKind kind = ModuleKind::kRoot;
  std::vector<double> weights;
  double bias = 0.0;
  std::shared_ptr<const Standardizer> standardizer;

  double evaluate_standardized(const std::vector<double>& z) const {
    if (z.size() != weights.size()) {
      throw DataError("leaf regressor: feature length " +
                      std::to_string(z.size()) + " != weight length " +
                      std::to_string(weights.size()));
    }
    double y = bias;
    for (std::size_t j = 0; j < z.size(); ++j) y += weights[j] * z[j];
    return y;
  }
};

struct ComposerParams {
  std::vector<double> weights;  // same length as the feature vector
  double bias = 0.0;
  double tau = 2.0;
};

inline double composer_alpha(const ComposerParams& c,
                             const std::vector<double>& z) {
  if (c.tau <= 0.0) throw ValidationError("composer: tau must be > 0");
  if (z.size() != c.weights.size()) {
    throw DataError("composer: feature length mismatch");
  }
  double arg = c.bias;
  for (std::size_t j = 0; j < z.size(); ++j) arg += c.weights[j] * z[j];
  return 1.0 + std::tanh(arg) / c.tau;
}

struct PredictorParams {
  std::string feature_schema = kFeatureSchema;
  std::shared_ptr<const Standardizer> standardizer;
  std::map<ModuleKind, LeafRegressor> leaf_models;  // compute+transfer side
  std::map<ModuleKind, LeafRegressor> wait_models;  // comm kinds only
  ComposerParams composer;
  AblationFlags ablations;
};

// Zeroes ablated coordinates in a raw (unstandardized) feature vector.
inline void apply_feature_mask(const AblationFlags& flags,
                               std::vector<double>* x) {
  if (flags.no_structure) {
    for (int j = kStructureFeatureBegin; j < kStructureFeatureEnd; ++j) {
      (*x)[static_cast<std::size_t>(j)] = 0.0;
    }
  }
}

// ---------------------------------------------------------------------------
// Prediction.

namespace detail {

struct ComposeNode {
  std::int64_t id = -1;
  ModuleKind kind = ModuleKind::kRoot;
  bool leaf = false;
  bool dropped = false;       // comm leaf removed by no_comm
  double leaf_value = 0.0;    // fixed during composer training
  std::vector<double> zfeat;  // standardized, masked features
  std::vector<ComposeNode> children;
  double target = 0.0;
  bool supervised = false;
};

// Builds the evaluation tree for one record-context: standardized features
// everywhere, leaf regressor outputs at the leaves.
inline ComposeNode build_compose_node(const TreeNode& n,
                                      const AggregatedFeatures& agg,
                                      const ModelArch& arch,
                                      const ParallelismConfig& par,
                                      const WorkloadConfig& work,
                                      const PredictorParams& params) {
  ComposeNode out;
  out.id = n.id;
  out.kind = n.kind;
  out.leaf = n.children.empty();
  std::vector<double> x = feature_vector(n, agg, arch, par, work);
  apply_feature_mask(params.ablations, &x);
  out.zfeat = params.standardizer->apply(x);
  if (out.leaf) {
    if (is_comm_kind(n.kind) && params.ablations.no_comm) {
      out.dropped = true;
      return out;
    }
    const auto it = params.leaf_models.find(n.kind);
    if (it == params.leaf_models.end()) {
      throw DataError(std::string("predict: no fitted leaf model for kind '") +
                      kind_name(n.kind) + "'");
    }
    double v = std::max(0.0, it->second.evaluate_standardized(out.zfeat));
    if (is_comm_kind(n.kind) && !params.ablations.no_wait) {
      const auto wit = params.wait_models.find(n.kind);
      if (wit == params.wait_models.end()) {
        throw DataError(
            std::string("predict: no fitted wait model for kind '") +
            kind_name(n.kind) + "'");
      }
      v += std::max(0.0, wit->second.evaluate_standardized(out.zfeat));
    }
    out.leaf_value = v;
  } else {
    for (const auto& c : n.children) {
      out.children.push_back(
          build_compose_node(c, agg, arch, par, work, params));
    }
  }
  return out;
}

inline double compose_value(const ComposeNode& n, const ComposerParams& c,
                            std::map<std::int64_t, double>* out) {
  double v = 0.0;
  if (n.leaf) {
    v = n.dropped ? 0.0 : n.leaf_value;
  } else {
    for (const auto& child : n.children) {
      const double cv = compose_value(child, c, out);
      if (child.dropped) continue;
      v += composer_alpha(c, child.zfeat) * cv;
    }
  }
  if (out && !n.dropped) (*out)[n.id] = v;
  return v;
}

inline void check_params(const PredictorParams& params) {
  if (params.feature_schema != kFeatureSchema) {
    throw ParseError("predictor: feature schema '" + params.feature_schema +
                     "' does not match this build's '" + kFeatureSchema + "'");
  }
  if (!params.standardizer || !params.standardizer->fitted()) {
    throw DataError("predictor: standardizer is not fitted");
  }
  if (params.standardizer->mean.size() !=
      static_cast<std::size_t>(kFeatureCount)) {
    throw DataError("predictor: standardizer length " +
                    std::to_string(params.standardizer->mean.size()) +
                    " != feature count " + std::to_string(kFeatureCount));
  }
  if (params.composer.tau <= 0.0) {
    throw ValidationError("predictor: composer tau must be > 0");
  }
}

}  // namespace detail

// Per-node predicted energies (Wh), keyed by node id; the root entry is the
// model-level prediction. Communication leaves dropped by no_comm are
// absent from the map.
inline std::map<std::int64_t, double> predict(const ModelTree& tree,
                                              const WorkloadConfig& work,
                                              const AggregatedFeatures& agg,
                                              const PredictorParams& params) {
  detail::check_params(params);
  const detail::ComposeNode root = detail::build_compose_node(
      tree.root, agg, tree.arch, tree.par, work, params);
  std::map<std::int64_t, double> out;
  detail::compose_value(root, params.composer, &out);
  return out;
}

inline std::map<std::int64_t, double> predict_record(
    const MeasurementRecord& rec, const PredictorParams& params) {
  const ModelTree tree = build_tree(rec.arch, rec.par);
  return predict(tree, rec.work, record_features(rec), params);
}

// ---------------------------------------------------------------------------
// Leaf fitting: ridge least squares with an unpenalized intercept.

enum class LeafTarget {
  kTotal,            // compute + transfer + wait (the measured node energy)
  kComputeTransfer,  // node energy minus the waiting phase
  kWait,             // waiting phase only
};

namespace detail {

inline double leaf_target_value(const NodeEnergy& e, LeafTarget t) {
  switch (t) {
    case LeafTarget::kTotal: return e.total;
    case LeafTarget::kComputeTransfer: return e.compute + e.transfer;
    case LeafTarget::kWait: return e.wait;
  }
  return e.total;
}

struct LeafRows {
  std::vector<std::vector<double>> z;  // standardized features
  std::vector<double> y;
  std::int64_t records_with_kind = 0;
};

// Solves min ||y - Xw - b||^2 + lambda ||w||^2. At lambda = 0 the design
// must have full column rank (after dropping all-zero columns, which keep
// zero weights); otherwise the system is reported as singular.
inline void solve_ridge(const LeafRows& rows, double lambda,
                        std::vector<double>* weights, double* bias) {
  const std::size_t n = rows.z.size();
  const std::size_t d = rows.z[0].size();
  Eigen::MatrixXd X(n, d);
  Eigen::VectorXd y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y(static_cast<Eigen::Index>(i)) = rows.y[i];
    for (std::size_t j = 0; j < d; ++j) {
      X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          rows.z[i][j];
    }
  }
  if (!X.allFinite() || !y.allFinite()) {
    throw NumericError("leaf fit: non-finite feature or target value");
  }
  const Eigen::RowVectorXd xmean = X.colwise().mean();
  const double ymean = y.mean();
  const Eigen::MatrixXd Xc = X.rowwise() - xmean;
  const Eigen::VectorXd yc = y.array() - ymean;

  Eigen::VectorXd w;
  if (lambda > 0.0) {
    Eigen::MatrixXd A = Xc.transpose() * Xc;
    A.diagonal().array() += lambda;
    w = A.ldlt().solve(Xc.transpose() * yc);
  } else {
    // Drop identically-zero columns (standardized constants); they keep
    // zero weight. Anything else rank-deficient is an error.
    std::vector<Eigen::Index> live;
    for (Eigen::Index j = 0; j < Xc.cols(); ++j) {
      if (Xc.col(j).cwiseAbs().maxCoeff() > 0.0) live.push_back(j);
    }
    Eigen::MatrixXd Xl(Xc.rows(), static_cast<Eigen::Index>(live.size()));
    for (std::size_t j = 0; j < live.size(); ++j) {
      Xl.col(static_cast<Eigen::Index>(j)) = Xc.col(live[j]);
    }
    w = Eigen::VectorXd::Zero(Xc.cols());
    if (!live.empty()) {
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xl);
      if (qr.rank() < Xl.cols()) {
        throw NumericError(
            "leaf fit: singular least-squares system at ridge_lambda = 0; "
            "set ridge_lambda > 0");
      }
      const Eigen::VectorXd wl = qr.solve(yc);
      for (std::size_t j = 0; j < live.size(); ++j) {
        w(live[j]) = wl(static_cast<Eigen::Index>(j));
      }
    }
  }
  if (!w.allFinite()) {
    throw NumericError("leaf fit: solver produced non-finite coefficients");
  }
  weights->assign(w.data(), w.data() + w.size());
  *bias = ymean - w.dot(xmean.transpose());
}

inline LeafRows collect_leaf_rows(
    const std::vector<const MeasurementRecord*>& records, ModuleKind kind,
    LeafTarget target, const Standardizer& standardizer,
    const AblationFlags& flags) {
  LeafRows rows;
  for (const MeasurementRecord* rec : records) {
    const ModelTree tree = build_tree(rec->arch, rec->par);
    const AggregatedFeatures agg = record_features(*rec);
    bool seen = false;
    for_each_node(tree.root, [&](const TreeNode& n) {
      if (n.kind != kind || !n.children.empty()) return;
      std::vector<double> x =
          feature_vector(n, agg, rec->arch, rec->par, rec->work);
      apply_feature_mask(flags, &x);
      rows.z.push_back(standardizer.apply(x));
      rows.y.push_back(leaf_target_value(
          rec->nodes[static_cast<std::size_t>(n.id)], target));
      seen = true;
    });
    if (seen) ++rows.records_with_kind;
  }
  return rows;
}

inline std::shared_ptr<Standardizer> fit_standardizer(
    const std::vector<const MeasurementRecord*>& records,
    const AblationFlags& flags) {
  std::vector<std::vector<double>> all;
  for (const MeasurementRecord* rec : records) {
    const ModelTree tree = build_tree(rec->arch, rec->par);
    const AggregatedFeatures agg = record_features(*rec);
    for_each_node(tree.root, [&](const TreeNode& n) {
      std::vector<double> x =
          feature_vector(n, agg, rec->arch, rec->par, rec->work);
      apply_feature_mask(flags, &x);
      all.push_back(std::move(x));
    });
  }
  auto st = std::make_shared<Standardizer>();
  st->fit(all);
  return st;
}

inline std::vector<const MeasurementRecord*> record_ptrs(const Dataset& ds) {
  std::vector<const MeasurementRecord*> out;
  out.reserve(ds.records.size());
  for (const auto& r : ds.records) out.push_back(&r);
  return out;
}

inline LeafRegressor fit_leaf_model(
    const std::vector<const MeasurementRecord*>& records, ModuleKind kind,
    double ridge_lambda, LeafTarget target,
    std::shared_ptr<const Standardizer> standardizer,
    const AblationFlags& flags) {
  LeafRows rows = collect_leaf_rows(records, kind, target, *standardizer,
                                    flags);
  if (rows.records_with_kind <
      static_cast<std::int64_t>(kFeatureCount) + 1) {
    throw DataError(std::string("leaf fit for kind '") + kind_name(kind) +
                    "': needs at least " + std::to_string(kFeatureCount + 1) +
                    " records containing the kind, got " +
                    std::to_string(rows.records_with_kind));
  }
  LeafRegressor reg;
  reg.kind = kind;
  reg.standardizer = std::move(standardizer);
  solve_ridge(rows, ridge_lambda, &reg.weights, &reg.bias);
  return reg;
}

}  // namespace detail

// Fits one per-kind leaf regressor against the measured node energy (or a
// phase slice of it). The standardizer is fitted over every node vector in
// the dataset, matching what fit_predictor does.
inline LeafRegressor fit_leaves(const Dataset& ds, ModuleKind kind,
                                double ridge_lambda,
                                LeafTarget target = LeafTarget::kTotal) {
  if (ds.records.empty()) throw DataError("fit_leaves: empty dataset");
  const auto records = detail::record_ptrs(ds);
  auto st = detail::fit_standardizer(records, AblationFlags{});
  return detail::fit_leaf_model(records, kind, ridge_lambda, target, st,
                                AblationFlags{});
}

// ---------------------------------------------------------------------------
// Composer fitting: full-batch gradient descent on the mean squared error
// of composed predictions against measured energies. Interior nodes are
// supervised on their attributed sums; the root is supervised on the
// system-level total (the quantity the model has to predict), which is what
// lets the gate absorb draw the leaves never see.

struct ComposerHyper {
  double learning_rate = 0.05;  // upper bound on the step; see fit_composer_on
  int epochs = 400;
  double tau = 2.0;
  bool root_only = false;  // supervise only the root instead of all interiors
  std::vector<double> init_weights;  // empty -> zeros
  double init_bias = 0.0;
};

struct ComposerFitInfo {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int epochs = 0;
};

namespace detail {

// Forward value and d(value)/d(W, b) for one node. Gradients are dense
// vectors of length F+1 (weights, then bias).
inline double compose_grad(const ComposeNode& n, const ComposerParams& c,
                           std::vector<double>* grad) {
  std::fill(grad->begin(), grad->end(), 0.0);
  if (n.leaf) return n.dropped ? 0.0 : n.leaf_value;
  const std::size_t dim = c.weights.size();
  double v = 0.0;
  std::vector<double> child_grad(dim + 1);
  for (const auto& child : n.children) {
    const double cv = compose_grad(child, c, &child_grad);
    if (child.dropped) continue;
    double arg = c.bias;
    for (std::size_t j = 0; j < dim; ++j) {
      arg += c.weights[j] * child.zfeat[j];
    }
    const double t = std::tanh(arg);
    const double a = 1.0 + t / c.tau;
    const double da = (1.0 - t * t) / c.tau;  // d(alpha)/d(arg)
    v += a * cv;
    for (std::size_t j = 0; j < dim; ++j) {
      (*grad)[j] += da * child.zfeat[j] * cv + a * child_grad[j];
    }
    (*grad)[dim] += da * cv + a * child_grad[dim];
  }
  return v;
}

struct SupervisedNodeRef {
  const ComposeNode* node;
  double target;
};

inline void collect_supervised(const ComposeNode& n, bool root_only,
                               std::vector<SupervisedNodeRef>* out) {
  if (n.supervised) out->push_back({&n, n.target});
  if (root_only) return;
  for (const auto& c : n.children) collect_supervised(c, root_only, out);
}

}  // namespace detail

// Fits the composer on prepared record contexts (leaf values frozen). The
// loss is normalized by a dataset-level energy scale so the learning rate
// is unit-free; that choice only reparametrizes the descent trajectory.
inline ComposerFitInfo fit_composer_on(
    std::vector<detail::ComposeNode>& contexts, ComposerParams* composer,
    const ComposerHyper& hyper) {
  if (hyper.tau <= 0.0) {
    throw ValidationError("fit_composer: tau must be > 0");
  }
  composer->tau = hyper.tau;
  composer->weights = hyper.init_weights.empty()
                          ? std::vector<double>(kFeatureCount, 0.0)
                          : hyper.init_weights;
  composer->bias = hyper.init_bias;
  if (composer->weights.size() != static_cast<std::size_t>(kFeatureCount)) {
    throw DataError("fit_composer: init weight length mismatch");
  }

  std::vector<detail::SupervisedNodeRef> supervised;
  for (auto& ctx : contexts) {
    detail::collect_supervised(ctx, hyper.root_only, &supervised);
  }
  if (supervised.empty()) {
    throw DataError("fit_composer: no supervised nodes in the dataset");
  }
  double scale = 0.0;
  for (const auto& s : supervised) scale += std::abs(s.target);
  scale /= static_cast<double>(supervised.size());
  if (!(scale > 0.0)) scale = 1.0;

  const std::size_t dim = composer->weights.size();
  const double n = static_cast<double>(supervised.size());
  std::vector<double> node_grad(dim + 1);
  std::vector<double> loss_grad(dim + 1);

  // Mean squared error at `p`; fills the loss gradient when asked for.
  const auto evaluate = [&](const ComposerParams& p, bool with_grad) {
    double loss = 0.0;
    if (with_grad) std::fill(loss_grad.begin(), loss_grad.end(), 0.0);
    for (const auto& s : supervised) {
      const double v =
          (with_grad ? detail::compose_grad(*s.node, p, &node_grad)
                     : detail::compose_value(*s.node, p, nullptr)) /
          scale;
      const double err = v - s.target / scale;
      loss += err * err;
      if (with_grad) {
        for (std::size_t j = 0; j <= dim; ++j) {
          loss_grad[j] += 2.0 * err * node_grad[j] / scale;
        }
      }
    }
    loss /= n;
    if (!std::isfinite(loss)) {
      throw NumericError("fit_composer: non-finite training loss");
    }
    return loss;
  };

  // Full-batch descent with backtracking: learning_rate is the largest step
  // ever taken; a step that would increase the loss is halved until it does
  // not, so the loss trace is non-increasing at any requested rate. The step
  // recovers geometrically after each accepted epoch.
  ComposerFitInfo info;
  info.epochs = hyper.epochs;
  info.initial_loss = evaluate(*composer, false);
  double current = info.initial_loss;
  double step = hyper.learning_rate;
  ComposerParams trial = *composer;
  for (int e = 0; e < hyper.epochs; ++e) {
    evaluate(*composer, true);
    bool accepted = false;
    for (int bt = 0; bt < 30; ++bt) {
      for (std::size_t j = 0; j < dim; ++j) {
        trial.weights[j] = composer->weights[j] - step * loss_grad[j] / n;
      }
      trial.bias = composer->bias - step * loss_grad[dim] / n;
      const double trial_loss = evaluate(trial, false);
      if (trial_loss <= current) {
        composer->weights = trial.weights;
        composer->bias = trial.bias;
        current = trial_loss;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // no improving step at any resolution: stationary
    step = std::min(step * 2.0, hyper.learning_rate);
  }
  info.final_loss = current;
  return info;
}

// ---------------------------------------------------------------------------
// Whole-predictor fit.

struct FitOptions {
  double ridge_lambda = 1e-6;
  ComposerHyper composer;
  AblationFlags ablations;
};

inline PredictorParams fit_predictor(
    const std::vector<const MeasurementRecord*>& records,
    const FitOptions& opts, ComposerFitInfo* fit_info = nullptr) {
  if (records.empty()) throw DataError("fit_predictor: no training records");

  PredictorParams params;
  params.ablations = opts.ablations;
  params.composer.tau = opts.composer.tau;
  auto st = detail::fit_standardizer(records, opts.ablations);
  params.standardizer = st;

  // Which leaf kinds exist in the training trees?
  std::map<ModuleKind, bool> present;
  for (const MeasurementRecord* rec : records) {
    const ModelTree tree = build_tree(rec->arch, rec->par);
    for_each_node(tree.root, [&](const TreeNode& n) {
      if (n.children.empty()) present[n.kind] = true;
    });
  }
  for (const auto& [kind, _] : present) {
    if (is_comm_kind(kind) && opts.ablations.no_comm) continue;
    params.leaf_models[kind] = detail::fit_leaf_model(
        records, kind, opts.ridge_lambda, LeafTarget::kComputeTransfer, st,
        opts.ablations);
    if (is_comm_kind(kind) && !opts.ablations.no_wait) {
      params.wait_models[kind] = detail::fit_leaf_model(
          records, kind, opts.ridge_lambda, LeafTarget::kWait, st,
          opts.ablations);
    }
  }

  // Prepare compose contexts with frozen leaf values, then train the gate.
  std::vector<detail::ComposeNode> contexts;
  contexts.reserve(records.size());
  for (const MeasurementRecord* rec : records) {
    const ModelTree tree = build_tree(rec->arch, rec->par);
    const AggregatedFeatures agg = record_features(*rec);
    detail::ComposeNode ctx = detail::build_compose_node(
        tree.root, agg, rec->arch, rec->par, rec->work, params);
    // Attach supervision targets: interior nodes carry their attributed
    // sums, the root carries the system-level measurement.
    const std::vector<NodeEnergy>& nodes = rec->nodes;
    const double model_total = rec->model_total_energy;
    const std::function<void(detail::ComposeNode&)> attach =
        [&](detail::ComposeNode& n) {
          if (!n.leaf) {
            n.supervised = true;
            n.target = n.id == 0
                           ? model_total
                           : nodes[static_cast<std::size_t>(n.id)].total;
            for (auto& c : n.children) attach(c);
          }
        };
    attach(ctx);
    contexts.push_back(std::move(ctx));
  }
  ComposerFitInfo info =
      fit_composer_on(contexts, &params.composer, opts.composer);
  if (fit_info) *fit_info = info;
  return params;
}

inline PredictorParams fit_predictor(const Dataset& ds, const FitOptions& opts,
                                     ComposerFitInfo* fit_info = nullptr) {
  return fit_predictor(detail::record_ptrs(ds), opts, fit_info);
}

// Public composer-only op over a dataset, reusing already-fitted leaves.
inline ComposerFitInfo fit_composer(
    const std::vector<const MeasurementRecord*>& records,
    PredictorParams* params, const ComposerHyper& hyper) {
  detail::check_params(*params);
  std::vector<detail::ComposeNode> contexts;
  for (const MeasurementRecord* rec : records) {
    const ModelTree tree = build_tree(rec->arch, rec->par);
    const AggregatedFeatures agg = record_features(*rec);
    detail::ComposeNode ctx = detail::build_compose_node(
        tree.root, agg, rec->arch, rec->par, rec->work, *params);
    const std::function<void(detail::ComposeNode&)> attach =
        [&](detail::ComposeNode& n) {
          if (!n.leaf) {
            n.supervised = true;
            n.target =
                n.id == 0
                    ? rec->model_total_energy
                    : rec->nodes[static_cast<std::size_t>(n.id)].total;
            for (auto& c : n.children) attach(c);
          }
        };
    attach(ctx);
    contexts.push_back(std::move(ctx));
  }
  return fit_composer_on(contexts, &params->composer, hyper);
}

// ---------------------------------------------------------------------------
// Serialization (kind "piep" in the trained-model document family).

namespace detail {

inline nlohmann::json regressor_to_json(const LeafRegressor& r) {
  return nlohmann::json{{"weights", r.weights}, {"bias", r.bias}};
}

inline LeafRegressor regressor_from_json(
    const nlohmann::json& j, ModuleKind kind,
    std::shared_ptr<const Standardizer> st, const std::string& where) {
  check_keys(j, {"weights", "bias"}, where);
  LeafRegressor r;
  r.kind = kind;
  r.standardizer = std::move(st);
  r.weights = j.at("weights").get<std::vector<double>>();
  r.bias = j.at("bias").get<double>();
  if (r.weights.size() != static_cast<std::size_t>(kFeatureCount)) {
    throw ParseError(where + ": weight length " +
                     std::to_string(r.weights.size()) +
                     " != feature count " + std::to_string(kFeatureCount));
  }
  return r;
}

}  // namespace detail

inline std::string serialize_params(
    const PredictorParams& params,
    const nlohmann::json& provenance = nlohmann::json::object()) {
  nlohmann::json j;
  j["schema"] = kModelSchema;
  j["kind"] = "piep";
  j["feature_schema"] = params.feature_schema;
  j["feature_names"] = feature_names();
  j["standardizer"] = {{"mean", params.standardizer->mean},
                       {"stddev", params.standardizer->stddev}};
  nlohmann::json leaf = nlohmann::json::object();
  for (const auto& [kind, reg] : params.leaf_models) {
    leaf[kind_name(kind)] = detail::regressor_to_json(reg);
  }
  j["leaf_models"] = leaf;
  nlohmann::json wait = nlohmann::json::object();
  for (const auto& [kind, reg] : params.wait_models) {
    wait[kind_name(kind)] = detail::regressor_to_json(reg);
  }
  j["wait_models"] = wait;
  j["composer"] = {{"weights", params.composer.weights},
                   {"bias", params.composer.bias},
                   {"tau", params.composer.tau}};
  j["ablations"] = {{"no_wait", params.ablations.no_wait},
                    {"no_comm", params.ablations.no_comm},
                    {"no_structure", params.ablations.no_structure}};
  j["provenance"] = provenance;
  return j.dump(2) + "\n";
}

inline PredictorParams params_from_json(const nlohmann::json& j,
                                        const std::string& source) {
  detail::check_keys(j,
                     {"schema", "kind", "feature_schema", "feature_names",
                      "standardizer", "leaf_models", "wait_models", "composer",
                      "ablations", "provenance"},
                     source);
  const std::string schema = detail::get_string(j, "schema", source);
  if (schema != kModelSchema) {
    throw ParseError(source + ": model schema '" + schema +
                     "' does not match expected '" + kModelSchema + "'");
  }
  PredictorParams p;
  p.feature_schema = detail::get_string(j, "feature_schema", source);
  if (p.feature_schema != kFeatureSchema) {
    throw ParseError(source + ": feature schema '" + p.feature_schema +
                     "' does not match this build's '" + kFeatureSchema + "'");
  }
  auto st = std::make_shared<Standardizer>();
  const auto& stj = j.at("standardizer");
  detail::check_keys(stj, {"mean", "stddev"}, source + ": standardizer");
  st->mean = stj.at("mean").get<std::vector<double>>();
  st->stddev = stj.at("stddev").get<std::vector<double>>();
  if (st->mean.size() != static_cast<std::size_t>(kFeatureCount) ||
      st->stddev.size() != st->mean.size()) {
    throw ParseError(source + ": standardizer length mismatch");
  }
  p.standardizer = st;
  for (const auto& [name, rj] : j.at("leaf_models").items()) {
    const ModuleKind kind = kind_from_name(name);
    p.leaf_models[kind] = detail::regressor_from_json(
        rj, kind, st, source + ": leaf_models." + name);
  }
  for (const auto& [name, rj] : j.at("wait_models").items()) {
    const ModuleKind kind = kind_from_name(name);
    p.wait_models[kind] = detail::regressor_from_json(
        rj, kind, st, source + ": wait_models." + name);
  }
  const auto& cj = j.at("composer");
  detail::check_keys(cj, {"weights", "bias", "tau"}, source + ": composer");
  p.composer.weights = cj.at("weights").get<std::vector<double>>();
  p.composer.bias = cj.at("bias").get<double>();
  p.composer.tau = cj.at("tau").get<double>();
  if (p.composer.weights.size() != static_cast<std::size_t>(kFeatureCount)) {
    throw ParseError(source + ": composer weight length mismatch");
  }
  if (p.composer.tau <= 0.0) {
    throw ParseError(source + ": composer tau must be > 0");
  }
  const auto& aj = j.at("ablations");
  detail::check_keys(aj, {"no_wait", "no_comm", "no_structure"},
                     source + ": ablations");
  p.ablations.no_wait = aj.at("no_wait").get<bool>();
  p.ablations.no_comm = aj.at("no_comm").get<bool>();
  p.ablations.no_structure = aj.at("no_structure").get<bool>();
  return p;
}

inline PredictorParams parse_params(const std::string& text,
                                    const std::string& source = "model") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(source + ": " + e.what());
  }
  if (!j.is_object()) throw ParseError(source + ": must be an object");
  const std::string kind =
      j.contains("kind") && j.at("kind").is_string()
          ? j.at("kind").get<std::string>()
          : "";
  if (kind != "piep") {
    throw ParseError(source + ": expected model kind 'piep', got '" + kind +
                     "'");
  }
  return params_from_json(j, source);
}

inline void save_params_file(
    const PredictorParams& params, const std::string& path,
    const nlohmann::json& provenance = nlohmann::json::object()) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open for writing: " + path);
  out << serialize_params(params, provenance);
}

inline PredictorParams load_params_file(const std::string& path) {
  return parse_params(read_file(path), path);
}

}  // namespace piep
