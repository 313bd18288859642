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
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "piep/errors.hpp"
#include "piep/predictor.hpp"
#include "piep/sim_profiler.hpp"
#include "piep/version.hpp"

namespace piep {

// Reference predictors the hierarchical model is evaluated against. Both
// are intentionally blind to model structure and parallelism: the token
// model sees only workload shape, the proxy model sees only the on-device
// energy counters (which miss idle draw and synchronization skew).

// E = a0 * seq_in + a1 * seq_out + a2 * seq_in * seq_out, no intercept.
struct TokenRegressionParams {
  double a_in = 0.0;
  double a_out = 0.0;
  double a_cross = 0.0;
};

inline double predict_token_regression(const TokenRegressionParams& p,
                                       const WorkloadConfig& work) {
  const double ti = static_cast<double>(work.seq_in);
  const double to = static_cast<double>(work.seq_out);
  return p.a_in * ti + p.a_out * to + p.a_cross * ti * to;
}

inline TokenRegressionParams fit_token_regression(
    const std::vector<const MeasurementRecord*>& records) {
  if (records.size() < 3) {
    throw DataError("token regression: needs at least 3 records, got " +
                    std::to_string(records.size()));
  }
  Eigen::MatrixXd X(records.size(), 3);
  Eigen::VectorXd y(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const double ti = static_cast<double>(records[i]->work.seq_in);
    const double to = static_cast<double>(records[i]->work.seq_out);
    const auto r = static_cast<Eigen::Index>(i);
    X(r, 0) = ti;
    X(r, 1) = to;
    X(r, 2) = ti * to;
    y(r) = records[i]->model_total_energy;
  }
  if (!X.allFinite() || !y.allFinite()) {
    throw NumericError("token regression: non-finite input");
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < 3) {
    throw NumericError(
        "token regression: singular design; the training workloads do not "
        "span seq_in, seq_out and their product");
  }
  const Eigen::VectorXd w = qr.solve(y);
  if (!w.allFinite()) {
    throw NumericError("token regression: solver produced non-finite result");
  }
  return {w(0), w(1), w(2)};
}

inline TokenRegressionParams fit_token_regression(const Dataset& ds) {
  return fit_token_regression(detail::record_ptrs(ds));
}

// E = slope * (sum of per-GPU energy counters) + intercept.
struct ProxyRegressionParams {
  double slope = 0.0;
  double intercept = 0.0;
};

inline double predict_proxy_regression(const ProxyRegressionParams& p,
                                       const MeasurementRecord& rec) {
  return p.slope * gpu_energy_counter_sum(rec) + p.intercept;
}

inline ProxyRegressionParams fit_proxy_regression(
    const std::vector<const MeasurementRecord*>& records) {
  if (records.size() < 2) {
    throw DataError("proxy regression: needs at least 2 records, got " +
                    std::to_string(records.size()));
  }
  const std::size_t n = records.size();
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (const MeasurementRecord* rec : records) {
    const double x = gpu_energy_counter_sum(*rec);
    const double y = rec->model_total_energy;
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double nn = static_cast<double>(n);
  const double denom = nn * sxx - sx * sx;
  // Relative degeneracy test: when every counter is identical the exact
  // difference is zero, but rounding alone can leave a few ulps of nn * sxx
  // behind, so an exact-zero check would let a garbage slope through.
  if (!std::isfinite(denom) || denom <= 1e-12 * nn * sxx) {
    throw NumericError(
        "proxy regression: counter sums are constant across the training "
        "records");
  }
  ProxyRegressionParams p;
  p.slope = (nn * sxy - sx * sy) / denom;
  p.intercept = (sy - p.slope * sx) / nn;
  if (!std::isfinite(p.slope) || !std::isfinite(p.intercept)) {
    throw NumericError("proxy regression: non-finite fit");
  }
  return p;
}

inline ProxyRegressionParams fit_proxy_regression(const Dataset& ds) {
  return fit_proxy_regression(detail::record_ptrs(ds));
}

// Communication-blind variant of the hierarchical predictor: identical
// pipeline with communication leaves removed before fitting and composing.
inline PredictorParams fit_comm_blind(
    const std::vector<const MeasurementRecord*>& records, FitOptions opts) {
  opts.ablations.no_comm = true;
  return fit_predictor(records, opts);
}

// ---------------------------------------------------------------------------
// Serialization. Baseline models share the trained-model document family
// with the hierarchical predictor; "kind" discriminates.

inline std::string serialize_token_regression(
    const TokenRegressionParams& p,
    const nlohmann::json& provenance = nlohmann::json::object()) {
  nlohmann::json j;
  j["schema"] = kModelSchema;
  j["kind"] = "token_regression";
  j["coefficients"] = {{"a_in", p.a_in},
                       {"a_out", p.a_out},
                       {"a_cross", p.a_cross}};
  j["provenance"] = provenance;
  return j.dump(2) + "\n";
}

inline std::string serialize_proxy_regression(
    const ProxyRegressionParams& p,
    const nlohmann::json& provenance = nlohmann::json::object()) {
  nlohmann::json j;
  j["schema"] = kModelSchema;
  j["kind"] = "proxy";
  j["slope"] = p.slope;
  j["intercept"] = p.intercept;
  j["provenance"] = provenance;
  return j.dump(2) + "\n";
}

using TrainedModel =
    std::variant<PredictorParams, TokenRegressionParams, ProxyRegressionParams>;

inline TrainedModel parse_model(const std::string& text,
                                const std::string& source = "model") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(source + ": " + e.what());
  }
  if (!j.is_object()) throw ParseError(source + ": must be an object");
  const std::string schema =
      j.contains("schema") && j.at("schema").is_string()
          ? j.at("schema").get<std::string>()
          : "";
  if (schema != kModelSchema) {
    throw ParseError(source + ": model schema '" + schema +
                     "' does not match expected '" + kModelSchema + "'");
  }
  const std::string kind = j.contains("kind") && j.at("kind").is_string()
                               ? j.at("kind").get<std::string>()
                               : "";
  if (kind == "piep") {
    return params_from_json(j, source);
  }
  if (kind == "token_regression") {
    detail::check_keys(j, {"schema", "kind", "coefficients", "provenance"},
                       source);
    const auto& c = j.at("coefficients");
    detail::check_keys(c, {"a_in", "a_out", "a_cross"},
                       source + ": coefficients");
    TokenRegressionParams p;
    p.a_in = c.at("a_in").get<double>();
    p.a_out = c.at("a_out").get<double>();
    p.a_cross = c.at("a_cross").get<double>();
    return p;
  }
  if (kind == "proxy") {
    detail::check_keys(j, {"schema", "kind", "slope", "intercept",
                           "provenance"},
                       source);
    ProxyRegressionParams p;
    p.slope = j.at("slope").get<double>();
    p.intercept = j.at("intercept").get<double>();
    return p;
  }
  throw ParseError(source + ": unknown model kind '" + kind + "'");
}

inline TrainedModel load_model_file(const std::string& path) {
  return parse_model(read_file(path), path);
}

}  // namespace piep
