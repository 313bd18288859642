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
#include <iostream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "piep/baselines.hpp"
#include "piep/config.hpp"
#include "piep/errors.hpp"
#include "piep/eval.hpp"
#include "piep/model_tree.hpp"
#include "piep/predictor.hpp"
#include "piep/rng.hpp"
#include "piep/sim_profiler.hpp"
#include "piep/version.hpp"

namespace piep {
namespace cli {

// Exit codes: 0 success, 2 usage, 3 parse, 4 validation, 5 data, 6 numeric.

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return s;
}

inline void write_text_file(const std::string& path,
                            const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << content;
  if (!out) throw DataError("write failed: " + path);
}

// Provenance block embedded in produced documents: tool version plus a
// content hash per input file. No timestamps, so reruns are byte-identical.
class Provenance {
 public:
  void add(const std::string& role, const std::string& path,
           const std::string& content) {
    inputs_[role] = {{"path", path}, {"fnv1a64", hex64(fnv1a64(content))}};
  }

  nlohmann::json json() const {
    return nlohmann::json{{"tool_version", kToolVersion},
                          {"inputs", inputs_}};
  }

 private:
  nlohmann::json inputs_ = nlohmann::json::object();
};

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline std::vector<std::int64_t> parse_degree_list(const std::string& s) {
  std::vector<std::int64_t> out;
  for (const auto& part : split_list(s)) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(part, &used);
      if (used != part.size()) throw std::invalid_argument(part);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ParseError("bad degree '" + part + "' in list '" + s + "'");
    }
  }
  if (out.empty()) throw ParseError("empty degree list");
  return out;
}

inline AblationFlags parse_ablations(const std::string& s) {
  AblationFlags flags;
  for (const auto& name : split_list(s)) {
    if (name == "no_wait") {
      flags.no_wait = true;
    } else if (name == "no_comm") {
      flags.no_comm = true;
    } else if (name == "no_structure") {
      flags.no_structure = true;
    } else {
      throw ParseError("unknown ablation '" + name +
                       "'; expected no_wait, no_comm, no_structure");
    }
  }
  return flags;
}

struct CommonState {
  std::ostream* out = &std::cout;
};

// --- tree -------------------------------------------------------------------

struct TreeArgs {
  std::string config_path;
  std::string arch_name;
  std::string strategy = "tensor_parallel";
  std::int64_t degree = 1;
  std::string out_path;
  bool as_json = false;
};

inline int run_tree(const TreeArgs& a, CommonState& st) {
  std::vector<std::pair<ModelArch, ParallelismConfig>> combos;
  Provenance prov;
  if (!a.arch_name.empty()) {
    const ParallelismConfig par{detail::parse_strategy(a.strategy, "--strategy"),
                                a.degree};
    combos.emplace_back(preset(a.arch_name), par);
  } else if (!a.config_path.empty()) {
    const std::string text = read_file(a.config_path);
    prov.add("config", a.config_path, text);
    const ConfigSet cfg = load_configs(text, a.config_path);
    if (cfg.architectures.empty() || cfg.parallelism.empty()) {
      throw DataError("tree: config needs architectures and parallelism");
    }
    for (const auto& arch : cfg.architectures) {
      for (const auto& par : cfg.parallelism) {
        combos.emplace_back(arch, par);
      }
    }
  } else {
    throw ParseError("tree: give either --arch or --config");
  }

  std::string rendered;
  if (a.as_json) {
    nlohmann::json doc;
    doc["schema"] = kReportSchema;
    doc["kind"] = "trees";
    doc["trees"] = nlohmann::json::array();
    for (const auto& [arch, par] : combos) {
      const ModelTree tree = build_tree(arch, par);
      doc["trees"].push_back(
          nlohmann::json{{"arch", detail::arch_to_json(arch)},
                         {"par", detail::par_to_json(par)},
                         {"root", tree_to_json(tree.root)}});
    }
    doc["provenance"] = prov.json();
    rendered = doc.dump(2) + "\n";
  } else {
    for (const auto& [arch, par] : combos) {
      rendered += render_tree_text(build_tree(arch, par));
      rendered += "\n";
    }
  }
  if (!a.out_path.empty()) {
    write_text_file(a.out_path, rendered);
    *st.out << "wrote " << combos.size() << " tree(s) to " << a.out_path
            << "\n";
  } else {
    *st.out << rendered;
  }
  return 0;
}

// --- gen-profile ------------------------------------------------------------

struct GenArgs {
  std::string config_path;
  std::string sim_path;
  std::string out_path;
  std::int64_t runs_per_cell = 3;
  int threads = 1;
  std::int64_t seed = -1;  // <0 keeps the sim-file / default seed
};

inline int run_gen(const GenArgs& a, CommonState& st) {
  const std::string config_text = read_file(a.config_path);
  const ConfigSet cfg = load_configs(config_text, a.config_path);
  SimParams params;
  if (!a.sim_path.empty()) {
    params = parse_sim_params(read_file(a.sim_path), a.sim_path);
  }
  if (a.seed >= 0) params.seed = static_cast<std::uint64_t>(a.seed);
  const std::vector<GridCell> cells = expand_grid(cfg);
  if (cells.empty()) {
    throw DataError(
        "gen-profile: empty grid (config needs architectures, parallelism "
        "and workloads)");
  }
  const Dataset ds = gen_dataset(cells, a.runs_per_cell, params, a.threads);
  write_text_file(a.out_path, serialize_dataset(ds));
  *st.out << "wrote " << ds.records.size() << " records (" << cells.size()
          << " cells x " << a.runs_per_cell << " runs) to " << a.out_path
          << "\n";
  return 0;
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
  std::string dataset_path;
  std::string out_path;
  std::string predictor = "piep";
  std::string ablate;
  double ridge_lambda = 1e-6;
  double learning_rate = 0.05;
  int epochs = 400;
  double tau = 2.0;
  bool root_only = false;
};

inline int run_train(const TrainArgs& a, CommonState& st) {
  const std::string text = read_file(a.dataset_path);
  Provenance prov;
  prov.add("dataset", a.dataset_path, text);
  const Dataset ds = parse_dataset(text, a.dataset_path);

  if (a.predictor == "piep" || a.predictor == "comm_blind" ||
      a.predictor == "piep_no_comm") {
    FitOptions opts;
    opts.ridge_lambda = a.ridge_lambda;
    opts.composer.learning_rate = a.learning_rate;
    opts.composer.epochs = a.epochs;
    opts.composer.tau = a.tau;
    opts.composer.root_only = a.root_only;
    opts.ablations = parse_ablations(a.ablate);
    if (a.predictor != "piep") opts.ablations.no_comm = true;
    ComposerFitInfo info;
    const PredictorParams params = fit_predictor(ds, opts, &info);
    write_text_file(a.out_path, serialize_params(params, prov.json()));
    *st.out << "fitted " << a.predictor << " on " << ds.records.size()
            << " records; composer loss " << info.initial_loss << " -> "
            << info.final_loss << "; wrote " << a.out_path << "\n";
  } else if (a.predictor == "token_regression" || a.predictor == "token") {
    const TokenRegressionParams params = fit_token_regression(ds);
    write_text_file(a.out_path,
                    serialize_token_regression(params, prov.json()));
    *st.out << "fitted token_regression on " << ds.records.size()
            << " records; wrote " << a.out_path << "\n";
  } else if (a.predictor == "proxy") {
    const ProxyRegressionParams params = fit_proxy_regression(ds);
    write_text_file(a.out_path,
                    serialize_proxy_regression(params, prov.json()));
    *st.out << "fitted proxy on " << ds.records.size()
            << " records; wrote " << a.out_path << "\n";
  } else {
    throw ParseError("train: unknown predictor '" + a.predictor +
                     "'; expected piep, comm_blind, token_regression or proxy");
  }
  return 0;
}

// --- predict ----------------------------------------------------------------

struct PredictArgs {
  std::string dataset_path;
  std::string model_path;
  std::string out_path;
  bool table = false;
};

inline int run_predict(const PredictArgs& a, CommonState& st) {
  const std::string dataset_text = read_file(a.dataset_path);
  const std::string model_text = read_file(a.model_path);
  Provenance prov;
  prov.add("dataset", a.dataset_path, dataset_text);
  prov.add("model", a.model_path, model_text);
  const Dataset ds = parse_dataset(dataset_text, a.dataset_path);
  const TrainedModel model = parse_model(model_text, a.model_path);

  nlohmann::json rows = nlohmann::json::array();
  std::vector<double> pred, truth;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const MeasurementRecord& rec = ds.records[i];
    nlohmann::json row;
    row["record"] = i;
    row["true_energy"] = rec.model_total_energy;
    double value = 0.0;
    if (std::holds_alternative<PredictorParams>(model)) {
      const auto nodes = predict_record(rec, std::get<PredictorParams>(model));
      value = nodes.at(0);
      nlohmann::json per_node = nlohmann::json::object();
      for (const auto& [id, v] : nodes) per_node[std::to_string(id)] = v;
      row["nodes"] = per_node;
    } else if (std::holds_alternative<TokenRegressionParams>(model)) {
      value =
          predict_token_regression(std::get<TokenRegressionParams>(model),
                                   rec.work);
    } else {
      value = predict_proxy_regression(std::get<ProxyRegressionParams>(model),
                                       rec);
    }
    row["predicted_energy"] = value;
    rows.push_back(row);
    pred.push_back(value);
    truth.push_back(rec.model_total_energy);
  }
  const double err = mape(pred, truth);

  if (!a.out_path.empty()) {
    nlohmann::json doc;
    doc["schema"] = kReportSchema;
    doc["kind"] = "predictions";
    doc["mape"] = err;
    doc["rows"] = rows;
    doc["provenance"] = prov.json();
    write_text_file(a.out_path, doc.dump(2) + "\n");
    *st.out << "wrote " << rows.size() << " predictions to " << a.out_path
            << "\n";
  }
  if (a.table) {
    std::ostringstream t;
    t << "record\ttrue_wh\tpredicted_wh\n";
    t.setf(std::ios::scientific);
    t.precision(9);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      t << i << "\t" << truth[i] << "\t" << pred[i] << "\n";
    }
    *st.out << t.str();
  }
  *st.out << "mape over " << pred.size() << " records: " << err << "%\n";
  return 0;
}

// --- evaluate ---------------------------------------------------------------

struct EvaluateArgs {
  std::string dataset_path;
  std::string out_path;
  std::string scheme = "kfold";
  int k = 3;
  std::int64_t seed = 0;
  std::string predictors;
  double ridge_lambda = 1e-6;
  double learning_rate = 0.05;
  int epochs = 400;
  double tau = 2.0;
  bool table = false;
};

inline int run_evaluate(const EvaluateArgs& a, CommonState& st) {
  const std::string text = read_file(a.dataset_path);
  Provenance prov;
  prov.add("dataset", a.dataset_path, text);
  const Dataset ds = parse_dataset(text, a.dataset_path);

  EvalOptions opts;
  opts.scheme = parse_scheme(a.scheme);
  opts.k = a.k;
  opts.seed = static_cast<std::uint64_t>(a.seed);
  opts.ridge_lambda = a.ridge_lambda;
  opts.composer.learning_rate = a.learning_rate;
  opts.composer.epochs = a.epochs;
  opts.composer.tau = a.tau;
  if (!a.predictors.empty()) opts.predictors = split_list(a.predictors);

  const EvalReport report = run_protocol(ds, opts);
  if (!a.out_path.empty()) {
    write_text_file(a.out_path, serialize_report(report, prov.json()));
    *st.out << "wrote report to " << a.out_path << "\n";
  }
  if (a.table || a.out_path.empty()) *st.out << report_tsv(report);
  return 0;
}

// --- pareto -----------------------------------------------------------------

struct ParetoArgs {
  std::string model_path;
  std::string arch_names = "vicuna-tiny,mistral-tiny,llama-tiny,qwen-tiny";
  std::string strategy = "tensor_parallel";
  std::string degrees = "1,2,4";
  std::int64_t batch = 4;
  std::int64_t seq_in = 64;
  std::int64_t seq_out = 32;
  std::string sim_path;
  std::string out_path;
};

inline int run_pareto(const ParetoArgs& a, CommonState& st) {
  const std::string model_text = read_file(a.model_path);
  Provenance prov;
  prov.add("model", a.model_path, model_text);
  const TrainedModel model = parse_model(model_text, a.model_path);
  if (!std::holds_alternative<PredictorParams>(model)) {
    throw DataError("pareto requires a tree predictor model: " + a.model_path);
  }
  std::vector<ModelArch> archs;
  for (const auto& name : split_list(a.arch_names)) archs.push_back(preset(name));
  const Strategy strategy = detail::parse_strategy(a.strategy, "--strategy");
  SimParams params;
  if (!a.sim_path.empty()) {
    params = parse_sim_params(read_file(a.sim_path), a.sim_path);
  }
  const WorkloadConfig work{a.batch, a.seq_in, a.seq_out};
  const auto rows =
      pareto_table(std::get<PredictorParams>(model), archs, strategy,
                   parse_degree_list(a.degrees), work, params);
  const std::string tsv = pareto_tsv(rows);
  if (!a.out_path.empty()) {
    write_text_file(a.out_path, tsv);
    *st.out << "wrote " << rows.size() << " rows to " << a.out_path << "\n";
  }
  *st.out << tsv;
  return 0;
}

// --- correlate --------------------------------------------------------------

struct CorrelateArgs {
  std::string dataset_path;
  std::string model_path;
  std::string out_path;
};

inline int run_correlate(const CorrelateArgs& a, CommonState& st) {
  const std::string dataset_text = read_file(a.dataset_path);
  const std::string model_text = read_file(a.model_path);
  Provenance prov;
  prov.add("dataset", a.dataset_path, dataset_text);
  prov.add("model", a.model_path, model_text);
  const Dataset ds = parse_dataset(dataset_text, a.dataset_path);
  const TrainedModel model = parse_model(model_text, a.model_path);

  std::vector<double> pred, truth;
  for (const auto& rec : ds.records) {
    double value = 0.0;
    if (std::holds_alternative<PredictorParams>(model)) {
      value = predict_record(rec, std::get<PredictorParams>(model)).at(0);
    } else if (std::holds_alternative<TokenRegressionParams>(model)) {
      value = predict_token_regression(std::get<TokenRegressionParams>(model),
                                       rec.work);
    } else {
      value = predict_proxy_regression(std::get<ProxyRegressionParams>(model),
                                       rec);
    }
    pred.push_back(value);
    truth.push_back(rec.model_total_energy);
  }
  const CorrelationReport rep = correlation_report(pred, truth);
  if (!a.out_path.empty()) {
    nlohmann::json doc;
    doc["schema"] = kReportSchema;
    doc["kind"] = "correlation";
    doc["n"] = rep.n;
    doc["spearman_rho"] = rep.spearman_rho;
    doc["provenance"] = prov.json();
    write_text_file(a.out_path, doc.dump(2) + "\n");
    *st.out << "wrote correlation report to " << a.out_path << "\n";
  }
  *st.out << "spearman_rho = " << rep.spearman_rho << " over " << rep.n
          << " records\n";
  return 0;
}

// --- main entry -------------------------------------------------------------

inline int run(int argc, const char* const* argv,
               std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{
      "piep: tree-structured energy prediction for multi-GPU LLM inference"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));
  CommonState st;
  st.out = &out;

  TreeArgs tree_args;
  auto* tree_cmd =
      app.add_subcommand("tree", "Render module trees for configurations");
  tree_cmd->add_option("--config", tree_args.config_path,
                       "Configuration document");
  tree_cmd->add_option("--arch", tree_args.arch_name, "Architecture preset");
  tree_cmd->add_option("--strategy", tree_args.strategy,
                       "Parallelism strategy (with --arch)");
  tree_cmd->add_option("--degree", tree_args.degree,
                       "Parallelism degree (with --arch)");
  tree_cmd->add_option("--out", tree_args.out_path, "Output file");
  tree_cmd->add_flag("--json", tree_args.as_json, "Emit structured output");

  GenArgs gen_args;
  auto* gen_cmd = app.add_subcommand(
      "gen-profile", "Profile a configuration grid into a dataset");
  gen_cmd->add_option("--config", gen_args.config_path,
                      "Configuration document")
      ->required();
  gen_cmd->add_option("--out", gen_args.out_path, "Dataset file to write")
      ->required();
  gen_cmd->add_option("--sim", gen_args.sim_path, "Profiler parameter file");
  gen_cmd->add_option("--runs-per-cell", gen_args.runs_per_cell,
                      "Repeated runs per grid cell");
  gen_cmd->add_option("--threads", gen_args.threads,
                      "Worker threads (results are identical at any count)");
  gen_cmd->add_option("--seed", gen_args.seed, "Override the profiler seed");

  TrainArgs train_args;
  auto* train_cmd =
      app.add_subcommand("train", "Fit a predictor on a dataset");
  train_cmd->add_option("--dataset", train_args.dataset_path, "Dataset file")
      ->required();
  train_cmd->add_option("--out", train_args.out_path, "Model file to write")
      ->required();
  train_cmd->add_option("--predictor", train_args.predictor,
                        "piep, comm_blind, token_regression or proxy");
  train_cmd->add_option("--ablate", train_args.ablate,
                        "Comma list of no_wait, no_comm, no_structure");
  train_cmd->add_option("--ridge-lambda", train_args.ridge_lambda,
                        "Leaf ridge strength");
  train_cmd->add_option("--learning-rate", train_args.learning_rate,
                        "Composer learning rate");
  train_cmd->add_option("--epochs", train_args.epochs, "Composer epochs");
  train_cmd->add_option("--tau", train_args.tau, "Composer gate bound");
  train_cmd->add_flag("--root-only", train_args.root_only,
                      "Supervise only the root during composer training");

  PredictArgs predict_args;
  auto* predict_cmd = app.add_subcommand(
      "predict", "Apply a trained model to a dataset");
  predict_cmd
      ->add_option("--dataset", predict_args.dataset_path, "Dataset file")
      ->required();
  predict_cmd->add_option("--model", predict_args.model_path, "Model file")
      ->required();
  predict_cmd->add_option("--out", predict_args.out_path,
                          "Predictions file to write");
  predict_cmd->add_flag("--table", predict_args.table,
                        "Print a per-record table");

  EvaluateArgs eval_args;
  auto* eval_cmd = app.add_subcommand(
      "evaluate", "Cross-validated comparison of predictors");
  eval_cmd->add_option("--dataset", eval_args.dataset_path, "Dataset file")
      ->required();
  eval_cmd->add_option("--out", eval_args.out_path, "Report file to write");
  eval_cmd->add_option("--scheme", eval_args.scheme,
                       "kfold, variant, batch or family");
  eval_cmd->add_option("--k", eval_args.k, "Folds for the kfold scheme");
  eval_cmd->add_option("--seed", eval_args.seed, "Split shuffle seed");
  eval_cmd->add_option("--predictors", eval_args.predictors,
                       "Comma list; default is every known predictor");
  eval_cmd->add_option("--ridge-lambda", eval_args.ridge_lambda,
                       "Leaf ridge strength");
  eval_cmd->add_option("--learning-rate", eval_args.learning_rate,
                       "Composer learning rate");
  eval_cmd->add_option("--epochs", eval_args.epochs, "Composer epochs");
  eval_cmd->add_option("--tau", eval_args.tau, "Composer gate bound");
  eval_cmd->add_flag("--table", eval_args.table, "Print the summary table");

  ParetoArgs pareto_args;
  auto* pareto_cmd = app.add_subcommand(
      "pareto", "Energy/latency table across parallelism degrees");
  pareto_cmd->add_option("--model", pareto_args.model_path,
                         "Trained tree predictor file")
      ->required();
  pareto_cmd->add_option("--arch", pareto_args.arch_names,
                         "Comma list of architecture presets");
  pareto_cmd->add_option("--strategy", pareto_args.strategy,
                         "Parallelism strategy");
  pareto_cmd->add_option("--degrees", pareto_args.degrees,
                         "Comma list of degrees");
  pareto_cmd->add_option("--batch", pareto_args.batch, "Batch size");
  pareto_cmd->add_option("--seq-in", pareto_args.seq_in, "Prompt tokens");
  pareto_cmd->add_option("--seq-out", pareto_args.seq_out,
                         "Generated tokens");
  pareto_cmd->add_option("--sim", pareto_args.sim_path,
                         "Profiler parameter file");
  pareto_cmd->add_option("--out", pareto_args.out_path, "Table file to write");

  CorrelateArgs corr_args;
  auto* corr_cmd = app.add_subcommand(
      "correlate", "Rank correlation of a model's predictions");
  corr_cmd->add_option("--dataset", corr_args.dataset_path, "Dataset file")
      ->required();
  corr_cmd->add_option("--model", corr_args.model_path, "Model file")
      ->required();
  corr_cmd->add_option("--out", corr_args.out_path, "Report file to write");

  try {
    app.parse(argc, argv);
    if (tree_cmd->parsed()) return run_tree(tree_args, st);
    if (gen_cmd->parsed()) return run_gen(gen_args, st);
    if (train_cmd->parsed()) return run_train(train_args, st);
    if (predict_cmd->parsed()) return run_predict(predict_args, st);
    if (eval_cmd->parsed()) return run_evaluate(eval_args, st);
    if (pareto_cmd->parsed()) return run_pareto(pareto_args, st);
    if (corr_cmd->parsed()) return run_correlate(corr_args, st);
    err << "error: usage: no subcommand\n";
    return 2;
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    err << "error: parse: " << e.what() << "\n";
    return 3;
  } catch (const ValidationError& e) {
    err << "error: validation: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    err << "error: data: " << e.what() << "\n";
    return 5;
  } catch (const NumericError& e) {
    err << "error: numeric: " << e.what() << "\n";
    return 6;
  }
}

}  // namespace cli
}  // namespace piep
