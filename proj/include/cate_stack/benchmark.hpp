#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cate_stack/dataset.hpp"
#include "cate_stack/dgp.hpp"
#include "cate_stack/ensemble.hpp"
#include "cate_stack/metalearners.hpp"
#include "cate_stack/parallel.hpp"
#include "cate_stack/pseudo.hpp"
#include "cate_stack/selection_eval.hpp"

namespace cate_stack {

enum class Strategy { CausalStack, CausalStackNoL1, CausalStackUnconstrained, RStack, OracleSelect, PluginSelect };

inline const std::vector<Strategy>& all_strategies() {
  static const std::vector<Strategy> all = {Strategy::CausalStack, Strategy::CausalStackNoL1,
                                            Strategy::CausalStackUnconstrained, Strategy::RStack,
                                            Strategy::OracleSelect, Strategy::PluginSelect};
  return all;
}

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::CausalStack: return "causal_stack";
    case Strategy::CausalStackNoL1: return "causal_stack_no_l1";
    case Strategy::CausalStackUnconstrained: return "causal_stack_unconstrained";
    case Strategy::RStack: return "r_stack";
    case Strategy::OracleSelect: return "oracle_select";
    case Strategy::PluginSelect: return "plugin_select";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  for (auto st : all_strategies())
    if (to_string(st) == s) return st;
  throw ParameterError("unknown strategy '" + s + "'");
}

inline std::string display_name(const std::string& strategy) {
  static const std::map<std::string, std::string> names = {
      {"causal_stack", "Causal Stacking"},
      {"causal_stack_no_l1", "Causal Stacking (no l1 constraint)"},
      {"causal_stack_unconstrained", "Causal Stacking (unconstrained)"},
      {"r_stack", "R-Stacking"},
      {"oracle_select", "Oracle"},
      {"plugin_select", "Plug-in Selection"}};
  auto it = names.find(strategy);
  return it == names.end() ? strategy : it->second;
}

inline bool is_weighted(Strategy s) { return s != Strategy::OracleSelect && s != Strategy::PluginSelect; }

struct ExperimentConfig {
  DgpSpec dgp;
  Eigen::Index n = 3000;  // training + averaging units
  double alpha = 1.0 / 3.0;
  Eigen::Index n_test = 1802;
  double p = 0.5;
  Design design = Design::Bernoulli;
  int replications = 50;
  std::vector<CateAlgorithmSpec> roster = default_roster();
  // Extra candidates appended after the roster (not serializable; tests use
  // them to inject known functions). One label per factory.
  std::vector<CandidateFactory> injected;
  std::vector<std::string> injected_labels;
  std::vector<Strategy> strategies = all_strategies();
  RegressorSpec mu_base = RegressorSpec(RegressorKind::GradientBoosting);
  MuFitMode mu_fit_mode = MuFitMode::PerArm;
  bool mu_fit_auto = false;  // pick the mode by 5-fold CV on the training rows
  Regime r_stack_regime = Regime::NonNegative;
  std::optional<double> truncation_bound;
  std::uint64_t master_seed = 0;
  SolverOptions solver;

  std::size_t candidate_count() const { return roster.size() + injected.size(); }

  std::vector<std::string> candidate_labels() const {
    std::vector<std::string> out;
    for (const auto& s : roster) out.push_back(s.label);
    for (const auto& l : injected_labels) out.push_back(l);
    return out;
  }

  void validate() const {
    dgp.validate();
    require(replications >= 1, "config: replications must be at least 1");
    require(!strategies.empty(), "config: at least one strategy required");
    require(candidate_count() >= 1, "config: roster is empty");
    require(injected.size() == injected_labels.size(), "config: one label per injected candidate");
    require(n >= 4 && n_test >= 1, "config: sample sizes too small");
    require(alpha > 0.0 && alpha < 1.0, "config: alpha must lie in (0,1)");
    require(p > 0.0 && p < 1.0, "config: p must lie in (0,1)");
  }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  std::vector<std::string> strategies;
  for (auto s : c.strategies) strategies.push_back(to_string(s));
  j = nlohmann::json{{"dgp", c.dgp},
                     {"n", c.n},
                     {"alpha", c.alpha},
                     {"n_test", c.n_test},
                     {"p", c.p},
                     {"design", to_string(c.design)},
                     {"replications", c.replications},
                     {"roster", c.roster},
                     {"injected", c.injected_labels},
                     {"strategies", strategies},
                     {"mu_base", c.mu_base},
                     {"mu_fit_mode", c.mu_fit_auto ? std::string("auto") : to_string(c.mu_fit_mode)},
                     {"r_stack_regime", to_string(c.r_stack_regime)},
                     {"master_seed", c.master_seed},
                     {"solver", {{"tol", c.solver.tol}, {"max_iter", c.solver.max_iter}}}};
  j["truncation_bound"] = c.truncation_bound ? nlohmann::json(*c.truncation_bound) : nlohmann::json(nullptr);
}

inline std::string hex_digest(const std::string& s) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(s)));
  return buf;
}

inline std::string config_digest(const ExperimentConfig& c) { return hex_digest(nlohmann::json(c).dump()); }

// ---------------------------------------------------------------------------
// One replication

struct StrategyOutcome {
  Strategy strategy = Strategy::CausalStack;
  double test_mse = 0.0;
  std::vector<double> weights;  // weighted strategies
  int selected = -1;            // selection strategies
  double avg_loss = 0.0;        // objective value on the averaging set
  double kkt_residual = 0.0;
  bool singular = false;
};

struct ReplicationRecord {
  int rep = 0;
  bool ok = false;
  std::string error;
  std::string mu_fit_mode;
  std::vector<double> candidate_test_mse;
  std::vector<double> candidate_avg_loss;  // plug-in loss of each candidate
  std::vector<StrategyOutcome> outcomes;   // same order as config.strategies
  double seconds = 0.0;                    // wall time; never serialized

  const StrategyOutcome* find(Strategy s) const {
    for (const auto& o : outcomes)
      if (o.strategy == s) return &o;
    return nullptr;
  }
};

inline void to_json(nlohmann::json& j, const StrategyOutcome& o) {
  j = nlohmann::json{{"strategy", to_string(o.strategy)}, {"test_mse", o.test_mse}, {"avg_loss", o.avg_loss}};
  if (is_weighted(o.strategy)) {
    j["weights"] = o.weights;
    j["kkt_residual"] = o.kkt_residual;
    j["singular"] = o.singular;
  } else {
    j["selected"] = o.selected;
  }
}

inline void to_json(nlohmann::json& j, const ReplicationRecord& r) {
  j = nlohmann::json{{"rep", r.rep}, {"ok", r.ok}};
  if (!r.ok) {
    j["error"] = r.error;
    return;
  }
  j["mu_fit_mode"] = r.mu_fit_mode;
  j["candidate_test_mse"] = r.candidate_test_mse;
  j["candidate_avg_loss"] = r.candidate_avg_loss;
  j["strategies"] = r.outcomes;
}

namespace detail {

template <typename Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const ParameterError& e) {
    throw StageError(name, e.what(), true);
  } catch (const FormatError& e) {
    throw StageError(name, e.what(), true);
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace detail

inline std::uint64_t replication_seed(const ExperimentConfig& c, int rep) {
  return derive_seed(c.master_seed, static_cast<std::uint64_t>(rep));
}

// generate -> split -> mu models -> candidate library -> pseudo-outcomes ->
// every strategy -> squared PEHE on a fresh test sample. All strategies see
// the same data, split and candidates.
inline ReplicationRecord run_replication(const ExperimentConfig& config, int rep) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::uint64_t seed = replication_seed(config, rep);
  ReplicationRecord rec;
  rec.rep = rep;

  const auto draw = detail::stage("generate", [&] {
    return generate_dataset(config.dgp, config.n, config.p, config.design, derive_seed(seed, 1));
  });
  const auto sp = detail::stage("split", [&] { return split(draw.data, config.alpha, derive_seed(seed, 2)); });
  const auto train = draw.data.view(sp.train_indices);
  const auto avg = draw.data.view(sp.avg_indices);
  const double p = draw.data.treat_prob();

  const RegressorSpec mu_spec = config.mu_base.with_seed(derive_seed(seed, 3));
  const auto mu = detail::stage("outcome_models", [&] {
    const MuFitMode mode =
        config.mu_fit_auto ? choose_mu_fit_mode(train, mu_spec, 5, derive_seed(seed, 7)) : config.mu_fit_mode;
    return fit_outcome_models(train, mode, mu_spec);
  });
  rec.mu_fit_mode = to_string(mu.mode());

  const auto models = detail::stage("candidates", [&] {
    LibraryOptions lib;
    lib.truncation_bound = config.truncation_bound;
    lib.context_seed = derive_seed(seed, 4);
    std::vector<CateModelPtr> out;
    if (!config.roster.empty()) out = fit_candidate_library(train, config.roster, p, lib);
    for (std::size_t k = 0; k < config.injected.size(); ++k) {
      auto m = config.injected[k](train, config.dgp, p, derive_seed(seed, 100 + k));
      if (config.truncation_bound) m = std::make_shared<TruncatedCateModel>(m, *config.truncation_bound);
      out.push_back(std::move(m));
    }
    return out;
  });

  const Vector pseudo = detail::stage("pseudo_outcomes", [&] { return pseudo_outcomes(avg, mu, p); });
  const Matrix T_avg = candidate_matrix(models, avg.covariates);
  const auto test = make_evaluation_sample(config.dgp, config.n_test, derive_seed(seed, 5));
  const Matrix T_test = candidate_matrix(models, test.covariates);
  const auto plugin = make_plugin_problem(T_avg, pseudo);

  const auto K = T_avg.cols();
  for (Eigen::Index k = 0; k < K; ++k) {
    rec.candidate_test_mse.push_back(pehe_squared(T_test.col(k), test.true_tau));
    Vector e = Vector::Zero(K);
    e[k] = 1.0;
    rec.candidate_avg_loss.push_back(plugin.loss(e));
  }

  for (Strategy s : config.strategies) {
    StrategyOutcome o;
    o.strategy = s;
    detail::stage(to_string(s).c_str(), [&] {
      auto apply_weights = [&](const WeightVector& w) {
        o.weights.assign(w.weights.data(), w.weights.data() + w.weights.size());
        o.avg_loss = w.loss;
        o.kkt_residual = w.kkt_residual;
        o.singular = w.singular;
        o.test_mse = pehe_squared(T_test * w.weights, test.true_tau);
      };
      auto apply_selection = [&](std::size_t k, double loss) {
        o.selected = static_cast<int>(k);
        o.avg_loss = loss;
        o.test_mse = rec.candidate_test_mse[k];
      };
      switch (s) {
        case Strategy::CausalStack: apply_weights(solve_stacking(plugin, Regime::Simplex, config.solver)); break;
        case Strategy::CausalStackNoL1: apply_weights(solve_stacking(plugin, Regime::NonNegative, config.solver)); break;
        case Strategy::CausalStackUnconstrained:
          apply_weights(solve_stacking(plugin, Regime::Unconstrained, config.solver));
          break;
        case Strategy::RStack: {
          const auto mu_all = fit_regressor(mu_spec.with_seed(derive_seed(seed, 6)), train.covariates, train.outcomes);
          const auto problem = build_r_stacking_problem(avg, T_avg, mu_all->predict(avg.covariates), p);
          apply_weights(solve_stacking(problem, config.r_stack_regime, config.solver));
          break;
        }
        case Strategy::OracleSelect: {
          const Vector truth = select_entries(draw.cate, sp.avg_indices);
          const auto k = oracle_select(T_avg, truth);
          apply_selection(k, pehe_squared(T_avg.col(static_cast<Eigen::Index>(k)), truth));
          break;
        }
        case Strategy::PluginSelect: {
          const auto k = plugin_select(T_avg, pseudo);
          apply_selection(k, rec.candidate_avg_loss[k]);
          break;
        }
      }
      return 0;
    });
    rec.outcomes.push_back(std::move(o));
  }
  rec.ok = true;
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

// ---------------------------------------------------------------------------
// Aggregation

enum class Outcome { Win, Loss, Tie };

inline Outcome compare_mse(double a, double b) {
  if (a < b) return Outcome::Win;
  if (b < a) return Outcome::Loss;
  return Outcome::Tie;
}

struct ReplicationReport {
  ExperimentConfig config;
  std::vector<std::string> candidate_labels;
  std::vector<ReplicationRecord> replications;
  int failures = 0;
  std::vector<double> mean_mse;                     // per strategy (config order)
  std::vector<double> mean_candidate_mse;
  std::vector<std::vector<double>> mean_weights;    // per strategy; empty for selections
  std::vector<std::vector<int>> selection_counts;   // per strategy; empty for weighted

  std::size_t strategy_index(Strategy s) const {
    for (std::size_t i = 0; i < config.strategies.size(); ++i)
      if (config.strategies[i] == s) return i;
    throw ParameterError("strategy '" + to_string(s) + "' not in report");
  }

  double mse(Strategy s) const { return mean_mse[strategy_index(s)]; }

  // On this dataset: 1 if row strategy's average MSE is strictly lower.
  Outcome compare(Strategy a, Strategy b) const { return compare_mse(mse(a), mse(b)); }
};

inline void aggregate(ReplicationReport& report) {
  const auto& c = report.config;
  const std::size_t S = c.strategies.size(), K = report.candidate_labels.size();
  report.mean_mse.assign(S, 0.0);
  report.mean_candidate_mse.assign(K, 0.0);
  report.mean_weights.assign(S, {});
  report.selection_counts.assign(S, {});
  for (std::size_t s = 0; s < S; ++s) {
    if (is_weighted(c.strategies[s]))
      report.mean_weights[s].assign(K, 0.0);
    else
      report.selection_counts[s].assign(K, 0);
  }
  int ok = 0;
  for (const auto& r : report.replications) {
    if (!r.ok) continue;
    ++ok;
    for (std::size_t k = 0; k < K; ++k) report.mean_candidate_mse[k] += r.candidate_test_mse[k];
    for (std::size_t s = 0; s < S; ++s) {
      const auto& o = r.outcomes[s];
      report.mean_mse[s] += o.test_mse;
      if (is_weighted(o.strategy))
        for (std::size_t k = 0; k < K; ++k) report.mean_weights[s][k] += o.weights[k];
      else
        ++report.selection_counts[s][static_cast<std::size_t>(o.selected)];
    }
  }
  report.failures = static_cast<int>(report.replications.size()) - ok;
  if (ok == 0) return;
  for (auto& v : report.mean_mse) v /= ok;
  for (auto& v : report.mean_candidate_mse) v /= ok;
  for (auto& w : report.mean_weights)
    for (auto& v : w) v /= ok;
}

// All replications (run concurrently on `jobs` workers), then aggregates.
// Aborts when more than 20% of replications fail.
inline ReplicationReport run_benchmark(const ExperimentConfig& config, int jobs = 1) {
  config.validate();
  ReplicationReport report;
  report.config = config;
  report.candidate_labels = config.candidate_labels();
  report.replications.resize(static_cast<std::size_t>(config.replications));
  parallel_for(report.replications.size(), jobs, [&](std::size_t i) {
    const int rep = static_cast<int>(i);
    try {
      report.replications[i] = run_replication(config, rep);
    } catch (const std::exception& e) {
      ReplicationRecord failed;
      failed.rep = rep;
      failed.ok = false;
      failed.error = e.what();
      report.replications[i] = std::move(failed);
    }
  });
  aggregate(report);
  if (report.failures * 5 > config.replications) {
    std::string first;
    for (const auto& r : report.replications)
      if (!r.ok) {
        first = r.error;
        break;
      }
    throw Error("benchmark '" + config.dgp.name + "': " + std::to_string(report.failures) + " of " +
                std::to_string(config.replications) + " replications failed (first: " + first + ")");
  }
  return report;
}

inline nlohmann::json report_json(const ReplicationReport& r) {
  nlohmann::json mean_mse = nlohmann::json::object(), mean_weights = nlohmann::json::object(),
                 selections = nlohmann::json::object(), wins = nlohmann::json::object();
  const auto& st = r.config.strategies;
  for (std::size_t s = 0; s < st.size(); ++s) {
    mean_mse[to_string(st[s])] = r.mean_mse[s];
    if (is_weighted(st[s]))
      mean_weights[to_string(st[s])] = r.mean_weights[s];
    else
      selections[to_string(st[s])] = r.selection_counts[s];
  }
  for (auto a : st) {
    nlohmann::json row = nlohmann::json::object();
    for (auto b : st) {
      const auto o = r.compare(a, b);
      row[to_string(b)] = o == Outcome::Win ? 1.0 : 0.0;
    }
    wins[to_string(a)] = row;
  }
  return nlohmann::json{{"config_digest", config_digest(r.config)},
                        {"dgp", r.config.dgp.name},
                        {"p", r.config.p},
                        {"candidates", r.candidate_labels},
                        {"failures", r.failures},
                        {"per_replication", r.replications},
                        {"aggregates",
                         {{"mean_mse", mean_mse},
                          {"mean_candidate_mse", r.mean_candidate_mse},
                          {"win_rates", wins},
                          {"mean_weights", mean_weights},
                          {"selection_counts", selections}}}};
}

// ---------------------------------------------------------------------------
// Suites (several DGPs x several p) and win-rate tables

struct SuiteConfig {
  ExperimentConfig base;  // dgp and p overwritten per dataset
  std::vector<DgpSpec> dgps = default_dgps();
  std::vector<double> p_values = {0.1, 0.3, 0.5};
};

struct SuiteReport {
  std::vector<ReplicationReport> datasets;  // p-major, then dgp order
};

inline SuiteReport run_suite(const SuiteConfig& suite, int jobs = 1) {
  require(!suite.dgps.empty() && !suite.p_values.empty(), "suite needs at least one dgp and one p");
  SuiteReport out;
  for (double p : suite.p_values) {
    for (const auto& dgp : suite.dgps) {
      ExperimentConfig c = suite.base;
      c.dgp = dgp;
      c.p = p;
      out.datasets.push_back(run_benchmark(c, jobs));
    }
  }
  return out;
}

inline nlohmann::json suite_json(const SuiteReport& s) {
  nlohmann::json datasets = nlohmann::json::array();
  std::string digests;
  for (const auto& d : s.datasets) {
    datasets.push_back(report_json(d));
    digests += config_digest(d.config);
  }
  return nlohmann::json{{"config_digest", hex_digest(digests)}, {"datasets", datasets}};
}

struct WinRateRow {
  double p = 0.0;
  int wins_a = 0, wins_b = 0, ties = 0;
  int total() const { return wins_a + wins_b + ties; }
};

// Per p: how many datasets strategy (or arm) A beats B on average test MSE.
// `mse_a` / `mse_b` map a dataset JSON object to the compared value.
template <typename GetA, typename GetB>
std::vector<WinRateRow> win_rate_table(const nlohmann::json& datasets, GetA mse_a, GetB mse_b) {
  std::map<double, WinRateRow> rows;
  for (const auto& d : datasets) {
    const auto a = mse_a(d), b = mse_b(d);
    if (!a || !b) continue;
    auto& row = rows[d.at("p").get<double>()];
    row.p = d.at("p").get<double>();
    switch (compare_mse(*a, *b)) {
      case Outcome::Win: ++row.wins_a; break;
      case Outcome::Loss: ++row.wins_b; break;
      case Outcome::Tie: ++row.ties; break;
    }
  }
  std::vector<WinRateRow> out;
  for (auto& [p, row] : rows) out.push_back(row);
  return out;
}

inline std::optional<double> strategy_mse(const nlohmann::json& dataset, const std::string& strategy) {
  const auto& m = dataset.at("aggregates").at("mean_mse");
  if (!m.contains(strategy)) return std::nullopt;
  return m.at(strategy).get<double>();
}

inline std::string format_percent(int count, int total) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", total == 0 ? 0.0 : 100.0 * count / total);
  return buf;
}

inline std::string format_p(double p) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2g", p);
  return buf;
}

// CSV laid out like the published tables: one row per p, the share of
// datasets won by each side, and ties separately.
inline std::string win_rate_csv(const std::vector<WinRateRow>& rows, const std::string& name_a,
                                const std::string& name_b) {
  std::ostringstream out;
  out << "p," << name_a << "," << name_b << ",Ties,Datasets\n";
  for (const auto& r : rows)
    out << format_p(r.p) << "," << format_percent(r.wins_a, r.total()) << "," << format_percent(r.wins_b, r.total())
        << "," << format_percent(r.ties, r.total()) << "," << r.total() << "\n";
  return out.str();
}

struct TableSpec {
  std::string file;
  std::string a;
  std::string b;
};

inline const std::vector<TableSpec>& strategy_tables() {
  static const std::vector<TableSpec> tables = {
      {"table1_stack_vs_oracle.csv", "causal_stack", "oracle_select"},
      {"table2_stack_vs_rstack.csv", "causal_stack", "r_stack"},
      {"table3_stack_vs_no_l1.csv", "causal_stack", "causal_stack_no_l1"},
      {"table4_no_l1_vs_rstack.csv", "causal_stack_no_l1", "r_stack"},
      {"stack_vs_unconstrained.csv", "causal_stack", "causal_stack_unconstrained"},
      {"stack_vs_plugin_select.csv", "causal_stack", "plugin_select"},
  };
  return tables;
}

// Mean weight per candidate for every weighted strategy, gnuplot-friendly.
inline std::string weights_tsv(const nlohmann::json& dataset) {
  const auto& mw = dataset.at("aggregates").at("mean_weights");
  const auto labels = dataset.at("candidates").get<std::vector<std::string>>();
  std::vector<std::string> strategies;
  for (auto it = mw.begin(); it != mw.end(); ++it) strategies.push_back(it.key());
  std::ostringstream out;
  out << "# dgp=" << dataset.at("dgp").get<std::string>() << " p=" << format_p(dataset.at("p").get<double>()) << "\n";
  out << "index\tcandidate";
  for (const auto& s : strategies) out << "\t" << s;
  out << "\n";
  for (std::size_t k = 0; k < labels.size(); ++k) {
    out << (k + 1) << "\t" << labels[k];
    for (const auto& s : strategies) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.6f", mw.at(s).at(k).get<double>());
      out << "\t" << buf;
    }
    out << "\n";
  }
  return out.str();
}

// Renders every table a suite JSON supports: filename -> contents. Pure in
// its input, so re-rendering a saved report reproduces the same bytes.
inline std::map<std::string, std::string> render_suite_tables(const nlohmann::json& suite) {
  std::map<std::string, std::string> files;
  const auto& datasets = suite.at("datasets");
  for (const auto& t : strategy_tables()) {
    auto rows = win_rate_table(
        datasets, [&](const nlohmann::json& d) { return strategy_mse(d, t.a); },
        [&](const nlohmann::json& d) { return strategy_mse(d, t.b); });
    if (rows.empty()) continue;
    files[t.file] = win_rate_csv(rows, display_name(t.a), display_name(t.b));
  }
  std::ostringstream summary;
  summary << "dgp,p,strategy,mean_test_mse\n";
  for (const auto& d : datasets) {
    const auto& m = d.at("aggregates").at("mean_mse");
    for (auto it = m.begin(); it != m.end(); ++it) {
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%.10g", it.value().get<double>());
      summary << d.at("dgp").get<std::string>() << "," << format_p(d.at("p").get<double>()) << "," << it.key() << ","
              << buf << "\n";
    }
    const std::string name = "weights_" + d.at("dgp").get<std::string>() + "_p" + format_p(d.at("p").get<double>()) + ".tsv";
    files[name] = weights_tsv(d);
  }
  files["mean_mse.csv"] = summary.str();
  return files;
}

// ---------------------------------------------------------------------------
// Ablations: reduced roster and weak outcome models, paired by seed with the
// full configuration.

struct AblationConfig {
  SuiteConfig suite;
  std::vector<std::string> reduced_labels = {"gbm_t_learner", "rf_t_learner", "cart_s_learner"};
  RegressorSpec weak_mu = RegressorSpec(RegressorKind::Ridge);
};

struct AblationReport {
  SuiteReport full;
  SuiteReport reduced;
  SuiteReport weak_mu;
};

inline AblationReport ablation_suite(const AblationConfig& cfg, int jobs = 1) {
  AblationReport out;
  out.full = run_suite(cfg.suite, jobs);

  SuiteConfig reduced = cfg.suite;
  reduced.base.roster.clear();
  for (const auto& label : cfg.reduced_labels) {
    auto it = std::find_if(cfg.suite.base.roster.begin(), cfg.suite.base.roster.end(),
                           [&](const CateAlgorithmSpec& s) { return s.label == label; });
    if (it == cfg.suite.base.roster.end()) throw ParameterError("reduced roster: unknown candidate '" + label + "'");
    reduced.base.roster.push_back(*it);
  }
  reduced.base.strategies = {Strategy::CausalStack};
  out.reduced = run_suite(reduced, jobs);

  SuiteConfig weak = cfg.suite;
  weak.base.mu_base = cfg.weak_mu;
  weak.base.strategies = {Strategy::CausalStack};
  out.weak_mu = run_suite(weak, jobs);
  return out;
}

inline nlohmann::json ablation_json(const AblationReport& r) {
  const auto full = suite_json(r.full), reduced = suite_json(r.reduced), weak = suite_json(r.weak_mu);
  return nlohmann::json{
      {"config_digest", hex_digest(full.at("config_digest").get<std::string>() +
                                   reduced.at("config_digest").get<std::string>() +
                                   weak.at("config_digest").get<std::string>())},
      {"arms", {{"full", full}, {"reduced_roster", reduced}, {"weak_mu", weak}}}};
}

// Tables comparing two suites dataset-by-dataset on one strategy.
inline std::vector<WinRateRow> paired_arm_table(const nlohmann::json& a, const nlohmann::json& b,
                                                const std::string& strategy) {
  const auto& da = a.at("datasets");
  const auto& db = b.at("datasets");
  require(da.size() == db.size(), "paired arms must cover the same datasets");
  nlohmann::json merged = nlohmann::json::array();
  for (std::size_t i = 0; i < da.size(); ++i) {
    auto a_mse = strategy_mse(da[i], strategy), b_mse = strategy_mse(db[i], strategy);
    if (!a_mse || !b_mse) continue;
    merged.push_back({{"p", da[i].at("p")}, {"a", *a_mse}, {"b", *b_mse}});
  }
  return win_rate_table(
      merged, [](const nlohmann::json& d) { return std::optional<double>(d.at("a").get<double>()); },
      [](const nlohmann::json& d) { return std::optional<double>(d.at("b").get<double>()); });
}

inline std::map<std::string, std::string> render_ablation_tables(const nlohmann::json& ablation) {
  const auto& arms = ablation.at("arms");
  auto files = render_suite_tables(arms.at("full"));
  files["table5_full_vs_reduced_roster.csv"] =
      win_rate_csv(paired_arm_table(arms.at("full"), arms.at("reduced_roster"), "causal_stack"), "All Models",
                   "Reduced Roster");
  files["table6_strong_vs_weak_mu.csv"] = win_rate_csv(
      paired_arm_table(arms.at("full"), arms.at("weak_mu"), "causal_stack"), "Boosting mu", "Linear mu");
  return files;
}

}  // namespace cate_stack
