#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cate_stack/benchmark.hpp"

namespace cate_stack::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config files (JSON). Every command accepts the same key set; unknown keys
// are rejected so typos surface as config errors.

inline const std::set<std::string>& config_keys() {
  static const std::set<std::string> keys = {
      "dgp",         "dgps",         "n",          "alpha",          "n_test",   "p",
      "p_values",    "design",       "replications", "roster",       "strategies", "mu_base",
      "mu_fit_mode", "r_stack_regime", "truncation_bound", "master_seed", "solver", "reduced_roster",
      "weak_mu",     "data",         "sidecar",    "regime",         "refit_full"};
  return keys;
}

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParameterError("'" + path + "' is not valid JSON: " + e.what());
  }
}

template <typename T>
T get_field(const json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParameterError("config key '" + key + "': " + e.what());
  }
}

inline DgpSpec parse_dgp(const json& j) {
  if (j.is_string()) return find_dgp(j.get<std::string>());
  try {
    return j.get<DgpSpec>();
  } catch (const json::exception& e) {
    throw ParameterError(std::string("dgp: ") + e.what());
  }
}

inline std::vector<CateAlgorithmSpec> parse_roster(const json& j) {
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    if (name == "default") return default_roster();
    if (name == "bounded") return bounded_roster();
    throw ParameterError("unknown roster '" + name + "' (expected default, bounded or a list)");
  }
  if (!j.is_array()) throw ParameterError("roster must be a name or a list of algorithm specs");
  std::vector<CateAlgorithmSpec> out;
  try {
    for (const auto& s : j) out.push_back(s.get<CateAlgorithmSpec>());
  } catch (const json::exception& e) {
    throw ParameterError(std::string("roster: ") + e.what());
  }
  return out;
}

inline RegressorSpec parse_regressor(const json& j) {
  if (j.is_string()) return RegressorSpec(parse_regressor_kind(j.get<std::string>()));
  try {
    return j.get<RegressorSpec>();
  } catch (const json::exception& e) {
    throw ParameterError(std::string("regressor spec: ") + e.what());
  }
}

inline ExperimentConfig parse_experiment(const json& j) {
  if (!j.is_object()) throw ParameterError("config must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!config_keys().count(key)) throw ParameterError("unknown config key '" + key + "'");
  ExperimentConfig c;
  if (j.contains("dgp")) c.dgp = parse_dgp(j.at("dgp"));
  if (j.contains("n")) c.n = get_field<Eigen::Index>(j, "n");
  if (j.contains("alpha")) c.alpha = get_field<double>(j, "alpha");
  if (j.contains("n_test")) c.n_test = get_field<Eigen::Index>(j, "n_test");
  if (j.contains("p")) c.p = get_field<double>(j, "p");
  if (j.contains("design")) c.design = parse_design(get_field<std::string>(j, "design"));
  if (j.contains("replications")) c.replications = get_field<int>(j, "replications");
  if (j.contains("roster")) c.roster = parse_roster(j.at("roster"));
  if (j.contains("strategies")) {
    c.strategies.clear();
    for (const auto& s : get_field<std::vector<std::string>>(j, "strategies")) c.strategies.push_back(parse_strategy(s));
  }
  if (j.contains("mu_base")) c.mu_base = parse_regressor(j.at("mu_base"));
  if (j.contains("mu_fit_mode")) {
    const auto mode = get_field<std::string>(j, "mu_fit_mode");
    c.mu_fit_auto = mode == "auto";
    if (!c.mu_fit_auto) c.mu_fit_mode = parse_mu_fit_mode(mode);
  }
  if (j.contains("r_stack_regime")) c.r_stack_regime = parse_regime(get_field<std::string>(j, "r_stack_regime"));
  if (j.contains("truncation_bound") && !j.at("truncation_bound").is_null())
    c.truncation_bound = get_field<double>(j, "truncation_bound");
  if (j.contains("master_seed")) c.master_seed = get_field<std::uint64_t>(j, "master_seed");
  if (j.contains("solver")) {
    const auto& s = j.at("solver");
    c.solver.tol = s.value("tol", c.solver.tol);
    c.solver.max_iter = s.value("max_iter", c.solver.max_iter);
  }
  return c;
}

inline SuiteConfig parse_suite(const json& j) {
  SuiteConfig s;
  s.base = parse_experiment(j);
  if (j.contains("dgps")) {
    s.dgps.clear();
    for (const auto& d : j.at("dgps")) s.dgps.push_back(parse_dgp(d));
  } else if (j.contains("dgp")) {
    s.dgps = {s.base.dgp};
  }
  if (j.contains("p_values"))
    s.p_values = get_field<std::vector<double>>(j, "p_values");
  else if (j.contains("p"))
    s.p_values = {s.base.p};
  return s;
}

inline AblationConfig parse_ablation(const json& j) {
  AblationConfig a;
  a.suite = parse_suite(j);
  if (j.contains("reduced_roster")) a.reduced_labels = get_field<std::vector<std::string>>(j, "reduced_roster");
  if (j.contains("weak_mu")) a.weak_mu = parse_regressor(j.at("weak_mu"));
  return a;
}

// ---------------------------------------------------------------------------
// Output helpers

inline fs::path prepare_output_dir(const std::string& dir) {
  if (dir.empty()) throw ParameterError("--out is required");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ParameterError("cannot create output directory '" + dir + "'");
  const fs::path probe = fs::path(dir) / ".write_probe";
  {
    std::ofstream out(probe);
    if (!out) throw ParameterError("output directory '" + dir + "' is not writable");
  }
  fs::remove(probe, ec);
  return dir;
}

inline void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParameterError("cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw ParameterError("write failed for '" + path.string() + "'");
}

inline void write_files(const fs::path& dir, const std::map<std::string, std::string>& files) {
  for (const auto& [name, content] : files) write_text(dir / name, content);
}

struct Options {
  std::string config;
  std::string out;
  std::string data;
  std::string input;
  std::optional<std::uint64_t> seed;
  int jobs = 0;
  std::string regime;
  bool refit_full = false;
  std::optional<double> p;
  std::optional<int> reps;
  int verbosity = 0;
};

inline json read_config(const Options& o) { return o.config.empty() ? json::object() : load_json_file(o.config); }

inline void apply_overrides(ExperimentConfig& c, const Options& o) {
  if (o.seed) c.master_seed = *o.seed;
  if (o.p) c.p = *o.p;
  if (o.reps) c.replications = *o.reps;
}

inline void apply_overrides(SuiteConfig& s, const Options& o) {
  apply_overrides(s.base, o);
  if (o.p) s.p_values = {*o.p};
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_simulate(const Options& o, std::ostream& out) {
  auto c = parse_experiment(read_config(o));
  apply_overrides(c, o);
  const auto dir = prepare_output_dir(o.out);
  const auto draw = generate_dataset(c.dgp, c.n, c.p, c.design, c.master_seed);
  write_csv(draw.data, (dir / "dataset.csv").string());
  std::ostringstream truth;
  truth << "y1,y0,tau,cate\n";
  for (Eigen::Index i = 0; i < draw.data.rows(); ++i)
    truth << detail::format_double(draw.truth.y1[i]) << "," << detail::format_double(draw.truth.y0[i]) << ","
          << detail::format_double(draw.truth.tau[i]) << "," << detail::format_double(draw.cate[i]) << "\n";
  write_text(dir / "truth.csv", truth.str());
  write_sidecar((dir / "dataset.json").string(), c.p, c.design);
  out << "simulated " << draw.data.rows() << " units from '" << c.dgp.name << "' into " << dir.string() << "\n";
  return 0;
}

// Maps a stage failure to a StageError, preserving whether it was a user error.
template <typename Fn>
auto staged(const char* name, Fn&& fn) -> decltype(fn()) {
  return cate_stack::detail::stage(name, std::forward<Fn>(fn));
}

inline int cmd_fit(const Options& o, std::ostream& out, std::ostream& log) {
  const json cfg = read_config(o);
  auto c = parse_experiment(cfg);
  if (o.seed) c.master_seed = *o.seed;

  std::string data = o.data;
  if (data.empty() && cfg.contains("data")) data = get_field<std::string>(cfg, "data");
  if (data.empty()) throw ParameterError("fit needs a dataset (--data or config key 'data')");
  std::string regime_name = o.regime;
  if (regime_name.empty()) regime_name = cfg.value("regime", std::string("simplex"));
  const bool r_stack = regime_name == "r-stack" || regime_name == "r_stack";
  const Regime regime = r_stack ? c.r_stack_regime : parse_regime(regime_name);
  const bool refit_full = o.refit_full || cfg.value("refit_full", false);
  const auto dir = prepare_output_dir(o.out);

  const auto ds = staged("load", [&] {
    DesignInfo info;
    std::string sidecar = cfg.value("sidecar", std::string());
    if (sidecar.empty()) {
      const auto guess = fs::path(data).replace_extension(".json");
      if (fs::exists(guess)) sidecar = guess.string();
    }
    if (!sidecar.empty()) info = load_sidecar(sidecar);
    if (o.p) info.p = *o.p;
    return load_csv(data, info);
  });
  const double p = ds.treat_prob();
  const auto sp = staged("split", [&] { return split(ds, c.alpha, derive_seed(c.master_seed, 2)); });
  const auto train = ds.view(sp.train_indices);
  const auto avg = ds.view(sp.avg_indices);
  const RegressorSpec mu_spec = c.mu_base.with_seed(derive_seed(c.master_seed, 3));

  const auto mu = staged("outcome_models", [&] {
    const MuFitMode mode =
        c.mu_fit_auto ? choose_mu_fit_mode(train, mu_spec, 5, derive_seed(c.master_seed, 7)) : c.mu_fit_mode;
    return fit_outcome_models(train, mode, mu_spec);
  });
  LibraryOptions lib;
  lib.truncation_bound = c.truncation_bound;
  lib.context_seed = derive_seed(c.master_seed, 4);
  const auto models = staged("candidates", [&] { return fit_candidate_library(train, c.roster, p, lib); });
  const Vector pseudo = staged("pseudo_outcomes", [&] { return pseudo_outcomes(avg, mu, p); });
  const Matrix T_avg = candidate_matrix(models, avg.covariates);
  const auto plugin = make_plugin_problem(T_avg, pseudo);

  json equivalence = nullptr;
  const auto weights = staged("solve", [&] {
    if (!r_stack) return solve_stacking(plugin, regime, c.solver);
    const auto mu_all = fit_regressor(mu_spec.with_seed(derive_seed(c.master_seed, 6)), train.covariates, train.outcomes);
    const Vector mu_avg = mu_all->predict(avg.covariates);
    const auto problem = build_r_stacking_problem(avg, T_avg, mu_avg, p);
    if (std::abs(p - 0.5) < 1e-12) {
      // With a shared outcome model and p = 1/2 the plug-in loss is four times
      // the R-loss, so both simplex solutions must coincide.
      const OutcomeModels shared(MuFitMode::PerArm, mu_all, mu_all, std::nullopt);
      const auto a = solve_stacking(make_plugin_problem(T_avg, pseudo_outcomes(avg, shared, p)), Regime::Simplex, c.solver);
      const auto b = solve_stacking(problem, Regime::Simplex, c.solver);
      const double diff = (a.weights - b.weights).cwiseAbs().maxCoeff();
      const double ratio = a.loss != 0.0 ? b.loss / a.loss : 0.0;
      equivalence = {{"max_weight_difference", diff}, {"loss_ratio", ratio}, {"passed", diff <= 1e-6}};
      log << "r-stack equivalence check (p = 0.5, shared mu): max |w_plugin - w_r| = " << diff
          << ", R-loss / plug-in loss = " << ratio << (diff <= 1e-6 ? " [ok]" : " [MISMATCH]") << "\n";
    }
    return solve_stacking(problem, regime, c.solver);
  });

  std::vector<CateModelPtr> final_models = models;
  if (refit_full) {
    final_models = staged("refit_full", [&] { return fit_candidate_library(ds.full_view(), c.roster, p, lib); });
    log << "refit-full: candidates refit on all " << ds.rows() << " rows; weights from the split fit\n";
  }

  json losses = json::object(), named = json::object();
  for (std::size_t k = 0; k < models.size(); ++k) {
    Vector e = Vector::Zero(static_cast<Eigen::Index>(models.size()));
    e[static_cast<Eigen::Index>(k)] = 1.0;
    losses[models[k]->label()] = plugin.loss(e);
    named[models[k]->label()] = weights.weights[static_cast<Eigen::Index>(k)];
  }
  json report = {{"regime", r_stack ? "r-stack" : to_string(regime)},
                 {"solution", weights},
                 {"weights", named},
                 {"plugin_loss", plugin.loss(weights.weights)},
                 {"candidate_plugin_losses", losses},
                 {"mu_fit_mode", to_string(mu.mode())},
                 {"p", p},
                 {"design", to_string(ds.design())},
                 {"n_train", sp.train_indices.size()},
                 {"n_avg", sp.avg_indices.size()},
                 {"refit_full", refit_full},
                 {"master_seed", c.master_seed}};
  if (!equivalence.is_null()) report["equivalence_check"] = equivalence;
  write_text(dir / "fit.json", report.dump(2) + "\n");

  const Matrix T_all = candidate_matrix(final_models, ds.covariates());
  const Vector stacked = T_all * weights.weights;
  std::ostringstream pred;
  pred << "row";
  for (const auto& m : final_models) pred << "," << m->label();
  pred << ",stacked\n";
  for (Eigen::Index i = 0; i < T_all.rows(); ++i) {
    pred << i;
    for (Eigen::Index k = 0; k < T_all.cols(); ++k) pred << "," << detail::format_double(T_all(i, k));
    pred << "," << detail::format_double(stacked[i]) << "\n";
  }
  write_text(dir / "predictions.csv", pred.str());
  std::ostringstream ps;
  ps << "index,value\n";
  for (Eigen::Index i = 0; i < pseudo.size(); ++i)
    ps << sp.avg_indices[static_cast<std::size_t>(i)] << "," << detail::format_double(pseudo[i]) << "\n";
  write_text(dir / "pseudo_outcomes.csv", ps.str());

  out << "fit " << models.size() << " candidates; " << (r_stack ? "r-stack" : to_string(regime))
      << " loss " << weights.loss << ", KKT residual " << weights.kkt_residual << "\n";
  for (std::size_t k = 0; k < models.size(); ++k)
    out << "  " << models[k]->label() << "  w = " << weights.weights[static_cast<Eigen::Index>(k)] << "\n";
  return 0;
}

inline void log_suite(const SuiteReport& s, std::ostream& log, int verbosity) {
  for (const auto& d : s.datasets) {
    double seconds = 0.0;
    for (const auto& r : d.replications) seconds += r.seconds;
    log << d.config.dgp.name << " p=" << format_p(d.config.p) << ":";
    for (std::size_t i = 0; i < d.config.strategies.size(); ++i)
      log << " " << to_string(d.config.strategies[i]) << "=" << d.mean_mse[i];
    if (d.failures) log << " (" << d.failures << " failed)";
    if (verbosity > 0) log << " [" << seconds << " s]";
    log << "\n";
  }
}

inline int cmd_benchmark(const Options& o, std::ostream& out, std::ostream& log) {
  auto s = parse_suite(read_config(o));
  apply_overrides(s, o);
  const auto dir = prepare_output_dir(o.out);
  const auto report = run_suite(s, resolve_jobs(o.jobs));
  log_suite(report, log, o.verbosity);
  const json j = suite_json(report);
  write_text(dir / "report.json", j.dump(2) + "\n");
  write_files(dir, render_suite_tables(j));
  out << "wrote " << (dir / "report.json").string() << " and tables\n";
  return 0;
}

inline int cmd_ablate(const Options& o, std::ostream& out, std::ostream& log) {
  auto a = parse_ablation(read_config(o));
  apply_overrides(a.suite, o);
  const auto dir = prepare_output_dir(o.out);
  const auto report = ablation_suite(a, resolve_jobs(o.jobs));
  log_suite(report.full, log, o.verbosity);
  const json j = ablation_json(report);
  write_text(dir / "ablation.json", j.dump(2) + "\n");
  write_files(dir, render_ablation_tables(j));
  out << "wrote " << (dir / "ablation.json").string() << " and tables\n";
  return 0;
}

inline int cmd_report(const Options& o, std::ostream& out) {
  const std::string input = !o.input.empty() ? o.input : o.config;
  if (input.empty()) throw ParameterError("report needs a report JSON (positional argument or --config)");
  const json j = load_json_file(input);
  const auto dir = prepare_output_dir(o.out);
  std::map<std::string, std::string> files;
  try {
    files = j.contains("arms") ? render_ablation_tables(j) : render_suite_tables(j);
  } catch (const json::exception& e) {
    throw FormatError("'" + input + "' is not a benchmark report: " + e.what());
  }
  write_files(dir, files);
  out << "rendered " << files.size() << " files into " << dir.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

// Exit codes: 0 success, 1 internal or convergence failure, 2 user/config error.
inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"CATE estimation by causal stacking"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON config file");
    sub->add_option("--out", o.out, "Output directory")->required();
    sub->add_option("--seed", o.seed, "Override master_seed");
    sub->add_flag("-v,--verbose", o.verbosity, "More log output");
  };
  auto* simulate = app.add_subcommand("simulate", "Draw a synthetic dataset with ground truth");
  common(simulate);
  simulate->add_option("--p", o.p, "Treatment probability");

  auto* fit = app.add_subcommand("fit", "Fit the candidate library and stacking weights on a dataset CSV");
  common(fit);
  fit->add_option("--data", o.data, "Dataset CSV (columns y, z and covariates)");
  fit->add_option("--regime", o.regime, "simplex | nonneg | unconstrained | r-stack")
      ->check(CLI::IsMember({"simplex", "nonneg", "nonneg_sum_one", "unconstrained", "r-stack", "r_stack"}));
  fit->add_flag("--refit-full", o.refit_full, "Refit candidates on all rows after choosing weights");
  fit->add_option("--p", o.p, "Treatment probability (overrides sidecar / inferred value)");

  auto* bench = app.add_subcommand("benchmark", "Run the synthetic replication suite");
  common(bench);
  auto* ablate = app.add_subcommand("ablate", "Run the paired ablation comparisons");
  common(ablate);
  for (auto* sub : {bench, ablate}) {
    sub->add_option("--jobs", o.jobs, "Worker threads (default: CATE_STACK_JOBS or 1)")->check(CLI::PositiveNumber);
    sub->add_option("--p", o.p, "Run a single treatment probability");
    sub->add_option("--reps", o.reps, "Replications per dataset")->check(CLI::PositiveNumber);
  }

  auto* report = app.add_subcommand("report", "Render tables from an existing report JSON");
  report->add_option("input", o.input, "report.json or ablation.json");
  report->add_option("--config", o.config, "Same as the positional input");
  report->add_option("--out", o.out, "Output directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(o, out);
    if (fit->parsed()) return cmd_fit(o, out, err);
    if (bench->parsed()) return cmd_benchmark(o, out, err);
    if (ablate->parsed()) return cmd_ablate(o, out, err);
    if (report->parsed()) return cmd_report(o, out);
  } catch (const ParameterError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const StageError& e) {
    err << "error: " << e.what() << "\n";
    return e.user_error() ? 2 : 1;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

inline int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(std::move(args));
}

}  // namespace cate_stack::cli
