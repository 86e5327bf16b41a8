#include "jointlong/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "jointlong/config.hpp"
#include "jointlong/io.hpp"

namespace jointlong {

namespace fs = std::filesystem;

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

class Manifest {
 public:
  Manifest(std::string command, const Settings& s, std::uint64_t seed) : command_(std::move(command)) {
    j_["command"] = command_;
    j_["software_version"] = kVersion;
    j_["config_hash"] = "fnv1a64:" + hex64(fnv1a(canonical_config(s.merged)));
    j_["config"] = s.merged;
    j_["seed"] = seed;
    j_["started_at"] = utc_now();
    j_["inputs"] = nlohmann::json::object();
    j_["outputs"] = nlohmann::json::array();
  }
  void input(const std::string& path) { j_["inputs"][path] = file_digest(path); }
  void output(const std::string& path) { j_["outputs"].push_back(path); }
  void write(const std::string& dir) {
    j_["finished_at"] = utc_now();
    write_text_file((fs::path(dir) / "manifest.json").string(), j_.dump(2) + "\n");
  }

 private:
  std::string command_;
  nlohmann::json j_;
};

template <class F>
std::string write_output(const std::string& dir, const std::string& name, Manifest& manifest, F writer) {
  const std::string path = (fs::path(dir) / name).string();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  writer(out);
  manifest.output(path);
  return path;
}

LongDataset load_data(const Settings& s, Manifest& manifest, std::ostream& err) {
  s.require("data.path");
  CsvOptions opts;
  opts.skip_bad_rows = s.skip_bad_rows;
  opts.outcome_range = s.outcome_range;
  IngestReport rep;
  LongDataset data = read_dataset_csv(s.data_path, opts, &rep);
  manifest.input(s.data_path);
  if (rep.skipped_empty) err << "skipped " << rep.skipped_empty << " rows with empty values\n";
  if (rep.skipped_bad) err << "skipped " << rep.skipped_bad << " malformed rows\n";
  if (data.n_subjects() == 0) throw DataError("dataset '" + s.data_path + "' has no observations");
  data.validate(s.spec.outcome_family);
  return data;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + dir + "': " + ec.message());
}

int cmd_simulate(const Settings& s, std::ostream& out, std::ostream& err) {
  ensure_dir(s.output_dir);
  const auto& st = s.study;
  Manifest manifest("simulate", s, st.sim.seed);
  if (s.write_datasets) {
    const fs::path dir = fs::path(s.output_dir) / "datasets";
    ensure_dir(dir.string());
    for (int r = 0; r < st.sim.replications; ++r) {
      const int index = st.first_replication + r;
      std::ostringstream name;
      name << "datasets/replication_" << std::setw(4) << std::setfill('0') << index << ".csv";
      write_output(s.output_dir, name.str(), manifest,
                   [&](std::ostream& o) { write_dataset_csv(o, generate(st.sim, index)); });
    }
  }
  int code = kExitOk;
  if (s.run_study) {
    StudyReport report = run_study(st);
    write_output(s.output_dir, "study_rows.csv", manifest, [&](std::ostream& o) { write_study_rows_csv(o, report); });
    write_output(s.output_dir, "study_curves.csv", manifest,
                 [&](std::ostream& o) { write_study_curves_csv(o, report); });
    write_output(s.output_dir, "study_summary.csv", manifest,
                 [&](std::ostream& o) { write_study_summary_csv(o, report); });
    write_output(s.output_dir, "study_hyper.csv", manifest,
                 [&](std::ostream& o) { write_study_hyper_csv(o, report); });
    int unconverged = 0;
    for (const auto& r : report.rows)
      if (!r.failed && !r.converged) ++unconverged;
    out << "replications: " << st.sim.replications << "  fits: " << report.rows.size()
        << "  failures: " << report.failures << "  unconverged: " << unconverged << "\n";
    for (const auto& g : report.aggregates)
      out << to_string(g.model) << " age " << g.age << "  truth " << g.truth << "  mean " << g.mean << "\n";
    if (s.strict && (report.failures > 0 || unconverged > 0)) code = kExitNumerical;
  }
  manifest.write(s.output_dir);
  if (code != kExitOk) err << "some replications failed or did not converge\n";
  return code;
}

int cmd_fit(const Settings& s, std::ostream& out, std::ostream& err) {
  ensure_dir(s.output_dir);
  Manifest manifest("fit", s, s.fit.seed);
  const LongDataset data = load_data(s, manifest, err);
  const FitResult f = fit(s.spec, data, s.fit);
  const std::string table = fit_report_table(f);
  write_output(s.output_dir, "fit_result.json", manifest, [&](std::ostream& o) { o << fit_to_json(f); });
  write_output(s.output_dir, "fit_report.txt", manifest, [&](std::ostream& o) { o << table; });
  write_output(s.output_dir, "fit_summary.csv", manifest, [&](std::ostream& o) { write_fit_summary_csv(o, f); });
  manifest.write(s.output_dir);
  out << table;
  if (s.strict && !f.reliable()) {
    err << "fit did not converge: " << f.message << "\n";
    return kExitNumerical;
  }
  return kExitOk;
}

int cmd_assoc(const Settings& s, std::ostream& out, std::ostream& err) {
  ensure_dir(s.output_dir);
  s.require("assoc.a");
  s.require("assoc.grid_s");
  Manifest manifest("assoc", s, s.assoc.seed);
  std::optional<LongDataset> data;
  FitResult f;
  if (!s.fit_path.empty()) {
    f = fit_from_json(read_text_file(s.fit_path));
    manifest.input(s.fit_path);
    if (!s.data_path.empty()) {
      data = load_data(s, manifest, err);
      std::vector<std::string> ids;
      for (const auto& sub : data->subjects) ids.push_back(sub.id);
      if (ids != f.subject_ids) throw DataError("dataset subjects do not match the fit file");
    } else if (s.assoc.resamples > 0) {
      err << "no dataset given: resampled fixed effects are held at the fitted mode\n";
    }
  } else {
    data = load_data(s, manifest, err);
    f = fit(s.spec, *data, s.fit);
    write_output(s.output_dir, "fit_result.json", manifest, [&](std::ostream& o) { o << fit_to_json(f); });
  }
  const auto grid_t = s.grid_t.empty() ? s.grid_s : s.grid_t;
  const AssocSurface surface = assoc_surface(f, s.grid_s, grid_t, s.assoc, data ? &*data : nullptr);
  write_output(s.output_dir, "assoc_surface.csv", manifest, [&](std::ostream& o) { write_surface_csv(o, surface); });
  write_output(s.output_dir, "assoc_curve.csv", manifest, [&](std::ostream& o) { write_curve_csv(o, surface); });
  write_output(s.output_dir, "assoc_time_average.csv", manifest,
               [&](std::ostream& o) { write_time_average_csv(o, surface); });
  manifest.write(s.output_dir);
  out << "surface cells: " << surface.cells.size() << "  diagonal: " << surface.diagonal.size()
      << "  time-averaged beta_joint: " << surface.time_average.beta_joint << "\n";
  if (s.strict && !f.reliable()) {
    err << "fit did not converge\n";
    return kExitNumerical;
  }
  return kExitOk;
}

int cmd_evaluate(const Settings& s, std::ostream& out, std::ostream& err) {
  ensure_dir(s.output_dir);
  Manifest manifest("evaluate", s, s.eval_seed);
  const LongDataset data = load_data(s, manifest, err);
  std::vector<EvaluationRow> rows;
  bool all_reliable = true;
  for (ModelKind m : s.eval_models) {
    ModelSpec spec = s.spec;
    spec.kind = m;
    FitControl control = s.fit;
    control.diagnostic_draws = 0;
    FitResult f = fit(spec, data, control);
    EvaluationRow row;
    row.model = m;
    row.converged = f.reliable();
    all_reliable = all_reliable && row.converged;
    row.diagnostics = compute_diagnostics(f, f.spec, data, s.eval_draws, s.eval_seed);
    rows.push_back(std::move(row));
  }
  write_output(s.output_dir, "evaluation.csv", manifest, [&](std::ostream& o) { write_evaluation_csv(o, rows); });
  write_output(s.output_dir, "evaluation_pointwise.csv", manifest,
               [&](std::ostream& o) { write_pointwise_csv(o, rows); });
  manifest.write(s.output_dir);
  write_evaluation_csv(out, rows);
  if (s.strict && !all_reliable) {
    err << "at least one fit did not converge\n";
    return kExitNumerical;
  }
  return kExitOk;
}

std::optional<int> env_jobs() {
  const char* v = std::getenv(kJobsEnv);
  if (!v || !*v) return std::nullopt;
  try {
    std::size_t pos = 0;
    const int n = std::stoi(v, &pos);
    if (pos != std::string(v).size() || n < 1) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw ConfigError(std::string("environment variable ") + kJobsEnv + " must be a positive integer");
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Joint mixed and joint scaled models for endogenous longitudinal covariates", "jointlong"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config_path, out_dir, seed;
  std::vector<std::string> sets;
  bool strict = false;
  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "YAML configuration file");
    sub->add_option("--set", sets, "Override a config key (key=value), repeatable");
    sub->add_option("-o,--out", out_dir, "Output directory");
    sub->add_option("--seed", seed, "Random seed");
    sub->add_flag("--strict", strict, "Exit with code 4 when a fit does not converge");
  };
  std::map<std::string, std::string> flag_values;
  auto flag = [&](CLI::App* sub, const std::string& name, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(
        name, [&flag_values, key](const std::string& v) { flag_values[key] = v; }, help);
  };

  auto* sim = app.add_subcommand("simulate", "Generate replication datasets and run the simulation study");
  common(sim);
  flag(sim, "--generator", "simulate.generator", "jmm or jsm");
  flag(sim, "-n,--subjects", "simulate.n_subjects", "Subjects per dataset");
  flag(sim, "-B,--replications", "simulate.replications", "Number of replications");
  flag(sim, "-j,--jobs", "run.jobs", "Parallel replications");
  flag(sim, "--fit-models", "study.fit_models", "Models fitted per replication, e.g. jmm,jsm");
  bool no_study = false;
  sim->add_flag("--no-study", no_study, "Only write datasets");

  auto* fitc = app.add_subcommand("fit", "Fit a joint model to a long-format dataset");
  common(fitc);
  flag(fitc, "-d,--data", "data.path", "Dataset CSV");
  flag(fitc, "-m,--model", "model.kind", "jmm or jsm");
  flag(fitc, "--family", "model.family", "beta or gaussian");
  flag(fitc, "--range", "data.outcome_range", "Raw outcome range lo,hi");
  flag(fitc, "--diagnostic-draws", "fit.diagnostic_draws", "Posterior draws for DIC/WAIC (0 = none)");
  bool skip_bad = false;
  fitc->add_flag("--skip-bad-rows", skip_bad, "Skip malformed CSV rows instead of failing");

  auto* assoc = app.add_subcommand("assoc", "Association curves and lag surface");
  common(assoc);
  flag(assoc, "-f,--fit", "assoc.fit_path", "Fit result JSON (otherwise the data are fitted first)");
  flag(assoc, "-d,--data", "data.path", "Dataset CSV");
  flag(assoc, "-m,--model", "model.kind", "jmm or jsm");
  flag(assoc, "--family", "model.family", "beta or gaussian");
  flag(assoc, "--range", "data.outcome_range", "Raw outcome range lo,hi");
  flag(assoc, "-a", "assoc.a", "Reference covariate value");
  flag(assoc, "--delta", "assoc.delta", "Covariate increment");
  flag(assoc, "--grid-s", "assoc.grid_s", "Covariate times (list or lo:hi:step)");
  flag(assoc, "--grid-t", "assoc.grid_t", "Outcome times (defaults to grid-s)");
  flag(assoc, "-M,--mc-samples", "assoc.mc_samples", "Monte Carlo draws");
  flag(assoc, "-R,--resamples", "assoc.resamples", "Hyperparameter resamples (0 = point estimate)");
  bool no_noise = false;
  assoc->add_flag("--no-noise", no_noise, "Condition on the latent covariate value");
  assoc->add_flag("--skip-bad-rows", skip_bad, "Skip malformed CSV rows instead of failing");

  auto* eval = app.add_subcommand("evaluate", "Marginal likelihood, DIC and WAIC per model");
  common(eval);
  flag(eval, "-d,--data", "data.path", "Dataset CSV");
  flag(eval, "--models", "evaluate.models", "Models to compare, e.g. jmm,jsm");
  flag(eval, "--family", "model.family", "beta or gaussian");
  flag(eval, "--range", "data.outcome_range", "Raw outcome range lo,hi");
  flag(eval, "--draws", "evaluate.draws", "Posterior draws");
  eval->add_flag("--skip-bad-rows", skip_bad, "Skip malformed CSV rows instead of failing");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    FlatConfig file = config_path.empty() ? FlatConfig{} : load_yaml_config(config_path);
    FlatConfig overrides;
    for (const auto& a : sets) {
      auto [k, v] = parse_assignment(a);
      overrides[k] = v;
    }
    for (const auto& [k, v] : flag_values) overrides[k] = v;
    std::string command;
    for (auto* sub : {sim, fitc, assoc, eval})
      if (sub->parsed()) command = sub->get_name();
    if (!out_dir.empty()) overrides["run.output_dir"] = out_dir;
    if (strict) overrides["run.strict"] = "true";
    if (skip_bad) overrides["data.skip_bad_rows"] = "true";
    if (no_study) overrides["simulate.run_study"] = "false";
    if (no_noise) overrides["assoc.include_noise"] = "false";
    if (!seed.empty()) {
      if (command == "simulate") overrides["simulate.seed"] = seed;
      else if (command == "assoc") overrides["assoc.seed"] = seed;
      else overrides["fit.seed"] = seed;
    }
    const Settings s = resolve_settings(file, overrides, env_jobs());
    if (command == "simulate") return cmd_simulate(s, out, err);
    if (command == "fit") return cmd_fit(s, out, err);
    if (command == "assoc") return cmd_assoc(s, out, err);
    return cmd_evaluate(s, out, err);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace jointlong
