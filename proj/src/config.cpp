#include "jointlong/config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <cmath>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace jointlong {

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "model.kind", "model.family", "model.link", "model.cov_fixed", "model.cov_random", "model.out_fixed",
      "model.out_random",
      "priors.beta_precision", "priors.gamma_mean", "priors.gamma_precision", "priors.eps_precision_shape",
      "priors.eps_precision_rate", "priors.out_precision_shape", "priors.out_precision_rate", "priors.phi_shape",
      "priors.phi_rate", "priors.wishart_df", "priors.wishart_scale_diag", "priors.informative",
      "fit.seed", "fit.grad_tol", "fit.max_iter", "fit.fd_step", "fit.hessian_step", "fit.summary_draws",
      "fit.inner_tol", "fit.inner_max_iter", "fit.diagnostic_draws",
      "data.path", "data.outcome_range", "data.outcome_eps", "data.skip_bad_rows",
      "assoc.fit_path", "assoc.a", "assoc.delta", "assoc.grid_s", "assoc.grid_t", "assoc.mc_samples",
      "assoc.resamples", "assoc.seed", "assoc.include_noise", "assoc.ci_level",
      "simulate.generator", "simulate.outcome_family", "simulate.n_subjects", "simulate.max_visits",
      "simulate.time_range", "simulate.beta_v", "simulate.beta_y", "simulate.D", "simulate.sigma2_eps",
      "simulate.phi", "simulate.out_sigma2", "simulate.gamma", "simulate.center_copy", "simulate.miss_outcome",
      "simulate.miss_cov", "simulate.replications", "simulate.seed", "simulate.noiseless",
      "simulate.write_datasets", "simulate.run_study",
      "study.fit_models", "study.ages", "study.a", "study.mc_samples", "study.truth_mc_samples",
      "study.diagnostic_draws", "study.informative_priors", "study.first_replication",
      "evaluate.models", "evaluate.draws", "evaluate.seed",
      "run.jobs", "run.output_dir", "run.strict"};
  return keys;
}

const std::string kCovariatePrefix = "assoc.covariates.";

void flatten(const YAML::Node& node, const std::string& prefix, FlatConfig& out) {
  if (node.IsMap()) {
    for (const auto& kv : node) {
      const std::string key = kv.first.as<std::string>();
      flatten(kv.second, prefix.empty() ? key : prefix + "." + key, out);
    }
  } else if (node.IsSequence()) {
    std::string joined;
    std::function<void(const YAML::Node&)> walk = [&](const YAML::Node& n) {
      if (n.IsSequence()) {
        for (const auto& e : n) walk(e);
      } else if (n.IsScalar()) {
        if (!joined.empty()) joined += ',';
        joined += n.as<std::string>();
      } else {
        throw ConfigError("config key '" + prefix + "' holds an unsupported nested value");
      }
    };
    walk(node);
    out[prefix] = joined;
  } else if (node.IsScalar()) {
    out[prefix] = node.as<std::string>();
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  double v = 0.0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size() || !std::isfinite(v))
    throw ConfigError("config key '" + key + "': expected a number, got '" + text + "'");
  return v;
}

long long to_integer(const std::string& key, const std::string& text) {
  const double v = to_double(key, text);
  if (v != std::floor(v)) throw ConfigError("config key '" + key + "': expected an integer, got '" + text + "'");
  return static_cast<long long>(v);
}

std::uint64_t to_seed(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  std::uint64_t v = 0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size())
    throw ConfigError("config key '" + key + "': expected a non-negative integer seed, got '" + text + "'");
  return v;
}

bool to_bool(const std::string& key, const std::string& text) {
  std::string t = trim(text);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "true" || t == "yes" || t == "on" || t == "1") return true;
  if (t == "false" || t == "no" || t == "off" || t == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + text + "'");
}

std::vector<ModelKind> to_models(const std::string& key, const std::string& text) {
  std::vector<ModelKind> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(parse_model_kind(trim(item)));
    } catch (const ConfigError& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }
  if (out.empty()) throw ConfigError("config key '" + key + "': expected at least one model");
  return out;
}

class Reader {
 public:
  explicit Reader(const FlatConfig& m) : m_(m) {}

  const std::string* find(const std::string& key) const {
    auto it = m_.find(key);
    return it == m_.end() ? nullptr : &it->second;
  }
  template <class T, class F>
  void get(const std::string& key, T& target, F convert) const {
    if (auto v = find(key)) target = convert(key, *v);
  }
  void number(const std::string& key, double& target) const { get(key, target, to_double); }
  void integer(const std::string& key, int& target) const {
    get(key, target, [](const std::string& k, const std::string& t) { return static_cast<int>(to_integer(k, t)); });
  }
  void boolean(const std::string& key, bool& target) const { get(key, target, to_bool); }
  void seed(const std::string& key, std::uint64_t& target) const { get(key, target, to_seed); }
  void text(const std::string& key, std::string& target) const {
    if (auto v = find(key)) target = trim(*v);
  }
  void list(const std::string& key, std::vector<double>& target) const { get(key, target, parse_number_list); }

 private:
  const FlatConfig& m_;
};

}  // namespace

FlatConfig parse_yaml_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config is not valid YAML: ") + e.what());
  }
  FlatConfig out;
  if (root.IsNull()) return out;
  if (!root.IsMap()) throw ConfigError("config must be a mapping of sections");
  flatten(root, "", out);
  return out;
}

FlatConfig load_yaml_config(const std::string& path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path);
  } catch (const YAML::BadFile&) {
    throw ConfigError("cannot open config file '" + path + "'");
  } catch (const YAML::Exception& e) {
    throw ConfigError("config '" + path + "' is not valid YAML: " + e.what());
  }
  FlatConfig out;
  if (root.IsNull()) return out;
  if (!root.IsMap()) throw ConfigError("config must be a mapping of sections");
  flatten(root, "", out);
  return out;
}

std::pair<std::string, std::string> parse_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("expected key=value, got '" + text + "'");
  return {trim(text.substr(0, eq)), trim(text.substr(eq + 1))};
}

bool is_known_key(const std::string& key) {
  return known_keys().count(key) > 0 || (key.rfind(kCovariatePrefix, 0) == 0 && key.size() > kCovariatePrefix.size());
}

std::vector<double> parse_number_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  const std::string t = trim(text);
  if (t.empty()) return out;
  if (t.find(':') != std::string::npos && t.find(',') == std::string::npos) {
    std::vector<double> parts;
    std::stringstream ss(t);
    std::string item;
    while (std::getline(ss, item, ':')) parts.push_back(to_double(key, item));
    if (parts.size() != 3 || !(parts[2] > 0.0) || parts[1] < parts[0])
      throw ConfigError("config key '" + key + "': range must be lo:hi:step with step > 0");
    const auto n = static_cast<long long>(std::floor((parts[1] - parts[0]) / parts[2] + 1e-9));
    for (long long k = 0; k <= n; ++k) out.push_back(parts[0] + static_cast<double>(k) * parts[2]);
    return out;
  }
  std::stringstream ss(t);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(key, item));
  return out;
}

std::string canonical_config(const FlatConfig& merged) {
  std::string out;
  for (const auto& [k, v] : merged) out += k + "=" + v + "\n";
  return out;
}

void Settings::require(const std::string& key) const {
  auto it = merged.find(key);
  if (it == merged.end() || trim(it->second).empty()) throw ConfigError("missing required config key '" + key + "'");
}

Settings resolve_settings(const FlatConfig& file, const FlatConfig& overrides, std::optional<int> env_jobs) {
  Settings s;
  s.merged = file;
  for (const auto& [k, v] : overrides) s.merged[k] = v;
  for (const auto& [k, v] : s.merged)
    if (!is_known_key(k)) throw ConfigError("unknown config key '" + k + "'");
  const Reader r(s.merged);

  // Model.
  auto& spec = s.spec;
  spec.kind = ModelKind::JSM;
  r.get("model.kind", spec.kind, [](const std::string& k, const std::string& t) {
    try {
      return parse_model_kind(trim(t));
    } catch (const ConfigError& e) {
      throw ConfigError("config key '" + k + "': " + e.what());
    }
  });
  r.get("model.family", spec.outcome_family, [](const std::string& k, const std::string& t) {
    try {
      return parse_outcome_family(trim(t));
    } catch (const ConfigError& e) {
      throw ConfigError("config key '" + k + "': " + e.what());
    }
  });
  spec.link = spec.outcome_family == OutcomeFamily::Beta ? Link::Logit : Link::Identity;
  r.get("model.link", spec.link, [](const std::string& k, const std::string& t) {
    try {
      return parse_link(trim(t));
    } catch (const ConfigError& e) {
      throw ConfigError("config key '" + k + "': " + e.what());
    }
  });
  auto recipe = [](const std::string& k, const std::string& t) {
    try {
      return DesignRecipe::parse(t);
    } catch (const ConfigError& e) {
      throw ConfigError("config key '" + k + "': " + e.what());
    }
  };
  r.get("model.cov_fixed", spec.cov_fixed, recipe);
  r.get("model.cov_random", spec.cov_random, recipe);
  r.get("model.out_fixed", spec.out_fixed, recipe);
  r.get("model.out_random", spec.out_random, recipe);

  auto& p = spec.priors;
  r.number("priors.beta_precision", p.beta_precision);
  r.number("priors.gamma_mean", p.gamma_mean);
  r.number("priors.gamma_precision", p.gamma_precision);
  r.number("priors.eps_precision_shape", p.eps_precision_shape);
  r.number("priors.eps_precision_rate", p.eps_precision_rate);
  r.number("priors.out_precision_shape", p.out_precision_shape);
  r.number("priors.out_precision_rate", p.out_precision_rate);
  r.number("priors.phi_shape", p.phi_shape);
  r.number("priors.phi_rate", p.phi_rate);
  if (auto v = r.find("priors.wishart_df")) p.wishart_df = to_double("priors.wishart_df", *v);
  r.list("priors.wishart_scale_diag", p.wishart_scale_diag);
  r.boolean("priors.informative", p.informative);
  spec.validate();

  // Fit control.
  auto& f = s.fit;
  r.seed("fit.seed", f.seed);
  r.number("fit.grad_tol", f.grad_tol);
  r.integer("fit.max_iter", f.max_iter);
  r.number("fit.fd_step", f.fd_step);
  r.number("fit.hessian_step", f.hessian_step);
  r.integer("fit.summary_draws", f.summary_draws);
  r.number("fit.inner_tol", f.inner.tol);
  r.integer("fit.inner_max_iter", f.inner.max_iter);
  r.integer("fit.diagnostic_draws", f.diagnostic_draws);
  if (!(f.grad_tol > 0.0) || !(f.fd_step > 0.0) || !(f.hessian_step > 0.0) || !(f.inner.tol > 0.0))
    throw ConfigError("fit tolerances and steps must be positive");
  if (f.max_iter < 1 || f.inner.max_iter < 1) throw ConfigError("fit iteration limits must be at least 1");
  if (f.summary_draws < 2) throw ConfigError("config key 'fit.summary_draws' must be at least 2");
  if (f.diagnostic_draws != 0 && f.diagnostic_draws < 10)
    throw ConfigError("config key 'fit.diagnostic_draws' must be 0 or at least 10");

  // Data.
  r.text("data.path", s.data_path);
  r.boolean("data.skip_bad_rows", s.skip_bad_rows);
  if (auto v = r.find("data.outcome_range")) {
    auto range = parse_number_list("data.outcome_range", *v);
    if (range.size() != 2 || !(range[1] > range[0]))
      throw ConfigError("config key 'data.outcome_range' must be [lo, hi] with hi > lo");
    OutcomeRange o;
    o.lo = range[0];
    o.hi = range[1];
    r.number("data.outcome_eps", o.eps);
    s.outcome_range = o;
  }

  // Association.
  auto& q = s.assoc;
  r.text("assoc.fit_path", s.fit_path);
  r.number("assoc.a", q.a);
  r.number("assoc.delta", q.delta);
  r.integer("assoc.mc_samples", q.mc_samples);
  r.integer("assoc.resamples", q.resamples);
  r.seed("assoc.seed", q.seed);
  r.boolean("assoc.include_noise", q.include_noise);
  r.number("assoc.ci_level", q.ci_level);
  r.list("assoc.grid_s", s.grid_s);
  r.list("assoc.grid_t", s.grid_t);
  for (const auto& [k, v] : s.merged)
    if (k.rfind(kCovariatePrefix, 0) == 0) q.covariates[k.substr(kCovariatePrefix.size())] = to_double(k, v);
  if (s.outcome_range) q.output_scale = s.outcome_range->scale();
  q.validate();

  // Simulation and study.
  auto& st = s.study;
  auto& sim = st.sim;
  ModelKind generator = ModelKind::JSM;
  r.get("simulate.generator", generator, [](const std::string& k, const std::string& t) {
    try {
      return parse_model_kind(trim(t));
    } catch (const ConfigError& e) {
      throw ConfigError("config key '" + k + "': " + e.what());
    }
  });
  int n_subjects = 200;
  r.integer("simulate.n_subjects", n_subjects);
  sim = SimConfig::paper(generator, n_subjects);
  r.get("simulate.outcome_family", sim.outcome_family, [](const std::string& k, const std::string& t) {
    try {
      return parse_outcome_family(trim(t));
    } catch (const ConfigError& e) {
      throw ConfigError("config key '" + k + "': " + e.what());
    }
  });
  r.integer("simulate.max_visits", sim.max_visits);
  if (auto v = r.find("simulate.time_range")) {
    auto tr = parse_number_list("simulate.time_range", *v);
    if (tr.size() != 2) throw ConfigError("config key 'simulate.time_range' must be [lo, hi]");
    sim.time_lo = tr[0];
    sim.time_hi = tr[1];
  }
  auto fixed_pair = [&](const std::string& key, Eigen::VectorXd& target) {
    if (auto v = r.find(key)) {
      auto vals = parse_number_list(key, *v);
      if (vals.size() != 2) throw ConfigError("config key '" + key + "' must have two entries");
      target = Eigen::Map<Eigen::VectorXd>(vals.data(), 2);
    }
  };
  fixed_pair("simulate.beta_v", sim.beta_v);
  fixed_pair("simulate.beta_y", sim.beta_y);
  if (auto v = r.find("simulate.D")) {
    auto vals = parse_number_list("simulate.D", *v);
    if (vals.size() == 16) {
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) sim.D(i, j) = vals[static_cast<std::size_t>(4 * i + j)];
    } else if (vals.size() == 10) {
      std::size_t k = 0;
      for (int i = 0; i < 4; ++i)
        for (int j = i; j < 4; ++j) sim.D(i, j) = sim.D(j, i) = vals[k++];
    } else {
      throw ConfigError("config key 'simulate.D' needs 16 entries or the 10 upper-triangle entries");
    }
  }
  r.number("simulate.sigma2_eps", sim.sigma2_eps);
  r.number("simulate.phi", sim.phi);
  r.number("simulate.out_sigma2", sim.out_sigma2);
  r.number("simulate.gamma", sim.gamma);
  r.boolean("simulate.center_copy", sim.center_copy);
  r.number("simulate.miss_outcome", sim.miss_outcome);
  r.number("simulate.miss_cov", sim.miss_cov);
  r.integer("simulate.replications", sim.replications);
  r.seed("simulate.seed", sim.seed);
  r.boolean("simulate.noiseless", sim.noiseless);
  r.boolean("simulate.write_datasets", s.write_datasets);
  r.boolean("simulate.run_study", s.run_study);
  sim.validate();

  st.fit_models = {generator};
  if (auto v = r.find("study.fit_models")) st.fit_models = to_models("study.fit_models", *v);
  st.fit = s.fit;
  r.list("study.ages", st.ages);
  r.number("study.a", st.a);
  r.integer("study.mc_samples", st.mc_samples);
  r.integer("study.truth_mc_samples", st.truth_mc_samples);
  r.integer("study.diagnostic_draws", st.diagnostic_draws);
  r.boolean("study.informative_priors", st.informative_priors);
  r.integer("study.first_replication", st.first_replication);
  if (st.ages.empty()) throw ConfigError("config key 'study.ages' must list at least one age");
  if (st.mc_samples < 1 || st.truth_mc_samples < 1) throw ConfigError("study Monte Carlo sizes must be positive");
  if (st.diagnostic_draws != 0 && st.diagnostic_draws < 10)
    throw ConfigError("config key 'study.diagnostic_draws' must be 0 or at least 10");

  // Evaluation.
  if (auto v = r.find("evaluate.models")) s.eval_models = to_models("evaluate.models", *v);
  r.integer("evaluate.draws", s.eval_draws);
  s.eval_seed = s.fit.seed;
  r.seed("evaluate.seed", s.eval_seed);
  if (s.eval_draws < 10) throw ConfigError("config key 'evaluate.draws' must be at least 10");

  // Run.
  if (env_jobs) s.jobs = *env_jobs;
  r.integer("run.jobs", s.jobs);
  if (s.jobs < 1) throw ConfigError("config key 'run.jobs' must be at least 1");
  st.jobs = s.jobs;
  r.text("run.output_dir", s.output_dir);
  r.boolean("run.strict", s.strict);
  return s;
}

}  // namespace jointlong
