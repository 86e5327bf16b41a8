#include "jointlong/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace jointlong {

using nlohmann::json;

std::string format_double(double x) {
  if (std::isnan(x)) return "NaN";
  if (std::isinf(x)) return x > 0 ? "Inf" : "-Inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------- csv

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::optional<double> parse_number(const std::string& text) {
  const std::string t = trim(text);
  if (t.empty()) return std::nullopt;
  double v = 0.0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    if (t == "NaN" || t == "nan") return std::numeric_limits<double>::quiet_NaN();
    return std::nullopt;
  }
  return v;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

struct Pending {
  std::vector<std::pair<double, double>> cov;
  std::vector<std::pair<double, double>> out;
  std::map<std::string, double> covariates;
};

void sort_and_check(std::vector<std::pair<double, double>>& obs, const std::string& id, const char* process) {
  std::stable_sort(obs.begin(), obs.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t k = 1; k < obs.size(); ++k)
    if (obs[k].first == obs[k - 1].first)
      throw DataError("duplicate observation for subject '" + id + "', process " + process + ", time " +
                      format_double(obs[k].first));
}

}  // namespace

LongDataset read_dataset_csv(std::istream& in, const CsvOptions& options, IngestReport* report) {
  if (options.outcome_range && !(options.outcome_range->hi > options.outcome_range->lo))
    throw ConfigError("outcome range requires hi > lo");
  IngestReport local;
  IngestReport& rep = report ? *report : local;
  std::string line;
  if (!std::getline(in, line)) throw DataError("dataset file is empty");
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t j = 0; j < header.size(); ++j) col[trim(header[j])] = j;
  for (const char* need : {"subject_id", "time", "process", "value"})
    if (!col.count(need)) throw DataError(std::string("dataset header lacks column '") + need + "'");
  std::vector<std::pair<std::string, std::size_t>> extra;
  for (std::size_t j = 0; j < header.size(); ++j) {
    const auto name = trim(header[j]);
    if (name != "subject_id" && name != "time" && name != "process" && name != "value") extra.emplace_back(name, j);
  }

  std::vector<std::string> order;
  std::map<std::string, Pending> pending;
  std::size_t line_no = 1;
  auto bad = [&](const std::string& msg) {
    const std::string full = "line " + std::to_string(line_no) + ": " + msg;
    if (!options.skip_bad_rows) throw DataError(full);
    ++rep.skipped_bad;
    rep.messages.push_back(full);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++rep.rows;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) {
      bad("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(f.size()));
      continue;
    }
    const std::string id = trim(f[col["subject_id"]]);
    if (id.empty()) {
      bad("empty subject_id");
      continue;
    }
    const std::string value_text = trim(f[col["value"]]);
    if (value_text.empty() || value_text == "NA") {
      ++rep.skipped_empty;
      continue;
    }
    const auto time = parse_number(f[col["time"]]);
    const auto value = parse_number(value_text);
    if (!time || !std::isfinite(*time)) {
      bad("non-numeric time '" + trim(f[col["time"]]) + "'");
      continue;
    }
    if (!value || !std::isfinite(*value)) {
      bad("non-numeric value '" + value_text + "'");
      continue;
    }
    const std::string process = trim(f[col["process"]]);
    if (process != "cov" && process != "out") {
      bad("process must be 'cov' or 'out', found '" + process + "'");
      continue;
    }
    std::map<std::string, double> covs;
    bool ok = true;
    for (const auto& [name, j] : extra) {
      if (trim(f[j]).empty()) continue;
      const auto x = parse_number(f[j]);
      if (!x || !std::isfinite(*x)) {
        bad("non-numeric covariate '" + name + "'");
        ok = false;
        break;
      }
      covs[name] = *x;
    }
    if (!ok) continue;
    if (!pending.count(id)) order.push_back(id);
    auto& p = pending[id];
    for (const auto& [name, x] : covs) {
      auto it = p.covariates.find(name);
      if (it != p.covariates.end() && it->second != x)
        throw DataError("line " + std::to_string(line_no) + ": covariate '" + name + "' changes within subject '" +
                        id + "'");
      p.covariates[name] = x;
    }
    (process == "cov" ? p.cov : p.out).emplace_back(*time, *value);
  }

  LongDataset data;
  for (const auto& id : order) {
    auto& p = pending[id];
    sort_and_check(p.cov, id, "cov");
    sort_and_check(p.out, id, "out");
    SubjectRecord s;
    s.id = id;
    for (const auto& [t, v] : p.cov) {
      s.cov_times.push_back(t);
      s.cov_values.push_back(v);
    }
    for (const auto& [t, v] : p.out) {
      s.out_times.push_back(t);
      s.out_values.push_back(options.outcome_range ? options.outcome_range->to_unit(v) : v);
    }
    s.covariates = std::move(p.covariates);
    data.subjects.push_back(std::move(s));
  }
  return data;
}

LongDataset read_dataset_csv(const std::string& path, const CsvOptions& options, IngestReport* report) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset '" + path + "'");
  return read_dataset_csv(in, options, report);
}

void write_dataset_csv(std::ostream& out, const LongDataset& data) {
  std::set<std::string> names;
  for (const auto& s : data.subjects)
    for (const auto& [k, v] : s.covariates) names.insert(k);
  out << "subject_id,time,process,value";
  for (const auto& n : names) out << ',' << csv_field(n);
  out << '\n';
  for (const auto& s : data.subjects) {
    std::string tail;
    for (const auto& n : names) {
      tail += ',';
      auto it = s.covariates.find(n);
      if (it != s.covariates.end()) tail += format_double(it->second);
    }
    const std::string id = csv_field(s.id);
    for (std::size_t k = 0; k < s.n_cov(); ++k)
      out << id << ',' << format_double(s.cov_times[k]) << ",cov," << format_double(s.cov_values[k]) << tail << '\n';
    for (std::size_t k = 0; k < s.n_out(); ++k)
      out << id << ',' << format_double(s.out_times[k]) << ",out," << format_double(s.out_values[k]) << tail << '\n';
  }
}

void write_dataset_csv(const std::string& path, const LongDataset& data) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  write_dataset_csv(out, data);
}

// ---------------------------------------------------------------- fit json

namespace {

json number(double x) {
  if (!std::isfinite(x)) return nullptr;
  return x;
}

double get_number(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

json vector_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number(v(i)));
  return a;
}

Eigen::VectorXd vector_from(const json& a) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = get_number(a[i]);
  return v;
}

json summary_json(const ParamSummary& s) {
  return {{"name", s.name}, {"mode", number(s.mode)}, {"mean", number(s.mean)}, {"sd", number(s.sd)},
          {"q025", number(s.q025)}, {"q50", number(s.q50)}, {"q975", number(s.q975)}};
}

ParamSummary summary_from(const json& j) {
  ParamSummary s;
  s.name = j.at("name").get<std::string>();
  s.mode = get_number(j.at("mode"));
  s.mean = get_number(j.at("mean"));
  s.sd = get_number(j.at("sd"));
  s.q025 = get_number(j.at("q025"));
  s.q50 = get_number(j.at("q50"));
  s.q975 = get_number(j.at("q975"));
  return s;
}

json spec_json(const ModelSpec& spec) {
  const auto& p = spec.priors;
  json priors = {{"beta_precision", p.beta_precision},
                 {"gamma_mean", p.gamma_mean},
                 {"gamma_precision", p.gamma_precision},
                 {"eps_precision_shape", p.eps_precision_shape},
                 {"eps_precision_rate", p.eps_precision_rate},
                 {"out_precision_shape", p.out_precision_shape},
                 {"out_precision_rate", p.out_precision_rate},
                 {"phi_shape", p.phi_shape},
                 {"phi_rate", p.phi_rate},
                 {"wishart_df", p.wishart_df ? json(*p.wishart_df) : json(nullptr)},
                 {"wishart_scale_diag", p.wishart_scale_diag},
                 {"informative", p.informative}};
  return {{"kind", to_string(spec.kind)},
          {"outcome_family", to_string(spec.outcome_family)},
          {"link", to_string(spec.link)},
          {"cov_fixed", spec.cov_fixed.describe()},
          {"cov_random", spec.cov_random.describe()},
          {"out_fixed", spec.out_fixed.describe()},
          {"out_random", spec.out_random.describe()},
          {"priors", priors}};
}

ModelSpec spec_from(const json& j) {
  ModelSpec spec;
  spec.kind = parse_model_kind(j.at("kind").get<std::string>());
  spec.outcome_family = parse_outcome_family(j.at("outcome_family").get<std::string>());
  spec.link = parse_link(j.at("link").get<std::string>());
  spec.cov_fixed = DesignRecipe::parse(j.at("cov_fixed").get<std::string>());
  spec.cov_random = DesignRecipe::parse(j.at("cov_random").get<std::string>());
  spec.out_fixed = DesignRecipe::parse(j.at("out_fixed").get<std::string>());
  spec.out_random = DesignRecipe::parse(j.at("out_random").get<std::string>());
  const auto& p = j.at("priors");
  auto& q = spec.priors;
  q.beta_precision = p.at("beta_precision").get<double>();
  q.gamma_mean = p.at("gamma_mean").get<double>();
  q.gamma_precision = p.at("gamma_precision").get<double>();
  q.eps_precision_shape = p.at("eps_precision_shape").get<double>();
  q.eps_precision_rate = p.at("eps_precision_rate").get<double>();
  q.out_precision_shape = p.at("out_precision_shape").get<double>();
  q.out_precision_rate = p.at("out_precision_rate").get<double>();
  q.phi_shape = p.at("phi_shape").get<double>();
  q.phi_rate = p.at("phi_rate").get<double>();
  if (!p.at("wishart_df").is_null()) q.wishart_df = p.at("wishart_df").get<double>();
  q.wishart_scale_diag = p.at("wishart_scale_diag").get<std::vector<double>>();
  q.informative = p.at("informative").get<bool>();
  return spec;
}

}  // namespace

std::string fit_to_json(const FitResult& fit, int indent) {
  const auto& spec = fit.spec;
  json j;
  j["schema_version"] = kFitSchema;
  j["model"] = spec_json(spec);
  j["seed"] = fit.seed;
  j["subject_ids"] = fit.subject_ids;
  json conv = {{"converged", fit.converged},
               {"inner_converged", fit.inner_converged},
               {"reliable", fit.reliable()},
               {"outer_iterations", fit.outer_iterations},
               {"function_evaluations", fit.function_evaluations},
               {"inner_iterations", fit.inner_iterations},
               {"gradient_max_norm", number(fit.grad_max_norm)},
               {"hyper_cov_adjusted", fit.hyper_cov_adjusted},
               {"message", fit.message}};
  j["convergence"] = conv;
  json hyper;
  hyper["names"] = hyper_flat_names(spec);
  hyper["mode"] = vector_json(fit.hyper_mode.flat(spec));
  json cov = json::array();
  for (Eigen::Index r = 0; r < fit.hyper_cov.rows(); ++r) cov.push_back(vector_json(fit.hyper_cov.row(r).transpose()));
  hyper["cov"] = cov;
  hyper["log_marginal_at_mode"] = number(fit.log_marginal_hyper_at_mode);
  j["hyper"] = hyper;
  json hs = json::array();
  for (const auto& s : fit.hyper_summaries) hs.push_back(summary_json(s));
  j["hyper_summaries"] = hs;
  json ls = json::array();
  for (const auto& s : fit.latent_summaries) ls.push_back(summary_json(s));
  j["latent_summaries"] = ls;
  j["latent_mode"] = vector_json(fit.latent_mode.values);
  const auto& d = fit.diagnostics;
  j["diagnostics"] = {{"log_marginal_likelihood", number(d.log_marginal_likelihood)},
                      {"draws", d.draws},
                      {"dic_plugin", d.dic_plugin},
                      {"dic_overall", number(d.dic_overall)},
                      {"dic_outcome", number(d.dic_outcome)},
                      {"waic_overall", number(d.waic_overall)},
                      {"waic_outcome", number(d.waic_outcome)},
                      {"p_dic_overall", number(d.p_dic_overall)},
                      {"p_waic_overall", number(d.p_waic_overall)}};
  return j.dump(indent) + "\n";
}

FitResult fit_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("fit file is not valid JSON: ") + e.what());
  }
  if (j.value("schema_version", "") != kFitSchema)
    throw DataError("fit file has unsupported schema_version (expected " + std::string(kFitSchema) + ")");
  try {
    FitResult f;
    f.spec = spec_from(j.at("model"));
    f.seed = j.at("seed").get<std::uint64_t>();
    f.subject_ids = j.at("subject_ids").get<std::vector<std::string>>();
    const auto& c = j.at("convergence");
    f.converged = c.at("converged").get<bool>();
    f.inner_converged = c.at("inner_converged").get<bool>();
    f.outer_iterations = c.at("outer_iterations").get<int>();
    f.function_evaluations = c.at("function_evaluations").get<int>();
    f.inner_iterations = c.at("inner_iterations").get<int>();
    f.grad_max_norm = get_number(c.at("gradient_max_norm"));
    f.hyper_cov_adjusted = c.at("hyper_cov_adjusted").get<bool>();
    f.message = c.at("message").get<std::string>();
    const auto& h = j.at("hyper");
    f.hyper_mode = HyperVector::from_flat(f.spec, vector_from(h.at("mode")));
    const auto& cov = h.at("cov");
    const auto d = static_cast<Eigen::Index>(cov.size());
    f.hyper_cov.resize(d, d);
    for (Eigen::Index r = 0; r < d; ++r) f.hyper_cov.row(r) = vector_from(cov[static_cast<std::size_t>(r)]).transpose();
    f.log_marginal_hyper_at_mode = get_number(h.at("log_marginal_at_mode"));
    for (const auto& s : j.at("hyper_summaries")) f.hyper_summaries.push_back(summary_from(s));
    for (const auto& s : j.at("latent_summaries")) f.latent_summaries.push_back(summary_from(s));
    const auto layout = LatentLayout::from(f.spec, f.subject_ids.size());
    Eigen::VectorXd values = vector_from(j.at("latent_mode"));
    if (static_cast<std::size_t>(values.size()) != layout.size()) throw DataError("fit file latent_mode has wrong length");
    f.latent_mode = LatentField(layout, std::move(values));
    const auto& dg = j.at("diagnostics");
    f.diagnostics.log_marginal_likelihood = get_number(dg.at("log_marginal_likelihood"));
    f.diagnostics.draws = dg.at("draws").get<int>();
    f.diagnostics.dic_plugin = dg.at("dic_plugin").get<std::string>();
    f.diagnostics.dic_overall = get_number(dg.at("dic_overall"));
    f.diagnostics.dic_outcome = get_number(dg.at("dic_outcome"));
    f.diagnostics.waic_overall = get_number(dg.at("waic_overall"));
    f.diagnostics.waic_outcome = get_number(dg.at("waic_outcome"));
    f.diagnostics.p_dic_overall = get_number(dg.at("p_dic_overall"));
    f.diagnostics.p_waic_overall = get_number(dg.at("p_waic_overall"));
    return f;
  } catch (const json::exception& e) {
    throw DataError(std::string("fit file is missing fields: ") + e.what());
  }
}

// ---------------------------------------------------------------- reports

std::string fit_report_table(const FitResult& fit) {
  std::ostringstream os;
  os << "model: " << to_string(fit.spec.kind) << "  outcome: " << to_string(fit.spec.outcome_family)
     << "  subjects: " << fit.subject_ids.size() << "\n";
  os << "converged: " << (fit.reliable() ? "yes" : "no (summaries unreliable)") << "  outer iterations: "
     << fit.outer_iterations << "\n\n";
  auto row = [&os](const std::string& name, double mode, double lo, double hi) {
    os << std::left << std::setw(18) << name << std::right << std::setw(12) << std::fixed << std::setprecision(3)
       << mode << "   (" << std::setprecision(3) << lo << ", " << hi << ")\n";
  };
  os << std::left << std::setw(18) << "Parameter" << std::right << std::setw(12) << "Mode"
     << "   95% CI\n";
  for (const auto& s : fit.hyper_summaries) {
    row(s.name, s.mode, s.q025, s.q975);
    if (s.name == "gamma") row("exp(gamma)", std::exp(s.mode), std::exp(s.q025), std::exp(s.q975));
  }
  os << "\nfixed effects\n";
  for (const auto& s : fit.latent_summaries)
    if (s.name.rfind("beta_", 0) == 0) row(s.name, s.mode, s.q025, s.q975);
  os << "\nlog marginal likelihood: " << std::setprecision(3) << fit.diagnostics.log_marginal_likelihood << "\n";
  return os.str();
}

void write_fit_summary_csv(std::ostream& out, const FitResult& fit) {
  out << "kind,name,mode,mean,sd,q025,q50,q975\n";
  auto emit = [&out](const char* kind, const ParamSummary& s) {
    out << kind << ',' << csv_field(s.name) << ',' << format_double(s.mode) << ',' << format_double(s.mean) << ','
        << format_double(s.sd) << ',' << format_double(s.q025) << ',' << format_double(s.q50) << ','
        << format_double(s.q975) << '\n';
  };
  for (const auto& s : fit.hyper_summaries) emit("hyper", s);
  for (const auto& s : fit.latent_summaries) emit("latent", s);
}

namespace {

void assoc_row(std::ostream& out, const AssocResult& r, bool with_s) {
  if (with_s) out << format_double(r.s) << ',';
  out << format_double(r.t) << ',' << format_double(r.a) << ',' << format_double(r.beta_joint) << ','
      << format_double(r.ci_low) << ',' << format_double(r.ci_high) << ',' << format_double(r.mc_standard_error)
      << ',' << format_double(r.e_y_at_a) << ',' << format_double(r.e_y_at_a_plus_delta) << ','
      << format_double(r.beta_joint_rescaled()) << '\n';
}

}  // namespace

void write_surface_csv(std::ostream& out, const AssocSurface& surface) {
  out << "s,t,a,beta_joint,ci_low,ci_high,mc_se,e_y_a,e_y_a_delta,beta_joint_rescaled\n";
  for (const auto& c : surface.cells) assoc_row(out, c, true);
}

void write_curve_csv(std::ostream& out, const AssocSurface& surface) {
  out << "t,a,beta_joint,ci_low,ci_high,mc_se,e_y_a,e_y_a_delta,beta_joint_rescaled\n";
  for (const auto& c : surface.diagonal) assoc_row(out, c, false);
}

void write_time_average_csv(std::ostream& out, const AssocSurface& surface) {
  const auto& r = surface.time_average;
  out << "a,n_times,beta_joint,ci_low,ci_high,mc_se,beta_joint_rescaled\n";
  out << format_double(r.a) << ',' << surface.diagonal.size() << ',' << format_double(r.beta_joint) << ','
      << format_double(r.ci_low) << ',' << format_double(r.ci_high) << ',' << format_double(r.mc_standard_error)
      << ',' << format_double(r.beta_joint_rescaled()) << '\n';
}

void write_evaluation_csv(std::ostream& out, const std::vector<EvaluationRow>& rows) {
  out << "model,marginal_likelihood,dic_overall,dic_outcome,waic_overall,waic_outcome,p_dic,p_waic,draws,"
         "dic_plugin,converged\n";
  for (const auto& r : rows) {
    const auto& d = r.diagnostics;
    out << to_string(r.model) << ',' << format_double(d.log_marginal_likelihood) << ',' << format_double(d.dic_overall)
        << ',' << format_double(d.dic_outcome) << ',' << format_double(d.waic_overall) << ','
        << format_double(d.waic_outcome) << ',' << format_double(d.p_dic_overall) << ','
        << format_double(d.p_waic_overall) << ',' << d.draws << ',' << d.dic_plugin << ','
        << (r.converged ? "true" : "false") << '\n';
  }
}

void write_pointwise_csv(std::ostream& out, const std::vector<EvaluationRow>& rows) {
  out << "model,subject_id,process,time,lpd,p_waic,dic,mean_deviance,deviance_at_mean\n";
  for (const auto& r : rows)
    for (const auto& p : r.diagnostics.pointwise)
      out << to_string(r.model) << ',' << csv_field(p.subject_id) << ',' << to_string(p.process) << ','
          << format_double(p.time) << ',' << format_double(p.lpd) << ',' << format_double(p.p_waic) << ','
          << format_double(p.dic) << ',' << format_double(p.mean_deviance) << ','
          << format_double(p.deviance_at_mean) << '\n';
}

void write_study_rows_csv(std::ostream& out, const StudyReport& report) {
  out << "replication,model,n_subjects,failed,converged,outer_iterations,log_marginal_likelihood,waic_overall,"
         "waic_outcome,dic_overall,dic_outcome,error\n";
  for (const auto& r : report.rows)
    out << r.replication << ',' << to_string(r.model) << ',' << r.n_subjects << ',' << (r.failed ? "true" : "false")
        << ',' << (r.converged ? "true" : "false") << ',' << r.outer_iterations << ','
        << format_double(r.log_marginal_likelihood) << ',' << format_double(r.waic_overall) << ','
        << format_double(r.waic_outcome) << ',' << format_double(r.dic_overall) << ','
        << format_double(r.dic_outcome) << ',' << csv_field(r.error) << '\n';
}

void write_study_curves_csv(std::ostream& out, const StudyReport& report) {
  out << "replication,model,age,a,beta_joint\n";
  for (const auto& r : report.rows)
    for (std::size_t k = 0; k < r.beta_joint.size() && k < report.ages.size(); ++k)
      out << r.replication << ',' << to_string(r.model) << ',' << format_double(report.ages[k]) << ','
          << format_double(report.a) << ',' << format_double(r.beta_joint[k]) << '\n';
}

void write_study_summary_csv(std::ostream& out, const StudyReport& report) {
  out << "model,age,a,truth,mean,q05,q95,count\n";
  for (const auto& g : report.aggregates)
    out << to_string(g.model) << ',' << format_double(g.age) << ',' << format_double(report.a) << ','
        << format_double(g.truth) << ',' << format_double(g.mean) << ',' << format_double(g.q05) << ','
        << format_double(g.q95) << ',' << g.count << '\n';
}

void write_study_hyper_csv(std::ostream& out, const StudyReport& report) {
  std::map<std::string, double> truth;
  for (const auto& t : report.true_hyper) truth[t.name] = t.value;
  out << "replication,model,name,mode,truth\n";
  for (const auto& r : report.rows) {
    if (r.failed) continue;
    for (const auto& h : r.hyper_modes) {
      auto it = truth.find(h.name);
      out << r.replication << ',' << to_string(r.model) << ',' << h.name << ',' << format_double(h.value) << ','
          << (it != truth.end() ? format_double(it->second) : std::string("NaN")) << '\n';
    }
  }
}

// ---------------------------------------------------------------- files

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << text;
}

std::string file_digest(const std::string& path) { return "fnv1a64:" + hex64(fnv1a(read_text_file(path))); }

}  // namespace jointlong
