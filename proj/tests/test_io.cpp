#include <jointlong/io.hpp>

#include <sstream>

#include "doctest.h"
#include "test_support.hpp"

using namespace testsupport;

namespace {

LongDataset parse(const std::string& text, const CsvOptions& opt = {}, IngestReport* rep = nullptr) {
  std::istringstream in(text);
  return read_dataset_csv(in, opt, rep);
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

const FitResult& beta_fit() {
  static const FitResult f = [] {
    SimConfig sim = SimConfig::paper(ModelKind::JSM, 40);
    sim.seed = 31;
    return jointlong::fit(sim.model_spec(ModelKind::JSM), generate(sim, 0), FitControl{});
  }();
  return f;
}

}  // namespace

TEST_CASE("minimal dataset file") {
  const LongDataset d = parse("subject_id,time,process,value\nA,3,cov,11.5\nA,3,out,0.4\n");
  REQUIRE(d.n_subjects() == 1);
  CHECK(d.subjects[0].id == "A");
  CHECK(d.subjects[0].n_cov() == 1);
  CHECK(d.subjects[0].n_out() == 1);
  CHECK(d.subjects[0].cov_values[0] == 11.5);
  CHECK(d.subjects[0].out_values[0] == 0.4);
}

TEST_CASE("rows are sorted by time and duplicates rejected") {
  const LongDataset d =
      parse("subject_id,time,process,value\nB,9,cov,3\nA,5,out,0.2\nB,3,cov,1\nB,6,cov,2\nA,4,out,0.1\n");
  REQUIRE(d.n_subjects() == 2);
  CHECK(d.subjects[0].id == "B");
  CHECK(d.subjects[0].cov_times == std::vector<double>{3, 6, 9});
  CHECK(d.subjects[0].cov_values == std::vector<double>{1, 2, 3});
  CHECK(d.subjects[1].out_times == std::vector<double>{4, 5});
  CHECK_THROWS_AS(parse("subject_id,time,process,value\nA,3,cov,1\nA,3,cov,2\n"), DataError);
  // the same time on different processes is not a duplicate
  CHECK_NOTHROW(parse("subject_id,time,process,value\nA,3,cov,1\nA,3,out,0.5\n"));
}

TEST_CASE("malformed rows carry their line number") {
  const std::string text = "subject_id,time,process,value\nA,3,cov,1\nA,x,cov,2\nA,5,cov,abc\nA,6,both,1\nA,7,cov\n";
  try {
    parse(text);
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  IngestReport rep;
  CsvOptions opt;
  opt.skip_bad_rows = true;
  const LongDataset d = parse(text, opt, &rep);
  CHECK(rep.skipped_bad == 4);
  REQUIRE(rep.messages.size() == 4);
  CHECK(rep.messages[1].find("line 4") == 0);
  CHECK(rep.messages[2].find("line 5") == 0);
  CHECK(rep.messages[3].find("line 6") == 0);
  CHECK(d.subjects[0].n_cov() == 1);
  CHECK_THROWS_AS(parse(""), DataError);
  CHECK_THROWS_AS(parse("subject,time,process,value\nA,1,cov,1\n"), DataError);
}

TEST_CASE("empty values are counted and skipped") {
  IngestReport rep;
  const LongDataset d = parse("subject_id,time,process,value\nA,3,cov,\nA,4,cov,NA\nA,5,cov,2\n\n", {}, &rep);
  CHECK(rep.skipped_empty == 2);
  CHECK(rep.rows == 3);
  CHECK(d.subjects[0].n_cov() == 1);
}

TEST_CASE("declared outcome range maps values to the unit interval") {
  CsvOptions opt;
  opt.outcome_range = OutcomeRange{0.0, 40.0};
  const LongDataset d =
      parse("subject_id,time,process,value\nA,3,out,10\nA,4,out,0\nA,5,out,40\nA,3,cov,10\n", opt);
  const auto& y = d.subjects[0].out_values;
  CHECK(y[0] == 0.25);
  CHECK(y[1] == 1e-6);
  CHECK(y[2] == 1.0 - 1e-6);
  CHECK(d.subjects[0].cov_values[0] == 10.0);
  opt.outcome_range = OutcomeRange{1.0, 1.0};
  CHECK_THROWS_AS(parse("subject_id,time,process,value\nA,3,out,1\n", opt), ConfigError);
}

TEST_CASE("subject covariates are read from extra columns") {
  const LongDataset d = parse("subject_id,time,process,value,sex,dose\nA,3,cov,1,1,\nA,4,out,0.5,1,2.5\nB,3,cov,2,0,1\n");
  CHECK(d.subjects[0].covariates.at("sex") == 1.0);
  CHECK(d.subjects[0].covariates.at("dose") == 2.5);
  CHECK(d.subjects[1].covariates.at("sex") == 0.0);
  CHECK_THROWS_AS(parse("subject_id,time,process,value,sex\nA,3,cov,1,1\nA,4,cov,1,0\n"), DataError);
}

TEST_CASE("simulated datasets survive a CSV round trip") {
  SimConfig sim = SimConfig::paper(ModelKind::JMM, 50);
  LongDataset data = generate(sim, 2);
  data.subjects[0].covariates["group"] = 1.0;
  data.subjects[1].id = "id, with \"quotes\"";
  std::ostringstream out;
  write_dataset_csv(out, data);
  const LongDataset back = parse(out.str());
  CHECK(back.subjects == data.subjects);
}

TEST_CASE("number formatting round-trips") {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  for (int k = 0; k < 10000; ++k) {
    const double x = u(gen) * std::pow(10.0, (k % 40) - 20);
    CHECK(std::stod(format_double(x)) == x);
  }
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(std::nan("")) == "NaN");
  CHECK(format_double(-INFINITY) == "-Inf");
}

TEST_CASE("fit results survive a JSON round trip") {
  const FitResult& f = beta_fit();
  const std::string text = fit_to_json(f);
  CHECK(text.find(kFitSchema) != std::string::npos);
  const FitResult back = fit_from_json(text);
  CHECK(back.spec.kind == f.spec.kind);
  CHECK(back.spec.priors.informative == f.spec.priors.informative);
  CHECK(back.hyper_mode.flat(back.spec) == f.hyper_mode.flat(f.spec));
  CHECK(back.hyper_cov == f.hyper_cov);
  CHECK(back.latent_mode.values == f.latent_mode.values);
  CHECK(back.subject_ids == f.subject_ids);
  CHECK(back.hyper_summaries.size() == f.hyper_summaries.size());
  CHECK(back.diagnostics.log_marginal_likelihood == f.diagnostics.log_marginal_likelihood);
  CHECK(fit_to_json(back) == text);

  AssocQuery q;
  q.a = 9.0;
  q.s = q.t = 9.0;
  q.resamples = 0;
  q.mc_samples = 500;
  CHECK(beta_joint(back, q).beta_joint == beta_joint(f, q).beta_joint);

  CHECK_THROWS_AS(fit_from_json("{not json"), DataError);
  CHECK_THROWS_AS(fit_from_json("{\"schema_version\": \"other/9\"}"), DataError);
  CHECK_THROWS_AS(fit_from_json("{\"schema_version\": \"jointlong.fit/1\"}"), DataError);
}

TEST_CASE("report table lists the hyperparameter rows of a JSM fit") {
  const std::string table = fit_report_table(beta_fit());
  for (const char* name : {"sigma_1", "sigma_2", "sigma_3", "sigma_4", "rho_12", "rho_34", "gamma", "exp(gamma)"})
    CHECK(table.find(name) != std::string::npos);
  CHECK(table.find("rho_13") == std::string::npos);
  CHECK(table.find("Mode") != std::string::npos);
  CHECK(table.find("95% CI") != std::string::npos);
  CHECK(table.find("gamma") < table.find("exp(gamma)"));

  std::ostringstream csv;
  write_fit_summary_csv(csv, beta_fit());
  const auto rows = lines_of(csv.str());
  CHECK(rows[0] == "kind,name,mode,mean,sd,q025,q50,q975");
  CHECK(rows.size() == 1 + beta_fit().hyper_summaries.size() + beta_fit().latent_summaries.size());
}

TEST_CASE("association CSV shapes") {
  std::mt19937_64 gen(12);
  const PopulationParams pop = random_population(ModelKind::JSM, OutcomeFamily::Beta, gen);
  AssocQuery q;
  q.a = pop.beta_v(0);
  q.resamples = 0;
  q.mc_samples = 200;
  std::vector<double> grid;
  for (int t = 10; t <= 20; ++t) grid.push_back(t);
  const AssocSurface surf = assoc_surface(pop, {}, grid, grid, q);
  std::ostringstream s, c, a;
  write_surface_csv(s, surf);
  write_curve_csv(c, surf);
  write_time_average_csv(a, surf);
  const auto sl = lines_of(s.str()), cl = lines_of(c.str()), al = lines_of(a.str());
  CHECK(sl.size() == 122);
  CHECK(cl.size() == 12);
  CHECK(al.size() == 2);
  CHECK(sl[0].rfind("s,t,a,beta_joint,ci_low,ci_high", 0) == 0);
  CHECK(cl[0].rfind("t,a,beta_joint,ci_low,ci_high", 0) == 0);
  CHECK(sl[1].rfind("10,10,", 0) == 0);
  CHECK(sl[2].rfind("10,11,", 0) == 0);
  CHECK(sl[121].rfind("20,20,", 0) == 0);
  CHECK(sl[1].find("NaN") != std::string::npos);
}

TEST_CASE("evaluation CSV has one row per model") {
  std::vector<EvaluationRow> rows(2);
  rows[0].model = ModelKind::JMM;
  rows[1].model = ModelKind::JSM;
  rows[1].diagnostics.waic_overall = 12.5;
  rows[1].diagnostics.pointwise.push_back({"A", Process::Out, 3.0, -1.0, 0.1, 2.0, 1.5, 1.0});
  std::ostringstream out, pw;
  write_evaluation_csv(out, rows);
  write_pointwise_csv(pw, rows);
  const auto l = lines_of(out.str());
  REQUIRE(l.size() == 3);
  CHECK(l[0] == "model,marginal_likelihood,dic_overall,dic_outcome,waic_overall,waic_outcome,p_dic,p_waic,draws,"
                "dic_plugin,converged");
  CHECK(l[1].rfind("JMM,", 0) == 0);
  CHECK(l[2].find(",12.5,") != std::string::npos);
  const auto p = lines_of(pw.str());
  REQUIRE(p.size() == 2);
  CHECK(p[1] == "JSM,A,out,3,-1,0.1,2,1.5,1");
}

TEST_CASE("digests") {
  CHECK(hex64(fnv1a("")) == "cbf29ce484222325");
  CHECK(hex64(fnv1a("a")) == "af63dc4c8601ec8c");
}
