#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "jointlong/association.hpp"
#include "jointlong/core.hpp"
#include "jointlong/estimation.hpp"
#include "jointlong/simgen.hpp"

namespace jointlong {

// Shortest decimal that round-trips to the same double.
std::string format_double(double x);

struct CsvOptions {
  bool skip_bad_rows = false;
  // Applied to outcome values when set (Beta family ingestion).
  std::optional<OutcomeRange> outcome_range;
};

struct IngestReport {
  std::size_t rows = 0;
  std::size_t skipped_empty = 0;
  std::size_t skipped_bad = 0;
  std::vector<std::string> messages;
};

// Long format: subject_id,time,process,value with process in {cov,out}.
// Further columns are time-fixed subject covariates.
LongDataset read_dataset_csv(std::istream& in, const CsvOptions& options = {}, IngestReport* report = nullptr);
LongDataset read_dataset_csv(const std::string& path, const CsvOptions& options = {},
                             IngestReport* report = nullptr);
void write_dataset_csv(std::ostream& out, const LongDataset& data);
void write_dataset_csv(const std::string& path, const LongDataset& data);

inline constexpr const char* kFitSchema = "jointlong.fit/1";

std::string fit_to_json(const FitResult& fit, int indent = 2);
// Restores what association and reporting need: spec, hyper mode and
// covariance, latent mode, summaries and diagnostics scalars.
FitResult fit_from_json(const std::string& text);

// Table of hyperparameter modes and equal-tailed intervals, one row per
// standard deviation and correlation, then sigma2, phi and (JSM) gamma and
// exp(gamma).
std::string fit_report_table(const FitResult& fit);

void write_fit_summary_csv(std::ostream& out, const FitResult& fit);
void write_surface_csv(std::ostream& out, const AssocSurface& surface);
void write_curve_csv(std::ostream& out, const AssocSurface& surface);
void write_time_average_csv(std::ostream& out, const AssocSurface& surface);

struct EvaluationRow {
  ModelKind model = ModelKind::JSM;
  FitDiagnostics diagnostics;
  bool converged = false;
};
void write_evaluation_csv(std::ostream& out, const std::vector<EvaluationRow>& rows);
void write_pointwise_csv(std::ostream& out, const std::vector<EvaluationRow>& rows);

void write_study_rows_csv(std::ostream& out, const StudyReport& report);
void write_study_curves_csv(std::ostream& out, const StudyReport& report);
void write_study_summary_csv(std::ostream& out, const StudyReport& report);
void write_study_hyper_csv(std::ostream& out, const StudyReport& report);

// 64-bit FNV-1a.
std::uint64_t fnv1a(const std::string& bytes);
std::string hex64(std::uint64_t v);
std::string file_digest(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace jointlong
