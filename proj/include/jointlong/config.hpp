#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "jointlong/association.hpp"
#include "jointlong/core.hpp"
#include "jointlong/estimation.hpp"
#include "jointlong/simgen.hpp"

namespace jointlong {

// Dotted key -> scalar text. Sequences are stored comma-separated.
using FlatConfig = std::map<std::string, std::string>;

FlatConfig parse_yaml_config(const std::string& text);
FlatConfig load_yaml_config(const std::string& path);
// "key=value" as given to --set.
std::pair<std::string, std::string> parse_assignment(const std::string& text);

bool is_known_key(const std::string& key);

struct Settings {
  FlatConfig merged;

  ModelSpec spec;
  FitControl fit;

  std::string data_path;
  std::optional<OutcomeRange> outcome_range;
  bool skip_bad_rows = false;

  std::string fit_path;
  AssocQuery assoc;
  std::vector<double> grid_s;
  std::vector<double> grid_t;

  StudyConfig study;
  bool write_datasets = true;
  bool run_study = true;

  std::vector<ModelKind> eval_models{ModelKind::JMM, ModelKind::JSM};
  int eval_draws = 2000;
  std::uint64_t eval_seed = 1;

  std::string output_dir = ".";
  bool strict = false;
  int jobs = 1;

  bool has(const std::string& key) const { return merged.count(key) > 0; }
  // Throws ConfigError naming the key when it is absent.
  void require(const std::string& key) const;
};

// Precedence: overrides (flags) > file > environment default > built-in.
// `env_jobs` is the job count from the environment, if any.
Settings resolve_settings(const FlatConfig& file, const FlatConfig& overrides,
                          std::optional<int> env_jobs = std::nullopt);

// "1,2,3" or "lo:hi:step" (inclusive, step > 0).
std::vector<double> parse_number_list(const std::string& key, const std::string& text);

// Canonical text of the merged configuration, for hashing.
std::string canonical_config(const FlatConfig& merged);

}  // namespace jointlong
