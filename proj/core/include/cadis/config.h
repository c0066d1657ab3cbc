#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cadis/engine.h"

namespace cadis {

// Experiment config plus where its outputs go.
struct RunConfig {
  ExperimentConfig experiment;
  std::filesystem::path out_dir = "runs";
  std::string run_id;  // empty: derived from algorithm and seed
  bool partition_seed_set = false;

  std::string resolved_run_id() const;
};

// Flat "section.key" -> value pairs, in file order.
using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

// INI-style text: "[section]" headers, "key = value" lines, '#' comments.
// Keys before any header are top-level.
ConfigEntries parse_config_text(const std::string& text, const std::string& origin = "<config>");
ConfigEntries read_config_file(const std::filesystem::path& path);

// "section.key=value" as given to --set.
std::pair<std::string, std::string> parse_override(const std::string& assignment);

// Applies entries in order. Every unknown key is collected and reported in
// one ConfigError; bad values name the key they belong to.
void apply_entries(RunConfig& config, const ConfigEntries& entries);

// CADIS_SEED and CADIS_OUT.
void apply_environment(RunConfig& config);

// Derives network input/output sizes from the data section, seeds the
// partition from the master seed unless set, and validates.
void finalize(RunConfig& config);

// Documented key -> default value, for --help-config and the README.
std::map<std::string, std::string> documented_defaults();

// Round-trips through apply_entries.
std::string to_config_text(const RunConfig& config);

}  // namespace cadis
