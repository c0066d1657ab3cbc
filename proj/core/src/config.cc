#include "cadis/config.h"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace cadis {

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::string fmt_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* first = value.data();
  const auto* last = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) {
    throw ConfigError("invalid value '" + value + "' for key " + key);
  }
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  return parse_number<std::size_t>(key, value);
}

int parse_int(const std::string& key, const std::string& value) { return parse_number<int>(key, value); }

double parse_double(const std::string& key, const std::string& value) {
  return parse_number<double>(key, value);
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "on" || value == "yes" || value == "1") return true;
  if (value == "false" || value == "off" || value == "no" || value == "0") return false;
  throw ConfigError("invalid boolean '" + value + "' for key " + key);
}

template <class T, class Parse>
std::vector<T> parse_list(const std::string& key, const std::string& value, Parse parse) {
  std::vector<T> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(parse(key, item));
  }
  return out;
}

template <class T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) {
      out += fmt_double(values[i]);
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"data.source",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v != "synthetic" && v != "mnist") throw ConfigError("invalid value '" + v + "' for key " + k);
         c.experiment.data.source = v;
       }},
      {"data.mnist_dir", [](RunConfig& c, auto&, const std::string& v) { c.experiment.data.mnist_dir = v; }},
      {"data.classes", [](RunConfig& c, auto& k, auto& v) { c.experiment.data.classes = parse_int(k, v); }},
      {"data.dims", [](RunConfig& c, auto& k, auto& v) { c.experiment.data.dims = parse_int(k, v); }},
      {"data.per_class", [](RunConfig& c, auto& k, auto& v) { c.experiment.data.per_class = parse_int(k, v); }},
      {"data.test_per_class",
       [](RunConfig& c, auto& k, auto& v) { c.experiment.data.test_per_class = parse_int(k, v); }},
      {"data.spread", [](RunConfig& c, auto& k, auto& v) { c.experiment.data.spread = parse_double(k, v); }},

      {"partition.scheme",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         try {
           c.experiment.partition.scheme = parse_scheme(v);
         } catch (const std::invalid_argument&) {
           throw ConfigError("invalid value '" + v + "' for key " + k);
         }
       }},
      {"partition.num_clients",
       [](RunConfig& c, auto& k, auto& v) { c.experiment.partition.num_clients = parse_size(k, v); }},
      {"partition.cluster_ratios",
       [](RunConfig& c, auto& k, auto& v) {
         c.experiment.partition.cluster_ratios = parse_list<double>(k, v, parse_double);
       }},
      {"partition.label_fraction",
       [](RunConfig& c, auto& k, auto& v) { c.experiment.partition.label_fraction = parse_double(k, v); }},
      {"partition.big_cluster_share",
       [](RunConfig& c, auto& k, auto& v) { c.experiment.partition.big_cluster_share = parse_double(k, v); }},
      {"partition.pareto_shape",
       [](RunConfig& c, auto& k, auto& v) { c.experiment.partition.pareto_shape = parse_double(k, v); }},
      {"partition.balanced",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "auto") {
           c.experiment.partition.balanced.reset();
         } else {
           c.experiment.partition.balanced = parse_bool(k, v);
         }
       }},
      {"partition.seed",
       [](RunConfig& c, auto& k, auto& v) {
         c.experiment.partition.seed = parse_number<std::uint64_t>(k, v);
         c.partition_seed_set = true;
       }},

      {"network.hidden",
       [](RunConfig& c, auto& k, auto& v) {
         c.experiment.network.hidden = parse_list<std::size_t>(k, v, parse_size);
       }},
      {"network.representation_dim",
       [](RunConfig& c, auto& k, auto& v) { c.experiment.network.representation_dim = parse_size(k, v); }},

      {"training.algorithm",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         try {
           c.experiment.algorithm = parse_algorithm(v);
         } catch (const std::invalid_argument&) {
           throw ConfigError("invalid value '" + v + "' for key " + k);
         }
       }},
      {"training.rounds", [](RunConfig& c, auto& k, auto& v) { c.experiment.rounds = parse_size(k, v); }},
      {"training.clients_per_round",
       [](RunConfig& c, auto& k, auto& v) { c.experiment.clients_per_round = parse_size(k, v); }},
      {"training.local_epochs",
       [](RunConfig& c, auto& k, auto& v) { c.experiment.local_epochs = parse_size(k, v); }},
      {"training.batch_size", [](RunConfig& c, auto& k, auto& v) { c.experiment.batch_size = parse_size(k, v); }},
      {"training.learning_rate",
       [](RunConfig& c, auto& k, auto& v) { c.experiment.learning_rate = parse_double(k, v); }},
      {"training.threads", [](RunConfig& c, auto& k, auto& v) { c.experiment.threads = parse_size(k, v); }},
      {"training.target_accuracy",
       [](RunConfig& c, auto& k, auto& v) { c.experiment.target_accuracy = parse_double(k, v); }},

      {"kd.lambda", [](RunConfig& c, auto& k, auto& v) { c.experiment.kd.lambda = parse_double(k, v); }},
      {"kd.bandwidth",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "adaptive") {
           c.experiment.kd.fixed_bandwidth.reset();
         } else {
           c.experiment.kd.fixed_bandwidth = parse_double(k, v);
         }
       }},
      {"kd.probability_floor",
       [](RunConfig& c, auto& k, auto& v) { c.experiment.kd.probability_floor = parse_double(k, v); }},

      {"similarity.epsilon_start",
       [](RunConfig& c, auto& k, auto& v) { c.experiment.epsilon.start = parse_double(k, v); }},
      {"similarity.epsilon_max",
       [](RunConfig& c, auto& k, auto& v) { c.experiment.epsilon.max = parse_double(k, v); }},
      {"similarity.epsilon_ramp",
       [](RunConfig& c, auto& k, auto& v) { c.experiment.epsilon.ramp = parse_size(k, v); }},
      {"similarity.transitive",
       [](RunConfig& c, auto& k, auto& v) { c.experiment.transitive.enabled = parse_bool(k, v); }},
      {"similarity.gamma", [](RunConfig& c, auto& k, auto& v) { c.experiment.transitive.gamma = parse_double(k, v); }},
      {"similarity.cardinality",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "participants") {
           c.experiment.cardinality = ClusterCardinality::kRoundParticipants;
         } else if (v == "all") {
           c.experiment.cardinality = ClusterCardinality::kAllClients;
         } else {
           throw ConfigError("invalid value '" + v + "' for key " + k);
         }
       }},

      {"run.seed", [](RunConfig& c, auto& k, auto& v) { c.experiment.seed = parse_number<std::uint64_t>(k, v); }},
      {"run.snapshot_every",
       [](RunConfig& c, auto& k, auto& v) { c.experiment.snapshot_every = parse_size(k, v); }},
      {"run.out_dir", [](RunConfig& c, auto&, const std::string& v) { c.out_dir = v; }},
      {"run.id", [](RunConfig& c, auto&, const std::string& v) { c.run_id = v; }},
  };
  return table;
}

}  // namespace

std::string RunConfig::resolved_run_id() const {
  if (!run_id.empty()) return run_id;
  return to_string(experiment.algorithm) + "-seed" + std::to_string(experiment.seed);
}

ConfigEntries parse_config_text(const std::string& text, const std::string& origin) {
  ConfigEntries entries;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto where = origin + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(where + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": missing key");
    if (!section.empty()) key = section + "." + key;
    entries.emplace_back(std::move(key), trim(line.substr(eq + 1)));
  }
  return entries;
}

ConfigEntries read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

std::pair<std::string, std::string> parse_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  }
  return {trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1))};
}

void apply_entries(RunConfig& config, const ConfigEntries& entries) {
  const auto& table = setters();
  std::vector<std::string> unknown;
  for (const auto& [key, value] : entries) {
    const auto it = table.find(key);
    if (it == table.end()) {
      unknown.push_back(key);
      continue;
    }
    it->second(config, key, value);
  }
  if (!unknown.empty()) {
    std::string msg = "unknown config key";
    msg += unknown.size() > 1 ? "s: " : ": ";
    for (std::size_t i = 0; i < unknown.size(); ++i) msg += (i ? ", " : "") + unknown[i];
    throw ConfigError(msg);
  }
}

void apply_environment(RunConfig& config) {
  if (const char* seed = std::getenv("CADIS_SEED"); seed != nullptr && *seed != '\0') {
    apply_entries(config, {{"run.seed", seed}});
  }
  if (const char* out = std::getenv("CADIS_OUT"); out != nullptr && *out != '\0') config.out_dir = out;
}

void finalize(RunConfig& config) {
  auto& e = config.experiment;
  if (e.data.source == "mnist") {
    e.network.input_dim = 784;
    e.network.num_classes = 10;
  } else {
    if (e.data.classes < 2 || e.data.dims < e.data.classes) {
      throw ConfigError("synthetic data needs classes >= 2 and dims >= classes");
    }
    if (e.data.per_class < 1 || e.data.test_per_class < 1) {
      throw ConfigError("synthetic data needs per_class >= 1 and test_per_class >= 1");
    }
    e.network.input_dim = static_cast<std::size_t>(e.data.dims);
    e.network.num_classes = static_cast<std::size_t>(e.data.classes);
  }
  if (!config.partition_seed_set) {
    e.partition.seed = derive_seed(e.seed, {static_cast<std::uint64_t>(Stream::kPartition)});
  }
  e.validate();
}

std::string to_config_text(const RunConfig& config) {
  const auto& e = config.experiment;
  std::ostringstream out;
  out << "[data]\n"
      << "source = " << e.data.source << "\n"
      << "mnist_dir = " << e.data.mnist_dir.string() << "\n"
      << "classes = " << e.data.classes << "\n"
      << "dims = " << e.data.dims << "\n"
      << "per_class = " << e.data.per_class << "\n"
      << "test_per_class = " << e.data.test_per_class << "\n"
      << "spread = " << fmt_double(e.data.spread) << "\n\n"
      << "[partition]\n"
      << "scheme = " << to_string(e.partition.scheme) << "\n"
      << "num_clients = " << e.partition.num_clients << "\n"
      << "cluster_ratios = " << join(e.partition.cluster_ratios) << "\n"
      << "label_fraction = " << fmt_double(e.partition.label_fraction) << "\n"
      << "big_cluster_share = " << fmt_double(e.partition.big_cluster_share) << "\n"
      << "pareto_shape = " << fmt_double(e.partition.pareto_shape) << "\n"
      << "balanced = "
      << (e.partition.balanced ? (*e.partition.balanced ? "true" : "false") : "auto") << "\n";
  if (config.partition_seed_set) out << "seed = " << e.partition.seed << "\n";
  out << "\n[network]\n"
      << "hidden = " << join(e.network.hidden) << "\n"
      << "representation_dim = " << e.network.representation_dim << "\n\n"
      << "[training]\n"
      << "algorithm = " << to_string(e.algorithm) << "\n"
      << "rounds = " << e.rounds << "\n"
      << "clients_per_round = " << e.clients_per_round << "\n"
      << "local_epochs = " << e.local_epochs << "\n"
      << "batch_size = " << e.batch_size << "\n"
      << "learning_rate = " << fmt_double(e.learning_rate) << "\n"
      << "threads = " << e.threads << "\n"
      << "target_accuracy = " << fmt_double(e.target_accuracy) << "\n\n"
      << "[kd]\n"
      << "lambda = " << fmt_double(e.kd.lambda) << "\n"
      << "bandwidth = " << (e.kd.fixed_bandwidth ? fmt_double(*e.kd.fixed_bandwidth) : "adaptive") << "\n"
      << "probability_floor = " << fmt_double(e.kd.probability_floor) << "\n\n"
      << "[similarity]\n"
      << "epsilon_start = " << fmt_double(e.epsilon.start) << "\n"
      << "epsilon_max = " << fmt_double(e.epsilon.max) << "\n"
      << "epsilon_ramp = " << e.epsilon.ramp << "\n"
      << "transitive = " << (e.transitive.enabled ? "true" : "false") << "\n"
      << "gamma = " << fmt_double(e.transitive.gamma) << "\n"
      << "cardinality = "
      << (e.cardinality == ClusterCardinality::kAllClients ? "all" : "participants") << "\n\n"
      << "[run]\n"
      << "seed = " << e.seed << "\n"
      << "snapshot_every = " << e.snapshot_every << "\n"
      << "out_dir = " << config.out_dir.string() << "\n";
  if (!config.run_id.empty()) out << "id = " << config.run_id << "\n";
  return out.str();
}

std::map<std::string, std::string> documented_defaults() {
  RunConfig defaults;
  std::map<std::string, std::string> out;
  for (const auto& [key, value] : parse_config_text(to_config_text(defaults))) out[key] = value;
  out["partition.seed"] = "derived from run.seed";
  out["run.id"] = "<algorithm>-seed<seed>";
  return out;
}

}  // namespace cadis
