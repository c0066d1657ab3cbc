#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cadis/config.h"
#include "cadis/engine.h"
#include "cadis/gradcheck.h"
#include "cadis/partition.h"
#include "cadis/report.h"
#include "cadis/theory.h"

namespace {

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> id;
};

void add_config_flags(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("-c,--config", args.path, "Experiment config file (key = value with [sections])");
  cmd->add_option("--set", args.overrides, "Override a key, e.g. --set training.rounds=20")->take_all();
  cmd->add_option("--seed", args.seed, "Master seed (overrides run.seed and CADIS_SEED)");
  cmd->add_option("--out", args.out, "Output root (overrides run.out_dir and CADIS_OUT)");
  cmd->add_option("--id", args.id, "Run id; outputs go to <out>/<id>/");
}

// File, then environment, then --set, then dedicated flags.
cadis::RunConfig load_config(const ConfigArgs& args) {
  cadis::RunConfig config;
  if (!args.path.empty()) cadis::apply_entries(config, cadis::read_config_file(args.path));
  cadis::apply_environment(config);
  cadis::ConfigEntries overrides;
  for (const auto& o : args.overrides) overrides.push_back(cadis::parse_override(o));
  cadis::apply_entries(config, overrides);
  if (args.seed) config.experiment.seed = *args.seed;
  if (args.out) config.out_dir = *args.out;
  if (args.id) config.run_id = *args.id;
  cadis::finalize(config);
  return config;
}

std::vector<double> parse_doubles(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

int cmd_run(const ConfigArgs& args, bool quiet) {
  const auto config = load_config(args);
  const auto dir = config.out_dir / config.resolved_run_id();
  const auto federation = cadis::load_federation(config.experiment);
  const auto every = config.experiment.snapshot_every;
  const auto result = cadis::run_experiment(
      config.experiment, federation, [&](const cadis::Simulator& sim, const cadis::RoundMetrics& m) {
        if (!quiet) {
          std::fprintf(stderr, "round %zu top1=%.2f clusters=%zu loss=%.4f\n", m.round, m.top1,
                       m.num_clusters, m.mean_local_loss);
        }
        if (every > 0 && m.round % every == 0 && cadis::uses_clustering(config.experiment.algorithm)) {
          cadis::write_similarity_snapshot(dir, sim.similarity());
        }
      });
  cadis::write_run_outputs(dir, result, config);
  const auto summary = cadis::summary_json(result, config);
  std::printf("%s best_top1=%.2f final_top1=%.2f outputs=%s\n", config.resolved_run_id().c_str(),
              summary["best_top1"].get<double>(), summary["final_top1"].get<double>(), dir.c_str());
  return 0;
}

int cmd_theory_rounds(std::size_t n, std::size_t k, std::size_t trials, std::uint64_t seed, bool csv) {
  const double exact = cadis::theory::expected_rounds_exact(n, k);
  const double bound = cadis::theory::expected_rounds_bound(n, k);
  cadis::theory::MonteCarloEstimate mc;
  if (trials > 0) mc = cadis::theory::expected_rounds_mc(n, k, trials, seed);
  if (csv) {
    std::printf("n,k,exact,bound,mc_mean,mc_ci99\n%zu,%zu,%.9g,%.9g,%.9g,%.9g\n", n, k, exact, bound,
                mc.mean, mc.half_width);
  } else {
    std::printf("n=%zu k=%zu exact=%.3f bound=%.3f", n, k, exact, bound);
    if (trials > 0) std::printf(" mc=%.3f ci99=%.3f", mc.mean, mc.half_width);
    std::printf("\n");
  }
  return 0;
}

int cmd_theory_convergence(const std::string& a, const std::string& b, const std::string& clusters,
                           double eta, std::size_t steps, std::size_t rounds, double z0,
                           const std::string& trajectory_csv) {
  using namespace cadis::theory;
  const auto av = parse_doubles(a);
  const auto bv = parse_doubles(b);
  const auto cv = parse_doubles(clusters);
  if (av.size() != bv.size() || av.size() != cv.size()) {
    throw std::invalid_argument("--a, --b and --clusters must have the same length");
  }
  std::vector<QuadraticClient> clients;
  for (std::size_t i = 0; i < av.size(); ++i) {
    clients.push_back({av[i], bv[i], static_cast<std::size_t>(cv[i])});
  }
  const double zc = iterate_to_convergence(clients, eta, steps, AggregationScheme::kCadis, z0);
  const double zf = iterate_to_convergence(clients, eta, steps, AggregationScheme::kFedAvg, z0);
  const double fc = global_objective(zc, clients);
  const double ff = global_objective(zf, clients);
  std::printf("z_cadis=%.6f z_fedavg=%.6f f_cadis=%.6f f_fedavg=%.6f gap=%.5f\n", zc, zf, fc, ff, ff - fc);
  if (!trajectory_csv.empty()) {
    const auto tc = quadratic_trajectory(clients, eta, steps, rounds, AggregationScheme::kCadis, z0);
    const auto tf = quadratic_trajectory(clients, eta, steps, rounds, AggregationScheme::kFedAvg, z0);
    std::ofstream out(trajectory_csv);
    if (!out) throw std::runtime_error("cannot write " + trajectory_csv);
    out << "round,z_cadis,z_fedavg,f_cadis,f_fedavg\n";
    char buf[160];
    for (std::size_t t = 0; t < tc.size(); ++t) {
      std::snprintf(buf, sizeof buf, "%zu,%.12g,%.12g,%.12g,%.12g\n", t, tc[t], tf[t],
                    global_objective(tc[t], clients), global_objective(tf[t], clients));
      out << buf;
    }
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t trials, std::optional<double> lambda,
                  std::optional<std::size_t> flip, double tol) {
  cadis::GradCheckOptions options;
  options.inject_sign_flip = flip;
  const auto cases = cadis::run_gradcheck_suite(trials, seed, lambda, options);
  std::size_t failures = 0;
  for (const auto& c : cases) {
    const bool ok = c.report.max_relative_error < tol;
    failures += ok ? 0 : 1;
    std::printf("%s %s max_rel_err=%.3e checked=%zu kinks=%zu\n", ok ? "PASS" : "FAIL", c.describe().c_str(),
                c.report.max_relative_error, c.report.checked, c.report.skipped_kinks);
  }
  std::printf("%zu/%zu configurations within %.0e\n", cases.size() - failures, cases.size(), tol);
  return failures == 0 ? 0 : 1;
}

int cmd_partition(const ConfigArgs& args, const std::string& output) {
  const auto config = load_config(args);
  const auto federation = cadis::load_federation(config.experiment);
  const auto manifest = cadis::manifest_json(federation.partition, config.experiment.partition);
  if (output.empty() || output == "-") {
    std::cout << manifest.dump(2) << "\n";
  } else {
    std::ofstream out(output);
    if (!out) throw std::runtime_error("cannot write " + output);
    out << manifest.dump(2) << "\n";
  }
  const auto sizes = federation.partition.cluster_sizes();
  std::fprintf(stderr, "%zu clients, %zu clusters:", federation.partition.shards.size(), sizes.size());
  for (auto s : sizes) std::fprintf(stderr, " %zu", s);
  std::fprintf(stderr, "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cluster-skew-aware federated learning simulator"};
  app.require_subcommand(1);

  ConfigArgs run_args;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "Run one federated experiment");
  add_config_flags(run, run_args);
  run->add_flag("-q,--quiet", quiet, "No per-round progress on stderr");

  auto* keys = app.add_subcommand("config-keys", "List config keys and their defaults");

  auto* theory = app.add_subcommand("theory", "Closed-form and Monte Carlo checks");
  theory->require_subcommand(1);
  std::size_t n = 10;
  std::size_t k = 3;
  std::size_t trials = 0;
  std::uint64_t theory_seed = 1;
  bool csv = false;
  auto* rounds = theory->add_subcommand("rounds", "Expected rounds until every client has participated");
  rounds->add_option("-n", n, "Number of clients")->required();
  rounds->add_option("-k", k, "Clients per round")->required();
  rounds->add_option("--trials", trials, "Monte Carlo trials (0 = skip)");
  rounds->add_option("--seed", theory_seed, "Monte Carlo seed");
  rounds->add_flag("--csv", csv, "CSV output");

  std::string qa = "1,1,1";
  std::string qb = "2,2,0";
  std::string qc = "0,0,1";
  double eta = 0.01;
  std::size_t steps = 5;
  std::size_t qrounds = 200;
  double z0 = 0.0;
  std::string traj;
  auto* conv = theory->add_subcommand("convergence", "Quadratic-client fixed points under both aggregations");
  conv->add_option("--a", qa, "Comma-separated curvatures a_i > 0");
  conv->add_option("--b", qb, "Comma-separated linear terms b_i");
  conv->add_option("--clusters", qc, "Comma-separated cluster tags");
  conv->add_option("--eta", eta, "Local learning rate");
  conv->add_option("--steps", steps, "Local steps per round");
  conv->add_option("--rounds", qrounds, "Rounds to write with --trajectory");
  conv->add_option("--z0", z0, "Initial global value");
  conv->add_option("--trajectory", traj, "Write the per-round trajectory CSV here");

  std::uint64_t gc_seed = 1;
  std::size_t gc_trials = 24;
  std::optional<double> gc_lambda;
  std::optional<std::size_t> gc_flip;
  double gc_tol = 1e-4;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of CE + lambda * KD gradients");
  gradcheck->add_option("--seed", gc_seed, "Seed");
  gradcheck->add_option("--trials", gc_trials, "Random configurations");
  gradcheck->add_option("--lambda", gc_lambda, "Fix lambda (0 = cross-entropy only)");
  gradcheck->add_option("--flip-index", gc_flip, "Flip the sign of one analytic gradient entry");
  gradcheck->add_option("--tol", gc_tol, "Maximum relative error");

  ConfigArgs part_args;
  std::string manifest_out;
  auto* part = app.add_subcommand("partition", "Print the client split for a config without training");
  add_config_flags(part, part_args);
  part->add_option("-o,--output", manifest_out, "Manifest path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(run_args, quiet);
    if (keys->parsed()) {
      for (const auto& [key, value] : cadis::documented_defaults()) std::printf("%s = %s\n", key.c_str(), value.c_str());
      return 0;
    }
    if (rounds->parsed()) return cmd_theory_rounds(n, k, trials, theory_seed, csv);
    if (conv->parsed()) return cmd_theory_convergence(qa, qb, qc, eta, steps, qrounds, z0, traj);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_seed, gc_trials, gc_lambda, gc_flip, gc_tol);
    if (part->parsed()) return cmd_partition(part_args, manifest_out);
  } catch (const cadis::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
