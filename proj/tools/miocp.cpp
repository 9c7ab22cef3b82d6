// miocp solve|sweep|check|simulate --config <path> [--out <dir>] ...

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "miocp/cli/commands.hpp"

int main(int argc, char** argv) {
  using namespace miocp;
  CLI::App app{"Mutual-information optimal control solver for linear Gaussian systems"};
  app.require_subcommand(1);

  cli::CommandOptions opt;
  std::string epsilons;
  std::string grid;
  std::uint64_t seed = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "problem configuration file")->required();
    sub->add_option("--out", opt.out_dir, "output directory (created if missing)");
  };
  auto* solve = app.add_subcommand("solve", "run the alternating algorithm; write history/summary/conditions CSVs");
  common(solve);
  auto* sweep = app.add_subcommand("sweep", "solve for several temperatures; write summary.csv and thresholds.csv");
  common(sweep);
  sweep->add_option("--epsilons", epsilons, "comma-separated temperatures");
  sweep->add_option("--log-grid", grid, "lo,hi,count log-spaced temperatures");
  auto* check = app.add_subcommand("check", "evaluate the stochastic/deterministic conditions and thresholds");
  common(check);
  auto* simulate = app.add_subcommand("simulate", "solve, then Monte Carlo estimate of the objective");
  common(simulate);
  simulate->add_option("--n-traj", opt.n_traj, "number of trajectories")->check(CLI::PositiveNumber);
  auto* seed_opt = simulate->add_option("--seed", seed, "generator seed (overrides [run] seed)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::kConfigError;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  if (seed_opt->count() > 0) opt.seed = seed;
  if (command == "sweep") {
    try {
      if (!epsilons.empty()) opt.epsilons = cli::parse_epsilon_list(epsilons);
      if (!grid.empty()) {
        const auto g = cli::parse_epsilon_list(grid);
        if (g.size() != 3 || g[2] < 1 || g[2] != static_cast<double>(static_cast<std::size_t>(g[2]))) {
          throw io::ConfigError("--log-grid expects lo,hi,count");
        }
        for (double e : cli::log_grid(g[0], g[1], static_cast<std::size_t>(g[2]))) opt.epsilons.push_back(e);
      }
    } catch (const io::ConfigError& e) {
      std::cerr << "usage error: " << e.what() << "\n";
      return cli::kConfigError;
    }
  }
  return cli::run_command(command, opt);
}
