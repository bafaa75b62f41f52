// Copyright 2026 The SUA Workbench Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// sua_cli <verb> [--config PATH] [--seed N] [--out DIR] [--method NAME]
//         [--task NAME] [--coverage F] [--tau F] [--k N] [--lambda F]
//
// Exit codes: 0 success, 1 invariant violation, 2 configuration error.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "sua/commands.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> method;
  std::optional<std::string> task;
  std::optional<double> coverage;
  std::optional<double> tau;
  std::optional<int> k;
  std::optional<double> lambda;
};

void add_flags(CLI::App& cmd, Flags& f) {
  cmd.add_option("--config", f.config, "TOML run configuration")->check(CLI::ExistingFile);
  cmd.add_option("--seed", f.seed, "single master seed (replaces the config's seed list)");
  cmd.add_option("--out", f.out, "output root directory");
  cmd.add_option("--method", f.method, "training method, or 'all'");
  cmd.add_option("--task", f.task, "task family (factual, ambiguous, shifted), or 'all'");
  cmd.add_option("--coverage", f.coverage, "target coverage for threshold calibration");
  cmd.add_option("--tau", f.tau, "abstention threshold (skips calibration)");
  cmd.add_option("--k", f.k, "perturbations per input");
  cmd.add_option("--lambda", f.lambda, "entropy weight of the alignment score");
}

sua::RunConfig resolve(const Flags& f) {
  sua::RunConfig c;
  if (!f.config.empty()) c = sua::load_config(f.config);
  sua::Overrides o;
  o.seed = f.seed;
  o.out = f.out;
  o.method = f.method;
  o.task = f.task;
  o.coverage = f.coverage;
  o.tau = f.tau;
  o.k = f.k;
  o.lambda = f.lambda;
  return sua::apply_overrides(std::move(c), o);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sensitivity-uncertainty alignment workbench"};
  app.require_subcommand(1);
  Flags flags;
  const std::pair<const char*, const char*> verbs[] = {
      {"gen-data", "write worlds and dataset splits"},
      {"train", "train checkpoints for the selected methods"},
      {"eval", "metrics for every score on the eval split"},
      {"score", "per-input alignment scores"},
      {"abstain", "thresholded answers with failure signatures"},
      {"verify", "empirical bound checks and the K study"},
      {"ablate", "lambda, K, mixture and loss-term ablations"},
      {"report", "collect eval outputs into summary tables"},
  };
  for (const auto& [name, help] : verbs) add_flags(*app.add_subcommand(name, help), flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? sua::kExitOk : sua::kExitConfig;
  }

  const std::string verb = app.get_subcommands().front()->get_name();
  try {
    const sua::RunConfig config = resolve(flags);
    return sua::run_command(verb, config, std::cerr);
  } catch (const sua::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return sua::kExitConfig;
  } catch (const sua::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return sua::kExitConfig;
  } catch (const sua::TrainingDiverged& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return sua::kExitInvariant;
  } catch (const sua::ContractViolation& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return sua::kExitInvariant;
  }
}
