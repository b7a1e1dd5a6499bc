// SPDX-License-Identifier: Apache-2.0
// Stage-wise command line for the self-training and mean-teacher pipeline.
// Exit codes: 0 success, 2 config error, 3 stage error, 4 artifact mismatch.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "uamt/cli/commands.hpp"

namespace {

using namespace uamt;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;
constexpr int kExitArtifact = 4;

struct Flags {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  bool no_uncertainty = false;
  std::optional<int> iterations;
  std::vector<double> delta;
  std::optional<int> mc_passes;
  std::optional<double> alpha;
  bool per_epoch_ema = false;
  bool force = false;
  bool oracle = false;
  bool quiet = false;
};

/// Typed flags are sugar for --set; they apply after the explicit overrides.
std::vector<std::string> overrides(const Flags& f) {
  auto out = f.sets;
  if (f.out) out.push_back("io.out_dir=" + nlohmann::json(*f.out).dump());
  if (f.seed) out.push_back("seed=" + std::to_string(*f.seed));
  if (f.no_uncertainty) out.emplace_back("adapt.uncertainty=false");
  if (f.iterations) out.push_back("adapt.iterations=" + std::to_string(*f.iterations));
  if (!f.delta.empty()) out.push_back("adapt.delta=" + nlohmann::json(f.delta).dump());
  if (f.mc_passes) out.push_back("adapt.mc_passes=" + std::to_string(*f.mc_passes));
  if (f.alpha) out.push_back("adapt.alpha=" + nlohmann::json(*f.alpha).dump());
  if (f.per_epoch_ema) out.emplace_back("adapt.per_epoch_ema=true");
  return out;
}

void add_common(CLI::App& sub, Flags& f) {
  sub.add_option("-c,--config", f.config, "JSON config file (defaults apply to omitted keys)");
  sub.add_option("--set", f.sets, "Override one key, e.g. --set adapt.epochs=20 (repeatable)");
  sub.add_option("-o,--out", f.out, "Output directory (io.out_dir)");
  sub.add_option("--seed", f.seed, "Master seed");
  sub.add_flag("--no-uncertainty", f.no_uncertainty, "Plain mean teacher: consistency weight C = 1");
  sub.add_option("--iterations", f.iterations, "Pseudo-label rounds J");
  sub.add_option("--delta", f.delta, "Confidence threshold per round, e.g. --delta 0.1 0.6 0.8")->expected(1, -1);
  sub.add_option("--mc-passes", f.mc_passes, "Monte-Carlo dropout passes T");
  sub.add_option("--alpha", f.alpha, "EMA smoothing coefficient");
  sub.add_flag("--per-epoch-ema", f.per_epoch_ema, "Update the teacher once per epoch instead of per batch");
  sub.add_flag("-f,--force", f.force, "Accept upstream artifacts produced under a different config");
  sub.add_flag("-q,--quiet", f.quiet, "Only print warnings and errors");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uncertainty-aware mean-teacher domain adaptation on synthetic BEV point scenes"};
  app.require_subcommand(1);
  Flags f;

  struct Cmd {
    const char* name;
    const char* help;
  };
  const Cmd cmds[] = {{"gen-data", "Generate source, target-train (labels withheld) and eval datasets"},
                      {"train-source", "Train the source-only detector"},
                      {"pseudo-iter", "Iterative pseudo-label rounds on the target domain"},
                      {"adapt", "Mean-teacher training on the final pseudo-labels"},
                      {"eval", "Evaluate every trained model on the labeled eval splits"},
                      {"report", "Confidence-density, AP-per-round and variance CSVs plus a summary"},
                      {"run", "All stages in order"},
                      {"show-config", "Print the resolved config and its stage hashes"}};
  std::vector<CLI::App*> subs;
  for (const auto& c : cmds) {
    auto* s = app.add_subcommand(c.name, c.help);
    add_common(*s, f);
    subs.push_back(s);
  }
  subs[1]->add_flag("--oracle", f.oracle, "Analysis mode: train the ceiling model on target ground truth");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    const auto cfg = load_config(f.config, overrides(f));
    if (name == "show-config") {
      nlohmann::json out = {{"config", to_json(cfg)}, {"config_hash", config_hash(cfg)}};
      for (auto s : {Stage::Data, Stage::Source, Stage::Pseudo, Stage::Adapt, Stage::Report})
        out["stage_hashes"][to_string(s)] = stage_hash(cfg, s);
      std::cout << out.dump(2) << '\n';
      return kExitOk;
    }
    const auto ctx = cli::make_context(cfg, f.force, f.quiet ? nullptr : &std::cout);
    const cli::DirLock lock(ctx.dir);
    if (name == "gen-data") cli::cmd_gen_data(ctx);
    else if (name == "train-source") cli::cmd_train_source(ctx, f.oracle);
    else if (name == "pseudo-iter") cli::cmd_pseudo_iter(ctx);
    else if (name == "adapt") cli::cmd_adapt(ctx);
    else if (name == "eval") cli::cmd_eval(ctx);
    else if (name == "report") cli::cmd_report(ctx);
    else cli::run_pipeline(ctx);
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ArtifactError& e) {
    std::cerr << "artifact mismatch: " << e.what() << '\n';
    return kExitArtifact;
  } catch (const std::exception& e) {
    std::cerr << name << " failed: " << e.what() << '\n';
    return kExitStage;
  }
}
