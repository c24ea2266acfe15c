#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "ebcl/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Energy-balanced continual low-rank adaptation experiments"};
  std::string config, out, mode;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  auto* config_opt = app.add_option("--config", config, "JSON config (a manifest also works)");
  auto* seed_opt = app.add_option("--seed", seed, "Master seed; overrides config seeds");
  auto* out_opt = app.add_option("--out", out, "Output directory");
  auto* mode_opt = app.add_option("--mode", mode, "run | baseline | merge-experiment | spectrum | metrics | compare");
  app.add_option("inputs", inputs, "metrics: <csv>; spectrum: <adapters.txt>; compare: <dirA> <dirB>");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    ebcl::report_error(std::cerr, "ConfigError", e.what());
    return ebcl::kExitConfig;
  }

  ebcl::CliArgs args;
  if (*config_opt) args.config_path = config;
  if (*seed_opt) args.seed = seed;
  if (*out_opt) args.out = out;
  if (*mode_opt) args.mode = mode;
  args.positionals = inputs;
  return ebcl::dispatch(args, std::cout, std::cerr);
}
