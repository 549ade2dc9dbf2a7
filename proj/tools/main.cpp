#include <CLI11.hpp>
#include <iostream>

#include "run.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Critical-point complexity of perceptron loss landscapes"};
  std::string config;
  std::string output;
  std::uint64_t seed = 0;
  app.add_option("config", config, "Run configuration (key = value with [section] headers)")->required();
  auto* out_opt = app.add_option("-o,--output", output, "Override [run] output");
  auto* seed_opt = app.add_option("-s,--seed", seed, "Override [run] seed");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : landscape::cli::kConfigError;
  }
  landscape::cli::RunOverrides ov;
  if (*out_opt) ov.output = output;
  if (*seed_opt) ov.seed = seed;
  return landscape::cli::run_file(config, std::cerr, ov);
}
