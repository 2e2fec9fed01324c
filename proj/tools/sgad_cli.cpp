#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "sgad/run.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Adaptive block-dropping residual network: train, evaluate, analyze"};
  std::string config_path, command, mapping_mode, include_bmnet, resume;
  long long seed = -1;
  double smax = -1;

  app.add_option("--config", config_path, "key=value config file")->check(CLI::ExistingFile);
  app.add_option("--command", command, "train|eval|analyze|prune|export|report")->required();
  app.add_option("--seed", seed, "override train.seed");
  app.add_option("--smax", smax, "override mapping.s_max")->check(CLI::Range(0.0, 1.0));
  app.add_option("--mapping-mode", mapping_mode, "variance-to-drop mapping variant")
      ->check(CLI::IsMember({"consistent", "paper-literal"}));
  app.add_option("--include-bmnet-flops", include_bmnet, "count BMNet cost in n-FLOPs")
      ->check(CLI::IsMember({"true", "false", "1", "0"}));
  app.add_option("--resume", resume, "checkpoint directory to load");

  CLI11_PARSE(app, argc, argv);

  try {
    sgad::ExperimentConfig cfg;
    if (!config_path.empty()) cfg = sgad::ExperimentConfig::from_file(config_path);
    if (seed >= 0) cfg.train.seed = uint64_t(seed);
    if (smax >= 0) cfg.s_max = smax;
    if (!mapping_mode.empty()) cfg.set("mapping.mode", mapping_mode);
    if (!include_bmnet.empty()) cfg.set("include_bmnet_flops", include_bmnet);
    return sgad::run_command(command, cfg, resume);
  } catch (const sgad::ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
