#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "erg/runner.hpp"

namespace runner = erg::runner;

int main(int argc, char** argv) {
  CLI::App app{"Multiscale Gaussian decompositions, RG flows and polymer checks"};
  app.set_version_flag("--version", runner::kVersion);
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path, seed, out, report_dir;
  app.add_option("--config", config_path, "key=value file or a run manifest (.json)");
  app.add_option("--seed", seed, "top-level seed (u64)");
  app.add_option("--out", out, "output directory");

  std::map<std::string, std::map<std::string, std::string>> values;
  std::map<std::string, CLI::App*> subs;
  for (const auto& name : runner::command_names()) {
    CLI::App* sub = app.add_subcommand(name, "");
    sub->footer("Keys (flag, default, meaning):\n" + runner::help_text(name));
    for (const auto& key : runner::config_keys(name)) {
      if (key.name == "seed" || key.name == "out") continue;
      sub->add_option("--" + key.name, values[name][key.name], key.help);
    }
    if (name == "report") sub->add_option("directory", report_dir, "directory holding the manifests");
    subs[name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : runner::kExitInvalidInput;
  }

  for (const auto& [name, sub] : subs) {
    if (!sub->parsed()) continue;
    std::map<std::string, std::string> overrides;
    for (const auto& [k, v] : values[name])
      if (sub->count("--" + k) > 0) overrides[k] = v;
    if (name == "report" && sub->count("directory") > 0) overrides["dir"] = report_dir;
    if (app.count("--seed")) overrides["seed"] = seed;
    if (app.count("--out")) overrides["out"] = out;
    std::optional<std::filesystem::path> cfg;
    if (app.count("--config")) cfg = config_path;
    return runner::run_command(name, cfg, overrides, std::cerr);
  }
  return runner::kExitInvalidInput;
}
