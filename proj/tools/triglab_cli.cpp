// triglab: forge models, run experiments, verify model files.
//
// Exit codes: 0 ok, 2 config error, 3 model I/O error, 4 verification
// failure, 1 anything else.

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "triglab/error.hpp"
#include "triglab/experiments.hpp"
#include "triglab/forge.hpp"
#include "triglab/model_io.hpp"

using namespace triglab;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitModelIo = 3;
constexpr int kExitVerify = 4;

std::string read_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractViolation("cannot read config file " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int cmd_forge(const std::string& kind, const std::string& config, const std::string& out) {
  const ForgeKind k = kind == "handcraft" ? ForgeKind::handcraft : ForgeKind::train;
  const ForgeConfig fc = config.empty() ? parse_forge_config(k, "") : parse_forge_config(k, read_config(config));
  const ForgedModel m = forge(fc);
  for (const auto& p : write_forged(m, out)) std::printf("wrote %s\n", p.string().c_str());
  return 0;
}

int cmd_run(const ExperimentConfig& c) {
  c.validate();
  const LoadedModel m = load_with_sidecars(c.model);
  const Report r = run_experiment(c, m);
  const ReportPaths p = write_report(r, c.out);
  std::printf("wrote %s\nwrote %s\nwrote %s\n", p.json.string().c_str(), p.csv.string().c_str(),
              p.svg.string().c_str());
  return 0;
}

int cmd_verify(const std::string& model) {
  const auto checks = verify_model(model);
  bool ok = true;
  for (const auto& c : checks) {
    std::printf("%s  %s%s%s\n", c.pass ? "PASS" : "FAIL", c.name.c_str(), c.detail.empty() ? "" : ": ",
                c.detail.c_str());
    ok = ok && c.pass;
  }
  return ok ? 0 : kExitVerify;
}

bool out_on_command_line(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--out" || a.rfind("--out=", 0) == 0) return true;
  }
  return false;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"triglab: trigger-circuit lab"};
  app.set_version_flag("--version", std::string(TRIGLAB_VERSION));
  app.require_subcommand(1);

  std::string forge_kind, forge_config, forge_out;
  auto* forge_cmd = app.add_subcommand("forge", "Build a handcrafted or trained model file");
  forge_cmd->add_option("kind", forge_kind, "handcraft or train")->required()->check(CLI::IsMember({"handcraft", "train"}));
  forge_cmd->add_option("--config", forge_config, "key = value config file");
  forge_cmd->add_option("--out", forge_out, "Output model path")->required();

  ExperimentConfig rc;
  std::string model_path, out_dir = rc.out.string(), corruption = "gaussian", condition;
  int layer = -1;
  std::size_t pairs = 0;
  auto* run_cmd = app.add_subcommand("run", "Run one named experiment");
  // run options may also come from a config file: flag names as keys under [run]
  app.set_config("--config", "", "Config file; run flags go under a [run] section");
  run_cmd->fallthrough();
  run_cmd->add_option("--model", model_path, "Model file")->required();
  run_cmd->add_option("--experiment", rc.experiment, "Experiment name")->required();
  run_cmd->add_option("--prompts", rc.n_prompts, "Number of prompts")->capture_default_str();
  run_cmd->add_option("--seeds", rc.n_seeds, "Corruption seeds per prompt")->capture_default_str();
  run_cmd->add_option("--corruption", corruption, "gaussian or neutral")
      ->check(CLI::IsMember({"gaussian", "neutral"}))
      ->capture_default_str();
  run_cmd->add_option("--seed", rc.seed, "Experiment seed")->capture_default_str();
  run_cmd->add_option("--out", out_dir, "Output directory")->envname("TRIGLAB_OUT")->capture_default_str();
  run_cmd->add_option("--condition", condition, "Stimulus condition (attn-map, head-sweep)");
  run_cmd->add_option("--layer", layer, "Layer (ablate-trigpos, head-sweep)");
  run_cmd->add_option("--pairs", pairs, "Natural stimulus pairs (probes, dnat)");

  std::string verify_path;
  auto* verify_cmd = app.add_subcommand("verify", "Run the invariant suite on a model file");
  verify_cmd->add_option("model", verify_path, "Model file")->required();

  auto* list_cmd = app.add_subcommand("list", "List experiment names");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*forge_cmd) return cmd_forge(forge_kind, forge_config, forge_out);
    if (*list_cmd) {
      for (const auto& n : experiment_names()) std::printf("%s\n", n.c_str());
      return 0;
    }
    if (*verify_cmd) return cmd_verify(verify_path);
    rc.model = model_path;
    // TRIGLAB_OUT beats a config file but not an explicit --out
    if (const char* env = std::getenv("TRIGLAB_OUT"); env && *env && !out_on_command_line(argc, argv)) out_dir = env;
    rc.out = out_dir;
    rc.corruption = corruption_kind_from_string(corruption);
    if (!condition.empty()) rc.condition = stimulus_condition_from_string(condition);
    if (run_cmd->count("--layer")) rc.layer = layer;
    if (run_cmd->count("--pairs")) rc.n_pairs = pairs;
    return cmd_run(rc);
  } catch (const ContractViolation& e) {
    std::fprintf(stderr, "triglab: config error: %s\n", e.what());
    return kExitConfig;
  } catch (const ModelIoError& e) {
    std::fprintf(stderr, "triglab: model I/O error: %s\n", e.what());
    return kExitModelIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "triglab: %s\n", e.what());
    return 1;
  }
}
