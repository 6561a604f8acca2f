// Command-line front end; talks to the library only through the C interface.
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qfuse/qfuse.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRunFailure = 1;
constexpr int kExitUsage = 2;

int exit_code(qf_status s) {
  switch (s) {
    case QF_OK:
      return kExitOk;
    case QF_ERR_USAGE:
    case QF_ERR_CONFIG:
      return kExitUsage;
    default:
      return kExitRunFailure;
  }
}

int report(qf_status s) {
  if (s != QF_OK) std::fprintf(stderr, "qfuse: %s: %s\n", qf_status_name(s), qf_last_error());
  return exit_code(s);
}

void print_line(const char* line, void*) {
  std::printf("%s\n", line);
  std::fflush(stdout);
}

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::vector<std::string> seeds;
  bool no_lidar = false;
  std::string mode;
  std::string out = "runs";
  std::string threads;
  std::string checkpoint;
  std::string axis;
  std::string path;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "Config file (key = value lines, [section] headers)");
  cmd->add_option("--set", o.sets, "Override one key, e.g. --set fusion.dae_hidden=4")->take_all();
  cmd->add_option("--seed", o.seeds, "Run seed(s); replaces run.seeds");
  cmd->add_flag("--no-lidar", o.no_lidar, "Replace LiDAR inputs with zero-initialised features");
  cmd->add_option("--mode", o.mode, "Fusion mode: camera_only|progressive|input_summation|deep_summation|separate");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--threads", o.threads, "Worker threads (0 = all cores)");
}

// Config file first, then --set overrides, then the dedicated flags.
qf_status build_config(const Options& o, const char* run_mode, qf_config* cfg) {
  qf_status s = qf_config_set(cfg, "run.mode", run_mode);
  if (s == QF_OK && !o.config.empty()) s = qf_config_load_file(cfg, o.config.c_str());
  for (const auto& kv : o.sets) {
    if (s != QF_OK) break;
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "qfuse: --set expects key=value, got '%s'\n", kv.c_str());
      return QF_ERR_USAGE;
    }
    s = qf_config_set(cfg, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
  }
  if (s == QF_OK && !o.seeds.empty()) {
    std::string joined;
    for (const auto& seed : o.seeds) joined += (joined.empty() ? "" : ",") + seed;
    s = qf_config_set(cfg, "run.seeds", joined.c_str());
  }
  if (s == QF_OK && o.no_lidar) s = qf_config_set(cfg, "run.lidar_present", "false");
  if (s == QF_OK && !o.mode.empty()) s = qf_config_set(cfg, "fusion.fusion_mode", o.mode.c_str());
  if (s == QF_OK && !o.threads.empty()) s = qf_config_set(cfg, "run.threads", o.threads.c_str());
  if (s == QF_OK && !o.checkpoint.empty()) s = qf_config_set(cfg, "run.checkpoint", o.checkpoint.c_str());
  if (s == QF_OK) s = qf_config_set(cfg, "run.out", o.out.c_str());
  if (s == QF_OK) s = qf_config_validate(cfg);
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qfuse: quaternion camera-LiDAR fusion toolkit on synthetic scenes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", qf_version());

  Options o;
  CLI::App* datagen = app.add_subcommand("datagen", "Generate seeded synthetic scenes");
  CLI::App* train = app.add_subcommand("train", "Train the detector for each seed");
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a trained checkpoint");
  CLI::App* ablate = app.add_subcommand("ablate", "Run an ablation matrix");
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every op and block");
  CLI::App* inspect = app.add_subcommand("inspect", "Summarise a tensor snapshot, point cloud or checkpoint");
  for (CLI::App* cmd : {datagen, train, eval, ablate}) add_common(cmd, o);
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint directory written by train");
  ablate->add_option("--axis", o.axis, "Ablation axis")
      ->required()
      ->check(CLI::IsMember({"components", "framework", "quaternion_axis", "quafa_depth", "dims", "robustness"}));
  std::uint64_t gc_seed = 0;
  gradcheck->add_option("--seed", gc_seed, "Seed for the random probes");
  inspect->add_option("path", o.path, "File or checkpoint directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (gradcheck->parsed()) {
    int passed = 0;
    return report(qf_gradcheck(gc_seed, print_line, nullptr, &passed));
  }
  if (inspect->parsed()) return report(qf_inspect(o.path.c_str(), print_line, nullptr));

  qf_config* cfg = nullptr;
  if (qf_status s = qf_config_create(&cfg); s != QF_OK) return report(s);
  const char* mode = datagen->parsed() ? "datagen" : train->parsed() ? "train" : eval->parsed() ? "eval" : "ablate";
  qf_status s = build_config(o, mode, cfg);
  if (s == QF_OK) {
    char hash[17];
    qf_config_hash(cfg, hash);
    std::printf("config %s -> %s\n", hash, o.out.c_str());
    if (datagen->parsed()) {
      s = qf_datagen(cfg, o.out.c_str(), print_line, nullptr);
    } else if (train->parsed()) {
      s = qf_train(cfg, o.out.c_str(), print_line, nullptr);
    } else if (eval->parsed()) {
      s = qf_eval(cfg, o.out.c_str(), print_line, nullptr);
    } else {
      s = qf_ablate(cfg, o.axis.c_str(), o.out.c_str(), print_line, nullptr);
    }
  }
  qf_config_destroy(cfg);
  return report(s);
}
