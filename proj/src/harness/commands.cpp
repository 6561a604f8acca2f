#include "qfuse/commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "qfuse/checks.hpp"
#include "qfuse/errors.hpp"
#include "qfuse/snapshot.hpp"

namespace qfuse {

namespace {

std::string seed_dir(std::uint64_t seed) { return "seed" + std::to_string(seed); }

std::string scene_dir(std::size_t k) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << k;
  return os.str();
}

// Runs fn(i) for i in [0, n) on up to `threads` workers.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) fn(i);
  };
  if (threads <= 1) {
    worker();
    return;
  }
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

void command_datagen(const RunConfig& cfg, const std::filesystem::path& out, const LogFn& log) {
  validate(cfg);
  for (std::uint64_t seed : cfg.seeds) {
    for (Split split : {Split::train, Split::eval}) {
      const std::size_t count = split == Split::train ? cfg.train_scenes : cfg.eval_scenes;
      const std::filesystem::path base = out / seed_dir(seed) / (split == Split::train ? "train" : "eval");
      std::size_t shortfalls = 0;
      for (std::size_t k = 0; k < count; ++k) {
        const std::uint64_t s = split == Split::train ? train_scene_seed(seed, k) : eval_scene_seed(seed, k);
        const Scene scene = generate_scene(scene_spec(cfg, s));
        save_scene(base / scene_dir(k), scene);
        if (scene.placement_shortfall) {
          ++shortfalls;
          std::ofstream(base / scene_dir(k) / "PLACEMENT_SHORTFALL") << "fewer boxes than requested\n";
        }
      }
      if (log) {
        log("seed " + std::to_string(seed) + ": " + std::to_string(count) + " " +
            (split == Split::train ? "train" : "eval") + " scenes -> " + base.string() +
            (shortfalls ? " (" + std::to_string(shortfalls) + " placement shortfalls)" : ""));
      }
    }
  }
  write_run_artifacts(out, cfg, "datagen", {}, {});
}

bool command_train(const RunConfig& cfg, const std::filesystem::path& out, const LogFn& log) {
  validate(cfg);
  std::vector<std::vector<MetricsRow>> per_seed(cfg.seeds.size());
  std::vector<std::string> failures(cfg.seeds.size());
  const std::string hash = config_hash(cfg);
  const std::string variant = to_string(cfg.fusion_mode);
  std::mutex log_mu;
  auto say = [&](const std::string& line) {
    if (!log) return;
    std::lock_guard<std::mutex> lock(log_mu);
    log(line);
  };
  parallel_for(cfg.seeds.size(), cfg.threads, [&](std::size_t i) {
    const std::uint64_t seed = cfg.seeds[i];
    const auto t0 = std::chrono::steady_clock::now();
    const Dataset train = make_dataset(cfg, seed, Split::train, cfg.train_scenes, cfg.lidar_present);
    const Dataset eval = make_dataset(cfg, seed, Split::eval, cfg.eval_scenes, cfg.lidar_present);
    ToyDetector model = make_model(cfg, seed);
    const std::string run_id = hash.substr(0, 8) + "-" + variant + "-s" + std::to_string(seed);
    auto& rows = per_seed[i];
    double window_sum = 0.0;
    std::vector<double> recent;
    auto on_step = [&](std::size_t step, double loss) {
      recent.push_back(loss);
      window_sum += loss;
      if (recent.size() > cfg.loss_window) {
        window_sum -= recent.front();
        recent.erase(recent.begin());
      }
      if ((step + 1) % cfg.log_every == 0 && step + 1 < cfg.steps) {
        MetricsRow r{run_id, hash, variant, seed, step + 1, window_sum / static_cast<double>(recent.size()),
                     std::nan(""), cfg.lidar_present, elapsed_ms(t0)};
        say("seed " + std::to_string(seed) + " step " + std::to_string(step + 1) + " loss " + std::to_string(r.loss));
        rows.push_back(r);
      }
    };
    const TrainResult tr = train_model(model, train, cfg, seed, on_step);
    MetricsRow last{run_id, hash, variant, seed, tr.losses.size(), std::nan(""), std::nan(""), cfg.lidar_present, 0.0};
    if (tr.finite) {
      last.loss = tr.window_loss();
      last.toy_ap = evaluate(model, eval, cfg).toy_ap;
      save_checkpoint(out / seed_dir(seed) / "checkpoint", model, cfg, seed);
    } else {
      failures[i] = "seed " + std::to_string(seed) + ": " + tr.failure;
    }
    last.wall_ms = elapsed_ms(t0);
    rows.push_back(last);
    say("seed " + std::to_string(seed) + " done: loss " + std::to_string(last.loss) + " toy_ap " +
        std::to_string(last.toy_ap));
  });
  MatrixResult result;
  for (auto& rows : per_seed) result.rows.insert(result.rows.end(), rows.begin(), rows.end());
  for (auto& f : failures) {
    if (!f.empty()) result.failures.push_back(f);
  }
  write_run_artifacts(out, cfg, "train", result);
  return result.failures.empty();
}

void command_eval(const RunConfig& cfg, const std::filesystem::path& out, const LogFn& log) {
  if (cfg.checkpoint.empty()) throw ConfigError("eval needs run.checkpoint (a directory written by train)");
  LoadedModel loaded = load_checkpoint(cfg.checkpoint);
  RunConfig ecfg = loaded.config;
  ecfg.lidar_present = cfg.lidar_present;
  ecfg.eval_scenes = cfg.eval_scenes;
  ecfg.match_radius = cfg.match_radius;
  ecfg.peak_threshold = cfg.peak_threshold;
  validate(ecfg);
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset eval = make_dataset(ecfg, loaded.seed, Split::eval, ecfg.eval_scenes, ecfg.lidar_present);
  const EvalResult r = evaluate(*loaded.model, eval, ecfg);
  const std::string hash = config_hash(ecfg);
  MatrixResult result;
  result.rows.push_back({hash.substr(0, 8) + "-" + to_string(ecfg.fusion_mode) + "-s" + std::to_string(loaded.seed) +
                             (ecfg.lidar_present ? "" : "-nolidar"),
                         hash, to_string(ecfg.fusion_mode), loaded.seed, 0, std::nan(""), r.toy_ap,
                         ecfg.lidar_present, elapsed_ms(t0)});
  if (!r.finite) result.failures.push_back("non-finite detector output during evaluation");
  if (log) {
    log("toy_ap " + std::to_string(r.toy_ap) + " over " + std::to_string(eval.size()) + " scenes (lidar " +
        (ecfg.lidar_present ? "present" : "absent") + ")");
  }
  write_run_artifacts(out, ecfg, "eval", result, {"checkpoint: " + cfg.checkpoint});
}

bool command_ablate(const RunConfig& cfg, AblationAxis axis, const std::filesystem::path& out, const LogFn& log) {
  const std::vector<Variant> variants = ablation_variants(cfg, axis);
  if (log) {
    log("axis " + std::string(to_string(axis)) + ": " + std::to_string(variants.size()) + " variants x " +
        std::to_string(cfg.seeds.size()) + " seeds");
  }
  const MatrixResult result = run_matrix(cfg, variants, log);
  std::vector<std::string> notes{"axis: " + std::string(to_string(axis))};
  for (const auto& v : variants) notes.push_back("variant " + v.name + " " + config_hash(v.config));
  write_run_artifacts(out, cfg, "ablate", result, notes);
  for (const auto& f : result.failures) {
    if (log) log("FLAGGED " + f);
  }
  return result.failures.empty();
}

bool command_gradcheck(std::uint64_t seed, const LogFn& log) {
  const GradcheckReport report = gradcheck_all(seed);
  if (log) {
    std::istringstream lines(report.text());
    for (std::string line; std::getline(lines, line);) log(line);
    log(std::string(report.passed() ? "all " : "FAILED ") + std::to_string(report.entries.size()) + " items");
  }
  return report.passed();
}

std::string inspect_path(const std::filesystem::path& path) {
  std::ostringstream os;
  if (std::filesystem::is_directory(path)) {
    if (!std::filesystem::exists(path / "manifest.txt")) throw IoError(path.string() + " is not a checkpoint directory");
    LoadedModel m = load_checkpoint(path);
    os << "checkpoint " << path.string() << " seed " << m.seed << " config " << config_hash(m.config) << "\n";
    std::size_t total = 0;
    for (const auto& line : m.model->chain().manifest()) os << "  block " << line << "\n";
    for (const auto& [name, t] : m.model->named_parameters()) {
      total += t.numel();
      os << "  " << name << ' ' << shape_str(t.shape()) << "\n";
    }
    os << "parameters " << total << "\n";
    return os.str();
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  in.close();
  if (std::memcmp(magic, "QFPC", 4) == 0) {
    const PointCloud pc = read_point_cloud(path);
    os << "point cloud " << path.string() << ": " << pc.points.size() << " points";
    if (!pc.points.empty()) {
      double lo[3] = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                      std::numeric_limits<double>::infinity()};
      double hi[3] = {-lo[0], -lo[1], -lo[2]};
      for (const auto& p : pc.points) {
        const double v[3] = {p.x, p.y, p.z};
        for (int a = 0; a < 3; ++a) {
          lo[a] = std::min(lo[a], v[a]);
          hi[a] = std::max(hi[a], v[a]);
        }
      }
      os << ", x [" << lo[0] << ", " << hi[0] << "] y [" << lo[1] << ", " << hi[1] << "] z [" << lo[2] << ", "
         << hi[2] << "]";
    }
    os << "\n";
    return os.str();
  }
  const Tensor t = load_tensor(path);
  const auto d = t.data();
  double mn = std::numeric_limits<double>::infinity(), mx = -mn, sum = 0.0, sq = 0.0;
  std::size_t nonfinite = 0;
  for (double v : d) {
    if (!std::isfinite(v)) {
      ++nonfinite;
      continue;
    }
    mn = std::min(mn, v);
    mx = std::max(mx, v);
    sum += v;
    sq += v * v;
  }
  const std::size_t finite = d.size() - nonfinite;
  os << "tensor " << path.string() << " shape " << shape_str(t.shape()) << " numel " << t.numel();
  if (finite) {
    os << " min " << mn << " max " << mx << " mean " << sum / static_cast<double>(finite) << " l2 " << std::sqrt(sq);
  }
  os << " nonfinite " << nonfinite << "\n";
  return os.str();
}

}  // namespace qfuse
