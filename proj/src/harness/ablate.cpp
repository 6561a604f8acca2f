#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "qfuse/errors.hpp"
#include "qfuse/harness.hpp"

namespace qfuse {

const char* const kCsvHeader = "run_id,config_hash,variant,seed,step,loss,toy_ap,lidar_present,wall_ms";

namespace {

std::string fmt(double v, int precision) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

}  // namespace

std::string csv_line(const MetricsRow& r) {
  std::ostringstream os;
  os << r.run_id << ',' << r.config_hash << ',' << r.variant << ',' << r.seed << ',' << r.step << ','
     << fmt(r.loss, 10) << ',' << fmt(r.toy_ap, 10) << ',' << (r.lidar_present ? "true" : "false") << ','
     << fmt(r.wall_ms, 6);
  return os.str();
}

void write_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << kCsvHeader << "\n";
  for (const auto& r : rows) out << csv_line(r) << "\n";
  if (!out) throw IoError("short write to " + path.string());
}

const char* to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::components:
      return "components";
    case AblationAxis::framework:
      return "framework";
    case AblationAxis::quaternion_axis:
      return "quaternion_axis";
    case AblationAxis::quafa_depth:
      return "quafa_depth";
    case AblationAxis::dims:
      return "dims";
    case AblationAxis::robustness:
      return "robustness";
  }
  return "?";
}

AblationAxis ablation_axis_from_string(const std::string& s) {
  for (auto a : {AblationAxis::components, AblationAxis::framework, AblationAxis::quaternion_axis,
                 AblationAxis::quafa_depth, AblationAxis::dims, AblationAxis::robustness}) {
    if (s == to_string(a)) return a;
  }
  throw ConfigError("unknown ablation axis '" + s +
                    "' (expected components|framework|quaternion_axis|quafa_depth|dims|robustness)");
}

std::vector<Variant> ablation_variants(const RunConfig& base, AblationAxis axis) {
  std::vector<Variant> out;
  auto add = [&](std::string name, RunConfig cfg) {
    const bool lidar = cfg.lidar_present;
    out.push_back({std::move(name), std::move(cfg), {lidar}});
  };
  switch (axis) {
    case AblationAxis::components:
      for (int mask = 0; mask < 8; ++mask) {
        RunConfig c = base;
        c.dae = mask & 1;
        c.gae_enc = mask & 2;
        c.gae_dec = mask & 4;
        std::string name;
        if (c.dae) name += "dae";
        if (c.gae_enc) name += std::string(name.empty() ? "" : "+") + "gae_enc";
        if (c.gae_dec) name += std::string(name.empty() ? "" : "+") + "gae_dec";
        add(name.empty() ? "none" : name, c);
      }
      break;
    case AblationAxis::framework:
      for (auto m : {FusionMode::camera_only, FusionMode::input_summation, FusionMode::deep_summation,
                     FusionMode::separate, FusionMode::progressive}) {
        RunConfig c = base;
        c.fusion_mode = m;
        add(to_string(m), c);
      }
      break;
    case AblationAxis::quaternion_axis:
      for (auto a : {AxisAssignment::lidar_on_i, AxisAssignment::lidar_on_r}) {
        RunConfig c = base;
        c.axis = a;
        add(to_string(a), c);
      }
      break;
    case AblationAxis::quafa_depth: {
      std::vector<QuaFaDepth> depths{{0, false}};
      for (std::size_t k = 1; k < base.backbone.size(); ++k) depths.push_back({k, false});
      depths.push_back({0, true});
      for (const auto& q : depths) {
        RunConfig c = base;
        c.qua_fa = q;
        add(to_string(q), c);
      }
      break;
    }
    case AblationAxis::dims: {
      const std::size_t d = base.dae_hidden, g = base.gae_hidden;
      std::vector<std::pair<std::size_t, std::size_t>> dims{{d, g}};
      if (d > 1) dims.push_back({d / 2, g});
      dims.push_back({2 * d, g});
      if (g > 1) dims.push_back({d, g / 2});
      dims.push_back({d, 2 * g});
      for (auto [dd, gg] : dims) {
        RunConfig c = base;
        c.dae_hidden = dd;
        c.gae_hidden = gg;
        add("dae" + std::to_string(dd) + "_gae" + std::to_string(gg), c);
      }
      break;
    }
    case AblationAxis::robustness:
      out.push_back({to_string(base.fusion_mode), base, {true, false}});
      break;
  }
  return out;
}

RunOutcome run_variant(const Variant& variant, std::uint64_t seed, const Dataset& train,
                       const std::vector<const Dataset*>& evals) {
  const auto t0 = std::chrono::steady_clock::now();
  RunOutcome out;
  ToyDetector model = make_model(variant.config, seed);
  out.train = train_model(model, train, variant.config, seed);
  for (const Dataset* d : evals) {
    if (out.train.finite) {
      out.evals.push_back(evaluate(model, *d, variant.config));
    } else {
      out.evals.push_back({std::nan(""), false});
    }
  }
  out.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

namespace {

// Fields that change the generated or preprocessed scenes.
std::string data_key(const RunConfig& c, std::uint64_t seed, Split split, std::size_t count, bool lidar) {
  std::ostringstream os;
  os << seed << '|' << (split == Split::train ? 't' : 'e') << count << '|' << lidar << '|' << c.image_h << 'x'
     << c.image_w << '|' << c.grid << '|' << c.bev_range << '|' << c.cameras << '|' << c.boxes_min << '-'
     << c.boxes_max << '|' << c.camera_hfov << '|' << c.camera_height << '|' << c.lidar_azimuth << 'x'
     << c.lidar_elevation << '|' << c.lidar_dropout << '|' << c.depth_aux << '|' << c.backbone.size();
  return os.str();
}

}  // namespace

MatrixResult run_matrix(const RunConfig& base, const std::vector<Variant>& variants, const ProgressCallback& progress) {
  validate(base);
  for (const auto& v : variants) validate(v.config);

  struct Job {
    std::size_t variant;
    std::uint64_t seed;
    const Dataset* train;
    std::vector<const Dataset*> evals;
  };
  std::map<std::string, Dataset> cache;
  auto dataset = [&](const RunConfig& c, std::uint64_t seed, Split split, std::size_t count, bool lidar) {
    const std::string key = data_key(c, seed, split, count, lidar);
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, make_dataset(c, seed, split, count, lidar)).first;
    return &it->second;
  };
  std::vector<Job> jobs;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    const RunConfig& c = variants[v].config;
    for (std::uint64_t seed : base.seeds) {
      Job job{v, seed, dataset(c, seed, Split::train, c.train_scenes, c.lidar_present), {}};
      for (bool lidar : variants[v].eval_lidar) job.evals.push_back(dataset(c, seed, Split::eval, c.eval_scenes, lidar));
      jobs.push_back(std::move(job));
    }
  }

  std::vector<RunOutcome> outcomes(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto worker = [&]() {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      const Job& job = jobs[j];
      outcomes[j] = run_variant(variants[job.variant], job.seed, *job.train, job.evals);
      if (progress) {
        std::ostringstream os;
        os << variants[job.variant].name << " seed " << job.seed << ": loss " << fmt(outcomes[j].train.window_loss(), 4);
        for (const auto& e : outcomes[j].evals) os << " ap " << fmt(e.toy_ap, 4);
        std::lock_guard<std::mutex> lock(log_mu);
        progress(os.str());
      }
    }
  };
  std::size_t threads = base.threads ? base.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, jobs.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  MatrixResult result;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const Variant& v = variants[jobs[j].variant];
    const RunOutcome& o = outcomes[j];
    const std::string hash = config_hash(v.config);
    if (!o.train.finite) {
      result.failures.push_back(v.name + " seed " + std::to_string(jobs[j].seed) + ": " + o.train.failure);
    }
    for (std::size_t e = 0; e < o.evals.size(); ++e) {
      if (o.train.finite && !o.evals[e].finite) {
        result.failures.push_back(v.name + " seed " + std::to_string(jobs[j].seed) +
                                  ": non-finite detector output during evaluation");
      }
      MetricsRow row;
      row.run_id = hash.substr(0, 8) + "-" + v.name + "-s" + std::to_string(jobs[j].seed) +
                   (v.eval_lidar.size() > 1 && !v.eval_lidar[e] ? "-nolidar" : "");
      row.config_hash = hash;
      row.variant = v.name;
      row.seed = jobs[j].seed;
      row.step = o.train.losses.size();
      row.loss = o.train.finite ? o.train.window_loss() : std::nan("");
      row.toy_ap = o.evals[e].toy_ap;
      row.lidar_present = v.eval_lidar[e];
      row.wall_ms = o.wall_ms;
      result.rows.push_back(std::move(row));
    }
  }
  return result;
}

void write_run_artifacts(const std::filesystem::path& dir, const RunConfig& cfg, const std::string& command,
                         const MatrixResult& result, const std::vector<std::string>& extra) {
  std::filesystem::create_directories(dir);
  write_csv(dir / "metrics.csv", result.rows);
  nlohmann::json j;
  j["command"] = command;
  j["config_hash"] = config_hash(cfg);
  nlohmann::json resolved = nlohmann::json::object();
  for (const auto& key : config_keys()) resolved[key] = get_config_value(cfg, key);
  j["config"] = resolved;
  j["rows"] = result.rows.size();
  j["failures"] = result.failures;
  j["csv"] = "metrics.csv";
  j["notes"] = extra;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << j.dump(2) << "\n";
}

}  // namespace qfuse
