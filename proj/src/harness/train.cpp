#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "qfuse/errors.hpp"
#include "qfuse/harness.hpp"
#include "qfuse/rng.hpp"
#include "qfuse/snapshot.hpp"

namespace qfuse {

namespace {

// Keeps scene seeds below 2^62 so the parity trick cannot overflow.
std::uint64_t scene_base(std::uint64_t run_seed, std::size_t index) {
  return derive_seed(derive_seed(run_seed, "scenes"), static_cast<std::uint64_t>(index)) >> 2;
}

}  // namespace

std::uint64_t train_scene_seed(std::uint64_t run_seed, std::size_t index) { return 2 * scene_base(run_seed, index); }

std::uint64_t eval_scene_seed(std::uint64_t run_seed, std::size_t index) {
  return 2 * scene_base(run_seed ^ 0x5DEECE66DULL, index) + 1;
}

SceneSpec scene_spec(const RunConfig& cfg, std::uint64_t scene_seed) {
  SceneSpec spec;
  spec.seed = scene_seed;
  spec.n_boxes_min = cfg.boxes_min;
  spec.n_boxes_max = cfg.boxes_max;
  spec.lidar.n_azimuth = cfg.lidar_azimuth;
  spec.lidar.n_elevation = cfg.lidar_elevation;
  spec.lidar.dropout = cfg.lidar_dropout;
  spec.cameras = camera_rig(cfg);
  // Keep every box inside the BEV grid.
  spec.forward.max = std::min(spec.forward.max, 0.9 * cfg.bev_range);
  spec.forward.min = std::min(spec.forward.min, 0.5 * spec.forward.max);
  return spec;
}

Dataset make_dataset(const RunConfig& cfg, std::uint64_t run_seed, Split split, std::size_t count,
                     bool lidar_present) {
  const DetectorConfig dc = detector_config(cfg);
  Dataset d;
  for (std::size_t k = 0; k < count; ++k) {
    const std::uint64_t s = split == Split::train ? train_scene_seed(run_seed, k) : eval_scene_seed(run_seed, k);
    Scene scene = generate_scene(scene_spec(cfg, s));
    d.inputs.push_back(prepare_inputs(scene, dc, lidar_present));
    d.targets.push_back(build_targets(scene.gt, dc.bev));
    d.gts.push_back(std::move(scene.gt));
  }
  return d;
}

SgdMomentum::SgdMomentum(std::vector<Tensor> params, double lr, double momentum, double clip)
    : params_(std::move(params)), lr_(lr), momentum_(momentum), clip_(clip) {
  for (const auto& p : params_) velocity_.emplace_back(p.numel(), 0.0);
}

double SgdMomentum::step() {
  double sq = 0.0;
  for (const auto& p : params_) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  const double factor = norm > clip_ ? clip_ / norm : 1.0;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    auto& v = velocity_[i];
    auto w = p.mutable_data();
    if (p.has_grad()) {
      const auto g = p.grad();
      for (std::size_t k = 0; k < v.size(); ++k) v[k] = momentum_ * v[k] + factor * g[k];
    } else {
      for (double& x : v) x *= momentum_;
    }
    for (std::size_t k = 0; k < v.size(); ++k) w[k] -= lr_ * v[k];
    p.zero_grad();
  }
  return norm;
}

double TrainResult::window_loss() const {
  if (losses.empty()) return std::nan("");
  const std::size_t n = std::min(window, losses.size());
  return std::accumulate(losses.end() - static_cast<std::ptrdiff_t>(n), losses.end(), 0.0) / static_cast<double>(n);
}

TrainResult train_model(ToyDetector& model, const Dataset& train, const RunConfig& cfg, std::uint64_t seed,
                        const StepCallback& on_step) {
  if (train.size() == 0) throw ConfigError("train_model: empty training set");
  TrainResult result;
  result.window = cfg.loss_window;
  const std::vector<Tensor> params = model.parameters();
  SgdMomentum opt(params, cfg.lr, cfg.momentum, cfg.clip);
  Rng order_rng(derive_seed(seed, "order"));
  std::vector<std::size_t> order(train.size());
  std::size_t cursor = order.size();
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), order_rng);
      cursor = 0;
    }
    const std::size_t k = order[cursor++];
    double value = std::nan("");
    try {
      const DetectorOutput out = model.forward(train.inputs[k]);
      Tensor loss = detection_loss(out, train.targets[k], &train.inputs[k]);
      value = loss.item();
      if (!std::isfinite(value)) throw ValidityError("non-finite training loss");
      backward(loss);
    } catch (const ValidityError& e) {
      Graph::current().clear();
      result.finite = false;
      result.failure = "step " + std::to_string(step) + ": " + e.what();
      result.losses.push_back(value);
      return result;
    }
    opt.step();
    result.losses.push_back(value);
    if (on_step) on_step(step, value);
    for (const auto& p : params) {
      if (!p.all_finite()) {
        result.finite = false;
        result.failure = "step " + std::to_string(step) + ": non-finite parameter after update";
        return result;
      }
    }
  }
  return result;
}

double dataset_loss(const ToyDetector& model, const Dataset& data) {
  NoGradGuard no_grad;
  double total = 0.0;
  for (std::size_t k = 0; k < data.size(); ++k) {
    total += detection_loss(model.forward(data.inputs[k]), data.targets[k], &data.inputs[k]).item();
  }
  return total / static_cast<double>(std::max<std::size_t>(1, data.size()));
}

EvalResult evaluate(const ToyDetector& model, const Dataset& data, const RunConfig& cfg) {
  NoGradGuard no_grad;
  const VoxelSpec bev = model.config().bev;
  EvalResult r;
  std::vector<std::vector<Detection>> preds;
  for (const auto& in : data.inputs) {
    const DetectorOutput out = model.forward(in);
    if (!out.heatmap.all_finite() || !out.sizes.all_finite()) r.finite = false;
    preds.push_back(extract_peaks(out.heatmap, bev, cfg.peak_threshold));
  }
  // A score over non-finite heatmaps would be meaningless.
  r.toy_ap = r.finite ? toy_ap(preds, data.gts, cfg.match_radius) : std::nan("");
  return r;
}

ToyDetector make_model(const RunConfig& cfg, std::uint64_t seed) {
  return ToyDetector(detector_config(cfg), camera_rig(cfg), derive_seed(seed, "model"));
}

void save_checkpoint(const std::filesystem::path& dir, const ToyDetector& model, const RunConfig& cfg,
                     std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream c(dir / "config.cfg");
    c << config_to_text(cfg);
    if (!c) throw IoError("cannot write " + (dir / "config.cfg").string());
  }
  std::ofstream m(dir / "manifest.txt");
  std::ofstream w(dir / "weights.qft", std::ios::binary);
  if (!m || !w) throw IoError("cannot write checkpoint in " + dir.string());
  m << "seed " << seed << "\n";
  for (const auto& line : model.chain().manifest()) m << "block " << line << "\n";
  for (const auto& [name, t] : model.named_parameters()) {
    m << "tensor " << name << ' ' << shape_str(t.shape()) << "\n";
    write_tensor(w, t);
  }
  if (!m || !w) throw IoError("short write in checkpoint " + dir.string());
}

LoadedModel load_checkpoint(const std::filesystem::path& dir) {
  LoadedModel out;
  std::ifstream c(dir / "config.cfg");
  if (!c) throw IoError("cannot read " + (dir / "config.cfg").string());
  std::ostringstream text;
  text << c.rdbuf();
  apply_config_text(out.config, text.str(), (dir / "config.cfg").string());

  std::ifstream m(dir / "manifest.txt");
  std::ifstream w(dir / "weights.qft", std::ios::binary);
  if (!m || !w) throw IoError("incomplete checkpoint in " + dir.string());
  std::string line;
  std::vector<std::string> names;
  while (std::getline(m, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "seed") {
      ls >> out.seed;
    } else if (kind == "tensor") {
      std::string name;
      ls >> name;
      names.push_back(name);
    }
  }
  out.model = std::make_unique<ToyDetector>(make_model(out.config, out.seed));
  const NamedParams params = out.model->named_parameters();
  if (params.size() != names.size()) {
    throw IoError("checkpoint lists " + std::to_string(names.size()) + " tensors, model has " +
                  std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = params[i];
    if (names[i] != name) throw IoError("checkpoint tensor " + names[i] + " where " + name + " was expected");
    const Tensor loaded = read_tensor(w);
    if (loaded.shape() != t.shape()) {
      throw IoError("checkpoint tensor " + name + " has shape " + shape_str(loaded.shape()) + ", expected " +
                    shape_str(t.shape()));
    }
    Tensor target = t;
    std::copy(loaded.data().begin(), loaded.data().end(), target.mutable_data().begin());
  }
  return out;
}

}  // namespace qfuse
