#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "qfuse/config.hpp"
#include "qfuse/synth.hpp"
#include "qfuse/toydet.hpp"

namespace qfuse {

// Scene seeds: training scenes are even, evaluation scenes odd, so the two
// sets can never overlap.
std::uint64_t train_scene_seed(std::uint64_t run_seed, std::size_t index);
std::uint64_t eval_scene_seed(std::uint64_t run_seed, std::size_t index);

SceneSpec scene_spec(const RunConfig& cfg, std::uint64_t scene_seed);

struct Dataset {
  std::vector<SceneGT> gts;
  std::vector<DetectorInputs> inputs;
  std::vector<DetectionTargets> targets;
  std::size_t size() const { return gts.size(); }
};

enum class Split { train, eval };

/// Generates and preprocesses `count` scenes of one split for a run seed.
Dataset make_dataset(const RunConfig& cfg, std::uint64_t run_seed, Split split, std::size_t count, bool lidar_present);

/// SGD with momentum and global-norm gradient clipping.
class SgdMomentum {
 public:
  SgdMomentum(std::vector<Tensor> params, double lr, double momentum, double clip);
  /// Applies one update from the accumulated gradients, clears them and
  /// returns the pre-clip gradient norm.
  double step();

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double lr_, momentum_, clip_;
};

struct TrainResult {
  std::vector<double> losses;  // one per step
  bool finite = true;
  std::string failure;
  double window_loss() const;  // mean over the last `window` steps
  std::size_t window = 16;
};

using StepCallback = std::function<void(std::size_t step, double loss)>;

/// Runs cfg.steps single-scene SGD steps; the scene order is a seeded shuffle
/// per epoch. Stops early, flagged, on a non-finite loss or parameter.
TrainResult train_model(ToyDetector& model, const Dataset& train, const RunConfig& cfg, std::uint64_t seed,
                        const StepCallback& on_step = {});

/// Mean detection loss over a dataset, without gradient.
double dataset_loss(const ToyDetector& model, const Dataset& data);

struct EvalResult {
  double toy_ap = 0.0;
  bool finite = true;
};

EvalResult evaluate(const ToyDetector& model, const Dataset& data, const RunConfig& cfg);

ToyDetector make_model(const RunConfig& cfg, std::uint64_t seed);

/// Checkpoint directory: config.cfg, manifest.txt (chain blocks, then one
/// "tensor <name> <shape>" line per parameter) and weights.qft holding the
/// parameters as consecutive snapshots in manifest order.
void save_checkpoint(const std::filesystem::path& dir, const ToyDetector& model, const RunConfig& cfg,
                     std::uint64_t seed);
struct LoadedModel {
  RunConfig config;
  std::uint64_t seed = 0;
  std::unique_ptr<ToyDetector> model;
};
LoadedModel load_checkpoint(const std::filesystem::path& dir);

struct MetricsRow {
  std::string run_id;
  std::string config_hash;
  std::string variant;
  std::uint64_t seed = 0;
  std::size_t step = 0;
  double loss = 0.0;
  double toy_ap = 0.0;  // NaN when not evaluated
  bool lidar_present = true;
  double wall_ms = 0.0;
};

extern const char* const kCsvHeader;
std::string csv_line(const MetricsRow& row);
void write_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);

enum class AblationAxis { components, framework, quaternion_axis, quafa_depth, dims, robustness };
const char* to_string(AblationAxis axis);
AblationAxis ablation_axis_from_string(const std::string& s);

struct Variant {
  std::string name;
  RunConfig config;
  std::vector<bool> eval_lidar;  // one evaluation (and CSV row) per entry
};

std::vector<Variant> ablation_variants(const RunConfig& base, AblationAxis axis);

/// Trains one model per (variant, seed) and evaluates it on the held-out set.
struct RunOutcome {
  TrainResult train;
  std::vector<EvalResult> evals;  // aligned with the variant's eval_lidar
  double wall_ms = 0.0;
};
RunOutcome run_variant(const Variant& variant, std::uint64_t seed, const Dataset& train,
                       const std::vector<const Dataset*>& evals);

struct MatrixResult {
  std::vector<MetricsRow> rows;  // variants x seeds (x evaluations), in enumeration order
  std::vector<std::string> failures;
};

using ProgressCallback = std::function<void(const std::string& line)>;

/// Runs the variants over base.seeds on a worker pool (base.threads). Every
/// variant of a seed sees the same training and evaluation scenes.
MatrixResult run_matrix(const RunConfig& base, const std::vector<Variant>& variants,
                        const ProgressCallback& progress = {});

/// Writes metrics.csv and manifest.json under cfg.out.
void write_run_artifacts(const std::filesystem::path& dir, const RunConfig& cfg, const std::string& command,
                         const MatrixResult& result, const std::vector<std::string>& extra = {});

}  // namespace qfuse
