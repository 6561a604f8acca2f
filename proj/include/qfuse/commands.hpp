#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include "qfuse/config.hpp"
#include "qfuse/harness.hpp"

namespace qfuse {

using LogFn = std::function<void(const std::string&)>;

// Top-level operations behind the CLI. Each writes its artifacts under `out`
// (metrics.csv and manifest.json at minimum) and throws on failure.

/// Scene directories under out/seed<N>/{train,eval}/<index>.
void command_datagen(const RunConfig& cfg, const std::filesystem::path& out, const LogFn& log = {});

/// Trains one model per seed; checkpoints under out/seed<N>/checkpoint. Rows
/// every log_every steps carry toy_ap = nan; the last row of each seed holds
/// the held-out toy_ap. Returns false if any seed hit a non-finite loss.
bool command_train(const RunConfig& cfg, const std::filesystem::path& out, const LogFn& log = {});

/// Evaluates cfg.checkpoint on its held-out scenes; cfg.lidar_present,
/// eval_scenes, match_radius and peak_threshold override the stored config.
void command_eval(const RunConfig& cfg, const std::filesystem::path& out, const LogFn& log = {});

/// Returns false if any variant was aborted by a non-finite loss.
bool command_ablate(const RunConfig& cfg, AblationAxis axis, const std::filesystem::path& out, const LogFn& log = {});

/// Prints the gradient report; returns whether every item passed.
bool command_gradcheck(std::uint64_t seed, const LogFn& log = {});

/// Human-readable summary of a tensor snapshot, point cloud or checkpoint directory.
std::string inspect_path(const std::filesystem::path& path);

}  // namespace qfuse
