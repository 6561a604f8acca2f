#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace qfuse {

// Relative-error ceilings for the three tiers of the gradient suite.
inline constexpr double kOpTolerance = 1e-7;
inline constexpr double kBlockTolerance = 1e-5;
inline constexpr double kLossTolerance = 1e-4;

/// One finite-difference probe: `run(seed)` returns the max relative error.
struct GradcheckItem {
  std::string name;
  double threshold = kOpTolerance;
  std::function<double(std::uint64_t seed)> run;
};

/// Every differentiable op, every fusion block and the full detector loss.
std::vector<GradcheckItem> default_gradcheck_items();

struct GradcheckReport {
  struct Entry {
    std::string name;
    double max_rel_err = 0.0;
    double threshold = 0.0;
    bool passed = false;
    std::string error;  // set when the probe itself threw
  };
  std::vector<Entry> entries;
  double seconds = 0.0;

  bool passed() const;
  std::vector<std::string> failures() const;
  /// One line per item: "<name> <max_rel_err> <threshold> PASS|FAIL".
  std::string text() const;
};

GradcheckReport gradcheck_all(std::uint64_t seed, const std::vector<GradcheckItem>& items = default_gradcheck_items());

}  // namespace qfuse
