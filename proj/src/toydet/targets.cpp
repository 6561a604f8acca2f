#include <algorithm>
#include <cmath>
#include <numeric>

#include "qfuse/errors.hpp"
#include "qfuse/toydet.hpp"

namespace qfuse {

namespace {

constexpr double kFocalAlpha = 2.0;
constexpr double kFocalBeta = 4.0;

std::size_t cell_index(double v, double lo, double step, std::size_t bins) {
  const double f = std::floor((v - lo) / step);
  if (f < 0.0) return 0;
  return std::min(static_cast<std::size_t>(f), bins - 1);
}

}  // namespace

DetectionTargets build_targets(const SceneGT& gt, const VoxelSpec& bev) {
  bev.validate();
  const std::size_t gx = bev.bins_x(), gy = bev.bins_y(), plane = gx * gy;
  std::vector<double> heat(plane, 0.0), sizes(2 * plane, 0.0), mask(plane, 0.0);
  DetectionTargets t;
  for (const auto& box : gt.boxes) {
    if (box.cx < bev.x.min || box.cx >= bev.x.max || box.cy < bev.y.min || box.cy >= bev.y.max) continue;
    if (!(box.w > 0.0) || !(box.l > 0.0)) throw ContractError("build_targets: box sizes must be positive");
    const std::size_t ci = cell_index(box.cx, bev.x.min, bev.dx, gx);
    const std::size_t cj = cell_index(box.cy, bev.y.min, bev.dy, gy);
    const double sigma = std::max(1.0, std::max(box.w, box.l) / 2.0 / bev.dx);
    const long reach = static_cast<long>(std::ceil(3.0 * sigma));
    for (long di = -reach; di <= reach; ++di) {
      for (long dj = -reach; dj <= reach; ++dj) {
        const long i = static_cast<long>(ci) + di, j = static_cast<long>(cj) + dj;
        if (i < 0 || j < 0 || i >= static_cast<long>(gx) || j >= static_cast<long>(gy)) continue;
        const double g = std::exp(-static_cast<double>(di * di + dj * dj) / (2.0 * sigma * sigma));
        double& cell = heat[static_cast<std::size_t>(i) * gy + static_cast<std::size_t>(j)];
        cell = std::max(cell, g);
      }
    }
    const std::size_t c = ci * gy + cj;
    heat[c] = 1.0;
    sizes[c] = std::log(box.w);
    sizes[plane + c] = std::log(box.l);
    mask[c] = 1.0;
  }
  t.positives = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1.0));
  t.heatmap = Tensor::from({1, gx, gy}, std::move(heat));
  t.sizes = Tensor::from({2, gx, gy}, std::move(sizes));
  t.mask = Tensor::from({gx, gy}, std::move(mask));
  return t;
}

Tensor detection_loss(const DetectorOutput& pred, const DetectionTargets& targets, const DetectorInputs* inputs,
                      const LossWeights& weights) {
  const double norm = std::max<double>(1.0, static_cast<double>(targets.positives));
  Tensor loss = scale(focal_loss(pred.logits, targets.heatmap, kFocalAlpha, kFocalBeta), weights.focal);
  loss = add(loss, scale(masked_l1(pred.sizes, targets.sizes, targets.mask, norm), weights.size));
  if (inputs && !pred.depth_preds.empty()) {
    if (inputs->depth_targets.size() != pred.depth_preds.size()) {
      throw ConfigError("detection_loss: depth predictions and targets differ in count");
    }
    for (std::size_t k = 0; k < pred.depth_preds.size(); ++k) {
      const Tensor& target = inputs->depth_targets[k];
      const auto td = target.data();
      std::vector<double> m(td.size());
      std::transform(td.begin(), td.end(), m.begin(), [](double d) { return d > 0.0 ? 1.0 : 0.0; });
      const double valid = std::accumulate(m.begin(), m.end(), 0.0);
      const Tensor mask = Tensor::from({target.dim(1), target.dim(2)}, std::move(m));
      loss = add(loss, scale(masked_l1(pred.depth_preds[k], target, mask, std::max(1.0, valid)), weights.depth));
    }
  }
  return loss;
}

std::vector<Detection> extract_peaks(const Tensor& heatmap, const VoxelSpec& bev, double threshold) {
  const std::size_t gx = bev.bins_x(), gy = bev.bins_y();
  if (heatmap.numel() != gx * gy) {
    throw DimensionError("extract_peaks: heatmap " + shape_str(heatmap.shape()) + " does not match the BEV grid");
  }
  const auto h = heatmap.data();
  std::vector<Detection> out;
  for (std::size_t i = 0; i < gx; ++i) {
    for (std::size_t j = 0; j < gy; ++j) {
      const double s = h[i * gy + j];
      if (!(s > threshold)) continue;
      bool peak = true;
      for (int di = -1; di <= 1 && peak; ++di) {
        for (int dj = -1; dj <= 1; ++dj) {
          if (di == 0 && dj == 0) continue;
          const long ni = static_cast<long>(i) + di, nj = static_cast<long>(j) + dj;
          if (ni < 0 || nj < 0 || ni >= static_cast<long>(gx) || nj >= static_cast<long>(gy)) continue;
          const std::size_t n = static_cast<std::size_t>(ni) * gy + static_cast<std::size_t>(nj);
          // Plateaus keep only their first cell in raster order.
          const bool earlier = n < i * gy + j;
          if (h[n] > s || (earlier && h[n] == s)) {
            peak = false;
            break;
          }
        }
      }
      if (peak) {
        out.push_back({bev.x.min + (static_cast<double>(i) + 0.5) * bev.dx,
                       bev.y.min + (static_cast<double>(j) + 0.5) * bev.dy, s});
      }
    }
  }
  return out;
}

double toy_ap(const std::vector<std::vector<Detection>>& preds, const std::vector<SceneGT>& gts, double match_radius) {
  if (preds.size() != gts.size()) throw ConfigError("toy_ap: prediction and ground-truth scene counts differ");
  struct Ranked {
    double score;
    std::size_t scene, index;
  };
  std::vector<Ranked> ranked;
  std::size_t n_gt = 0;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    n_gt += gts[s].boxes.size();
    for (std::size_t k = 0; k < preds[s].size(); ++k) ranked.push_back({preds[s][k].score, s, k});
  }
  if (n_gt == 0) return ranked.empty() ? 1.0 : 0.0;
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

  std::vector<std::vector<bool>> taken(gts.size());
  for (std::size_t s = 0; s < gts.size(); ++s) taken[s].assign(gts[s].boxes.size(), false);
  std::size_t tp = 0, seen = 0;
  double ap = 0.0;
  for (const auto& r : ranked) {
    ++seen;
    const Detection& d = preds[r.scene][r.index];
    const auto& boxes = gts[r.scene].boxes;
    std::size_t best = boxes.size();
    double best_dist = match_radius;
    for (std::size_t g = 0; g < boxes.size(); ++g) {
      if (taken[r.scene][g]) continue;
      const double dist = std::hypot(d.x - boxes[g].cx, d.y - boxes[g].cy);
      if (dist <= best_dist) {
        best_dist = dist;
        best = g;
      }
    }
    if (best == boxes.size()) continue;
    taken[r.scene][best] = true;
    ++tp;
    ap += static_cast<double>(tp) / static_cast<double>(seen);
  }
  return ap / static_cast<double>(n_gt);
}

double toy_ap(const std::vector<Detection>& preds, const SceneGT& gt, double match_radius) {
  return toy_ap(std::vector<std::vector<Detection>>{preds}, std::vector<SceneGT>{gt}, match_radius);
}

}  // namespace qfuse
