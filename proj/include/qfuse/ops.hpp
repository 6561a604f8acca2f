#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "qfuse/tensor.hpp"

namespace qfuse {

// Channel mixing: out[c,h,w] = b[c] + sum_k w[c,k] * x[k,h,w]. `b` may be undefined.
Tensor conv1x1(const Tensor& x, const Tensor& w, const Tensor& b = {});

// 3x3 cross-correlation with zero padding 1. stride must be 1 or 2.
// Output extent is floor((H-1)/stride)+1.
Tensor conv3x3(const Tensor& x, const Tensor& w, const Tensor& b, int stride);

// Bilinear resampling of a [C,H,W] map with the align-corners=false convention.
Tensor resize_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w);

// Edge-replicate padding on the bottom and right of a [C,H,W] map.
Tensor pad_edge(const Tensor& x, std::size_t bottom, std::size_t right);

// [C,H,W] -> [C], spatial mean.
Tensor global_avg_pool(const Tensor& x);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
// Contiguous sub-range [start, start+length) along `axis`.
Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
// Slice k along axis 0, dropping that axis.
Tensor select0(const Tensor& x, std::size_t k);
// Stack equally shaped tensors along a new leading axis.
Tensor stack0(std::span<const Tensor> parts);
Tensor stack0(std::initializer_list<Tensor> parts);
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// x[C,...] scaled per channel by g[C].
Tensor mul_channel(const Tensor& x, const Tensor& g);
// [M,N] x [N] -> [M]
Tensor matvec(const Tensor& w, const Tensor& v);

/// Fixed sampling locations for grid_sample. Coordinates are continuous pixel
/// positions in the source map (integer value = pixel centre); invalid cells
/// produce zeros.
struct SampleGrid {
  std::size_t out_h = 0;
  std::size_t out_w = 0;
  std::vector<double> u;  // column coordinate
  std::vector<double> v;  // row coordinate
  std::vector<std::uint8_t> valid;
};

// [C,H,W] sampled bilinearly at each grid cell -> [C,out_h,out_w].
// Neighbours outside the source are clamped to the border.
Tensor grid_sample(const Tensor& x, const SampleGrid& grid);

/// Penalty-reduced focal loss on logits against a soft target heatmap.
/// Cells with target == 1 are positives. Sum is divided by max(1, #positives).
Tensor focal_loss(const Tensor& logits, const Tensor& target, double alpha, double beta);

/// sum over channels and masked cells of |pred - target|, divided by `normalizer`.
/// pred/target are [C,...]; mask has the trailing (spatial) shape.
Tensor masked_l1(const Tensor& pred, const Tensor& target, const Tensor& mask, double normalizer);

}  // namespace qfuse
