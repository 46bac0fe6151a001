#pragma once

// Forward and reverse-mode primitives for the fixed 3D CNN. Every backward
// takes the tensors cached by its forward explicitly, so one set of weights
// can be applied to many inputs (e.g. several ROIs) before backpropagating.
// Parameter gradients accumulate into caller-owned buffers.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fseg/tensor.hpp"
#include "fseg/volume.hpp"

namespace fseg::nn {

template <typename T>
struct ConvWeights {
  std::size_t cin = 0;
  std::size_t cout = 0;
  std::size_t k = 3;       // cubic kernel, "same" padding k/2
  std::size_t stride = 1;
  std::vector<T> w;        // [cout][cin][k][k][k]
  std::vector<T> b;        // [cout]

  ConvWeights() = default;
  ConvWeights(std::size_t in, std::size_t out, std::size_t kernel, std::size_t s = 1)
      : cin(in), cout(out), k(kernel), stride(s), w(out * in * kernel * kernel * kernel, T{}), b(out, T{}) {}
};

[[nodiscard]] std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride);

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const ConvWeights<T>& p);
// Returns dL/dx; adds dL/dw and dL/db into `grad`.
template <typename T>
Tensor<T> conv3d_backward(const Tensor<T>& x, const Tensor<T>& dy, const ConvWeights<T>& p, ConvWeights<T>& grad);

template <typename T>
struct GroupNormWeights {
  std::size_t groups = 4;
  std::vector<T> gamma;
  std::vector<T> beta;

  GroupNormWeights() = default;
  GroupNormWeights(std::size_t channels, std::size_t g) : groups(g), gamma(channels, T{1}), beta(channels, T{}) {}
};

template <typename T>
struct GroupNormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;  // per group
};

inline constexpr double kGroupNormEps = 1e-5;

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, const GroupNormWeights<T>& p, GroupNormCache<T>& cache);
template <typename T>
Tensor<T> group_norm_backward(const Tensor<T>& dy, const GroupNormWeights<T>& p, const GroupNormCache<T>& cache,
                              GroupNormWeights<T>& grad);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
// `y` is the forward output.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& y, const Tensor<T>& dy);

// 2x2x2 max pooling, stride 2, partial windows at odd edges (output ceil(n/2)).
template <typename T>
Tensor<T> maxpool2(const Tensor<T>& x, std::vector<std::uint32_t>& argmax);
template <typename T>
Tensor<T> maxpool2_backward(const Tensor<T>& dy, const std::vector<std::uint32_t>& argmax, const Tensor<T>& x_shape);

// Mean over the box of each channel.
template <typename T>
std::vector<T> gap(const Tensor<T>& x, const BoundingBox3& box);
template <typename T>
void gap_backward(const std::vector<T>& dy, const BoundingBox3& box, Tensor<T>& dx);

// y = W x + b with W row-major [out][in].
template <typename T>
std::vector<T> linear(const std::vector<T>& x, const std::vector<T>& w, const std::vector<T>& b);
template <typename T>
std::vector<T> linear_backward(const std::vector<T>& x, const std::vector<T>& dy, const std::vector<T>& w,
                               std::vector<T>& dw, std::vector<T>& db);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
// `y` is the forward output.
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy);

// Trilinear upsampling by an integer factor (half-pixel centres, edge clamp),
// output extent = factor * input extent.
template <typename T>
Tensor<T> upsample_trilinear(const Tensor<T>& x, std::size_t factor);
template <typename T>
Tensor<T> upsample_trilinear_backward(const Tensor<T>& dy, std::size_t factor);

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
void concat_backward(const Tensor<T>& dy, std::size_t channels_a, Tensor<T>& da, Tensor<T>& db);

template <typename T>
Tensor<T> crop(const Tensor<T>& x, const BoundingBox3& box);
// Adds dy into the box of dx.
template <typename T>
void crop_backward(const Tensor<T>& dy, const BoundingBox3& box, Tensor<T>& dx);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b);

}  // namespace fseg::nn
