#pragma once

#include <memory>
#include <span>
#include <vector>

#include "macp/autodiff.hpp"
#include "macp/geom.hpp"

namespace macp::nn {

using ad::Tape;
using ad::Var;

/// Plain-value convolution kernel. Weights are laid out as
/// [k*k offsets][in][out], offsets row-major over (drow, dcol) in [-r, r].
struct ConvKernel {
  int k = 1;
  int in = 0;
  int out = 0;
  std::vector<double> weights;
  std::vector<double> bias;  ///< empty means no bias

  ConvKernel() = default;
  ConvKernel(int k_, int in_, int out_, std::vector<double> w, std::vector<double> b);
  void validate() const;
};

/// Sparse features on a tape; the coordinate set travels alongside.
struct SparseVar {
  std::shared_ptr<const SparseLayout> layout;
  Var feats;  ///< shape [N, C]
};

// ---------------------------------------------------------------------------
// Tape operations. Weight vars have shape [k*k, in, out]; bias vars [out] or
// invalid (no bias). Dense maps are [H, W, C]. Channel-wise ops treat the
// last dimension as channels.

SparseVar subm_conv(Tape& t, const SparseVar& x, Var w, Var b, int k);
/// 1x1 affine map over the last dimension; works for sparse features and dense maps.
Var pointwise_conv(Tape& t, Var x, Var w, Var b);
Var dense_conv2d(Tape& t, Var x, Var w, Var b, int k);
Var gelu(Tape& t, Var x);
Var sigmoid(Tape& t, Var x);
Var scale_shift(Tape& t, Var x, Var gamma, Var beta);
Var residual_add(Tape& t, Var a, Var b);
Var channel_norm(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-5);

Var scale(Tape& t, Var x, double s);
Var add_all(Tape& t, std::span<const Var> xs);
Var mul(Tape& t, Var a, Var b);
Var sum(Tape& t, Var x);
Var matmul(Tape& t, Var a, Var b);
Var concat_channels(Tape& t, Var a, Var b);
/// Rounds values to single precision; gradient passes straight through.
Var round_f32(Tape& t, Var x);
/// out cell i copies input cell src[i] (all channels), or zero when src[i] < 0.
Var gather_cells(Tape& t, Var x, std::shared_ptr<const std::vector<int>> src, int rows, int cols);
Var sparse_to_dense(Tape& t, const SparseVar& x, int rows, int cols);

// ---------------------------------------------------------------------------
// Value-level conveniences over the geometry containers.

SparseTensor subm_conv(const SparseTensor& st, const ConvKernel& kernel);
SparseTensor pointwise_conv(const SparseTensor& st, const ConvKernel& kernel);
DenseGrid pointwise_conv(const DenseGrid& grid, const ConvKernel& kernel);
DenseGrid dense_conv2d(const DenseGrid& grid, const ConvKernel& kernel);
DenseGrid scale_shift(const DenseGrid& grid, std::span<const double> gamma, std::span<const double> beta);
DenseGrid channel_norm(const DenseGrid& grid, std::span<const double> gamma, std::span<const double> beta,
                       double eps = 1e-5);
DenseGrid residual_add(const DenseGrid& a, const DenseGrid& b);
SparseTensor residual_add(const SparseTensor& a, const SparseTensor& b);

double gelu(double x);
double sigmoid(double x);
std::vector<double> gelu(std::span<const double> xs);
std::vector<double> sigmoid(std::span<const double> xs);

}  // namespace macp::nn
