#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "macp/autodiff.hpp"
#include "macp/geom.hpp"
#include "macp/model.hpp"

namespace macp::testing {

inline std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

inline Tensor random_tensor(std::mt19937_64& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  t.data = uniform(rng, t.size(), lo, hi);
  return t;
}

inline PointCloud random_cloud(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> xy(lo, hi), z(0.2, 1.8), in(0.0, 1.0);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.push_back({xy(rng), xy(rng), z(rng), in(rng)});
  return c;
}

/// Random occupied cell set inside rows x cols with roughly `density` fill.
inline std::shared_ptr<const SparseLayout> random_layout(std::mt19937_64& rng, int rows, int cols, double density) {
  std::bernoulli_distribution keep(density);
  std::vector<Cell> cells;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      if (keep(rng)) cells.push_back({r, c});
  return std::make_shared<SparseLayout>(std::move(cells));
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? m : INFINITY;
}

/// Tiny architecture for finite-difference checks: 12x12 grid of 1 m cells, 4 channels.
inline ArchConfig small_arch() {
  ArchConfig a;
  a.voxel.origin_x = a.voxel.origin_y = -6.0;
  a.voxel.cell_x = a.voxel.cell_y = 1.0;
  a.voxel.rows = a.voxel.cols = 12;
  a.width = 4;
  a.encoder_blocks = 2;
  a.pred_blocks = 1;
  a.encoder_bottleneck = 2;
  a.houlsby_bottleneck = 2;
  a.compression_factor = 2;
  return a;
}

/// Moves every parameter away from its (possibly zero or identity) initial value.
inline void perturb(ad::ParamSet& ps, std::mt19937_64& rng, double amp = 0.3) {
  std::uniform_real_distribution<double> d(-amp, amp);
  for (ad::Param* p : ps.all())
    for (double& v : p->value.data) v += d(rng);
}

}  // namespace macp::testing
