#include "macp/nnops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace macp::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::RowVectorXd>;
using CMapVec = Eigen::Map<const Eigen::RowVectorXd>;

int last_dim(const Tensor& x) {
  if (x.shape.empty()) throw Error("expected a tensor with a channel dimension");
  return x.shape.back();
}

std::size_t rows_of(const Tensor& x) {
  const int c = last_dim(x);
  return c == 0 ? 0 : x.size() / static_cast<std::size_t>(c);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape)
    throw Error(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

struct KernelShape {
  int kk, in, out;
};

KernelShape kernel_shape(const Tensor& w, const char* op) {
  if (w.shape.size() != 3) throw Error(std::string(op) + ": weights must be [k*k, in, out]");
  return {w.shape[0], w.shape[1], w.shape[2]};
}

int kernel_side(int kk) {
  int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(kk))));
  if (k * k != kk || k % 2 == 0) throw Error("convolution kernel must be square with odd side");
  return k;
}

void check_bias(const Tape& t, Var b, int out, const char* op) {
  if (b.valid() && (t.value(b).size() != static_cast<std::size_t>(out)))
    throw Error(std::string(op) + ": bias length does not match out channels");
}

// y[n, out] = x[n, in] * w[in, out] (+ b). Shared by every 1x1 path so they agree bitwise.
void affine_rows(const double* x, std::size_t n, int in, const double* w, const double* b, int out, double* y) {
  if (n == 0) return;
  CMapMat xm(x, static_cast<Eigen::Index>(n), in);
  CMapMat wm(w, in, out);
  MapMat ym(y, static_cast<Eigen::Index>(n), out);
  ym.noalias() = xm * wm;
  if (b) ym.rowwise() += CMapVec(b, out);
}

void accumulate_bias_grad(Tape& t, Var b, const double* g, std::size_t n, int out) {
  if (!b.valid() || !t.requires_grad(b) || n == 0) return;
  Tensor& gb = t.grad(b);
  MapVec(gb.ptr(), out) += CMapMat(g, static_cast<Eigen::Index>(n), out).colwise().sum();
}

// Flat padded copy used by the shifted-GEMM dense convolution.
struct Padded {
  int rows, cols, channels, r, wp;
  std::vector<double> buf;
  double* at(int pr, int pc) { return buf.data() + (static_cast<std::size_t>(pr) * wp + pc) * channels; }
};

Padded pad(const double* x, int h, int w, int c, int r) {
  Padded p{h, w, c, r, w + 2 * r, {}};
  p.buf.assign((static_cast<std::size_t>(h + 2 * r) * p.wp + 2 * r) * c, 0.0);
  for (int i = 0; i < h; ++i)
    std::copy_n(x + static_cast<std::size_t>(i) * w * c, static_cast<std::size_t>(w) * c, p.at(i + r, r));
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------

ConvKernel::ConvKernel(int k_, int in_, int out_, std::vector<double> w, std::vector<double> b)
    : k(k_), in(in_), out(out_), weights(std::move(w)), bias(std::move(b)) {
  validate();
}

void ConvKernel::validate() const {
  if (k < 1 || k % 2 == 0) throw Error("conv kernel: spatial size must be odd");
  if (in < 1 || out < 1) throw Error("conv kernel: channel counts must be positive");
  if (weights.size() != static_cast<std::size_t>(k) * k * in * out) throw Error("conv kernel: weight count mismatch");
  if (!bias.empty() && bias.size() != static_cast<std::size_t>(out)) throw Error("conv kernel: bias length mismatch");
  for (double v : weights)
    if (!std::isfinite(v)) throw Error("conv kernel: non-finite weight");
}

// ---------------------------------------------------------------------------

SparseVar subm_conv(Tape& t, const SparseVar& x, Var w, Var b, int k) {
  const Tensor& xv = t.value(x.feats);
  const KernelShape ks = kernel_shape(t.value(w), "subm_conv");
  if (ks.kk != k * k || kernel_side(ks.kk) != k) throw Error("subm_conv: kernel size mismatch");
  if (xv.shape.size() != 2 || xv.shape[1] != ks.in)
    throw Error("subm_conv: channel mismatch, input has " + std::to_string(xv.shape.empty() ? 0 : xv.shape.back()) +
                " channels, kernel expects " + std::to_string(ks.in));
  check_bias(t, b, ks.out, "subm_conv");
  if (k == 1) return {x.layout, pointwise_conv(t, x.feats, w, b)};

  const auto& layout = *x.layout;
  const std::size_t n = layout.size();
  const int r = k / 2;
  // Rulebook: per offset, the (input slot, output slot) pairs whose neighbor is occupied.
  auto rules = std::make_shared<std::vector<std::vector<std::pair<int, int>>>>(static_cast<std::size_t>(k) * k);
  for (std::size_t i = 0; i < n; ++i) {
    const Cell c = layout.coords()[i];
    for (int dr = -r; dr <= r; ++dr)
      for (int dc = -r; dc <= r; ++dc) {
        const int j = layout.find({c.row + dr, c.col + dc});
        if (j >= 0) (*rules)[static_cast<std::size_t>((dr + r) * k + (dc + r))].emplace_back(j, static_cast<int>(i));
      }
  }
  Tensor y({static_cast<int>(n), ks.out});
  const double* wp = t.value(w).ptr();
  const std::size_t wstride = static_cast<std::size_t>(ks.in) * ks.out;
  if (b.valid()) {
    MapMat(y.ptr(), static_cast<Eigen::Index>(n), ks.out).rowwise() = CMapVec(t.value(b).ptr(), ks.out);
  }
  RowMat gathered, partial;
  for (std::size_t o = 0; o < rules->size(); ++o) {
    const auto& pairs = (*rules)[o];
    if (pairs.empty()) continue;
    const auto p = static_cast<Eigen::Index>(pairs.size());
    gathered.resize(p, ks.in);
    for (Eigen::Index q = 0; q < p; ++q)
      gathered.row(q) = CMapVec(xv.ptr() + static_cast<std::size_t>(pairs[q].first) * ks.in, ks.in);
    partial.noalias() = gathered * CMapMat(wp + o * wstride, ks.in, ks.out);
    for (Eigen::Index q = 0; q < p; ++q)
      MapVec(y.ptr() + static_cast<std::size_t>(pairs[q].second) * ks.out, ks.out) += partial.row(q);
  }
  Var xf = x.feats;
  Var out = t.record("subm_conv", std::move(y), {xf, w, b}, [xf, w, b, rules, ks](Tape& tp, const Tensor& g) {
    const Tensor& xv = tp.value(xf);
    const double* wp = tp.value(w).ptr();
    const std::size_t wstride = static_cast<std::size_t>(ks.in) * ks.out;
    const bool need_x = tp.requires_grad(xf), need_w = tp.requires_grad(w);
    double* gx = need_x ? tp.grad(xf).ptr() : nullptr;
    double* gw = need_w ? tp.grad(w).ptr() : nullptr;
    RowMat xs, gs, tmp;
    for (std::size_t o = 0; o < rules->size(); ++o) {
      const auto& pairs = (*rules)[o];
      if (pairs.empty()) continue;
      const auto p = static_cast<Eigen::Index>(pairs.size());
      gs.resize(p, ks.out);
      for (Eigen::Index q = 0; q < p; ++q)
        gs.row(q) = CMapVec(g.ptr() + static_cast<std::size_t>(pairs[q].second) * ks.out, ks.out);
      if (need_x) {
        tmp.noalias() = gs * CMapMat(wp + o * wstride, ks.in, ks.out).transpose();
        for (Eigen::Index q = 0; q < p; ++q)
          MapVec(gx + static_cast<std::size_t>(pairs[q].first) * ks.in, ks.in) += tmp.row(q);
      }
      if (need_w) {
        xs.resize(p, ks.in);
        for (Eigen::Index q = 0; q < p; ++q)
          xs.row(q) = CMapVec(xv.ptr() + static_cast<std::size_t>(pairs[q].first) * ks.in, ks.in);
        MapMat(gw + o * wstride, ks.in, ks.out).noalias() += xs.transpose() * gs;
      }
    }
    accumulate_bias_grad(tp, b, g.ptr(), rows_of(g), ks.out);
  });
  return {x.layout, out};
}

Var pointwise_conv(Tape& t, Var x, Var w, Var b) {
  const Tensor& xv = t.value(x);
  const KernelShape ks = kernel_shape(t.value(w), "pointwise_conv");
  if (ks.kk != 1) throw Error("pointwise_conv: kernel size must be 1");
  if (last_dim(xv) != ks.in)
    throw Error("pointwise_conv: channel mismatch, input has " + std::to_string(last_dim(xv)) +
                " channels, kernel expects " + std::to_string(ks.in));
  check_bias(t, b, ks.out, "pointwise_conv");
  const std::size_t n = rows_of(xv);
  std::vector<int> shape = xv.shape;
  shape.back() = ks.out;
  Tensor y(shape);
  affine_rows(xv.ptr(), n, ks.in, t.value(w).ptr(), b.valid() ? t.value(b).ptr() : nullptr, ks.out, y.ptr());
  return t.record("pointwise_conv", std::move(y), {x, w, b}, [x, w, b, ks, n](Tape& tp, const Tensor& g) {
    if (n == 0) return;
    CMapMat gm(g.ptr(), static_cast<Eigen::Index>(n), ks.out);
    if (tp.requires_grad(x)) {
      MapMat(tp.grad(x).ptr(), static_cast<Eigen::Index>(n), ks.in).noalias() +=
          gm * CMapMat(tp.value(w).ptr(), ks.in, ks.out).transpose();
    }
    if (tp.requires_grad(w)) {
      MapMat(tp.grad(w).ptr(), ks.in, ks.out).noalias() +=
          CMapMat(tp.value(x).ptr(), static_cast<Eigen::Index>(n), ks.in).transpose() * gm;
    }
    accumulate_bias_grad(tp, b, g.ptr(), n, ks.out);
  });
}

Var dense_conv2d(Tape& t, Var x, Var w, Var b, int k) {
  const Tensor& xv = t.value(x);
  const KernelShape ks = kernel_shape(t.value(w), "dense_conv2d");
  if (ks.kk != k * k || kernel_side(ks.kk) != k) throw Error("dense_conv2d: kernel size mismatch");
  if (xv.shape.size() != 3) throw Error("dense_conv2d: input must be [H, W, C]");
  if (xv.shape[2] != ks.in)
    throw Error("dense_conv2d: channel mismatch, input has " + std::to_string(xv.shape[2]) +
                " channels, kernel expects " + std::to_string(ks.in));
  check_bias(t, b, ks.out, "dense_conv2d");
  if (k == 1) return pointwise_conv(t, x, w, b);

  const int h = xv.shape[0], wd = xv.shape[1], r = k / 2;
  Padded p = pad(xv.ptr(), h, wd, ks.in, r);
  const auto m = static_cast<Eigen::Index>(h) * p.wp;
  RowMat acc = RowMat::Zero(m, ks.out);
  const double* wp = t.value(w).ptr();
  const std::size_t wstride = static_cast<std::size_t>(ks.in) * ks.out;
  for (int di = 0; di < k; ++di)
    for (int dj = 0; dj < k; ++dj) {
      const std::size_t shift = (static_cast<std::size_t>(di) * p.wp + dj) * ks.in;
      acc.noalias() += CMapMat(p.buf.data() + shift, m, ks.in) *
                       CMapMat(wp + static_cast<std::size_t>(di * k + dj) * wstride, ks.in, ks.out);
    }
  Tensor y({h, wd, ks.out});
  const double* bp = b.valid() ? t.value(b).ptr() : nullptr;
  for (int i = 0; i < h; ++i) {
    MapMat dst(y.ptr() + static_cast<std::size_t>(i) * wd * ks.out, wd, ks.out);
    dst = acc.block(static_cast<Eigen::Index>(i) * p.wp, 0, wd, ks.out);
    if (bp) dst.rowwise() += CMapVec(bp, ks.out);
  }
  return t.record("dense_conv2d", std::move(y), {x, w, b}, [x, w, b, ks, k, h, wd, r](Tape& tp, const Tensor& g) {
    const int wpd = wd + 2 * r;
    const auto m = static_cast<Eigen::Index>(h) * wpd;
    // Gradient laid out on the padded row pitch; junk columns stay zero.
    RowMat gp = RowMat::Zero(m, ks.out);
    for (int i = 0; i < h; ++i)
      gp.block(static_cast<Eigen::Index>(i) * wpd, 0, wd, ks.out) =
          CMapMat(g.ptr() + static_cast<std::size_t>(i) * wd * ks.out, wd, ks.out);
    const double* wp = tp.value(w).ptr();
    const std::size_t wstride = static_cast<std::size_t>(ks.in) * ks.out;
    if (tp.requires_grad(x)) {
      std::vector<double> gbuf((static_cast<std::size_t>(h + 2 * r) * wpd + 2 * r) * ks.in, 0.0);
      for (int di = 0; di < k; ++di)
        for (int dj = 0; dj < k; ++dj) {
          const std::size_t shift = (static_cast<std::size_t>(di) * wpd + dj) * ks.in;
          MapMat(gbuf.data() + shift, m, ks.in).noalias() +=
              gp * CMapMat(wp + static_cast<std::size_t>(di * k + dj) * wstride, ks.in, ks.out).transpose();
        }
      double* gx = tp.grad(x).ptr();
      for (int i = 0; i < h; ++i) {
        const double* src = gbuf.data() + (static_cast<std::size_t>(i + r) * wpd + r) * ks.in;
        double* dst = gx + static_cast<std::size_t>(i) * wd * ks.in;
        for (std::size_t q = 0; q < static_cast<std::size_t>(wd) * ks.in; ++q) dst[q] += src[q];
      }
    }
    if (tp.requires_grad(w)) {
      Padded p = pad(tp.value(x).ptr(), h, wd, ks.in, r);
      double* gw = tp.grad(w).ptr();
      for (int di = 0; di < k; ++di)
        for (int dj = 0; dj < k; ++dj) {
          const std::size_t shift = (static_cast<std::size_t>(di) * wpd + dj) * ks.in;
          MapMat(gw + static_cast<std::size_t>(di * k + dj) * wstride, ks.in, ks.out).noalias() +=
              CMapMat(p.buf.data() + shift, m, ks.in).transpose() * gp;
        }
    }
    accumulate_bias_grad(tp, b, g.ptr(), rows_of(g), ks.out);
  });
}

// ---------------------------------------------------------------------------

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

double sigmoid(double x) {
  // Kept strictly inside (0, 1) even where the exact value rounds to 0 or 1.
  constexpr double kLo = 1e-300, kHi = 1.0 - 0x1p-53;
  double y;
  if (x >= 0) {
    y = 1.0 / (1.0 + std::exp(-x));
  } else {
    const double e = std::exp(x);
    y = e / (1.0 + e);
  }
  return std::clamp(y, kLo, kHi);
}

std::vector<double> gelu(std::span<const double> xs) {
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = gelu(xs[i]);
  return out;
}

std::vector<double> sigmoid(std::span<const double> xs) {
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = sigmoid(xs[i]);
  return out;
}

Var gelu(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor y(xv.shape);
  const bool need = t.requires_grad(x);
  auto deriv = std::make_shared<std::vector<double>>(need ? xv.size() : 0);
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
    y[i] = 0.5 * v * (1.0 + th);
    if (need)
      (*deriv)[i] = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
  }
  return t.record("gelu", std::move(y), {x}, [x, deriv](Tape& tp, const Tensor& g) {
    double* gx = tp.grad(x).ptr();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*deriv)[i];
  });
}

Var sigmoid(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor y(xv.shape);
  const bool need = t.requires_grad(x);
  auto deriv = std::make_shared<std::vector<double>>(need ? xv.size() : 0);
  for (std::size_t i = 0; i < xv.size(); ++i) {
    y[i] = sigmoid(xv[i]);
    if (need) (*deriv)[i] = y[i] * (1.0 - y[i]);
  }
  return t.record("sigmoid", std::move(y), {x}, [x, deriv](Tape& tp, const Tensor& g) {
    double* gx = tp.grad(x).ptr();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*deriv)[i];
  });
}

Var scale_shift(Tape& t, Var x, Var gamma, Var beta) {
  const Tensor& xv = t.value(x);
  const int c = last_dim(xv);
  if (t.value(gamma).size() != static_cast<std::size_t>(c) || t.value(beta).size() != static_cast<std::size_t>(c))
    throw Error("scale_shift: gamma/beta length must equal channel count " + std::to_string(c));
  const std::size_t n = rows_of(xv);
  const double* gm = t.value(gamma).ptr();
  const double* bt = t.value(beta).ptr();
  Tensor y(xv.shape);
  for (std::size_t i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t q = i * c + ch;
      y[q] = gm[ch] * xv[q] + bt[ch];
    }
  return t.record("scale_shift", std::move(y), {x, gamma, beta}, [x, gamma, beta, n, c](Tape& tp, const Tensor& g) {
    const double* gm = tp.value(gamma).ptr();
    if (tp.requires_grad(x)) {
      double* gx = tp.grad(x).ptr();
      for (std::size_t i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) gx[i * c + ch] += gm[ch] * g[i * c + ch];
    }
    if (tp.requires_grad(gamma)) {
      const Tensor& xv = tp.value(x);
      double* gg = tp.grad(gamma).ptr();
      for (std::size_t i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) gg[ch] += xv[i * c + ch] * g[i * c + ch];
    }
    if (tp.requires_grad(beta)) {
      double* gb = tp.grad(beta).ptr();
      for (std::size_t i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) gb[ch] += g[i * c + ch];
    }
  });
}

Var residual_add(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_same_shape(av, bv, "residual_add");
  Tensor y(av.shape);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  return t.record("residual_add", std::move(y), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    for (Var v : {a, b}) {
      if (!tp.requires_grad(v)) continue;
      double* gv = tp.grad(v).ptr();
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

Var channel_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = t.value(x);
  const int c = last_dim(xv);
  if (t.value(gamma).size() != static_cast<std::size_t>(c) || t.value(beta).size() != static_cast<std::size_t>(c))
    throw Error("channel_norm: gamma/beta length must equal channel count");
  const std::size_t n = rows_of(xv);
  if (n == 0) throw Error("channel_norm: empty input");
  std::vector<double> mean(c, 0.0), var(c, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) mean[ch] += xv[i * c + ch];
  for (int ch = 0; ch < c; ++ch) mean[ch] /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const double d = xv[i * c + ch] - mean[ch];
      var[ch] += d * d;
    }
  auto inv_std = std::make_shared<std::vector<double>>(c);
  for (int ch = 0; ch < c; ++ch) (*inv_std)[ch] = 1.0 / std::sqrt(var[ch] / static_cast<double>(n) + eps);
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  const double* gm = t.value(gamma).ptr();
  const double* bt = t.value(beta).ptr();
  Tensor y(xv.shape);
  for (std::size_t i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t q = i * c + ch;
      (*xhat)[q] = (xv[q] - mean[ch]) * (*inv_std)[ch];
      y[q] = gm[ch] * (*xhat)[q] + bt[ch];
    }
  return t.record("channel_norm", std::move(y), {x, gamma, beta},
                  [x, gamma, beta, n, c, xhat, inv_std](Tape& tp, const Tensor& g) {
                    const double* gm = tp.value(gamma).ptr();
                    std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
                    for (std::size_t i = 0; i < n; ++i)
                      for (int ch = 0; ch < c; ++ch) {
                        const std::size_t q = i * c + ch;
                        sum_g[ch] += g[q];
                        sum_gx[ch] += g[q] * (*xhat)[q];
                      }
                    if (tp.requires_grad(x)) {
                      double* gx = tp.grad(x).ptr();
                      const double inv_n = 1.0 / static_cast<double>(n);
                      for (std::size_t i = 0; i < n; ++i)
                        for (int ch = 0; ch < c; ++ch) {
                          const std::size_t q = i * c + ch;
                          gx[q] += gm[ch] * (*inv_std)[ch] *
                                   (g[q] - inv_n * sum_g[ch] - (*xhat)[q] * inv_n * sum_gx[ch]);
                        }
                    }
                    if (tp.requires_grad(gamma)) {
                      double* gg = tp.grad(gamma).ptr();
                      for (int ch = 0; ch < c; ++ch) gg[ch] += sum_gx[ch];
                    }
                    if (tp.requires_grad(beta)) {
                      double* gb = tp.grad(beta).ptr();
                      for (int ch = 0; ch < c; ++ch) gb[ch] += sum_g[ch];
                    }
                  });
}

Var scale(Tape& t, Var x, double s) {
  const Tensor& xv = t.value(x);
  Tensor y(xv.shape);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = s * xv[i];
  return t.record("scale", std::move(y), {x}, [x, s](Tape& tp, const Tensor& g) {
    double* gx = tp.grad(x).ptr();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
  });
}

Var add_all(Tape& t, std::span<const Var> xs) {
  if (xs.empty()) throw Error("add_all: no inputs");
  const Tensor& first = t.value(xs[0]);
  Tensor y = first;
  for (std::size_t k = 1; k < xs.size(); ++k) {
    const Tensor& v = t.value(xs[k]);
    require_same_shape(first, v, "add_all");
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += v[i];
  }
  std::vector<Var> inputs(xs.begin(), xs.end());
  return t.record("add_all", std::move(y), inputs, [inputs](Tape& tp, const Tensor& g) {
    for (Var v : inputs) {
      if (!tp.requires_grad(v)) continue;
      double* gv = tp.grad(v).ptr();
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

Var mul(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_same_shape(av, bv, "mul");
  Tensor y(av.shape);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  return t.record("mul", std::move(y), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) {
      const Tensor& bv = tp.value(b);
      double* ga = tp.grad(a).ptr();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tp.requires_grad(b)) {
      const Tensor& av = tp.value(a);
      double* gb = tp.grad(b).ptr();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var sum(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  double s = 0;
  for (double v : xv.data) s += v;
  return t.record("sum", Tensor({1}, {s}), {x}, [x](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad(x);
    for (double& v : gx.data) v += g[0];
  });
}

Var matmul(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.shape.size() != 2 || bv.shape.size() != 2 || av.shape[1] != bv.shape[0])
    throw Error("matmul: incompatible shapes " + shape_str(av.shape) + " x " + shape_str(bv.shape));
  const int m = av.shape[0], kd = av.shape[1], n = bv.shape[1];
  Tensor y({m, n});
  MapMat(y.ptr(), m, n).noalias() = CMapMat(av.ptr(), m, kd) * CMapMat(bv.ptr(), kd, n);
  return t.record("matmul", std::move(y), {a, b}, [a, b, m, kd, n](Tape& tp, const Tensor& g) {
    CMapMat gm(g.ptr(), m, n);
    if (tp.requires_grad(a))
      MapMat(tp.grad(a).ptr(), m, kd).noalias() += gm * CMapMat(tp.value(b).ptr(), kd, n).transpose();
    if (tp.requires_grad(b))
      MapMat(tp.grad(b).ptr(), kd, n).noalias() += CMapMat(tp.value(a).ptr(), m, kd).transpose() * gm;
  });
}

Var concat_channels(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  const int ca = last_dim(av), cb = last_dim(bv);
  const std::size_t n = rows_of(av);
  if (rows_of(bv) != n || av.shape.size() != bv.shape.size()) throw Error("concat_channels: leading shapes differ");
  std::vector<int> shape = av.shape;
  shape.back() = ca + cb;
  Tensor y(shape);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(av.ptr() + i * ca, ca, y.ptr() + i * (ca + cb));
    std::copy_n(bv.ptr() + i * cb, cb, y.ptr() + i * (ca + cb) + ca);
  }
  return t.record("concat_channels", std::move(y), {a, b}, [a, b, n, ca, cb](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) {
      double* ga = tp.grad(a).ptr();
      for (std::size_t i = 0; i < n; ++i)
        for (int c = 0; c < ca; ++c) ga[i * ca + c] += g[i * (ca + cb) + c];
    }
    if (tp.requires_grad(b)) {
      double* gb = tp.grad(b).ptr();
      for (std::size_t i = 0; i < n; ++i)
        for (int c = 0; c < cb; ++c) gb[i * cb + c] += g[i * (ca + cb) + ca + c];
    }
  });
}

Var round_f32(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor y(xv.shape);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<double>(static_cast<float>(xv[i]));
  return t.record("round_f32", std::move(y), {x}, [x](Tape& tp, const Tensor& g) {
    double* gx = tp.grad(x).ptr();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var gather_cells(Tape& t, Var x, std::shared_ptr<const std::vector<int>> src, int rows, int cols) {
  const Tensor& xv = t.value(x);
  const int c = last_dim(xv);
  const std::size_t cells = static_cast<std::size_t>(rows) * cols;
  if (src->size() != cells) throw Error("gather_cells: index map size mismatch");
  const std::size_t in_cells = rows_of(xv);
  Tensor y({rows, cols, c});
  for (std::size_t i = 0; i < cells; ++i) {
    const int s = (*src)[i];
    if (s < 0) continue;
    if (static_cast<std::size_t>(s) >= in_cells) throw Error("gather_cells: source index out of range");
    std::copy_n(xv.ptr() + static_cast<std::size_t>(s) * c, c, y.ptr() + i * c);
  }
  return t.record("gather_cells", std::move(y), {x}, [x, src, c](Tape& tp, const Tensor& g) {
    double* gx = tp.grad(x).ptr();
    for (std::size_t i = 0; i < src->size(); ++i) {
      const int s = (*src)[i];
      if (s < 0) continue;
      for (int ch = 0; ch < c; ++ch) gx[static_cast<std::size_t>(s) * c + ch] += g[i * c + ch];
    }
  });
}

Var sparse_to_dense(Tape& t, const SparseVar& x, int rows, int cols) {
  const Tensor& xv = t.value(x.feats);
  const int c = last_dim(xv);
  const auto& coords = x.layout->coords();
  auto dst = std::make_shared<std::vector<std::size_t>>(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const Cell cell = coords[i];
    if (cell.row < 0 || cell.row >= rows || cell.col < 0 || cell.col >= cols)
      throw OutOfBounds("sparse_to_dense: coordinate (" + std::to_string(cell.row) + "," + std::to_string(cell.col) +
                        ") outside grid");
    (*dst)[i] = static_cast<std::size_t>(cell.row) * cols + cell.col;
  }
  Tensor y({rows, cols, c});
  for (std::size_t i = 0; i < coords.size(); ++i) std::copy_n(xv.ptr() + i * c, c, y.ptr() + (*dst)[i] * c);
  Var xf = x.feats;
  return t.record("sparse_to_dense", std::move(y), {xf}, [xf, dst, c](Tape& tp, const Tensor& g) {
    double* gx = tp.grad(xf).ptr();
    for (std::size_t i = 0; i < dst->size(); ++i)
      for (int ch = 0; ch < c; ++ch) gx[i * c + ch] += g[(*dst)[i] * c + ch];
  });
}

// ---------------------------------------------------------------------------
// Value-level wrappers.

namespace {

struct KernelVars {
  Var w, b;
};

KernelVars kernel_vars(Tape& t, const ConvKernel& k) {
  k.validate();
  KernelVars kv;
  kv.w = t.constant(Tensor({k.k * k.k, k.in, k.out}, k.weights));
  if (!k.bias.empty()) kv.b = t.constant(Tensor({k.out}, k.bias));
  return kv;
}

DenseGrid grid_of(const Tape& t, Var v) { return DenseGrid::from_tensor(t.value(v)); }

Var grid_var(Tape& t, const DenseGrid& g) { return t.constant(g.to_tensor()); }

Var feats_var(Tape& t, const SparseTensor& st) {
  return t.constant(Tensor({static_cast<int>(st.size()), st.channels}, st.feats));
}

}  // namespace

SparseTensor subm_conv(const SparseTensor& st, const ConvKernel& kernel) {
  Tape t;
  const KernelVars kv = kernel_vars(t, kernel);
  if (st.channels != kernel.in)
    throw Error("subm_conv: channel mismatch, input has " + std::to_string(st.channels) + " channels, kernel expects " +
                std::to_string(kernel.in));
  SparseVar out = subm_conv(t, {st.layout, feats_var(t, st)}, kv.w, kv.b, kernel.k);
  return SparseTensor(st.layout, t.value(out.feats).data, kernel.out);
}

SparseTensor pointwise_conv(const SparseTensor& st, const ConvKernel& kernel) {
  if (kernel.k != 1) throw Error("pointwise_conv: kernel size must be 1");
  Tape t;
  const KernelVars kv = kernel_vars(t, kernel);
  Var out = pointwise_conv(t, feats_var(t, st), kv.w, kv.b);
  return SparseTensor(st.layout, t.value(out).data, kernel.out);
}

DenseGrid pointwise_conv(const DenseGrid& grid, const ConvKernel& kernel) {
  if (kernel.k != 1) throw Error("pointwise_conv: kernel size must be 1");
  Tape t;
  const KernelVars kv = kernel_vars(t, kernel);
  return grid_of(t, pointwise_conv(t, grid_var(t, grid), kv.w, kv.b));
}

DenseGrid dense_conv2d(const DenseGrid& grid, const ConvKernel& kernel) {
  Tape t;
  const KernelVars kv = kernel_vars(t, kernel);
  return grid_of(t, dense_conv2d(t, grid_var(t, grid), kv.w, kv.b, kernel.k));
}

DenseGrid scale_shift(const DenseGrid& grid, std::span<const double> gamma, std::span<const double> beta) {
  Tape t;
  Var g = t.constant(Tensor({static_cast<int>(gamma.size())}, {gamma.begin(), gamma.end()}));
  Var b = t.constant(Tensor({static_cast<int>(beta.size())}, {beta.begin(), beta.end()}));
  return grid_of(t, scale_shift(t, grid_var(t, grid), g, b));
}

DenseGrid channel_norm(const DenseGrid& grid, std::span<const double> gamma, std::span<const double> beta,
                       double eps) {
  Tape t;
  Var g = t.constant(Tensor({static_cast<int>(gamma.size())}, {gamma.begin(), gamma.end()}));
  Var b = t.constant(Tensor({static_cast<int>(beta.size())}, {beta.begin(), beta.end()}));
  return grid_of(t, channel_norm(t, grid_var(t, grid), g, b, eps));
}

DenseGrid residual_add(const DenseGrid& a, const DenseGrid& b) {
  if (a.rows != b.rows || a.cols != b.cols || a.channels != b.channels) throw Error("residual_add: shape mismatch");
  DenseGrid out = a;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += b.values[i];
  return out;
}

SparseTensor residual_add(const SparseTensor& a, const SparseTensor& b) {
  if (a.channels != b.channels || a.size() != b.size() || a.layout->coords() != b.layout->coords())
    throw Error("residual_add: coordinate sets differ");
  std::vector<double> f = a.feats;
  for (std::size_t i = 0; i < f.size(); ++i) f[i] += b.feats[i];
  return SparseTensor(a.layout, std::move(f), a.channels);
}

}  // namespace macp::nn
