#include "nutri/ops.hpp"

// Always use the blocked GEMM kernel: its summation order depends only on
// the matrix shapes, never on buffer alignment, so results are
// reproducible from run to run.
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "nutri/errors.hpp"

namespace nutri {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;
using Idx = Eigen::Index;

// Period of the second operand of a binary op under leading-axis broadcast.
std::size_t broadcast_period(const Tensor& a, const Tensor& b, const char* op) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa == sb) return a.numel();
  if (sa.size() >= 1) {
    Shape tail(sa.begin() + 1, sa.end());
    Shape one_tail = tail;
    one_tail.insert(one_tail.begin(), 1);
    if (sb == tail || sb == one_tail) return b.numel();
  }
  throw DimensionError(std::string(op) + ": cannot combine " + shape_str(sa) + " with " + shape_str(sb));
}

template <class F, class D>
Tensor unary(const char* name, const Tensor& x, F f, D dfdx) {
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = f(xs[i]);
  return make_result(name, x.shape(), std::move(out), {x}, [x, dfdx](std::span<const double> g) {
    auto gx = grad_sink(x);
    const auto xd = x.data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(xd[i]);
  });
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

void check_rank(const Tensor& t, int r, const char* op) {
  if (t.rank() != r) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " + shape_str(t.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const auto period = broadcast_period(a, b, "add");
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] + bd[i % period];
  return make_result("add", a.shape(), std::move(out), {a, b}, [a, b, period](std::span<const double> g) {
    if (auto ga = grad_sink(a); !ga.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (auto gb = grad_sink(b); !gb.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % period] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const auto period = broadcast_period(a, b, "sub");
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] - bd[i % period];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [a, b, period](std::span<const double> g) {
    if (auto ga = grad_sink(a); !ga.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (auto gb = grad_sink(b); !gb.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % period] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const auto period = broadcast_period(a, b, "mul");
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] * bd[i % period];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [a, b, period](std::span<const double> g) {
    const auto ad = a.data();
    const auto bd = b.data();
    if (auto ga = grad_sink(a); !ga.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd[i % period];
    }
    if (auto gb = grad_sink(b); !gb.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % period] += g[i] * ad[i];
    }
  });
}

Tensor scale(const Tensor& x, double a, double b) {
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = a * xd[i] + b;
  return make_result("scale", x.shape(), std::move(out), {x}, [x, a](std::span<const double> g) {
    auto gx = grad_sink(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += a * g[i];
  });
}

Tensor scale_shift(const Tensor& x, const Tensor& alpha, const Tensor& beta) {
  if (alpha.numel() != 1 || beta.numel() != 1) throw DimensionError("scale_shift: alpha and beta must be scalars");
  const double al = alpha.item();
  const double be = beta.item();
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = al * xd[i] + be;
  return make_result("scale_shift", x.shape(), std::move(out), {x, alpha, beta},
                     [x, alpha, beta](std::span<const double> g) {
                       const double al = alpha.item();
                       const auto xd = x.data();
                       if (auto gx = grad_sink(x); !gx.empty()) {
                         for (std::size_t i = 0; i < g.size(); ++i) gx[i] += al * g[i];
                       }
                       if (auto ga = grad_sink(alpha); !ga.empty()) {
                         double s = 0.0;
                         for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * xd[i];
                         ga[0] += s;
                       }
                       if (auto gb = grad_sink(beta); !gb.empty()) {
                         gb[0] += std::accumulate(g.begin(), g.end(), 0.0);
                       }
                     });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, stable_sigmoid, [](double v) {
    const double s = stable_sigmoid(v);
    return s * (1.0 - s);
  });
}

Tensor relu(const Tensor& x) {
  return unary("relu", x, [](double v) { return v > 0 ? v : 0.0; }, [](double v) { return v > 0 ? 1.0 : 0.0; });
}

Tensor softplus(const Tensor& x) {
  return unary(
      "softplus", x, [](double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      stable_sigmoid);
}

Tensor abs(const Tensor& x) {
  return unary("abs", x, [](double v) { return std::fabs(v); },
               [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor sum(const Tensor& x) {
  const auto xd = x.data();
  const double s = std::accumulate(xd.begin(), xd.end(), 0.0);
  return make_result("sum", {1}, {s}, {x}, [x](std::span<const double> g) {
    auto gx = grad_sink(x);
    for (auto& v : gx) v += g[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mean_batch(const Tensor& x) {
  if (x.rank() < 1 || x.dim(0) < 1) throw DimensionError("mean_batch: empty batch");
  const auto n = static_cast<std::size_t>(x.dim(0));
  const std::size_t inner = x.numel() / n;
  Shape out_shape(x.shape().begin() + 1, x.shape().end());
  if (out_shape.empty()) out_shape = {1};
  const auto xd = x.data();
  std::vector<double> out(inner, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < inner; ++i) out[i] += xd[b * inner + i];
  for (auto& v : out) v /= static_cast<double>(n);
  return make_result("mean_batch", std::move(out_shape), std::move(out), {x}, [x, n, inner](std::span<const double> g) {
    auto gx = grad_sink(x);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < inner; ++i) gx[b * inner + i] += g[i] * inv;
  });
}

Tensor center_per_sample(const Tensor& x) {
  if (x.rank() < 1 || x.dim(0) < 1) throw DimensionError("center_per_sample: empty batch");
  const auto n = static_cast<std::size_t>(x.dim(0));
  const std::size_t inner = x.numel() / n;
  const auto xd = x.data();
  std::vector<double> out(xd.begin(), xd.end());
  for (std::size_t b = 0; b < n; ++b) {
    double m = 0.0;
    for (std::size_t i = 0; i < inner; ++i) m += xd[b * inner + i];
    m /= static_cast<double>(inner);
    for (std::size_t i = 0; i < inner; ++i) out[b * inner + i] -= m;
  }
  return make_result("center_per_sample", x.shape(), std::move(out), {x}, [x, n, inner](std::span<const double> g) {
    auto gx = grad_sink(x);
    for (std::size_t b = 0; b < n; ++b) {
      double m = 0.0;
      for (std::size_t i = 0; i < inner; ++i) m += g[b * inner + i];
      m /= static_cast<double>(inner);
      for (std::size_t i = 0; i < inner; ++i) gx[b * inner + i] += g[b * inner + i] - m;
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  return make_result("reshape", std::move(shape), x.to_vector(), {x}, [x](std::span<const double> g) {
    auto gx = grad_sink(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Tensor l2_normalize(const Tensor& x) {
  check_rank(x, 2, "l2_normalize");
  const auto rows = static_cast<std::size_t>(x.dim(0));
  const auto cols = static_cast<std::size_t>(x.dim(1));
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += xd[r * cols + c] * xd[r * cols + c];
    const double nrm = std::sqrt(s);
    if (!(nrm > 0.0)) throw DegenerateInputError("l2_normalize: row " + std::to_string(r) + " has zero norm");
    norms[r] = nrm;
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xd[r * cols + c] / nrm;
  }
  auto y = std::make_shared<std::vector<double>>(out);
  return make_result("l2_normalize", x.shape(), std::move(out), {x},
                     [x, y, norms, rows, cols](std::span<const double> g) {
                       auto gx = grad_sink(x);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double dot = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) dot += (*y)[r * cols + c] * g[r * cols + c];
                         for (std::size_t c = 0; c < cols; ++c) {
                           gx[r * cols + c] += (g[r * cols + c] - (*y)[r * cols + c] * dot) / norms[r];
                         }
                       }
                     });
}

Tensor softmax_rows(const Tensor& x) {
  if (x.rank() < 1) throw DimensionError("softmax_rows: rank 0");
  const auto cols = static_cast<std::size_t>(x.dim(-1));
  const std::size_t rows = cols ? x.numel() / cols : 0;
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * cols;
    double* o = out.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) o[c] /= s;
  }
  auto y = std::make_shared<std::vector<double>>(out);
  return make_result("softmax_rows", x.shape(), std::move(out), {x}, [x, y, rows, cols](std::span<const double> g) {
    auto gx = grad_sink(x);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * (*y)[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += (*y)[r * cols + c] * (g[r * cols + c] - dot);
    }
  });
}

Tensor log_softmax_rows(const Tensor& x) {
  if (x.rank() < 1) throw DimensionError("log_softmax_rows: rank 0");
  const auto cols = static_cast<std::size_t>(x.dim(-1));
  const std::size_t rows = cols ? x.numel() / cols : 0;
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(in[c] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = in[c] - lse;
  }
  auto y = std::make_shared<std::vector<double>>(out);
  return make_result("log_softmax_rows", x.shape(), std::move(out), {x}, [x, y, rows, cols](std::span<const double> g) {
    auto gx = grad_sink(x);
    for (std::size_t r = 0; r < rows; ++r) {
      double gs = 0.0;
      for (std::size_t c = 0; c < cols; ++c) gs += g[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r * cols + c] - std::exp((*y)[r * cols + c]) * gs;
    }
  });
}

Tensor diagonal(const Tensor& x) {
  check_rank(x, 2, "diagonal");
  if (x.dim(0) != x.dim(1)) throw DimensionError("diagonal: non-square " + shape_str(x.shape()));
  const auto n = static_cast<std::size_t>(x.dim(0));
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x.data()[i * n + i];
  return make_result("diagonal", {static_cast<std::int64_t>(n)}, std::move(out), {x}, [x, n](std::span<const double> g) {
    auto gx = grad_sink(x);
    for (std::size_t i = 0; i < n; ++i) gx[i * n + i] += g[i];
  });
}

namespace {

// Plain left-to-right sum; Eigen's vectorized reduction peels by address
// and would make the result depend on buffer alignment.
double row_sum(const CMapM& m, Idx row) {
  double s = 0.0;
  for (Idx j = 0; j < m.cols(); ++j) s += m(row, j);
  return s;
}

struct MatDims {
  Idx a_rows, a_cols, b_rows, b_cols;  // stored layouts
  Idx m, k, n;                         // effective product dims
};

MatDims mat_dims(Idx ar, Idx ac, Idx br, Idx bc, bool ta, bool tb, const char* op) {
  MatDims d{ar, ac, br, bc, ta ? ac : ar, ta ? ar : ac, tb ? br : bc};
  const Idx kb = tb ? bc : br;
  if (d.k != kb) {
    throw DimensionError(std::string(op) + ": inner dimensions differ (" + std::to_string(d.k) + " vs " +
                         std::to_string(kb) + ")");
  }
  return d;
}

void gemm_forward(const double* a, const double* b, double* c, const MatDims& d, bool ta, bool tb) {
  CMapM A(a, d.a_rows, d.a_cols);
  CMapM B(b, d.b_rows, d.b_cols);
  MapM C(c, d.m, d.n);
  if (!ta && !tb) C.noalias() = A * B;
  else if (ta && !tb) C.noalias() = A.transpose() * B;
  else if (!ta && tb) C.noalias() = A * B.transpose();
  else C.noalias() = A.transpose() * B.transpose();
}

void gemm_backward(const double* a, const double* b, const double* g, double* ga, double* gb, const MatDims& d,
                   bool ta, bool tb) {
  CMapM A(a, d.a_rows, d.a_cols);
  CMapM B(b, d.b_rows, d.b_cols);
  CMapM G(g, d.m, d.n);
  if (ga) {
    MapM GA(ga, d.a_rows, d.a_cols);
    // d(op(A)) = G op(B)^T
    if (!ta) {
      if (!tb) GA.noalias() += G * B.transpose();
      else GA.noalias() += G * B;
    } else {
      if (!tb) GA.noalias() += B * G.transpose();
      else GA.noalias() += B.transpose() * G.transpose();
    }
  }
  if (gb) {
    MapM GB(gb, d.b_rows, d.b_cols);
    // d(op(B)) = op(A)^T G
    if (!tb) {
      if (!ta) GB.noalias() += A.transpose() * G;
      else GB.noalias() += A * G;
    } else {
      if (!ta) GB.noalias() += G.transpose() * A;
      else GB.noalias() += G.transpose() * A.transpose();
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  check_rank(a, 2, "matmul");
  check_rank(b, 2, "matmul");
  const auto d = mat_dims(a.dim(0), a.dim(1), b.dim(0), b.dim(1), trans_a, trans_b, "matmul");
  std::vector<double> out(static_cast<std::size_t>(d.m * d.n));
  gemm_forward(a.data().data(), b.data().data(), out.data(), d, trans_a, trans_b);
  return make_result("matmul", {d.m, d.n}, std::move(out), {a, b},
                     [a, b, d, trans_a, trans_b](std::span<const double> g) {
                       auto ga = grad_sink(a);
                       auto gb = grad_sink(b);
                       gemm_backward(a.data().data(), b.data().data(), g.data(), ga.empty() ? nullptr : ga.data(),
                                     gb.empty() ? nullptr : gb.data(), d, trans_a, trans_b);
                     });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  check_rank(a, 3, "bmm");
  check_rank(b, 3, "bmm");
  if (a.dim(0) != b.dim(0)) throw DimensionError("bmm: batch sizes differ");
  const auto batch = static_cast<std::size_t>(a.dim(0));
  const auto d = mat_dims(a.dim(1), a.dim(2), b.dim(1), b.dim(2), trans_a, trans_b, "bmm");
  const auto sa = static_cast<std::size_t>(d.a_rows * d.a_cols);
  const auto sb = static_cast<std::size_t>(d.b_rows * d.b_cols);
  const auto sc = static_cast<std::size_t>(d.m * d.n);
  std::vector<double> out(batch * sc);
  for (std::size_t i = 0; i < batch; ++i) {
    gemm_forward(a.data().data() + i * sa, b.data().data() + i * sb, out.data() + i * sc, d, trans_a, trans_b);
  }
  return make_result("bmm", {a.dim(0), d.m, d.n}, std::move(out), {a, b},
                     [a, b, d, trans_a, trans_b, batch, sa, sb, sc](std::span<const double> g) {
                       auto ga = grad_sink(a);
                       auto gb = grad_sink(b);
                       for (std::size_t i = 0; i < batch; ++i) {
                         gemm_backward(a.data().data() + i * sa, b.data().data() + i * sb, g.data() + i * sc,
                                       ga.empty() ? nullptr : ga.data() + i * sa,
                                       gb.empty() ? nullptr : gb.data() + i * sb, d, trans_a, trans_b);
                       }
                     });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const int r = parts[0].rank();
  const int ax = axis < 0 ? axis + r : axis;
  if (ax < 0 || ax >= r) throw DimensionError("concat: axis out of range");
  Shape out_shape = parts[0].shape();
  out_shape[static_cast<std::size_t>(ax)] = 0;
  for (const auto& p : parts) {
    if (p.rank() != r) throw DimensionError("concat: rank mismatch");
    for (int i = 0; i < r; ++i) {
      if (i != ax && p.dim(i) != parts[0].dim(i)) {
        throw DimensionError("concat: extent mismatch on axis " + std::to_string(i) + " (" +
                             shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()) + ")");
      }
    }
    out_shape[static_cast<std::size_t>(ax)] += p.dim(ax);
  }
  std::size_t outer = 1;
  for (int i = 0; i < ax; ++i) outer *= static_cast<std::size_t>(out_shape[static_cast<std::size_t>(i)]);
  std::size_t inner = 1;
  for (int i = ax + 1; i < r; ++i) inner *= static_cast<std::size_t>(out_shape[static_cast<std::size_t>(i)]);
  const std::size_t out_row = static_cast<std::size_t>(out_shape[static_cast<std::size_t>(ax)]) * inner;

  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t chunk = static_cast<std::size_t>(p.dim(ax)) * inner;
    const auto pd = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pd.data() + o * chunk, chunk, out.data() + o * out_row + off);
    }
    off += chunk;
  }
  return make_result("concat", std::move(out_shape), std::move(out), parts,
                     [parts, offsets, outer, inner, out_row, ax](std::span<const double> g) {
                       for (std::size_t k = 0; k < parts.size(); ++k) {
                         auto gp = grad_sink(parts[k]);
                         if (gp.empty()) continue;
                         const std::size_t chunk = static_cast<std::size_t>(parts[k].dim(ax)) * inner;
                         for (std::size_t o = 0; o < outer; ++o)
                           for (std::size_t i = 0; i < chunk; ++i) gp[o * chunk + i] += g[o * out_row + offsets[k] + i];
                       }
                     });
}

namespace {

struct ConvGeom {
  Idx n, c, h, w, o, k, stride, pad, oh, ow;
  Idx ckk() const { return c * k * k; }
  Idx positions() const { return oh * ow; }
};

void im2col(const double* x, const ConvGeom& g, double* col) {
  for (Idx c = 0; c < g.c; ++c)
    for (Idx ki = 0; ki < g.k; ++ki)
      for (Idx kj = 0; kj < g.k; ++kj) {
        double* row = col + ((c * g.k + ki) * g.k + kj) * g.positions();
        for (Idx oy = 0; oy < g.oh; ++oy) {
          const Idx iy = oy * g.stride - g.pad + ki;
          double* dst = row + oy * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill_n(dst, g.ow, 0.0);
            continue;
          }
          const double* src = x + (c * g.h + iy) * g.w;
          for (Idx ox = 0; ox < g.ow; ++ox) {
            const Idx ix = ox * g.stride - g.pad + kj;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
}

void col2im_add(const double* col, const ConvGeom& g, double* x) {
  for (Idx c = 0; c < g.c; ++c)
    for (Idx ki = 0; ki < g.k; ++ki)
      for (Idx kj = 0; kj < g.k; ++kj) {
        const double* row = col + ((c * g.k + ki) * g.k + kj) * g.positions();
        for (Idx oy = 0; oy < g.oh; ++oy) {
          const Idx iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.h) continue;
          double* dst = x + (c * g.h + iy) * g.w;
          for (Idx ox = 0; ox < g.ow; ++ox) {
            const Idx ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.w) dst[ix] += row[oy * g.ow + ox];
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  check_rank(x, 4, "conv2d input");
  check_rank(weight, 4, "conv2d weight");
  if (stride < 1 || padding < 0) throw DimensionError("conv2d: stride must be >= 1 and padding >= 0");
  if (weight.dim(1) != x.dim(1)) {
    throw DimensionError("conv2d: input has " + std::to_string(x.dim(1)) + " channels, weight expects " +
                         std::to_string(weight.dim(1)));
  }
  if (weight.dim(2) != weight.dim(3)) throw DimensionError("conv2d: kernel must be square");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), stride, padding, 0, 0};
  if (g.h + 2 * g.pad < g.k || g.w + 2 * g.pad < g.k) {
    throw DimensionError("conv2d: kernel " + std::to_string(g.k) + " does not fit padded input " + shape_str(x.shape()));
  }
  if (bias.defined() && (bias.numel() != static_cast<std::size_t>(g.o))) {
    throw DimensionError("conv2d: bias has " + std::to_string(bias.numel()) + " entries for " + std::to_string(g.o) +
                         " output channels");
  }
  g.oh = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.ow = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  const bool direct = g.k == 1 && g.stride == 1 && g.pad == 0;

  const Idx P = g.positions();
  std::vector<double> out(static_cast<std::size_t>(g.n * g.o * P));
  std::vector<double> col(direct ? 0 : static_cast<std::size_t>(g.ckk() * P));
  CMapM W(weight.data().data(), g.o, g.ckk());
  for (Idx n = 0; n < g.n; ++n) {
    const double* xn = x.data().data() + n * g.c * g.h * g.w;
    if (!direct) im2col(xn, g, col.data());
    CMapM X(direct ? xn : col.data(), g.ckk(), P);
    MapM Y(out.data() + n * g.o * P, g.o, P);
    Y.noalias() = W * X;
    if (bias.defined()) {
      for (Idx o = 0; o < g.o; ++o) Y.row(o).array() += bias.data()[static_cast<std::size_t>(o)];
    }
  }

  return make_result(
      "conv2d", {g.n, g.o, g.oh, g.ow}, std::move(out), {x, weight, bias},
      [x, weight, bias, g, direct](std::span<const double> grad) {
        const Idx P = g.positions();
        auto gx = grad_sink(x);
        auto gw = grad_sink(weight);
        auto gb = grad_sink(bias);
        CMapM W(weight.data().data(), g.o, g.ckk());
        std::vector<double> col(direct ? 0 : static_cast<std::size_t>(g.ckk() * P));
        std::vector<double> gcol(direct || gx.empty() ? 0 : static_cast<std::size_t>(g.ckk() * P));
        for (Idx n = 0; n < g.n; ++n) {
          CMapM G(grad.data() + n * g.o * P, g.o, P);
          const double* xn = x.data().data() + n * g.c * g.h * g.w;
          if (!gw.empty()) {
            if (!direct) im2col(xn, g, col.data());
            CMapM X(direct ? xn : col.data(), g.ckk(), P);
            MapM GW(gw.data(), g.o, g.ckk());
            GW.noalias() += G * X.transpose();
          }
          if (!gb.empty()) {
            for (Idx o = 0; o < g.o; ++o) gb[static_cast<std::size_t>(o)] += row_sum(G, o);
          }
          if (!gx.empty()) {
            double* gxn = gx.data() + n * g.c * g.h * g.w;
            if (direct) {
              MapM GX(gxn, g.c, P);
              GX.noalias() += W.transpose() * G;
            } else {
              MapM GC(gcol.data(), g.ckk(), P);
              GC.noalias() = W.transpose() * G;
              col2im_add(gcol.data(), g, gxn);
            }
          }
        }
      });
}

Tensor channel_linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() < 2) throw DimensionError("channel_linear: input rank must be >= 2");
  check_rank(weight, 2, "channel_linear weight");
  if (weight.dim(1) != x.dim(1)) {
    throw DimensionError("channel_linear: input has " + std::to_string(x.dim(1)) + " channels, weight expects " +
                         std::to_string(weight.dim(1)));
  }
  if (bias.defined() && bias.numel() != static_cast<std::size_t>(weight.dim(0))) {
    throw DimensionError("channel_linear: bias size mismatch");
  }
  const Idx n = x.dim(0), c = x.dim(1), o = weight.dim(0);
  const Idx r = static_cast<Idx>(x.numel()) / (n * c);
  Shape out_shape = x.shape();
  out_shape[1] = o;
  std::vector<double> out(static_cast<std::size_t>(n * o * r));
  CMapM W(weight.data().data(), o, c);
  for (Idx b = 0; b < n; ++b) {
    CMapM X(x.data().data() + b * c * r, c, r);
    MapM Y(out.data() + b * o * r, o, r);
    Y.noalias() = W * X;
    if (bias.defined()) {
      for (Idx j = 0; j < o; ++j) Y.row(j).array() += bias.data()[static_cast<std::size_t>(j)];
    }
  }
  return make_result("channel_linear", std::move(out_shape), std::move(out), {x, weight, bias},
                     [x, weight, bias, n, c, o, r](std::span<const double> grad) {
                       auto gx = grad_sink(x);
                       auto gw = grad_sink(weight);
                       auto gb = grad_sink(bias);
                       CMapM W(weight.data().data(), o, c);
                       for (Idx b = 0; b < n; ++b) {
                         CMapM G(grad.data() + b * o * r, o, r);
                         if (!gw.empty()) {
                           CMapM X(x.data().data() + b * c * r, c, r);
                           MapM GW(gw.data(), o, c);
                           GW.noalias() += G * X.transpose();
                         }
                         if (!gb.empty()) {
                           for (Idx j = 0; j < o; ++j) gb[static_cast<std::size_t>(j)] += row_sum(G, j);
                         }
                         if (!gx.empty()) {
                           MapM GX(gx.data() + b * c * r, c, r);
                           GX.noalias() += W.transpose() * G;
                         }
                       }
                     });
}

Tensor scale_channels(const Tensor& x, const Tensor& s) {
  if (x.rank() < 2) throw DimensionError("scale_channels: input rank must be >= 2");
  if (s.rank() != 2 || s.dim(0) != x.dim(0) || s.dim(1) != x.dim(1)) {
    throw DimensionError("scale_channels: scale " + shape_str(s.shape()) + " does not match " + shape_str(x.shape()));
  }
  const auto nc = static_cast<std::size_t>(x.dim(0) * x.dim(1));
  const std::size_t r = x.numel() / nc;
  const auto xd = x.data();
  const auto sd = s.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < nc; ++i)
    for (std::size_t j = 0; j < r; ++j) out[i * r + j] = xd[i * r + j] * sd[i];
  return make_result("scale_channels", x.shape(), std::move(out), {x, s}, [x, s, nc, r](std::span<const double> g) {
    const auto xd = x.data();
    const auto sd = s.data();
    auto gx = grad_sink(x);
    auto gs = grad_sink(s);
    for (std::size_t i = 0; i < nc; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < r; ++j) {
        if (!gx.empty()) gx[i * r + j] += g[i * r + j] * sd[i];
        acc += g[i * r + j] * xd[i * r + j];
      }
      if (!gs.empty()) gs[i] += acc;
    }
  });
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() < 3) throw DimensionError("global_avg_pool: expected [N, C, spatial...], got " + shape_str(x.shape()));
  const auto nc = static_cast<std::size_t>(x.dim(0) * x.dim(1));
  const std::size_t r = x.numel() / nc;
  const auto xd = x.data();
  std::vector<double> out(nc);
  for (std::size_t i = 0; i < nc; ++i) {
    out[i] = std::accumulate(xd.begin() + static_cast<std::ptrdiff_t>(i * r),
                             xd.begin() + static_cast<std::ptrdiff_t>((i + 1) * r), 0.0) /
             static_cast<double>(r);
  }
  return make_result("global_avg_pool", {x.dim(0), x.dim(1)}, std::move(out), {x}, [x, nc, r](std::span<const double> g) {
    auto gx = grad_sink(x);
    const double inv = 1.0 / static_cast<double>(r);
    for (std::size_t i = 0; i < nc; ++i)
      for (std::size_t j = 0; j < r; ++j) gx[i * r + j] += g[i] * inv;
  });
}

Tensor adaptive_avg_pool(const Tensor& x, int out_h, int out_w) {
  check_rank(x, 4, "adaptive_avg_pool");
  if (out_h < 1 || out_w < 1) throw DimensionError("adaptive_avg_pool: output extents must be >= 1");
  const Idx H = x.dim(2), W = x.dim(3);
  if (out_h > H || out_w > W) {
    throw DimensionError("adaptive_avg_pool: cannot pool " + shape_str(x.shape()) + " up to " + std::to_string(out_h) +
                         "x" + std::to_string(out_w));
  }
  const Idx nc = x.dim(0) * x.dim(1);
  auto bins = [](Idx in, Idx out) {
    std::vector<std::pair<Idx, Idx>> b(static_cast<std::size_t>(out));
    for (Idx i = 0; i < out; ++i) b[static_cast<std::size_t>(i)] = {(i * in) / out, ((i + 1) * in + out - 1) / out};
    return b;
  };
  const auto by = bins(H, out_h);
  const auto bx = bins(W, out_w);
  const auto xd = x.data();
  std::vector<double> out(static_cast<std::size_t>(nc * out_h * out_w));
  for (Idx p = 0; p < nc; ++p)
    for (Idx i = 0; i < out_h; ++i)
      for (Idx j = 0; j < out_w; ++j) {
        const auto [y0, y1] = by[static_cast<std::size_t>(i)];
        const auto [x0, x1] = bx[static_cast<std::size_t>(j)];
        double s = 0.0;
        for (Idx yy = y0; yy < y1; ++yy)
          for (Idx xx = x0; xx < x1; ++xx) s += xd[static_cast<std::size_t>((p * H + yy) * W + xx)];
        out[static_cast<std::size_t>((p * out_h + i) * out_w + j)] = s / static_cast<double>((y1 - y0) * (x1 - x0));
      }
  return make_result("adaptive_avg_pool", {x.dim(0), x.dim(1), out_h, out_w}, std::move(out), {x},
                     [x, by, bx, nc, H, W, out_h, out_w](std::span<const double> g) {
                       auto gx = grad_sink(x);
                       for (Idx p = 0; p < nc; ++p)
                         for (Idx i = 0; i < out_h; ++i)
                           for (Idx j = 0; j < out_w; ++j) {
                             const auto [y0, y1] = by[static_cast<std::size_t>(i)];
                             const auto [x0, x1] = bx[static_cast<std::size_t>(j)];
                             const double v = g[static_cast<std::size_t>((p * out_h + i) * out_w + j)] /
                                              static_cast<double>((y1 - y0) * (x1 - x0));
                             for (Idx yy = y0; yy < y1; ++yy)
                               for (Idx xx = x0; xx < x1; ++xx) gx[static_cast<std::size_t>((p * H + yy) * W + xx)] += v;
                           }
                     });
}

}  // namespace nutri
