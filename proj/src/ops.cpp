#include "gtseg/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace gtseg::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using ConstMapVec = Eigen::Map<const Eigen::VectorXd>;
using MapVec = Eigen::Map<Eigen::VectorXd>;

[[noreturn]] void fail(const std::string &what) { throw std::invalid_argument(what); }

void require_rank(const Var &v, std::size_t rank, const char *op) {
  if (!v.defined() || v.value().rank() != rank)
    fail(std::string(op) + ": expected rank-" + std::to_string(rank) + " tensor, got " +
         (v.defined() ? shape_str(v.shape()) : std::string("undefined")));
}

ag::Node &parent(ag::Node &self, std::size_t i) { return *self.parents[i]; }

// Column layout: row (c * k + ky) * k + kx, column oy * out_w + ox.
void im2col(const double *img, int channels, int height, int width, int k, int stride, int pad,
            int out_h, int out_w, double *col) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    const double *src = img + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double *dst = col + static_cast<std::size_t>((c * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          double *row = dst + oy * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(row, row + out_w, 0.0);
            continue;
          }
          const double *srow = src + static_cast<std::size_t>(iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            row[ox] = (ix >= 0 && ix < width) ? srow[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double *col, int channels, int height, int width, int k, int stride, int pad,
            int out_h, int out_w, double *img) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    double *dst = img + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double *src = col + static_cast<std::size_t>((c * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height)
            continue;
          double *drow = dst + static_cast<std::size_t>(iy) * width;
          const double *srow = src + oy * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < width)
              drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

// 1-D interpolation taps for half-pixel-center bilinear resampling.
// Row o holds the two-tap bilinear weights of output o over the inputs
// (half-pixel centers, clamped at the border).
RowMat bilinear_matrix(int in, int out) {
  RowMat m = RowMat::Zero(out, in);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const double src = std::max(0.0, scale * (o + 0.5) - 0.5);
    const int i0 = std::min(static_cast<int>(src), in - 1);
    const int i1 = i0 < in - 1 ? i0 + 1 : i0;
    const double l1 = src - i0;
    m(o, i0) += 1.0 - l1;
    m(o, i1) += l1;
  }
  return m;
}

} // namespace

Var add(const Var &a, const Var &b) {
  check_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out.add_(b.value());
  return ag::make_result(std::move(out), {a, b}, [](ag::Node &self) {
    parent(self, 0).accumulate(self.grad);
    parent(self, 1).accumulate(self.grad);
  });
}

Var add_constant(const Var &a, const Tensor &c) {
  const std::size_t n = a.value().numel();
  const std::size_t m = c.numel();
  const Shape &as = a.shape();
  const Shape &cs = c.shape();
  if (m == 0 || cs.size() > as.size() || !std::equal(cs.rbegin(), cs.rend(), as.rbegin()))
    fail("add_constant: constant shape " + shape_str(cs) + " is not a suffix of " + shape_str(as));
  Tensor out = a.value();
  for (std::size_t i = 0; i < n; ++i)
    out[i] += c[i % m];
  return ag::make_result(std::move(out), {a}, [](ag::Node &self) { parent(self, 0).accumulate(self.grad); });
}

Var scale(const Var &a, double s) {
  Tensor out = a.value();
  for (double &v : out.values())
    v *= s;
  return ag::make_result(std::move(out), {a}, [s](ag::Node &self) {
    Tensor g = self.grad;
    for (double &v : g.values())
      v *= s;
    parent(self, 0).accumulate(g);
  });
}

Var relu(const Var &x) {
  Tensor out = x.value();
  for (double &v : out.values())
    v = v > 0.0 ? v : 0.0;
  return ag::make_result(std::move(out), {x}, [](ag::Node &self) {
    const Tensor &y = self.value;
    Tensor g = self.grad;
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (!(y[i] > 0.0))
        g[i] = 0.0;
    parent(self, 0).accumulate(g);
  });
}

Var gelu(const Var &x) {
  const Tensor &in = x.value();
  Tensor out = Tensor::zeros_like(in);
  for (std::size_t i = 0; i < in.numel(); ++i)
    out[i] = 0.5 * in[i] * (1.0 + std::erf(in[i] * std::numbers::sqrt2 / 2.0));
  return ag::make_result(std::move(out), {x}, [](ag::Node &self) {
    const Tensor &in = parent(self, 0).value;
    Tensor g = self.grad;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double v = in[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g[i] *= cdf + v * pdf;
    }
    parent(self, 0).accumulate(g);
  });
}

Var conv2d(const Var &x, const Var &weight, const Var &bias, int stride, int padding) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int co = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != ci || weight.dim(3) != k)
    fail("conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " + shape_str(x.shape()));
  if (bias.defined() && (bias.value().rank() != 1 || bias.dim(0) != co))
    fail("conv2d: bias shape " + shape_str(bias.shape()) + " does not match " + std::to_string(co) + " outputs");
  if (stride < 1 || padding < 0)
    fail("conv2d: invalid stride/padding");
  const int oh = (h + 2 * padding - k) / stride + 1;
  const int ow = (w + 2 * padding - k) / stride + 1;
  if (oh <= 0 || ow <= 0)
    fail("conv2d: input " + shape_str(x.shape()) + " too small for kernel");

  const int kdim = ci * k * k;
  const int plane = oh * ow;
  const bool direct = (k == 1 && stride == 1 && padding == 0);
  const std::size_t col_size = static_cast<std::size_t>(kdim) * plane;

  auto cols = std::make_shared<std::vector<double>>();
  if (!direct)
    cols->resize(col_size * n);

  Tensor out(Shape{n, co, oh, ow});
  ConstMapMat wmat(weight.value().data(), co, kdim);
  for (int b = 0; b < n; ++b) {
    const double *img = x.value().data() + static_cast<std::size_t>(b) * ci * h * w;
    const double *col = img;
    if (!direct) {
      double *dst = cols->data() + col_size * b;
      im2col(img, ci, h, w, k, stride, padding, oh, ow, dst);
      col = dst;
    }
    MapMat y(out.data() + static_cast<std::size_t>(b) * co * plane, co, plane);
    y.noalias() = wmat * ConstMapMat(col, kdim, plane);
    if (bias.defined())
      y.colwise() += ConstMapVec(bias.value().data(), co);
  }

  std::vector<Var> inputs{x, weight};
  if (bias.defined())
    inputs.push_back(bias);
  return ag::make_result(std::move(out), inputs,
                         [=](ag::Node &self) {
                           ag::Node &xn = parent(self, 0);
                           ag::Node &wn = parent(self, 1);
                           ag::Node *bn = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
                           ConstMapMat wm(wn.value.data(), co, kdim);
                           Tensor dw(wn.value.shape());
                           MapMat dwm(dw.data(), co, kdim);
                           Tensor db(Shape{co});
                           Tensor dx;
                           if (xn.requires_grad)
                             dx = Tensor(xn.value.shape());
                           std::vector<double> dcol(direct ? 0 : col_size);
                           for (int b = 0; b < n; ++b) {
                             ConstMapMat dy(self.grad.data() + static_cast<std::size_t>(b) * co * plane, co, plane);
                             const double *col = direct ? xn.value.data() + static_cast<std::size_t>(b) * ci * h * w
                                                        : cols->data() + col_size * b;
                             if (wn.requires_grad)
                               dwm.noalias() += dy * ConstMapMat(col, kdim, plane).transpose();
                             if (bn && bn->requires_grad)
                               MapVec(db.data(), co) += dy.rowwise().sum();
                             if (xn.requires_grad) {
                               double *dimg = dx.data() + static_cast<std::size_t>(b) * ci * h * w;
                               if (direct) {
                                 MapMat(dimg, kdim, plane).noalias() = wm.transpose() * dy;
                               } else {
                                 MapMat(dcol.data(), kdim, plane).noalias() = wm.transpose() * dy;
                                 col2im(dcol.data(), ci, h, w, k, stride, padding, oh, ow, dimg);
                               }
                             }
                           }
                           if (xn.requires_grad)
                             xn.accumulate(dx);
                           wn.accumulate(dw);
                           if (bn)
                             bn->accumulate(db);
                         });
}

Var group_norm(const Var &x, const Var &gamma, const Var &beta, int groups, double eps) {
  require_rank(x, 4, "group_norm");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (groups < 1 || c % groups != 0)
    fail("group_norm: " + std::to_string(c) + " channels not divisible into " + std::to_string(groups) + " groups");
  if (gamma.value().numel() != static_cast<std::size_t>(c) || beta.value().numel() != static_cast<std::size_t>(c))
    fail("group_norm: affine parameters must have " + std::to_string(c) + " entries");
  const int cpg = c / groups;
  const std::size_t m = static_cast<std::size_t>(cpg) * hw;

  const Tensor &in = x.value();
  auto xhat = std::make_shared<Tensor>(in.shape());
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * groups);
  Tensor out(in.shape());
  for (int b = 0; b < n; ++b) {
    for (int g = 0; g < groups; ++g) {
      const std::size_t base = (static_cast<std::size_t>(b) * c + g * cpg) * hw;
      double mean = 0.0;
      for (std::size_t i = 0; i < m; ++i)
        mean += in[base + i];
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double d = in[base + i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(m);
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[static_cast<std::size_t>(b) * groups + g] = is;
      for (int cc = 0; cc < cpg; ++cc) {
        const int ch = g * cpg + cc;
        const double ga = gamma.value()[ch], be = beta.value()[ch];
        for (int i = 0; i < hw; ++i) {
          const std::size_t idx = base + static_cast<std::size_t>(cc) * hw + i;
          const double xh = (in[idx] - mean) * is;
          (*xhat)[idx] = xh;
          out[idx] = ga * xh + be;
        }
      }
    }
  }

  return ag::make_result(std::move(out), {x, gamma, beta}, [=](ag::Node &self) {
    ag::Node &xn = parent(self, 0);
    ag::Node &gn = parent(self, 1);
    ag::Node &bn = parent(self, 2);
    const Tensor &dy = self.grad;
    Tensor dgamma(Shape{c}), dbeta(Shape{c});
    Tensor dx(xn.value.shape());
    std::vector<double> dxh(m);
    for (int b = 0; b < n; ++b) {
      for (int g = 0; g < groups; ++g) {
        const std::size_t base = (static_cast<std::size_t>(b) * c + g * cpg) * hw;
        double sum_dxh = 0.0, sum_dxh_xh = 0.0;
        for (int cc = 0; cc < cpg; ++cc) {
          const int ch = g * cpg + cc;
          const double ga = gn.value[ch];
          for (int i = 0; i < hw; ++i) {
            const std::size_t local = static_cast<std::size_t>(cc) * hw + i;
            const std::size_t idx = base + local;
            dgamma[ch] += dy[idx] * (*xhat)[idx];
            dbeta[ch] += dy[idx];
            dxh[local] = dy[idx] * ga;
            sum_dxh += dxh[local];
            sum_dxh_xh += dxh[local] * (*xhat)[idx];
          }
        }
        const double is = (*inv_std)[static_cast<std::size_t>(b) * groups + g];
        const double inv_m = 1.0 / static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i)
          dx[base + i] = is * (dxh[i] - inv_m * sum_dxh - (*xhat)[base + i] * inv_m * sum_dxh_xh);
      }
    }
    xn.accumulate(dx);
    gn.accumulate(dgamma);
    bn.accumulate(dbeta);
  });
}

Var upsample_bilinear(const Var &x, int factor) {
  require_rank(x, 4, "upsample_bilinear");
  if (factor < 1)
    fail("upsample_bilinear: factor must be positive");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = h * factor, ow = w * factor;
  const Eigen::Index planes = static_cast<Eigen::Index>(n) * c;
  auto ay = std::make_shared<RowMat>(bilinear_matrix(h, oh));
  auto ax = std::make_shared<RowMat>(bilinear_matrix(w, ow));

  // Separable: columns for every plane in one product, then rows per plane.
  const RowMat cols = ConstMapMat(x.value().data(), planes * h, w) * ax->transpose();
  Tensor out(Shape{n, c, oh, ow});
  for (Eigen::Index p = 0; p < planes; ++p)
    MapMat(out.data() + p * oh * ow, oh, ow).noalias() = *ay * cols.middleRows(p * h, h);

  return ag::make_result(std::move(out), {x}, [=](ag::Node &self) {
    ag::Node &xn = parent(self, 0);
    const RowMat dcols = ConstMapMat(self.grad.data(), planes * oh, ow) * *ax;
    Tensor dx(xn.value.shape());
    for (Eigen::Index p = 0; p < planes; ++p)
      MapMat(dx.data() + p * h * w, h, w).noalias() = ay->transpose() * dcols.middleRows(p * oh, oh);
    xn.accumulate(dx);
  });
}

Var linear(const Var &x, const Var &weight, const Var &bias) {
  require_rank(weight, 2, "linear weight");
  const Shape &xs = x.shape();
  const int dout = weight.dim(0), din = weight.dim(1);
  if (xs.empty() || xs.back() != din)
    fail("linear: input " + shape_str(xs) + " incompatible with weight " + shape_str(weight.shape()));
  if (bias.defined() && (bias.value().numel() != static_cast<std::size_t>(dout)))
    fail("linear: bias size mismatch");
  const int rows = static_cast<int>(x.value().numel() / din);
  Shape os = xs;
  os.back() = dout;
  Tensor out(os);
  MapMat y(out.data(), rows, dout);
  y.noalias() = ConstMapMat(x.value().data(), rows, din) * ConstMapMat(weight.value().data(), dout, din).transpose();
  if (bias.defined())
    y.rowwise() += ConstMapVec(bias.value().data(), dout).transpose();

  std::vector<Var> inputs{x, weight};
  if (bias.defined())
    inputs.push_back(bias);
  return ag::make_result(std::move(out), inputs, [=](ag::Node &self) {
    ag::Node &xn = parent(self, 0);
    ag::Node &wn = parent(self, 1);
    ag::Node *bn = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
    ConstMapMat dy(self.grad.data(), rows, dout);
    if (xn.requires_grad) {
      Tensor dx(xn.value.shape());
      MapMat(dx.data(), rows, din).noalias() = dy * ConstMapMat(wn.value.data(), dout, din);
      xn.accumulate(dx);
    }
    if (wn.requires_grad) {
      Tensor dw(wn.value.shape());
      MapMat(dw.data(), dout, din).noalias() = dy.transpose() * ConstMapMat(xn.value.data(), rows, din);
      wn.accumulate(dw);
    }
    if (bn && bn->requires_grad) {
      Tensor db(bn->value.shape());
      MapVec(db.data(), dout) = dy.colwise().sum().transpose();
      bn->accumulate(db);
    }
  });
}

Var layer_norm(const Var &x, const Var &gamma, const Var &beta, double eps) {
  const Shape &xs = x.shape();
  if (xs.empty())
    fail("layer_norm: scalar input");
  const int d = xs.back();
  if (gamma.value().numel() != static_cast<std::size_t>(d) || beta.value().numel() != static_cast<std::size_t>(d))
    fail("layer_norm: affine parameters must have " + std::to_string(d) + " entries");
  const std::size_t rows = x.value().numel() / d;
  const Tensor &in = x.value();
  auto xhat = std::make_shared<Tensor>(xs);
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  Tensor out(xs);
  for (std::size_t r = 0; r < rows; ++r) {
    const double *src = in.data() + r * d;
    double mean = 0.0;
    for (int i = 0; i < d; ++i)
      mean += src[i];
    mean /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i)
      var += (src[i] - mean) * (src[i] - mean);
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (int i = 0; i < d; ++i) {
      const double xh = (src[i] - mean) * is;
      (*xhat)[r * d + i] = xh;
      out[r * d + i] = gamma.value()[i] * xh + beta.value()[i];
    }
  }
  return ag::make_result(std::move(out), {x, gamma, beta}, [=](ag::Node &self) {
    ag::Node &xn = parent(self, 0);
    ag::Node &gn = parent(self, 1);
    ag::Node &bn = parent(self, 2);
    Tensor dx(xn.value.shape());
    Tensor dgamma(gn.value.shape()), dbeta(bn.value.shape());
    std::vector<double> dxh(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const double *dy = self.grad.data() + r * d;
      const double *xh = xhat->data() + r * d;
      double s1 = 0.0, s2 = 0.0;
      for (int i = 0; i < d; ++i) {
        dgamma[i] += dy[i] * xh[i];
        dbeta[i] += dy[i];
        dxh[i] = dy[i] * gn.value[i];
        s1 += dxh[i];
        s2 += dxh[i] * xh[i];
      }
      const double is = (*inv_std)[r];
      for (int i = 0; i < d; ++i)
        dx[r * d + i] = is * (dxh[i] - s1 / d - xh[i] * s2 / d);
    }
    xn.accumulate(dx);
    gn.accumulate(dgamma);
    bn.accumulate(dbeta);
  });
}

Var attention(const Var &qkv, int heads) {
  require_rank(qkv, 3, "attention");
  const int n = qkv.dim(0), t = qkv.dim(1), e3 = qkv.dim(2);
  if (e3 % 3 != 0)
    fail("attention: last dimension must pack q, k and v");
  const int e = e3 / 3;
  if (heads < 1 || e % heads != 0)
    fail("attention: embed dim " + std::to_string(e) + " not divisible by " + std::to_string(heads) + " heads");
  const int dh = e / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // Softmax probabilities per (batch, head), t x t each.
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * heads * t * t);
  Tensor out(Shape{n, t, e});
  using Stride = Eigen::OuterStride<>;
  using ConstBlock = Eigen::Map<const RowMat, 0, Stride>;
  using Block = Eigen::Map<RowMat, 0, Stride>;
  for (int b = 0; b < n; ++b) {
    const double *base = qkv.value().data() + static_cast<std::size_t>(b) * t * e3;
    for (int hd = 0; hd < heads; ++hd) {
      ConstBlock q(base + hd * dh, t, dh, Stride(e3));
      ConstBlock k(base + e + hd * dh, t, dh, Stride(e3));
      ConstBlock v(base + 2 * e + hd * dh, t, dh, Stride(e3));
      MapMat p(probs->data() + (static_cast<std::size_t>(b) * heads + hd) * t * t, t, t);
      p.noalias() = (q * k.transpose()) * inv_scale;
      for (int i = 0; i < t; ++i) {
        const double mx = p.row(i).maxCoeff();
        p.row(i) = (p.row(i).array() - mx).exp();
        p.row(i) /= p.row(i).sum();
      }
      Block o(out.data() + static_cast<std::size_t>(b) * t * e + hd * dh, t, dh, Stride(e));
      o.noalias() = p * v;
    }
  }

  return ag::make_result(std::move(out), {qkv}, [=](ag::Node &self) {
    ag::Node &in = parent(self, 0);
    Tensor dqkv(in.value.shape());
    RowMat dp(t, t), ds(t, t);
    for (int b = 0; b < n; ++b) {
      const double *base = in.value.data() + static_cast<std::size_t>(b) * t * e3;
      double *dbase = dqkv.data() + static_cast<std::size_t>(b) * t * e3;
      for (int hd = 0; hd < heads; ++hd) {
        ConstBlock q(base + hd * dh, t, dh, Stride(e3));
        ConstBlock k(base + e + hd * dh, t, dh, Stride(e3));
        ConstBlock v(base + 2 * e + hd * dh, t, dh, Stride(e3));
        ConstMapMat p(probs->data() + (static_cast<std::size_t>(b) * heads + hd) * t * t, t, t);
        ConstBlock dout(self.grad.data() + static_cast<std::size_t>(b) * t * e + hd * dh, t, dh, Stride(e));
        Block dq(dbase + hd * dh, t, dh, Stride(e3));
        Block dk(dbase + e + hd * dh, t, dh, Stride(e3));
        Block dv(dbase + 2 * e + hd * dh, t, dh, Stride(e3));
        dv.noalias() = p.transpose() * dout;
        dp.noalias() = dout * v.transpose();
        for (int i = 0; i < t; ++i) {
          const double dot = (dp.row(i).array() * p.row(i).array()).sum();
          ds.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
        }
        ds *= inv_scale;
        dq.noalias() = ds * k;
        dk.noalias() = ds.transpose() * q;
      }
    }
    in.accumulate(dqkv);
  });
}

Var patchify(const Var &x, int patch) {
  require_rank(x, 4, "patchify");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (patch < 1 || h % patch != 0 || w % patch != 0)
    fail("patchify: spatial size " + std::to_string(h) + "x" + std::to_string(w) +
         " not divisible by patch size " + std::to_string(patch));
  const int gh = h / patch, gw = w / patch, t = gh * gw, d = patch * patch * c;
  // index[j] = source offset (within one image) of token-major element j.
  auto index = std::make_shared<std::vector<int>>(static_cast<std::size_t>(t) * d);
  for (int ty = 0; ty < gh; ++ty)
    for (int tx = 0; tx < gw; ++tx)
      for (int ch = 0; ch < c; ++ch)
        for (int py = 0; py < patch; ++py)
          for (int px = 0; px < patch; ++px) {
            const int tok = ty * gw + tx;
            const int j = tok * d + (ch * patch + py) * patch + px;
            (*index)[j] = (ch * h + ty * patch + py) * w + tx * patch + px;
          }
  const std::size_t per = static_cast<std::size_t>(c) * h * w;
  Tensor out(Shape{n, t, d});
  for (int b = 0; b < n; ++b)
    for (std::size_t j = 0; j < per; ++j)
      out[b * per + j] = x.value()[b * per + (*index)[j]];
  return ag::make_result(std::move(out), {x}, [=](ag::Node &self) {
    ag::Node &xn = parent(self, 0);
    Tensor dx(xn.value.shape());
    for (int b = 0; b < n; ++b)
      for (std::size_t j = 0; j < per; ++j)
        dx[b * per + (*index)[j]] = self.grad[b * per + j];
    xn.accumulate(dx);
  });
}

Var unpatchify(const Var &x, int patch, int channels, int height, int width) {
  require_rank(x, 3, "unpatchify");
  if (patch < 1 || height % patch != 0 || width % patch != 0)
    fail("unpatchify: target size not divisible by patch size");
  const int n = x.dim(0);
  const int gh = height / patch, gw = width / patch;
  if (x.dim(1) != gh * gw || x.dim(2) != patch * patch * channels)
    fail("unpatchify: token tensor " + shape_str(x.shape()) + " does not match target layout");
  const int d = patch * patch * channels;
  auto index = std::make_shared<std::vector<int>>(static_cast<std::size_t>(gh) * gw * d);
  for (int ty = 0; ty < gh; ++ty)
    for (int tx = 0; tx < gw; ++tx)
      for (int ch = 0; ch < channels; ++ch)
        for (int py = 0; py < patch; ++py)
          for (int px = 0; px < patch; ++px) {
            const int j = (ty * gw + tx) * d + (ch * patch + py) * patch + px;
            (*index)[j] = (ch * height + ty * patch + py) * width + tx * patch + px;
          }
  const std::size_t per = static_cast<std::size_t>(channels) * height * width;
  Tensor out(Shape{n, channels, height, width});
  for (int b = 0; b < n; ++b)
    for (std::size_t j = 0; j < per; ++j)
      out[b * per + (*index)[j]] = x.value()[b * per + j];
  return ag::make_result(std::move(out), {x}, [=](ag::Node &self) {
    ag::Node &xn = parent(self, 0);
    Tensor dx(xn.value.shape());
    for (int b = 0; b < n; ++b)
      for (std::size_t j = 0; j < per; ++j)
        dx[b * per + j] = self.grad[b * per + (*index)[j]];
    xn.accumulate(dx);
  });
}

Var mask_token_fill(const Var &features, std::span<const std::uint8_t> mask, const Var &token) {
  require_rank(features, 4, "mask_token_fill");
  const int n = features.dim(0), c = features.dim(1), hw = features.dim(2) * features.dim(3);
  if (mask.size() != static_cast<std::size_t>(n) * hw)
    fail("mask_token_fill: mask has " + std::to_string(mask.size()) + " entries, features " +
         shape_str(features.shape()) + " need " + std::to_string(static_cast<std::size_t>(n) * hw));
  if (token.value().numel() != static_cast<std::size_t>(c))
    fail("mask_token_fill: token length " + std::to_string(token.value().numel()) + " != channels " +
         std::to_string(c));
  auto m = std::make_shared<std::vector<std::uint8_t>>(mask.begin(), mask.end());
  Tensor out = features.value();
  for (int b = 0; b < n; ++b)
    for (int i = 0; i < hw; ++i)
      if ((*m)[static_cast<std::size_t>(b) * hw + i])
        for (int ch = 0; ch < c; ++ch)
          out[(static_cast<std::size_t>(b) * c + ch) * hw + i] = token.value()[ch];
  return ag::make_result(std::move(out), {features, token}, [=](ag::Node &self) {
    ag::Node &fn = parent(self, 0);
    ag::Node &tn = parent(self, 1);
    Tensor df = self.grad;
    Tensor dt(tn.value.shape());
    for (int b = 0; b < n; ++b)
      for (int i = 0; i < hw; ++i)
        if ((*m)[static_cast<std::size_t>(b) * hw + i])
          for (int ch = 0; ch < c; ++ch) {
            const std::size_t idx = (static_cast<std::size_t>(b) * c + ch) * hw + i;
            dt[ch] += df[idx];
            df[idx] = 0.0;
          }
    fn.accumulate(df);
    tn.accumulate(dt);
  });
}

Var softmax_cross_entropy(const Var &logits, std::span<const std::uint8_t> labels, std::span<const double> weights) {
  require_rank(logits, 4, "softmax_cross_entropy");
  const int n = logits.dim(0), c = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  const std::size_t pixels = static_cast<std::size_t>(n) * hw;
  if (labels.size() != pixels)
    fail("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " + shape_str(logits.shape()));
  if (!weights.empty() && weights.size() != pixels)
    fail("softmax_cross_entropy: weight map size mismatch");

  const Tensor &z = logits.value();
  // Softmax probabilities are kept for the backward pass.
  auto prob = std::make_shared<Tensor>(z.shape());
  std::size_t valid = 0;
  double total = 0.0;
  for (int b = 0; b < n; ++b) {
    for (int i = 0; i < hw; ++i) {
      const std::size_t px = static_cast<std::size_t>(b) * hw + i;
      const std::size_t base = static_cast<std::size_t>(b) * c * hw + i;
      double mx = z[base];
      for (int ch = 1; ch < c; ++ch)
        mx = std::max(mx, z[base + static_cast<std::size_t>(ch) * hw]);
      double sum = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        const double e = std::exp(z[base + static_cast<std::size_t>(ch) * hw] - mx);
        (*prob)[base + static_cast<std::size_t>(ch) * hw] = e;
        sum += e;
      }
      for (int ch = 0; ch < c; ++ch)
        (*prob)[base + static_cast<std::size_t>(ch) * hw] /= sum;
      const std::uint8_t y = labels[px];
      if (y == kIgnoreLabel)
        continue;
      if (y >= c)
        fail("softmax_cross_entropy: label " + std::to_string(y) + " out of range for " + std::to_string(c) + " classes");
      ++valid;
      const double wgt = weights.empty() ? 1.0 : weights[px];
      const double nll = -(z[base + static_cast<std::size_t>(y) * hw] - mx - std::log(sum));
      total += wgt * nll;
    }
  }
  if (valid == 0)
    throw std::invalid_argument("softmax_cross_entropy: every pixel is ignored");

  auto lab = std::make_shared<std::vector<std::uint8_t>>(labels.begin(), labels.end());
  auto wts = std::make_shared<std::vector<double>>(weights.begin(), weights.end());
  const double inv = 1.0 / static_cast<double>(valid);
  return ag::make_result(Tensor(Shape{1}, total * inv), {logits}, [=](ag::Node &self) {
    ag::Node &ln = parent(self, 0);
    const double g = self.grad[0] * inv;
    Tensor dz(ln.value.shape());
    for (int b = 0; b < n; ++b) {
      for (int i = 0; i < hw; ++i) {
        const std::size_t px = static_cast<std::size_t>(b) * hw + i;
        const std::uint8_t y = (*lab)[px];
        if (y == kIgnoreLabel)
          continue;
        const double wg = g * (wts->empty() ? 1.0 : (*wts)[px]);
        const std::size_t base = static_cast<std::size_t>(b) * c * hw + i;
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t idx = base + static_cast<std::size_t>(ch) * hw;
          dz[idx] = wg * ((*prob)[idx] - (ch == y ? 1.0 : 0.0));
        }
      }
    }
    ln.accumulate(dz);
  });
}

} // namespace gtseg::ops
