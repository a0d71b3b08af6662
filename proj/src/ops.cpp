#include "sapnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "sapnet/errors.hpp"

namespace sapnet::ops {

using ad::Node;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw InputError(std::string(op) + ": shape mismatch " + a.value().shape_string() + " vs " +
                     b.value().shape_string());
  }
}

void require_rank3(const Var& x, const char* op) {
  if (x.value().rank() != 3) {
    throw InputError(std::string(op) + ": expected [C,H,W], got " + x.value().shape_string());
  }
}

Tensor& grad_of(Node& self, std::size_t i) { return self.parents[i]->grad_buffer(); }
bool wants(Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

// y = f(x); dy/dx expressed through (x, y).
template <class F, class DF>
Var unary(const Var& a, F f, DF df) {
  const Tensor& x = a.value();
  Tensor y = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return ad::make_result(std::move(y), {a}, [df](Node& self) {
    const Tensor& x = self.parents[0]->value;
    Tensor& gx = grad_of(self, 0);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += self.grad[i] * df(x[i], self.value[i]);
  });
}

Var scalar_result(double v, const Var& a, std::function<void(Node&)> bw) {
  return ad::make_result(Tensor({1}, v), {a}, std::move(bw));
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  return ad::make_result(std::move(y), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants(self, p)) continue;
      Tensor& g = grad_of(self, p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  return ad::make_result(std::move(y), {a, b}, [](Node& self) {
    if (wants(self, 0)) {
      Tensor& g = grad_of(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      Tensor& g = grad_of(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  return ad::make_result(std::move(y), {a, b}, [](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    if (wants(self, 0)) {
      Tensor& g = grad_of(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (wants(self, 1)) {
      Tensor& g = grad_of(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  require_same_shape(a, b, "div");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= b.value()[i];
  return ad::make_result(std::move(y), {a, b}, [](Node& self) {
    const Tensor& bv = self.parents[1]->value;
    if (wants(self, 0)) {
      Tensor& g = grad_of(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / bv[i];
    }
    if (wants(self, 1)) {
      Tensor& g = grad_of(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.value[i] / bv[i];
    }
  });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var abs(const Var& a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var sigmoid(const Var& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 || std::isnan(x) ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var focal_term(const Var& p, double alpha, double gamma) {
  return unary(
      p, [alpha, gamma](double x) { return -alpha * std::pow(1.0 - x, gamma) * std::log(x); },
      [alpha, gamma](double x, double) {
        const double q = 1.0 - x;
        const double dq = gamma == 0.0 ? 0.0 : gamma * std::pow(q, gamma - 1.0);
        return -alpha * (-dq * std::log(x) + std::pow(q, gamma) / x);
      });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return scalar_result(s, a, [](Node& self) {
    Tensor& g = grad_of(self, 0);
    const double gs = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gs;
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var channel_scale(const Var& x, const Var& g) {
  require_rank3(x, "channel_scale");
  const int c = x.value().channels();
  if (static_cast<int>(g.value().size()) != c) {
    throw ConfigError("channel_scale: " + std::to_string(g.value().size()) + " gains for " +
                      std::to_string(c) + " channels");
  }
  Tensor y = x.value();
  const std::size_t plane = y.plane();
  for (int ch = 0; ch < c; ++ch) {
    double* p = y.channel_ptr(ch);
    for (std::size_t i = 0; i < plane; ++i) p[i] *= g.value()[ch];
  }
  return ad::make_result(std::move(y), {x, g}, [c, plane](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    const Tensor& gv = self.parents[1]->value;
    const bool wx = wants(self, 0), wg = wants(self, 1);
    for (int ch = 0; ch < c; ++ch) {
      const double* go = self.grad.data() + ch * plane;
      if (wx) {
        double* gx = grad_of(self, 0).channel_ptr(ch);
        for (std::size_t i = 0; i < plane; ++i) gx[i] += go[i] * gv[ch];
      }
      if (wg) {
        const double* xp = xv.channel_ptr(ch);
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += go[i] * xp[i];
        grad_of(self, 1)[ch] += acc;
      }
    }
  });
}

Var channel_affine(const Var& x, const std::vector<double>& scale_v, const std::vector<double>& shift) {
  require_rank3(x, "channel_affine");
  const int c = x.value().channels();
  if (static_cast<int>(scale_v.size()) != c || static_cast<int>(shift.size()) != c) {
    throw ConfigError("channel_affine: coefficient count does not match channel count");
  }
  Tensor y = x.value();
  const std::size_t plane = y.plane();
  for (int ch = 0; ch < c; ++ch) {
    double* p = y.channel_ptr(ch);
    for (std::size_t i = 0; i < plane; ++i) p[i] = p[i] * scale_v[ch] + shift[ch];
  }
  return ad::make_result(std::move(y), {x}, [scale_v, c, plane](Node& self) {
    Tensor& gx = grad_of(self, 0);
    for (int ch = 0; ch < c; ++ch) {
      const double* go = self.grad.data() + ch * plane;
      double* gp = gx.channel_ptr(ch);
      for (std::size_t i = 0; i < plane; ++i) gp[i] += go[i] * scale_v[ch];
    }
  });
}

Var global_avg_pool(const Var& x) {
  require_rank3(x, "global_avg_pool");
  const int c = x.value().channels();
  const std::size_t plane = x.value().plane();
  Tensor y({c});
  for (int ch = 0; ch < c; ++ch) {
    const double* p = x.value().channel_ptr(ch);
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += p[i];
    y[ch] = s / static_cast<double>(plane);
  }
  return ad::make_result(std::move(y), {x}, [c, plane](Node& self) {
    Tensor& gx = grad_of(self, 0);
    for (int ch = 0; ch < c; ++ch) {
      const double g = self.grad[ch] / static_cast<double>(plane);
      double* gp = gx.channel_ptr(ch);
      for (std::size_t i = 0; i < plane; ++i) gp[i] += g;
    }
  });
}

Var global_max_pool(const Var& x) {
  require_rank3(x, "global_max_pool");
  const int c = x.value().channels();
  const std::size_t plane = x.value().plane();
  Tensor y({c});
  std::vector<std::size_t> arg(c);
  for (int ch = 0; ch < c; ++ch) {
    const double* p = x.value().channel_ptr(ch);
    std::size_t best = 0;
    for (std::size_t i = 1; i < plane; ++i)
      if (p[i] > p[best]) best = i;
    arg[ch] = best;
    y[ch] = p[best];
  }
  return ad::make_result(std::move(y), {x}, [arg, c](Node& self) {
    Tensor& gx = grad_of(self, 0);
    for (int ch = 0; ch < c; ++ch) gx.channel_ptr(ch)[arg[ch]] += self.grad[ch];
  });
}

Var channel_max(const Var& x) {
  require_rank3(x, "channel_max");
  const Tensor& xv = x.value();
  const int c = xv.channels();
  const std::size_t plane = xv.plane();
  Tensor y({1, xv.height(), xv.width()});
  std::vector<int> arg(plane, 0);
  for (std::size_t i = 0; i < plane; ++i) {
    double best = xv[i];
    for (int ch = 1; ch < c; ++ch) {
      const double v = xv[ch * plane + i];
      if (v > best) {
        best = v;
        arg[i] = ch;
      }
    }
    y[i] = best;
  }
  return ad::make_result(std::move(y), {x}, [arg = std::move(arg), plane](Node& self) {
    Tensor& gx = grad_of(self, 0);
    for (std::size_t i = 0; i < plane; ++i) gx[arg[i] * plane + i] += self.grad[i];
  });
}

Var softmax_channels(const Var& x) {
  require_rank3(x, "softmax_channels");
  const Tensor& xv = x.value();
  const int c = xv.channels();
  const std::size_t plane = xv.plane();
  Tensor y = Tensor::zeros_like(xv);
  for (std::size_t i = 0; i < plane; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (int ch = 0; ch < c; ++ch) m = std::max(m, xv[ch * plane + i]);
    double s = 0.0;
    for (int ch = 0; ch < c; ++ch) {
      const double e = std::exp(xv[ch * plane + i] - m);
      y[ch * plane + i] = e;
      s += e;
    }
    for (int ch = 0; ch < c; ++ch) y[ch * plane + i] /= s;
  }
  return ad::make_result(std::move(y), {x}, [c, plane](Node& self) {
    Tensor& gx = grad_of(self, 0);
    const Tensor& p = self.value;
    for (std::size_t i = 0; i < plane; ++i) {
      double dot = 0.0;
      for (int ch = 0; ch < c; ++ch) dot += self.grad[ch * plane + i] * p[ch * plane + i];
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t k = ch * plane + i;
        gx[k] += p[k] * (self.grad[k] - dot);
      }
    }
  });
}

Var normalize_channels(const Var& x) {
  require_rank3(x, "normalize_channels");
  constexpr double kTiny = 1e-20;
  const Tensor& xv = x.value();
  const int c = xv.channels();
  const std::size_t plane = xv.plane();
  Tensor y = Tensor::zeros_like(xv);
  std::vector<double> norms(plane);
  for (std::size_t i = 0; i < plane; ++i) {
    double s = 0.0;
    for (int ch = 0; ch < c; ++ch) s += xv[ch * plane + i] * xv[ch * plane + i];
    norms[i] = std::sqrt(s + kTiny);
    for (int ch = 0; ch < c; ++ch) y[ch * plane + i] = xv[ch * plane + i] / norms[i];
  }
  return ad::make_result(std::move(y), {x}, [norms = std::move(norms), c, plane](Node& self) {
    Tensor& gx = grad_of(self, 0);
    const Tensor& u = self.value;
    for (std::size_t i = 0; i < plane; ++i) {
      double dot = 0.0;
      for (int ch = 0; ch < c; ++ch) dot += u[ch * plane + i] * self.grad[ch * plane + i];
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t k = ch * plane + i;
        gx[k] += (self.grad[k] - u[k] * dot) / norms[i];
      }
    }
  });
}

Var linear(const Var& v, const Var& w, const Var& b) {
  const Tensor& wv = w.value();
  if (wv.rank() != 2 || static_cast<std::size_t>(wv.dim(1)) != v.value().size()) {
    throw ConfigError("linear: weight " + wv.shape_string() + " incompatible with input of " +
                      std::to_string(v.value().size()) + " features");
  }
  const int m = wv.dim(0), n = wv.dim(1);
  const bool has_bias = static_cast<bool>(b);
  if (has_bias && static_cast<int>(b.value().size()) != m) throw ConfigError("linear: bias size mismatch");
  Tensor y({m});
  for (int r = 0; r < m; ++r) {
    double s = has_bias ? b.value()[r] : 0.0;
    for (int k = 0; k < n; ++k) s += wv[static_cast<std::size_t>(r) * n + k] * v.value()[k];
    y[r] = s;
  }
  std::vector<Var> parents{v, w};
  if (has_bias) parents.push_back(b);
  return ad::make_result(std::move(y), std::move(parents), [m, n, has_bias](Node& self) {
    const Tensor& vv = self.parents[0]->value;
    const Tensor& wv = self.parents[1]->value;
    if (wants(self, 0)) {
      Tensor& gv = grad_of(self, 0);
      for (int r = 0; r < m; ++r)
        for (int k = 0; k < n; ++k) gv[k] += self.grad[r] * wv[static_cast<std::size_t>(r) * n + k];
    }
    if (wants(self, 1)) {
      Tensor& gw = grad_of(self, 1);
      for (int r = 0; r < m; ++r)
        for (int k = 0; k < n; ++k) gw[static_cast<std::size_t>(r) * n + k] += self.grad[r] * vv[k];
    }
    if (has_bias && wants(self, 2)) {
      Tensor& gb = grad_of(self, 2);
      for (int r = 0; r < m; ++r) gb[r] += self.grad[r];
    }
  });
}

int conv_output_size(int in, int kernel, ConvOptions opt) {
  return (in + 2 * opt.padding - opt.dilation * (kernel - 1) - 1) / opt.stride + 1;
}

namespace {

struct ConvGeom {
  int ci, h, w, k, ho, wo;
  ConvOptions opt;
};

// Iterates every (input index, column index) pair of the unfolded input, skipping padding.
template <class F>
void for_each_tap(const ConvGeom& g, F&& f) {
  const std::size_t cols = static_cast<std::size_t>(g.ho) * g.wo;
  for (int c = 0; c < g.ci; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const std::size_t row = (static_cast<std::size_t>(c) * g.k + ky) * g.k + kx;
        const int oy_off = ky * g.opt.dilation - g.opt.padding;
        const int ox_off = kx * g.opt.dilation - g.opt.padding;
        // Valid ox range: 0 <= ox*stride + ox_off < w.
        const int s = g.opt.stride;
        const int ox_lo = std::max(0, (-ox_off + s - 1) / s);
        const int ox_hi = std::min(g.wo, ox_off >= g.w ? 0 : (g.w - 1 - ox_off) / s + 1);
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * s + oy_off;
          if (iy < 0 || iy >= g.h) continue;
          const std::size_t in_base = (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          const std::size_t col_base = row * cols + static_cast<std::size_t>(oy) * g.wo;
          f(in_base, col_base, ox_lo, ox_hi, ox_off, s);
        }
      }
    }
  }
}

void im2col(const ConvGeom& g, const double* in, double* col) {
  std::fill(col, col + static_cast<std::size_t>(g.ci) * g.k * g.k * g.ho * g.wo, 0.0);
  for_each_tap(g, [&](std::size_t in_base, std::size_t col_base, int lo, int hi, int off, int s) {
    for (int ox = lo; ox < hi; ++ox) col[col_base + ox] = in[in_base + ox * s + off];
  });
}

void col2im(const ConvGeom& g, const double* col, double* in) {
  for_each_tap(g, [&](std::size_t in_base, std::size_t col_base, int lo, int hi, int off, int s) {
    for (int ox = lo; ox < hi; ++ox) in[in_base + ox * s + off] += col[col_base + ox];
  });
}

bool is_pointwise(const ConvGeom& g) { return g.k == 1 && g.opt.stride == 1 && g.opt.padding == 0; }

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, ConvOptions opt) {
  require_rank3(x, "conv2d");
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (wv.rank() != 4 || wv.dim(2) != wv.dim(3)) {
    throw ConfigError("conv2d: kernel must be [Co,Ci,k,k], got " + wv.shape_string());
  }
  if (wv.dim(1) != xv.channels()) {
    throw ConfigError("conv2d: kernel expects " + std::to_string(wv.dim(1)) + " input channels, input has " +
                      std::to_string(xv.channels()));
  }
  const int co = wv.dim(0);
  ConvGeom g{xv.channels(), xv.height(), xv.width(), wv.dim(2), 0, 0, opt};
  g.ho = conv_output_size(g.h, g.k, opt);
  g.wo = conv_output_size(g.w, g.k, opt);
  if (g.ho <= 0 || g.wo <= 0) throw InputError("conv2d: input " + xv.shape_string() + " too small for kernel");
  const bool has_bias = static_cast<bool>(b);
  if (has_bias && static_cast<int>(b.value().size()) != co) throw ConfigError("conv2d: bias size mismatch");

  const int rows = g.ci * g.k * g.k;
  const int cols = g.ho * g.wo;
  std::vector<double> col_storage;
  const double* col_ptr = xv.data();
  if (!is_pointwise(g)) {
    col_storage.resize(static_cast<std::size_t>(rows) * cols);
    im2col(g, xv.data(), col_storage.data());
    col_ptr = col_storage.data();
  }
  Tensor y({co, g.ho, g.wo});
  MatMap ym(y.data(), co, cols);
  ym.noalias() = ConstMatMap(wv.data(), co, rows) * ConstMatMap(col_ptr, rows, cols);
  if (has_bias) {
    for (int o = 0; o < co; ++o) ym.row(o).array() += b.value()[o];
  }

  std::vector<Var> parents{x, w};
  if (has_bias) parents.push_back(b);
  return ad::make_result(std::move(y), std::move(parents), [g, co, rows, cols, has_bias](Node& self) {
    ConstMatMap gy(self.grad.data(), co, cols);
    const Tensor& xv = self.parents[0]->value;
    const Tensor& wv = self.parents[1]->value;
    const bool pointwise = is_pointwise(g);
    if (wants(self, 1)) {
      std::vector<double> col_storage;
      const double* col_ptr = xv.data();
      if (!pointwise) {
        col_storage.resize(static_cast<std::size_t>(rows) * cols);
        im2col(g, xv.data(), col_storage.data());
        col_ptr = col_storage.data();
      }
      MatMap(grad_of(self, 1).data(), co, rows).noalias() += gy * ConstMatMap(col_ptr, rows, cols).transpose();
    }
    if (wants(self, 0)) {
      if (pointwise) {
        MatMap(grad_of(self, 0).data(), rows, cols).noalias() += ConstMatMap(wv.data(), co, rows).transpose() * gy;
      } else {
        RowMat gcol = ConstMatMap(wv.data(), co, rows).transpose() * gy;
        col2im(g, gcol.data(), grad_of(self, 0).data());
      }
    }
    if (has_bias && wants(self, 2)) {
      Tensor& gb = grad_of(self, 2);
      for (int o = 0; o < co; ++o) gb[o] += gy.row(o).sum();
    }
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw InputError("concat_channels: no inputs");
  const int h = parts[0].value().height(), w = parts[0].value().width();
  int total = 0;
  for (const Var& p : parts) {
    require_rank3(p, "concat_channels");
    if (p.value().height() != h || p.value().width() != w) {
      throw InputError("concat_channels: spatial mismatch " + parts[0].value().shape_string() + " vs " +
                       p.value().shape_string());
    }
    total += p.value().channels();
  }
  Tensor y({total, h, w});
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    offsets.push_back(offset);
    std::copy(p.value().data(), p.value().data() + p.value().size(), y.data() + offset);
    offset += p.value().size();
  }
  return ad::make_result(std::move(y), parts, [offsets = std::move(offsets)](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      if (!wants(self, i)) continue;
      Tensor& g = grad_of(self, i);
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += self.grad[offsets[i] + k];
    }
  });
}

Var slice_channels(const Var& x, int begin, int count) {
  require_rank3(x, "slice_channels");
  const Tensor& xv = x.value();
  if (begin < 0 || count <= 0 || begin + count > xv.channels()) throw InputError("slice_channels: out of range");
  Tensor y({count, xv.height(), xv.width()});
  const std::size_t offset = static_cast<std::size_t>(begin) * xv.plane();
  std::copy(xv.data() + offset, xv.data() + offset + y.size(), y.data());
  return ad::make_result(std::move(y), {x}, [offset](Node& self) {
    Tensor& g = grad_of(self, 0);
    for (std::size_t k = 0; k < self.grad.size(); ++k) g[offset + k] += self.grad[k];
  });
}

Var max_pool2d(const Var& x, int kernel, int stride, int padding) {
  require_rank3(x, "max_pool2d");
  const Tensor& xv = x.value();
  const int c = xv.channels(), h = xv.height(), w = xv.width();
  const int ho = (h + 2 * padding - kernel) / stride + 1;
  const int wo = (w + 2 * padding - kernel) / stride + 1;
  if (ho <= 0 || wo <= 0) throw InputError("max_pool2d: input " + xv.shape_string() + " too small");
  Tensor y({c, ho, wo});
  std::vector<std::size_t> arg(y.size());
  std::size_t k = 0;
  for (int ch = 0; ch < c; ++ch) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox, ++k) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_i = 0;
        for (int dy = 0; dy < kernel; ++dy) {
          const int iy = oy * stride - padding + dy;
          if (iy < 0 || iy >= h) continue;
          for (int dx = 0; dx < kernel; ++dx) {
            const int ix = ox * stride - padding + dx;
            if (ix < 0 || ix >= w) continue;
            const std::size_t idx = (static_cast<std::size_t>(ch) * h + iy) * w + ix;
            if (xv[idx] > best) {
              best = xv[idx];
              best_i = idx;
            }
          }
        }
        y[k] = best;
        arg[k] = best_i;
      }
    }
  }
  return ad::make_result(std::move(y), {x}, [arg = std::move(arg)](Node& self) {
    Tensor& g = grad_of(self, 0);
    for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad[i];
  });
}

namespace {

struct Lerp {
  int i0, i1;
  double w1;
};

std::vector<Lerp> lerp_table(int in, int out) {
  std::vector<Lerp> t(out);
  const double ratio = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    t[o] = {i0, i1, src - i0};
  }
  return t;
}

}  // namespace

Var resize_bilinear(const Var& x, int out_h, int out_w) {
  require_rank3(x, "resize_bilinear");
  const Tensor& xv = x.value();
  const int c = xv.channels(), h = xv.height(), w = xv.width();
  if (out_h <= 0 || out_w <= 0) throw InputError("resize_bilinear: non-positive target size");
  auto ty = lerp_table(h, out_h);
  auto tx = lerp_table(w, out_w);
  Tensor y({c, out_h, out_w});
  for (int ch = 0; ch < c; ++ch) {
    const double* in = xv.channel_ptr(ch);
    double* out = y.channel_ptr(ch);
    for (int oy = 0; oy < out_h; ++oy) {
      const Lerp& ly = ty[oy];
      const double* r0 = in + static_cast<std::size_t>(ly.i0) * w;
      const double* r1 = in + static_cast<std::size_t>(ly.i1) * w;
      for (int ox = 0; ox < out_w; ++ox) {
        const Lerp& lx = tx[ox];
        const double top = r0[lx.i0] * (1.0 - lx.w1) + r0[lx.i1] * lx.w1;
        const double bot = r1[lx.i0] * (1.0 - lx.w1) + r1[lx.i1] * lx.w1;
        out[static_cast<std::size_t>(oy) * out_w + ox] = top * (1.0 - ly.w1) + bot * ly.w1;
      }
    }
  }
  return ad::make_result(std::move(y), {x}, [ty, tx, c, w, out_h, out_w](Node& self) {
    Tensor& g = grad_of(self, 0);
    for (int ch = 0; ch < c; ++ch) {
      double* gin = g.channel_ptr(ch);
      const double* gout = self.grad.data() + static_cast<std::size_t>(ch) * out_h * out_w;
      for (int oy = 0; oy < out_h; ++oy) {
        const Lerp& ly = ty[oy];
        double* r0 = gin + static_cast<std::size_t>(ly.i0) * w;
        double* r1 = gin + static_cast<std::size_t>(ly.i1) * w;
        for (int ox = 0; ox < out_w; ++ox) {
          const Lerp& lx = tx[ox];
          const double go = gout[static_cast<std::size_t>(oy) * out_w + ox];
          const double top = go * (1.0 - ly.w1), bot = go * ly.w1;
          r0[lx.i0] += top * (1.0 - lx.w1);
          r0[lx.i1] += top * lx.w1;
          r1[lx.i0] += bot * (1.0 - lx.w1);
          r1[lx.i1] += bot * lx.w1;
        }
      }
    }
  });
}

namespace {

// Mirror index without edge repetition, folded until it lands inside [0, n).
int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

Var reflect_pad(const Var& x, int pad_bottom, int pad_right) {
  require_rank3(x, "reflect_pad");
  const Tensor& xv = x.value();
  const int c = xv.channels(), h = xv.height(), w = xv.width();
  const int ho = h + pad_bottom, wo = w + pad_right;
  Tensor y({c, ho, wo});
  std::vector<std::size_t> src(static_cast<std::size_t>(ho) * wo);
  for (int oy = 0; oy < ho; ++oy)
    for (int ox = 0; ox < wo; ++ox)
      src[static_cast<std::size_t>(oy) * wo + ox] =
          static_cast<std::size_t>(reflect_index(oy, h)) * w + reflect_index(ox, w);
  for (int ch = 0; ch < c; ++ch) {
    const double* in = xv.channel_ptr(ch);
    double* out = y.channel_ptr(ch);
    for (std::size_t i = 0; i < src.size(); ++i) out[i] = in[src[i]];
  }
  return ad::make_result(std::move(y), {x}, [src = std::move(src), c](Node& self) {
    Tensor& g = grad_of(self, 0);
    for (int ch = 0; ch < c; ++ch) {
      double* gin = g.channel_ptr(ch);
      const double* gout = self.grad.data() + static_cast<std::size_t>(ch) * src.size();
      for (std::size_t i = 0; i < src.size(); ++i) gin[src[i]] += gout[i];
    }
  });
}

Var crop(const Var& x, int out_h, int out_w) {
  require_rank3(x, "crop");
  const Tensor& xv = x.value();
  const int c = xv.channels(), w = xv.width();
  if (out_h > xv.height() || out_w > w) throw InputError("crop: target larger than input");
  Tensor y({c, out_h, out_w});
  for (int ch = 0; ch < c; ++ch)
    for (int yy = 0; yy < out_h; ++yy)
      for (int xx = 0; xx < out_w; ++xx) y.at(ch, yy, xx) = xv.at(ch, yy, xx);
  return ad::make_result(std::move(y), {x}, [c, out_h, out_w](Node& self) {
    Tensor& g = grad_of(self, 0);
    for (int ch = 0; ch < c; ++ch)
      for (int yy = 0; yy < out_h; ++yy)
        for (int xx = 0; xx < out_w; ++xx) g.at(ch, yy, xx) += self.grad.at(ch, yy, xx);
  });
}

Var separable_filter_valid(const Var& x, const std::vector<double>& kernel) {
  require_rank3(x, "separable_filter_valid");
  const Tensor& xv = x.value();
  const int c = xv.channels(), h = xv.height(), w = xv.width();
  const int k = static_cast<int>(kernel.size());
  const int ho = h - k + 1, wo = w - k + 1;
  if (ho <= 0 || wo <= 0) {
    throw InputError("filter window " + std::to_string(k) + " larger than image " + xv.shape_string());
  }
  Tensor y({c, ho, wo});
  std::vector<double> tmp(static_cast<std::size_t>(h) * wo);
  for (int ch = 0; ch < c; ++ch) {
    const double* in = xv.channel_ptr(ch);
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < wo; ++xx) {
        double s = 0.0;
        for (int i = 0; i < k; ++i) s += kernel[i] * in[static_cast<std::size_t>(yy) * w + xx + i];
        tmp[static_cast<std::size_t>(yy) * wo + xx] = s;
      }
    double* out = y.channel_ptr(ch);
    for (int yy = 0; yy < ho; ++yy)
      for (int xx = 0; xx < wo; ++xx) {
        double s = 0.0;
        for (int i = 0; i < k; ++i) s += kernel[i] * tmp[static_cast<std::size_t>(yy + i) * wo + xx];
        out[static_cast<std::size_t>(yy) * wo + xx] = s;
      }
  }
  return ad::make_result(std::move(y), {x}, [kernel, c, h, w, k, ho, wo](Node& self) {
    Tensor& g = grad_of(self, 0);
    std::vector<double> tmp(static_cast<std::size_t>(h) * wo);
    for (int ch = 0; ch < c; ++ch) {
      const double* gout = self.grad.data() + static_cast<std::size_t>(ch) * ho * wo;
      std::fill(tmp.begin(), tmp.end(), 0.0);
      for (int yy = 0; yy < ho; ++yy)
        for (int i = 0; i < k; ++i)
          for (int xx = 0; xx < wo; ++xx)
            tmp[static_cast<std::size_t>(yy + i) * wo + xx] += kernel[i] * gout[static_cast<std::size_t>(yy) * wo + xx];
      double* gin = g.channel_ptr(ch);
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < wo; ++xx) {
          const double t = tmp[static_cast<std::size_t>(yy) * wo + xx];
          for (int i = 0; i < k; ++i) gin[static_cast<std::size_t>(yy) * w + xx + i] += kernel[i] * t;
        }
    }
  });
}

}  // namespace sapnet::ops
