#include "sapnet/ssim.hpp"

#include <cmath>

#include "sapnet/errors.hpp"
#include "sapnet/ops.hpp"

namespace sapnet {

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> g(size);
  const double centre = (size - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - centre;
    g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += g[i];
  }
  for (double& v : g) v /= total;
  return g;
}

ad::Var ssim(const ad::Var& a, const ad::Var& b, const SsimParams& p) {
  const Tensor& av = a.value();
  if (av.rank() != 3 || a.shape() != b.shape()) {
    throw InputError("ssim: images must share a [C,H,W] shape, got " + av.shape_string() + " and " +
                     b.value().shape_string());
  }
  if (av.height() < p.window || av.width() < p.window) {
    throw InputError("ssim: image " + av.shape_string() + " is smaller than the " + std::to_string(p.window) + "x" +
                     std::to_string(p.window) + " window");
  }
  using namespace ops;
  const auto g = gaussian_window(p.window, p.sigma);
  const double c1 = (p.k1 * p.data_range) * (p.k1 * p.data_range);
  const double c2 = (p.k2 * p.data_range) * (p.k2 * p.data_range);

  const ad::Var mu_a = separable_filter_valid(a, g);
  const ad::Var mu_b = separable_filter_valid(b, g);
  const ad::Var mu_aa = square(mu_a);
  const ad::Var mu_bb = square(mu_b);
  const ad::Var mu_ab = mul(mu_a, mu_b);
  const ad::Var var_a = sub(separable_filter_valid(square(a), g), mu_aa);
  const ad::Var var_b = sub(separable_filter_valid(square(b), g), mu_bb);
  const ad::Var cov = sub(separable_filter_valid(mul(a, b), g), mu_ab);

  const ad::Var num = mul(add_scalar(scale(mu_ab, 2.0), c1), add_scalar(scale(cov, 2.0), c2));
  const ad::Var den = mul(add_scalar(add(mu_aa, mu_bb), c1), add_scalar(add(var_a, var_b), c2));
  return mean(div(num, den));
}

}  // namespace sapnet
