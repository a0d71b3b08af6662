#include "sapnet/parameters.hpp"

#include <cmath>

namespace sapnet {

std::size_t scalar_count(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.var.value().size();
  return n;
}

void ConvWeights::collect(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

ConvWeights make_conv(int in_ch, int out_ch, int kernel, Init init, std::mt19937_64& rng, bool trainable,
                      double std) {
  Tensor w({out_ch, in_ch, kernel, kernel});
  Tensor b({out_ch});
  const double fan_in = static_cast<double>(in_ch) * kernel * kernel;
  switch (init) {
    case Init::kUniformFanIn: {
      const double bound = 1.0 / std::sqrt(fan_in);
      std::uniform_real_distribution<double> u(-bound, bound);
      for (double& v : w.values()) v = u(rng);
      for (double& v : b.values()) v = u(rng);
      break;
    }
    case Init::kHeNormal: {
      std::normal_distribution<double> n(0.0, std::sqrt(2.0 / fan_in));
      for (double& v : w.values()) v = n(rng);
      break;
    }
    case Init::kNormal: {
      std::normal_distribution<double> n(0.0, std);
      for (double& v : w.values()) v = n(rng);
      break;
    }
  }
  if (trainable) return {ad::parameter(std::move(w)), ad::parameter(std::move(b))};
  return {ad::constant(std::move(w)), ad::constant(std::move(b))};
}

}  // namespace sapnet
