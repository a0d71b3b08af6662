#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sapnet/autograd.hpp"

namespace sapnet {

struct NamedParameter {
  std::string name;
  ad::Var var;
};

/// Ordered view over a module's parameters. Order is construction order and
/// is what checkpoints and the optimizer rely on.
using ParameterList = std::vector<NamedParameter>;

std::size_t scalar_count(const ParameterList& params);

/// Conv layer weights: kernel [Co,Ci,k,k] and bias {Co}.
struct ConvWeights {
  ad::Var weight;
  ad::Var bias;

  int out_channels() const { return weight.value().dim(0); }
  int in_channels() const { return weight.value().dim(1); }
  int kernel() const { return weight.value().dim(2); }
  void collect(ParameterList& out, const std::string& prefix) const;
};

enum class Init { kUniformFanIn, kHeNormal, kNormal };

/// Builds conv weights. kUniformFanIn draws weight and bias from U(-1/sqrt(fan_in), 1/sqrt(fan_in));
/// kHeNormal draws weights from N(0, 2/fan_in) with zero bias; kNormal uses N(0, std^2) with zero bias.
ConvWeights make_conv(int in_ch, int out_ch, int kernel, Init init, std::mt19937_64& rng, bool trainable,
                      double std = 0.0);

}  // namespace sapnet
