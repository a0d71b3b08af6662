#pragma once

#include <vector>

#include "sapnet/autograd.hpp"

namespace sapnet {

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

/// Normalised 1-D Gaussian taps centred on the window.
std::vector<double> gaussian_window(int size, double sigma);

/// Mean SSIM over every channel and every position where the window fits
/// entirely inside the image. Differentiable with respect to both inputs.
ad::Var ssim(const ad::Var& a, const ad::Var& b, const SsimParams& p = {});

}  // namespace sapnet
