#pragma once

#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "sapnet/data.hpp"

namespace sapnet {

/// 10 log10(range^2 / MSE). Returns +infinity when the images are identical.
double psnr(const ImageTensor& a, const ImageTensor& b, double data_range = 1.0);

/// Gaussian-window SSIM (11x11, sigma 1.5, K1 0.01, K2 0.03, range 1), per channel then averaged.
double ssim_metric(const ImageTensor& a, const ImageTensor& b);

struct ImageScore {
  std::string id;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct EvalReport {
  std::vector<ImageScore> per_image;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
};

using Derainer = std::function<ImageTensor(const ImageTensor&)>;

/// Runs `derainer` on each rainy image, clamps to [0,1] and scores against the clean image.
EvalReport evaluate(const Derainer& derainer, const std::vector<PairedSample>& pairs);

/// Arithmetic means in list order. An infinite PSNR makes the PSNR mean infinite.
void finalize_means(EvalReport& report);

/// Fixed-point decimal, or "inf".
std::string format_metric(double v);

/// Tab-separated: header `id psnr_db ssim`, one row per image, then a `MEAN` row.
void write_report(std::ostream& os, const EvalReport& report);
void write_report(const std::filesystem::path& path, const EvalReport& report);

}  // namespace sapnet
