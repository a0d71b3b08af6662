#pragma once

#include <string>
#include <vector>

#include "sapnet/autograd.hpp"
#include "sapnet/feature_extractor.hpp"

namespace sapnet {

/// Which contrastive term fills the third loss slot.
enum class ContrastiveKind {
  kPerceptual,  ///< feature-space ratio over the extractor taps
  kL1,          ///< the same ratio on raw pixels
  kNone,
};

std::string to_string(ContrastiveKind kind);
ContrastiveKind parse_contrastive_kind(const std::string& text);

struct LossWeights {
  double lambda1 = 1.0;  // negative SSIM
  double lambda2 = 0.1;  // focal segmentation
  double lambda3 = 0.1;  // contrastive
  double lambda4 = 0.1;  // LPISL
  std::vector<double> omega{0.25, 0.5, 1.0};
  int lpisl_size = 256;
  ContrastiveKind contrastive = ContrastiveKind::kPerceptual;
  double focal_alpha = 1.0;
  double focal_gamma = 2.0;

  void validate(std::size_t tap_count) const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

/// Terms switched off are neither evaluated nor differentiated; they read as 0.
struct LossToggles {
  bool use_seg = true;
  bool use_pcl = true;
  bool use_lpisl = true;
};

struct LossBreakdown {
  double ssim_loss = 0.0;
  double seg_loss = 0.0;
  double pcl = 0.0;
  double lpisl = 0.0;
  double total = 0.0;
};

struct LossTerms {
  ad::Var ssim_loss, seg_loss, pcl, lpisl, total;
  LossBreakdown values() const;
};

inline constexpr double kProbabilityClamp = 1e-7;
inline constexpr double kContrastiveEpsilon = 1e-7;

/// -SSIM(derained, clean).
ad::Var negative_ssim_loss(const ad::Var& derained, const ad::Var& clean);

/// Mean over pixels of -alpha (1-p)^gamma log p, p the clamped per-pixel maximum class probability.
ad::Var focal_seg_loss(const ad::Var& probs, double alpha = 1.0, double gamma = 2.0);

/// sum_i omega_i * L1(V_i(D), V_i(G)) / (L1(V_i(D), V_i(R)) + eps). Only `derained` receives gradient.
ad::Var perceptual_contrastive_loss(const ad::Var& derained, const ad::Var& clean, const ad::Var& rainy,
                                    const FeatureExtractor& fe, const std::vector<double>& omega);

/// Pixel-space counterpart of the perceptual contrastive loss.
ad::Var l1_contrastive_loss(const ad::Var& derained, const ad::Var& clean, const ad::Var& rainy);

/// Channel-normalised squared feature distance on images resized to size x size, averaged over
/// positions and summed over taps. Only `derained` receives gradient.
ad::Var lpisl(const ad::Var& derained, const ad::Var& clean, const FeatureExtractor& fe, int size = 256);

/// Weighted sum of the four terms. `seg_probs` is the segmenter output on `derained` and may be empty
/// when toggles.use_seg is false.
LossTerms total_loss(const ad::Var& derained, const ad::Var& clean, const ad::Var& rainy, const ad::Var& seg_probs,
                     const FeatureExtractor& fe, const LossWeights& lw, const LossToggles& toggles = {});

}  // namespace sapnet
