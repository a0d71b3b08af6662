#include "sapnet/losses.hpp"

#include <algorithm>
#include <cctype>

#include "sapnet/errors.hpp"
#include "sapnet/ops.hpp"
#include "sapnet/ssim.hpp"

namespace sapnet {

std::string to_string(ContrastiveKind kind) {
  switch (kind) {
    case ContrastiveKind::kPerceptual: return "perceptual";
    case ContrastiveKind::kL1: return "l1";
    case ContrastiveKind::kNone: return "none";
  }
  return "none";
}

ContrastiveKind parse_contrastive_kind(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "perceptual") return ContrastiveKind::kPerceptual;
  if (t == "l1") return ContrastiveKind::kL1;
  if (t == "none") return ContrastiveKind::kNone;
  throw ConfigError("unknown contrastive loss '" + text + "' (expected perceptual, l1 or none)");
}

void LossWeights::validate(std::size_t tap_count) const {
  for (double l : {lambda1, lambda2, lambda3, lambda4})
    if (l < 0.0) throw ConfigError("loss.lambda* must be nonnegative");
  if (omega.size() != tap_count) {
    throw ConfigError("loss.omega has " + std::to_string(omega.size()) + " entries for " + std::to_string(tap_count) +
                      " extractor taps");
  }
  if (lpisl_size < kMinFeatureInput) throw ConfigError("loss.lpisl_size must be >= " + std::to_string(kMinFeatureInput));
}

LossBreakdown LossTerms::values() const {
  auto v = [](const ad::Var& x) { return x ? x.item() : 0.0; };
  return {v(ssim_loss), v(seg_loss), v(pcl), v(lpisl), v(total)};
}

namespace {

void require_same(const ad::Var& a, const ad::Var& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw InputError(std::string(what) + ": image shapes differ (" + a.value().shape_string() + " vs " +
                     b.value().shape_string() + ")");
  }
}

ad::Var l1_mean(const ad::Var& a, const ad::Var& b) { return ops::mean(ops::abs(ops::sub(a, b))); }

std::vector<ad::Var> frozen_features(const ad::Var& x, const FeatureExtractor& fe) {
  ad::NoGradGuard guard;
  return extract_features(x, fe);
}

ad::Var ratio_term(const ad::Var& d, const ad::Var& g, const ad::Var& r) {
  return ops::div(l1_mean(d, g), ops::add_scalar(l1_mean(d, r), kContrastiveEpsilon));
}

}  // namespace

ad::Var negative_ssim_loss(const ad::Var& derained, const ad::Var& clean) {
  require_same(derained, clean, "negative_ssim_loss");
  return ops::scale(ssim(derained, clean), -1.0);
}

ad::Var focal_seg_loss(const ad::Var& probs, double alpha, double gamma) {
  const ad::Var p = ops::clamp(ops::channel_max(probs), kProbabilityClamp, 1.0 - kProbabilityClamp);
  return ops::mean(ops::focal_term(p, alpha, gamma));
}

ad::Var perceptual_contrastive_loss(const ad::Var& derained, const ad::Var& clean, const ad::Var& rainy,
                                    const FeatureExtractor& fe, const std::vector<double>& omega) {
  require_same(derained, clean, "pcl");
  require_same(derained, rainy, "pcl");
  if (omega.size() != fe.config.taps.size()) throw ConfigError("pcl: omega size does not match tap count");
  const auto vd = extract_features(derained, fe);
  const auto vg = frozen_features(clean, fe);
  const auto vr = frozen_features(rainy, fe);
  ad::Var total;
  for (std::size_t i = 0; i < vd.size(); ++i) {
    const ad::Var term = ops::scale(ratio_term(vd[i], vg[i], vr[i]), omega[i]);
    total = total ? ops::add(total, term) : term;
  }
  return total;
}

ad::Var l1_contrastive_loss(const ad::Var& derained, const ad::Var& clean, const ad::Var& rainy) {
  require_same(derained, clean, "l1_contrastive");
  require_same(derained, rainy, "l1_contrastive");
  return ratio_term(derained, ad::detach(clean), ad::detach(rainy));
}

ad::Var lpisl(const ad::Var& derained, const ad::Var& clean, const FeatureExtractor& fe, int size) {
  require_same(derained, clean, "lpisl");
  const ad::Var d = ops::resize_bilinear(derained, size, size);
  std::vector<ad::Var> vg;
  {
    ad::NoGradGuard guard;
    vg = extract_features(ops::resize_bilinear(clean, size, size), fe);
  }
  const auto vd = extract_features(d, fe);
  ad::Var total;
  for (std::size_t i = 0; i < vd.size(); ++i) {
    const ad::Var diff = ops::sub(ops::normalize_channels(vd[i]), ops::normalize_channels(vg[i]));
    const double positions = static_cast<double>(vd[i].value().plane());
    const ad::Var term = ops::scale(ops::sum(ops::square(diff)), 1.0 / positions);
    total = total ? ops::add(total, term) : term;
  }
  return total;
}

LossTerms total_loss(const ad::Var& derained, const ad::Var& clean, const ad::Var& rainy, const ad::Var& seg_probs,
                     const FeatureExtractor& fe, const LossWeights& lw, const LossToggles& toggles) {
  LossTerms t;
  t.ssim_loss = negative_ssim_loss(derained, clean);
  ad::Var total = ops::scale(t.ssim_loss, lw.lambda1);
  if (toggles.use_seg) {
    if (!seg_probs) throw InputError("total_loss: segmentation enabled but no probabilities supplied");
    if (seg_probs.value().height() != derained.value().height() ||
        seg_probs.value().width() != derained.value().width()) {
      throw InputError("total_loss: segmentation map does not match the derained image");
    }
    t.seg_loss = focal_seg_loss(seg_probs, lw.focal_alpha, lw.focal_gamma);
    total = ops::add(total, ops::scale(t.seg_loss, lw.lambda2));
  }
  if (toggles.use_pcl && lw.contrastive != ContrastiveKind::kNone) {
    t.pcl = lw.contrastive == ContrastiveKind::kPerceptual
                ? perceptual_contrastive_loss(derained, clean, rainy, fe, lw.omega)
                : l1_contrastive_loss(derained, clean, rainy);
    total = ops::add(total, ops::scale(t.pcl, lw.lambda3));
  }
  if (toggles.use_lpisl) {
    t.lpisl = lpisl(derained, clean, fe, lw.lpisl_size);
    total = ops::add(total, ops::scale(t.lpisl, lw.lambda4));
  }
  t.total = total;
  return t;
}

}  // namespace sapnet
