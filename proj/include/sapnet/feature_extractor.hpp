#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sapnet/autograd.hpp"
#include "sapnet/parameters.hpp"

namespace sapnet {

enum class ExtractorMode { kPretrained, kSeededRandom };

std::string to_string(ExtractorMode mode);
ExtractorMode parse_extractor_mode(const std::string& text);

struct ExtractorConfig {
  ExtractorMode mode = ExtractorMode::kSeededRandom;
  /// Weight archive with keys conv<i>.weight / conv<i>.bias (1-based) for kPretrained.
  std::string weights;
  /// Channels of the first VGG block (64 in the standard network); later blocks double it.
  int width = 64;
  /// 1-based indices of the convolutions whose ReLU output is tapped, shallow to deep.
  std::vector<int> taps{2, 4, 7};

  void validate() const;
  friend bool operator==(const ExtractorConfig&, const ExtractorConfig&) = default;
};

/// Frozen VGG-16 style convolutional stack (3x3 convs with 2x2 max pools between blocks).
struct FeatureExtractor {
  ExtractorConfig config;
  std::vector<ConvWeights> convs;  // up to the deepest tap
  std::vector<double> mean{0.485, 0.456, 0.406};
  std::vector<double> std{0.229, 0.224, 0.225};

  ParameterList parameters() const;
};

inline constexpr int kMinFeatureInput = 16;

FeatureExtractor build_feature_extractor(const ExtractorConfig& cfg, std::uint64_t seed);

/// Normalises x per channel, runs the stack and returns one map per tap, shallow first.
std::vector<ad::Var> extract_features(const ad::Var& x, const FeatureExtractor& fe);

/// Downsampling factor (1, 2, 4, ...) of the conv with the given 1-based index.
int tap_stride(int conv_index);

}  // namespace sapnet
