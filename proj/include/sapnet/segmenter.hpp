#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sapnet/autograd.hpp"
#include "sapnet/parameters.hpp"

namespace sapnet {

enum class EncoderKind { kPretrainedResnet101, kSeededRandom };

std::string to_string(EncoderKind kind);
EncoderKind parse_encoder_kind(const std::string& text);

struct SegConfig {
  int num_classes = 21;
  double decoder_init_std = 0.05;
  EncoderKind encoder = EncoderKind::kSeededRandom;
  /// Weight archive for the pretrained encoder (bottleneck blocks with batch norm folded into biases).
  std::string encoder_weights;
  /// Bottleneck blocks per encoder stage. {3,4,23,3} is the 101-layer layout.
  std::vector<int> encoder_blocks{1, 1, 1, 1};
  /// Bottleneck width of the first stage; stage outputs are 4x, 8x, 16x, 32x this.
  int encoder_width = 8;
  /// Channels of each decoder stair; the head sees 4x this after concatenation.
  int decoder_channels = 128;

  void validate() const;
  friend bool operator==(const SegConfig&, const SegConfig&) = default;
};

/// Total stride of the bottom-up pathway.
inline constexpr int kEncoderStride = 32;

struct BottleneckWeights {
  ConvWeights reduce, spatial, expand;
  ConvWeights projection;  // empty weight when the shortcut is the identity
  int stride = 1;
  bool has_projection = false;
};

/// Frozen segmentation network. Every tensor is a non-trainable constant, so
/// gradients pass through to the input image but never accumulate here.
struct SegWeights {
  SegConfig config;
  ConvWeights stem;  // 7x7 stride 2
  std::vector<std::vector<BottleneckWeights>> stages;
  std::vector<ConvWeights> laterals;                  // 1x1, index 0 = deepest
  std::vector<std::pair<ConvWeights, ConvWeights>> smooth;  // 3x3 pairs for the three merging stairs
  ConvWeights head;  // 1x1, 4*D -> n

  ParameterList parameters() const;
  ParameterList decoder_parameters() const;
};

/// Builds the segmenter. Decoder weights are N(0, decoder_init_std^2) from `seed`, biases zero.
/// kSeededRandom draws the encoder from He-normal Gaussians; kPretrainedResnet101 loads
/// `encoder_weights` and throws IoError (naming the seeded fallback) when it is unavailable.
SegWeights build_segmenter(const SegConfig& cfg, std::uint64_t seed);

/// Per-pixel class probabilities [n,H,W] for an image [3,H,W]. Inputs whose sides are not multiples
/// of the encoder stride are reflect-padded and the result cropped back.
ad::Var segment(const ad::Var& image, const SegWeights& w);

}  // namespace sapnet
