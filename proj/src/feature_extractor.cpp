#include "sapnet/feature_extractor.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>

#include "sapnet/archive.hpp"
#include "sapnet/errors.hpp"
#include "sapnet/ops.hpp"

namespace sapnet {

namespace {

// Block index (0-based) of each of the 13 VGG-16 convolutions.
constexpr int kBlockOf[13] = {0, 0, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4};
constexpr int kWidthMultiplier[5] = {1, 2, 4, 8, 8};

std::filesystem::path resolve(const std::string& configured) {
  if (configured.empty()) {
    throw IoError(
        "pretrained feature extractor weights unavailable: loss.vgg_weights is not set; "
        "set it or use loss.extractor=seeded_random");
  }
  std::filesystem::path p(configured);
  if (std::filesystem::exists(p)) return p;
  if (const char* cache = std::getenv("SAPNET_CACHE"); cache && p.is_relative()) {
    std::filesystem::path cached = std::filesystem::path(cache) / p;
    if (std::filesystem::exists(cached)) return cached;
  }
  throw IoError("pretrained feature extractor weights '" + configured +
                "' not found (also searched $SAPNET_CACHE); use loss.extractor=seeded_random for offline runs");
}

}  // namespace

std::string to_string(ExtractorMode mode) { return mode == ExtractorMode::kPretrained ? "pretrained" : "seeded_random"; }

ExtractorMode parse_extractor_mode(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "pretrained") return ExtractorMode::kPretrained;
  if (t == "seeded_random") return ExtractorMode::kSeededRandom;
  throw ConfigError("unknown extractor mode '" + text + "' (expected pretrained or seeded_random)");
}

void ExtractorConfig::validate() const {
  if (width < 1) throw ConfigError("loss.vgg_width must be >= 1");
  if (taps.empty()) throw ConfigError("loss.taps must not be empty");
  for (std::size_t i = 0; i < taps.size(); ++i) {
    if (taps[i] < 1 || taps[i] > 13) throw ConfigError("loss.taps entries must be in 1..13");
    if (i && taps[i] <= taps[i - 1]) throw ConfigError("loss.taps must be strictly increasing");
  }
}

int tap_stride(int conv_index) { return 1 << kBlockOf[conv_index - 1]; }

ParameterList FeatureExtractor::parameters() const {
  ParameterList out;
  for (std::size_t i = 0; i < convs.size(); ++i) convs[i].collect(out, "conv" + std::to_string(i + 1));
  return out;
}

FeatureExtractor build_feature_extractor(const ExtractorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  FeatureExtractor fe;
  fe.config = cfg;
  int in_ch = 3;
  for (int i = 0; i < cfg.taps.back(); ++i) {
    const int out_ch = cfg.width * kWidthMultiplier[kBlockOf[i]];
    fe.convs.push_back(make_conv(in_ch, out_ch, 3, Init::kHeNormal, rng, false));
    in_ch = out_ch;
  }
  if (cfg.mode == ExtractorMode::kPretrained) {
    const Archive a = Archive::load(resolve(cfg.weights));
    for (auto& [name, var] : fe.parameters()) {
      const Tensor& t = a.tensor(name);
      if (t.shape() != var.value().shape()) {
        throw ConfigError("extractor tensor '" + name + "' has shape " + t.shape_string() + ", expected " +
                          var.value().shape_string());
      }
      ad::Var v = var;
      v.mutable_value() = t;
    }
  }
  return fe;
}

std::vector<ad::Var> extract_features(const ad::Var& x, const FeatureExtractor& fe) {
  const Tensor& t = x.value();
  if (t.rank() != 3 || t.channels() != 3) throw InputError("extract_features: expected [3,H,W] image");
  if (t.height() < kMinFeatureInput || t.width() < kMinFeatureInput) {
    throw InputError("extract_features: image " + t.shape_string() + " is below the minimum size of " +
                     std::to_string(kMinFeatureInput) + "x" + std::to_string(kMinFeatureInput));
  }
  std::vector<double> scale(3), shift(3);
  for (int c = 0; c < 3; ++c) {
    scale[c] = 1.0 / fe.std[c];
    shift[c] = -fe.mean[c] / fe.std[c];
  }
  ad::Var h = ops::channel_affine(x, scale, shift);
  std::vector<ad::Var> taps;
  std::size_t next_tap = 0;
  for (std::size_t i = 0; i < fe.convs.size(); ++i) {
    if (i > 0 && kBlockOf[i] != kBlockOf[i - 1]) h = ops::max_pool2d(h, 2, 2, 0);
    h = ops::relu(ops::conv2d(h, fe.convs[i].weight, fe.convs[i].bias, {1, 1, 1}));
    if (static_cast<int>(i) + 1 == fe.config.taps[next_tap]) {
      taps.push_back(h);
      if (++next_tap == fe.config.taps.size()) break;
    }
  }
  return taps;
}

}  // namespace sapnet
