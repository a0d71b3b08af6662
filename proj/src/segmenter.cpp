#include "sapnet/segmenter.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>

#include "sapnet/archive.hpp"
#include "sapnet/errors.hpp"
#include "sapnet/ops.hpp"

namespace sapnet {

std::string to_string(EncoderKind kind) {
  return kind == EncoderKind::kPretrainedResnet101 ? "pretrained_resnet101" : "seeded_random";
}

EncoderKind parse_encoder_kind(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "pretrained_resnet101") return EncoderKind::kPretrainedResnet101;
  if (t == "seeded_random") return EncoderKind::kSeededRandom;
  throw ConfigError("unknown encoder kind '" + text + "' (expected pretrained_resnet101 or seeded_random)");
}

void SegConfig::validate() const {
  if (num_classes < 2) throw ConfigError("seg.num_classes must be >= 2");
  if (!(decoder_init_std > 0.0)) throw ConfigError("seg.decoder_init_std must be > 0");
  if (encoder_blocks.size() != 4) throw ConfigError("seg.encoder_blocks must list 4 stages");
  for (int b : encoder_blocks)
    if (b < 1) throw ConfigError("seg.encoder_blocks entries must be >= 1");
  if (encoder_width < 1) throw ConfigError("seg.encoder_width must be >= 1");
  if (decoder_channels < 1) throw ConfigError("seg.decoder_channels must be >= 1");
}

ParameterList SegWeights::parameters() const {
  ParameterList out;
  stem.collect(out, "encoder.stem");
  for (std::size_t s = 0; s < stages.size(); ++s) {
    for (std::size_t b = 0; b < stages[s].size(); ++b) {
      const std::string p = "encoder.layer" + std::to_string(s + 1) + "." + std::to_string(b);
      const BottleneckWeights& bw = stages[s][b];
      bw.reduce.collect(out, p + ".conv1");
      bw.spatial.collect(out, p + ".conv2");
      bw.expand.collect(out, p + ".conv3");
      if (bw.has_projection) bw.projection.collect(out, p + ".downsample");
    }
  }
  for (const auto& entry : decoder_parameters()) out.push_back(entry);
  return out;
}

ParameterList SegWeights::decoder_parameters() const {
  ParameterList out;
  for (std::size_t i = 0; i < laterals.size(); ++i) laterals[i].collect(out, "decoder.lateral" + std::to_string(i));
  for (std::size_t i = 0; i < smooth.size(); ++i) {
    smooth[i].first.collect(out, "decoder.smooth" + std::to_string(i) + "a");
    smooth[i].second.collect(out, "decoder.smooth" + std::to_string(i) + "b");
  }
  head.collect(out, "decoder.head");
  return out;
}

namespace {

constexpr int kExpansion = 4;

std::filesystem::path resolve_weights(const std::string& configured) {
  if (configured.empty()) {
    throw IoError(
        "pretrained encoder weights unavailable: seg.encoder_weights is not set; "
        "set it to a converted weight archive or use seg.encoder=seeded_random");
  }
  std::filesystem::path p(configured);
  if (std::filesystem::exists(p)) return p;
  if (const char* cache = std::getenv("SAPNET_CACHE"); cache && p.is_relative()) {
    std::filesystem::path cached = std::filesystem::path(cache) / p;
    if (std::filesystem::exists(cached)) return cached;
  }
  throw IoError("pretrained encoder weights unavailable: '" + configured +
                "' not found (also searched $SAPNET_CACHE); use seg.encoder=seeded_random for offline runs");
}

void load_into(const Archive& a, const ParameterList& params, const std::string& prefix) {
  for (const auto& [name, var] : params) {
    if (!name.starts_with(prefix)) continue;
    const Tensor& t = a.tensor(name);
    if (t.shape() != var.value().shape()) {
      throw ConfigError("pretrained tensor '" + name + "' has shape " + t.shape_string() + ", expected " +
                        var.value().shape_string());
    }
    // Frozen leaves: overwriting the value in place is how they are populated.
    ad::Var v = var;
    v.mutable_value() = t;
  }
}

ad::Var conv(const ad::Var& x, const ConvWeights& cw, int stride = 1) {
  const int k = cw.kernel();
  return ops::conv2d(x, cw.weight, cw.bias, {stride, (k - 1) / 2, 1});
}

ad::Var bottleneck(const ad::Var& x, const BottleneckWeights& b) {
  ad::Var y = ops::relu(conv(x, b.reduce));
  y = ops::relu(conv(y, b.spatial, b.stride));
  y = conv(y, b.expand);
  const ad::Var shortcut = b.has_projection ? conv(x, b.projection, b.stride) : x;
  return ops::relu(ops::add(y, shortcut));
}

ad::Var resize_to(const ad::Var& x, const ad::Var& like) {
  const Tensor& t = like.value();
  if (x.value().height() == t.height() && x.value().width() == t.width()) return x;
  return ops::resize_bilinear(x, t.height(), t.width());
}

}  // namespace

SegWeights build_segmenter(const SegConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::seed_seq enc_seq{seed, std::uint64_t{1}};
  std::seed_seq dec_seq{seed, std::uint64_t{2}};
  std::mt19937_64 enc_rng(enc_seq), dec_rng(dec_seq);

  SegWeights w;
  w.config = cfg;
  const int base = cfg.encoder_width;
  w.stem = make_conv(3, base, 7, Init::kHeNormal, enc_rng, false);
  int in_ch = base;
  std::vector<int> stage_out;
  for (int s = 0; s < 4; ++s) {
    const int width = base << s;
    const int out_ch = width * kExpansion;
    std::vector<BottleneckWeights> blocks;
    for (int b = 0; b < cfg.encoder_blocks[s]; ++b) {
      BottleneckWeights bw;
      bw.stride = (b == 0 && s > 0) ? 2 : 1;
      bw.reduce = make_conv(in_ch, width, 1, Init::kHeNormal, enc_rng, false);
      bw.spatial = make_conv(width, width, 3, Init::kHeNormal, enc_rng, false);
      bw.expand = make_conv(width, out_ch, 1, Init::kHeNormal, enc_rng, false);
      bw.has_projection = bw.stride != 1 || in_ch != out_ch;
      if (bw.has_projection) bw.projection = make_conv(in_ch, out_ch, 1, Init::kHeNormal, enc_rng, false);
      blocks.push_back(std::move(bw));
      in_ch = out_ch;
    }
    w.stages.push_back(std::move(blocks));
    stage_out.push_back(out_ch);
  }

  const int d = cfg.decoder_channels;
  const double sd = cfg.decoder_init_std;
  for (int i = 3; i >= 0; --i) w.laterals.push_back(make_conv(stage_out[i], d, 1, Init::kNormal, dec_rng, false, sd));
  for (int i = 0; i < 3; ++i) {
    ConvWeights a = make_conv(2 * d, d, 3, Init::kNormal, dec_rng, false, sd);
    ConvWeights b = make_conv(d, d, 3, Init::kNormal, dec_rng, false, sd);
    w.smooth.emplace_back(std::move(a), std::move(b));
  }
  w.head = make_conv(4 * d, cfg.num_classes, 1, Init::kNormal, dec_rng, false, sd);

  if (cfg.encoder == EncoderKind::kPretrainedResnet101) {
    const Archive a = Archive::load(resolve_weights(cfg.encoder_weights));
    load_into(a, w.parameters(), "encoder.");
  }
  return w;
}

ad::Var segment(const ad::Var& image, const SegWeights& w) {
  const Tensor& img = image.value();
  if (img.rank() != 3 || img.channels() != 3) throw InputError("segment: expected [3,H,W] image");
  if (!img.all_finite()) throw NumericError("segment: non-finite input image");
  const int h = img.height(), wd = img.width();
  const int pad_b = (kEncoderStride - h % kEncoderStride) % kEncoderStride;
  const int pad_r = (kEncoderStride - wd % kEncoderStride) % kEncoderStride;
  ad::Var x = (pad_b || pad_r) ? ops::reflect_pad(image, pad_b, pad_r) : image;
  const int hp = h + pad_b, wp = wd + pad_r;

  // Bottom-up, on ImageNet-normalised input.
  x = ops::channel_affine(x, {1 / 0.229, 1 / 0.224, 1 / 0.225}, {-0.485 / 0.229, -0.456 / 0.224, -0.406 / 0.225});
  x = ops::relu(conv(x, w.stem, 2));
  x = ops::max_pool2d(x, 3, 2, 1);
  std::vector<ad::Var> features;
  for (const auto& stage : w.stages) {
    for (const auto& block : stage) x = bottleneck(x, block);
    features.push_back(x);
  }

  // Top-down with lateral merges.
  std::vector<ad::Var> stairs;
  ad::Var p = conv(features[3], w.laterals[0]);
  stairs.push_back(p);
  for (int i = 0; i < 3; ++i) {
    const ad::Var& c = features[2 - i];
    const ad::Var lateral = conv(c, w.laterals[i + 1]);
    p = ops::concat_channels({resize_to(p, lateral), lateral});
    p = ops::relu(conv(p, w.smooth[i].first));
    p = ops::relu(conv(p, w.smooth[i].second));
    stairs.push_back(p);
  }

  const ad::Var& finest = stairs.back();
  std::vector<ad::Var> merged;
  for (const ad::Var& s : stairs) merged.push_back(resize_to(s, finest));
  ad::Var logits = conv(ops::concat_channels(merged), w.head);
  logits = ops::resize_bilinear(logits, hp, wp);
  if (pad_b || pad_r) logits = ops::crop(logits, h, wd);
  return ops::softmax_channels(logits);
}

}  // namespace sapnet
