#include "sapnet/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "sapnet/errors.hpp"

namespace sapnet {

namespace kv {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_commas(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& v, const char* expected) {
  throw ConfigError(key + ": expected " + expected + ", got '" + v + "'");
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_lines(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value, got '" + t + "'");
    }
    out.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v, "an integer");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v, "a nonnegative integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  if (v.empty()) return out;
  for (const auto& item : split_commas(v)) out.push_back(parse_int(key, item));
  return out;
}

std::vector<double> parse_double_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  if (v.empty()) return out;
  for (const auto& item : split_commas(v)) out.push_back(parse_double(key, item));
  return out;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_int_list(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string format_double_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

}  // namespace kv

namespace {

struct Field {
  std::string key;
  std::string description;
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string b2s(bool b) { return b ? "true" : "false"; }

#define INT_FIELD(KEY, MEMBER, DESC)                                                                \
  Field { KEY, DESC, [](RunConfig& c, const std::string& k, const std::string& v) { c.MEMBER = kv::parse_int(k, v); }, \
          [](const RunConfig& c) { return std::to_string(c.MEMBER); } }
#define U64_FIELD(KEY, MEMBER, DESC)                                                                \
  Field { KEY, DESC, [](RunConfig& c, const std::string& k, const std::string& v) { c.MEMBER = kv::parse_u64(k, v); }, \
          [](const RunConfig& c) { return std::to_string(c.MEMBER); } }
#define DOUBLE_FIELD(KEY, MEMBER, DESC)                                                             \
  Field { KEY, DESC, [](RunConfig& c, const std::string& k, const std::string& v) { c.MEMBER = kv::parse_double(k, v); }, \
          [](const RunConfig& c) { return kv::format_double(c.MEMBER); } }
#define BOOL_FIELD(KEY, MEMBER, DESC)                                                               \
  Field { KEY, DESC, [](RunConfig& c, const std::string& k, const std::string& v) { c.MEMBER = kv::parse_bool(k, v); }, \
          [](const RunConfig& c) { return b2s(c.MEMBER); } }
#define STRING_FIELD(KEY, MEMBER, DESC)                                                               \
  Field { KEY, DESC, [](RunConfig& c, const std::string&, const std::string& v) { c.MEMBER = v; }, \
          [](const RunConfig& c) { return c.MEMBER; } }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      INT_FIELD("model.channels", model.channels, "feature channels of every PDU convolution"),
      INT_FIELD("model.kernel", model.kernel, "odd convolution kernel size"),
      Field{"model.dilations", "dilation rate of each residual block",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.model.dilations = kv::parse_int_list(k, v); },
            [](const RunConfig& c) { return kv::format_int_list(c.model.dilations); }},
      INT_FIELD("model.stages", model.stages, "recurrent stages sharing one PDU"),
      Field{"model.attention", "channel attention inside residual blocks: none|se|ca|cra",
            [](RunConfig& c, const std::string&, const std::string& v) { c.model.attention = parse_attention_kind(v); },
            [](const RunConfig& c) { return to_string(c.model.attention); }},
      INT_FIELD("model.reduction", model.reduction, "attention bottleneck reduction factor"),
      INT_FIELD("model.block_repeats", model.block_repeats, "(conv, attention, ReLU) repetitions per residual block"),

      INT_FIELD("seg.num_classes", seg.num_classes, "segmentation classes"),
      DOUBLE_FIELD("seg.decoder_init_std", seg.decoder_init_std, "std of the Gaussian decoder initialisation"),
      Field{"seg.encoder", "pretrained_resnet101|seeded_random",
            [](RunConfig& c, const std::string&, const std::string& v) { c.seg.encoder = parse_encoder_kind(v); },
            [](const RunConfig& c) { return to_string(c.seg.encoder); }},
      STRING_FIELD("seg.encoder_weights", seg.encoder_weights, "weight archive for the pretrained encoder"),
      Field{"seg.encoder_blocks", "bottleneck blocks per encoder stage (3,4,23,3 for ResNet-101)",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.seg.encoder_blocks = kv::parse_int_list(k, v); },
            [](const RunConfig& c) { return kv::format_int_list(c.seg.encoder_blocks); }},
      INT_FIELD("seg.encoder_width", seg.encoder_width, "first-stage bottleneck width (64 for ResNet-101)"),
      INT_FIELD("seg.decoder_channels", seg.decoder_channels, "channels per decoder stair"),
      U64_FIELD("seg.seed", seg_seed, "seed for segmenter initialisation"),

      Field{"loss.extractor", "pretrained|seeded_random",
            [](RunConfig& c, const std::string&, const std::string& v) { c.extractor.mode = parse_extractor_mode(v); },
            [](const RunConfig& c) { return to_string(c.extractor.mode); }},
      STRING_FIELD("loss.vgg_weights", extractor.weights, "weight archive for the pretrained feature extractor"),
      INT_FIELD("loss.vgg_width", extractor.width, "channels of the first extractor block (64 for VGG-16)"),
      Field{"loss.taps", "1-based conv indices tapped for feature losses",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.extractor.taps = kv::parse_int_list(k, v); },
            [](const RunConfig& c) { return kv::format_int_list(c.extractor.taps); }},
      U64_FIELD("loss.extractor_seed", extractor_seed, "seed for the seeded-random extractor"),
      DOUBLE_FIELD("loss.lambda1", loss.lambda1, "weight of the negative SSIM loss"),
      DOUBLE_FIELD("loss.lambda2", loss.lambda2, "weight of the focal segmentation loss"),
      DOUBLE_FIELD("loss.lambda3", loss.lambda3, "weight of the contrastive loss"),
      DOUBLE_FIELD("loss.lambda4", loss.lambda4, "weight of LPISL"),
      Field{"loss.omega", "per-tap contrastive weights",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.loss.omega = kv::parse_double_list(k, v); },
            [](const RunConfig& c) { return kv::format_double_list(c.loss.omega); }},
      INT_FIELD("loss.lpisl_size", loss.lpisl_size, "side length images are resized to for LPISL"),
      Field{"loss.contrastive", "perceptual|l1|none",
            [](RunConfig& c, const std::string&, const std::string& v) { c.loss.contrastive = parse_contrastive_kind(v); },
            [](const RunConfig& c) { return to_string(c.loss.contrastive); }},
      DOUBLE_FIELD("loss.focal_alpha", loss.focal_alpha, "focal loss alpha"),
      DOUBLE_FIELD("loss.focal_gamma", loss.focal_gamma, "focal loss gamma"),

      INT_FIELD("train.epochs", train.epochs, "training epochs"),
      INT_FIELD("train.batch_size", train.batch_size, "samples per optimizer step"),
      DOUBLE_FIELD("train.base_lr", train.base_lr, "initial learning rate"),
      Field{"train.decay_epochs", "epochs at which the learning rate is multiplied by decay_factor",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.train.decay_epochs = kv::parse_int_list(k, v); },
            [](const RunConfig& c) { return kv::format_int_list(c.train.decay_epochs); }},
      DOUBLE_FIELD("train.decay_factor", train.decay_factor, "learning rate multiplier at each decay epoch"),
      U64_FIELD("train.seed", train.seed, "seed for weight init, data order and crops"),
      BOOL_FIELD("train.use_seg", train.toggles.use_seg, "enable the segmentation loss"),
      BOOL_FIELD("train.use_pcl", train.toggles.use_pcl, "enable the contrastive loss"),
      BOOL_FIELD("train.use_lpisl", train.toggles.use_lpisl, "enable LPISL"),
      BOOL_FIELD("train.use_dilation", train.toggles.use_dilation, "use model.dilations (false: all rates 1)"),
      BOOL_FIELD("train.use_decay", train.toggles.use_decay, "enable the step learning-rate decay"),
      DOUBLE_FIELD("train.beta1", train.beta1, "Adam first-moment decay"),
      DOUBLE_FIELD("train.beta2", train.beta2, "Adam second-moment decay"),
      DOUBLE_FIELD("train.adam_eps", train.adam_eps, "Adam epsilon"),

      STRING_FIELD("data.root", data_root, "dataset root with rainy/ and clean/ (or manifest.tsv)"),
      INT_FIELD("data.crop", crop, "square training crop size"),
      STRING_FIELD("out_dir", out_dir, "directory for checkpoints, log and resolved config"),
  };
  return table;
}

#undef INT_FIELD
#undef U64_FIELD
#undef DOUBLE_FIELD
#undef BOOL_FIELD
#undef STRING_FIELD

const Field& field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  seg.validate();
  extractor.validate();
  loss.validate(extractor.taps.size());
  train.validate();
  if (crop < kMinFeatureInput) throw ConfigError("data.crop must be >= " + std::to_string(kMinFeatureInput));
  if (crop < minimum_input_size(effective_model(model, train.toggles))) {
    throw ConfigError("data.crop is smaller than the model's minimum input size");
  }
}

std::vector<ConfigKeyInfo> config_schema() {
  const RunConfig defaults;
  std::vector<ConfigKeyInfo> out;
  for (const auto& f : fields()) out.push_back({f.key, f.get(defaults), f.description});
  return out;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  field(key).set(cfg, key, value);
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  for (const auto& [key, value] : kv::parse_lines(text)) set_config_value(cfg, key, value);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

std::string resolved_config_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + "=" + f.get(cfg) + "\n";
  return out;
}

std::string config_hash(const RunConfig& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : resolved_config_text(cfg)) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::string> ablation_presets() { return {"M1", "M2", "M3", "M4", "M5", "ours"}; }

void apply_ablation_preset(RunConfig& cfg, const std::string& preset) {
  const auto names = ablation_presets();
  int level = -1;
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == preset) level = static_cast<int>(i);
  if (level < 0) throw ConfigError("unknown ablation preset '" + preset + "' (expected M1..M5 or ours)");
  // Each row adds one component on top of the previous: UBS, PCL, dilation, decay, LPISL.
  cfg.model.attention = AttentionKind::kCRA;
  auto& t = cfg.train.toggles;
  t.use_seg = level >= 1;
  t.use_pcl = level >= 2;
  t.use_dilation = level >= 3;
  t.use_decay = level >= 4;
  t.use_lpisl = level >= 5;
}

}  // namespace sapnet
