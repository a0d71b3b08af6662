#include "sapnet/attention.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "sapnet/errors.hpp"
#include "sapnet/ops.hpp"

namespace sapnet {

std::string to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::kNone: return "none";
    case AttentionKind::kSE: return "se";
    case AttentionKind::kCA: return "ca";
    case AttentionKind::kCRA: return "cra";
  }
  return "none";
}

AttentionKind parse_attention_kind(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "none") return AttentionKind::kNone;
  if (t == "se") return AttentionKind::kSE;
  if (t == "ca") return AttentionKind::kCA;
  if (t == "cra") return AttentionKind::kCRA;
  throw ConfigError("unknown attention kind '" + text + "' (expected none, se, ca or cra)");
}

int reduced_channels(int channels, int reduction) {
  if (channels < 1 || reduction < 1) throw ConfigError("attention: channels and reduction must be positive");
  return std::max(1, (channels + reduction - 1) / reduction);
}

void AttentionWeights::collect(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + ".reduce.weight", reduce_w});
  out.push_back({prefix + ".reduce.bias", reduce_b});
  out.push_back({prefix + ".expand.weight", expand_w});
  out.push_back({prefix + ".expand.bias", expand_b});
}

AttentionWeights make_attention_weights(int channels, int reduction, std::mt19937_64& rng) {
  const int cr = reduced_channels(channels, reduction);
  auto uniform = [&rng](std::vector<int> shape, int fan_in) {
    Tensor t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& v : t.values()) v = u(rng);
    return ad::parameter(std::move(t));
  };
  AttentionWeights w;
  w.channels = channels;
  w.reduction = reduction;
  w.reduce_w = uniform({cr, channels}, channels);
  w.reduce_b = uniform({cr}, channels);
  w.expand_w = uniform({channels, cr}, cr);
  w.expand_b = uniform({channels}, cr);
  return w;
}

namespace {

ad::Var excite(const ad::Var& descriptor, const AttentionWeights& w) {
  return ops::linear(ops::relu(ops::linear(descriptor, w.reduce_w, w.reduce_b)), w.expand_w, w.expand_b);
}

}  // namespace

ad::Var attention_gate(AttentionKind kind, const ad::Var& x, const AttentionWeights& w) {
  if (x.value().rank() != 3) throw InputError("attention: expected [C,H,W] input");
  const int c = x.value().channels();
  if (kind == AttentionKind::kNone) return ad::constant(Tensor({c}, 1.0));
  if (c != w.channels) {
    throw ConfigError("attention: input has " + std::to_string(c) + " channels, weights expect " +
                      std::to_string(w.channels));
  }
  if (!x.value().all_finite()) throw NumericError("attention: non-finite input");

  const ad::Var avg = ops::global_avg_pool(x);
  switch (kind) {
    case AttentionKind::kSE:
      return ops::sigmoid(excite(avg, w));
    case AttentionKind::kCA:
      return ops::sigmoid(ops::add(excite(avg, w), excite(ops::global_max_pool(x), w)));
    case AttentionKind::kCRA:
      return ops::sigmoid(ops::add(avg, excite(avg, w)));
    case AttentionKind::kNone:
      break;
  }
  return ad::constant(Tensor({c}, 1.0));
}

ad::Var apply_attention(AttentionKind kind, const ad::Var& x, const AttentionWeights& w) {
  if (kind == AttentionKind::kNone) return x;
  return ops::channel_scale(x, attention_gate(kind, x, w));
}

}  // namespace sapnet
