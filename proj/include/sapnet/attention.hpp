#pragma once

#include <random>
#include <string>

#include "sapnet/autograd.hpp"
#include "sapnet/parameters.hpp"

namespace sapnet {

/// Channel attention variants that can be swapped into a residual block.
enum class AttentionKind {
  kNone,  ///< identity
  kSE,    ///< squeeze-excitation
  kCA,    ///< avg- and max-pooled descriptors through shared FCs
  kCRA,   ///< squeeze-excitation plus a skip from the pooled descriptor into the sigmoid
};

std::string to_string(AttentionKind kind);
/// Accepts "none", "se", "ca", "cra" (case-insensitive). Throws ConfigError otherwise.
AttentionKind parse_attention_kind(const std::string& text);

/// Width of the bottleneck: ceil(channels / reduction), never below 1.
int reduced_channels(int channels, int reduction);

struct AttentionWeights {
  int channels = 0;
  int reduction = 16;
  ad::Var reduce_w;  // [Cr, C]
  ad::Var reduce_b;  // {Cr}
  ad::Var expand_w;  // [C, Cr]
  ad::Var expand_b;  // {C}

  void collect(ParameterList& out, const std::string& prefix) const;
};

/// Linear layers initialised from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
AttentionWeights make_attention_weights(int channels, int reduction, std::mt19937_64& rng);

/// The per-channel gate in (0,1)^C. For kNone returns all ones.
ad::Var attention_gate(AttentionKind kind, const ad::Var& x, const AttentionWeights& w);

/// x scaled channel-wise by its gate. kNone returns x itself.
ad::Var apply_attention(AttentionKind kind, const ad::Var& x, const AttentionWeights& w);

}  // namespace sapnet
