#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sapnet/attention.hpp"
#include "sapnet/autograd.hpp"
#include "sapnet/parameters.hpp"

namespace sapnet {

/// Architecture of the recurrent derain network. Defaults give the full-size model.
struct ModelConfig {
  int channels = 32;
  int kernel = 3;
  std::vector<int> dilations{1, 2, 4, 8, 16};
  int stages = 6;
  AttentionKind attention = AttentionKind::kCRA;
  int reduction = 16;
  /// (dilated conv, attention, ReLU) repetitions inside one residual block.
  int block_repeats = 2;

  /// Throws ConfigError on an invalid combination.
  void validate() const;
  int max_dilation() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Hidden and cell maps carried between stages.
struct RecurrentState {
  ad::Var hidden;
  ad::Var cell;
};

struct LstmWeights {
  // Each gate convolves the concatenation [x, h] (2C -> C).
  ConvWeights input_gate, forget_gate, cell_gate, output_gate;
  // Per-channel peephole coefficients {C}.
  ad::Var peep_input, peep_forget, peep_output;
};

struct ResidualBlockWeights {
  int dilation = 1;
  std::vector<ConvWeights> convs;           // block_repeats entries
  std::vector<AttentionWeights> attention;  // empty when attention is kNone
};

/// One PDU's weights, shared by every stage.
struct DerainWeights {
  ModelConfig config;
  ConvWeights f_in;  // 6 -> C
  LstmWeights lstm;
  std::vector<ResidualBlockWeights> blocks;
  ConvWeights f_out;  // C -> 3

  ParameterList parameters() const;
};

DerainWeights init_derain_weights(const ModelConfig& cfg, std::uint64_t seed);

struct DerainOutput {
  ad::Var final;
  std::vector<ad::Var> intermediates;  // x^1 .. x^T
};

/// Gates exposed for inspection alongside the new state.
struct LstmStep {
  RecurrentState state;
  ad::Var input_gate, forget_gate, output_gate;
};

RecurrentState zero_state(const ModelConfig& cfg, int height, int width);

LstmStep conv_lstm_gates(const ad::Var& x, const RecurrentState& state, const DerainWeights& w);
RecurrentState conv_lstm_step(const ad::Var& x, const RecurrentState& state, const DerainWeights& w);

/// One recurrent stage: returns the stage's derained image and the updated state.
std::pair<ad::Var, RecurrentState> pdu_forward(const ad::Var& prev_derained, const ad::Var& rainy,
                                               const RecurrentState& state, const DerainWeights& w);

/// Runs cfg.stages stages from x^0 = rainy, s^0 = 0. `stages_override` > 0 replaces the stage count.
DerainOutput derain(const ad::Var& rainy, const DerainWeights& w, int stages_override = 0);

/// Number of learnable scalars; independent of the stage count.
std::size_t parameter_count(const ModelConfig& cfg);

/// Side length of the square input region that can influence one output pixel of a single stage,
/// counting only the convolutional path.
int receptive_field(const ModelConfig& cfg);

/// Smallest height/width accepted for inference: every dilated tap must be able to land inside.
int minimum_input_size(const ModelConfig& cfg);

}  // namespace sapnet
