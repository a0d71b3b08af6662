#include "sapnet/derain_net.hpp"

#include <algorithm>
#include <cmath>

#include "sapnet/errors.hpp"
#include "sapnet/ops.hpp"

namespace sapnet {

void ModelConfig::validate() const {
  if (channels < 1) throw ConfigError("model.channels must be >= 1");
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("model.kernel must be odd and >= 1");
  if (dilations.empty()) throw ConfigError("model.dilations must not be empty");
  for (int d : dilations)
    if (d < 1) throw ConfigError("model.dilations entries must be >= 1");
  if (stages < 1) throw ConfigError("model.stages must be >= 1");
  if (reduction < 1) throw ConfigError("model.reduction must be >= 1");
  if (block_repeats < 1) throw ConfigError("model.block_repeats must be >= 1");
}

int ModelConfig::max_dilation() const { return *std::max_element(dilations.begin(), dilations.end()); }

ParameterList DerainWeights::parameters() const {
  ParameterList out;
  f_in.collect(out, "f_in");
  lstm.input_gate.collect(out, "lstm.input_gate");
  lstm.forget_gate.collect(out, "lstm.forget_gate");
  lstm.cell_gate.collect(out, "lstm.cell_gate");
  lstm.output_gate.collect(out, "lstm.output_gate");
  out.push_back({"lstm.peep_input", lstm.peep_input});
  out.push_back({"lstm.peep_forget", lstm.peep_forget});
  out.push_back({"lstm.peep_output", lstm.peep_output});
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string prefix = "res" + std::to_string(b);
    for (std::size_t r = 0; r < blocks[b].convs.size(); ++r) {
      blocks[b].convs[r].collect(out, prefix + ".conv" + std::to_string(r));
      if (!blocks[b].attention.empty()) blocks[b].attention[r].collect(out, prefix + ".attn" + std::to_string(r));
    }
  }
  f_out.collect(out, "f_out");
  return out;
}

DerainWeights init_derain_weights(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const int c = cfg.channels, k = cfg.kernel;
  DerainWeights w;
  w.config = cfg;
  w.f_in = make_conv(6, c, k, Init::kUniformFanIn, rng, true);
  w.lstm.input_gate = make_conv(2 * c, c, k, Init::kUniformFanIn, rng, true);
  w.lstm.forget_gate = make_conv(2 * c, c, k, Init::kUniformFanIn, rng, true);
  w.lstm.cell_gate = make_conv(2 * c, c, k, Init::kUniformFanIn, rng, true);
  w.lstm.output_gate = make_conv(2 * c, c, k, Init::kUniformFanIn, rng, true);
  w.lstm.peep_input = ad::parameter(Tensor({c}));
  w.lstm.peep_forget = ad::parameter(Tensor({c}));
  w.lstm.peep_output = ad::parameter(Tensor({c}));
  for (int d : cfg.dilations) {
    ResidualBlockWeights block;
    block.dilation = d;
    for (int r = 0; r < cfg.block_repeats; ++r) {
      block.convs.push_back(make_conv(c, c, k, Init::kUniformFanIn, rng, true));
      if (cfg.attention != AttentionKind::kNone) {
        block.attention.push_back(make_attention_weights(c, cfg.reduction, rng));
      }
    }
    w.blocks.push_back(std::move(block));
  }
  w.f_out = make_conv(c, 3, k, Init::kUniformFanIn, rng, true);
  return w;
}

namespace {

ad::Var conv_same(const ad::Var& x, const ConvWeights& cw, int dilation) {
  const int pad = dilation * (cw.kernel() - 1) / 2;
  return ops::conv2d(x, cw.weight, cw.bias, {1, pad, dilation});
}

void check_image(const ad::Var& img, const char* what) {
  const Tensor& t = img.value();
  if (t.rank() != 3 || t.channels() != 3) {
    throw InputError(std::string(what) + " must be a [3,H,W] image, got " + t.shape_string());
  }
}

}  // namespace

RecurrentState zero_state(const ModelConfig& cfg, int height, int width) {
  return {ad::constant(Tensor({cfg.channels, height, width})), ad::constant(Tensor({cfg.channels, height, width}))};
}

LstmStep conv_lstm_gates(const ad::Var& x, const RecurrentState& state, const DerainWeights& w) {
  const Tensor& xv = x.value();
  const int c = w.config.channels;
  if (xv.rank() != 3 || xv.channels() != c) {
    throw ConfigError("conv_lstm_step: input " + xv.shape_string() + " does not have " + std::to_string(c) +
                      " channels");
  }
  if (state.hidden.shape() != xv.shape() || state.cell.shape() != xv.shape()) {
    throw ConfigError("conv_lstm_step: state " + state.hidden.value().shape_string() + " does not match input " +
                      xv.shape_string());
  }
  const ad::Var xh = ops::concat_channels({x, state.hidden});
  const LstmWeights& l = w.lstm;
  using namespace ops;
  LstmStep step;
  step.input_gate = sigmoid(add(conv_same(xh, l.input_gate, 1), channel_scale(state.cell, l.peep_input)));
  step.forget_gate = sigmoid(add(conv_same(xh, l.forget_gate, 1), channel_scale(state.cell, l.peep_forget)));
  const ad::Var candidate = ops::tanh(conv_same(xh, l.cell_gate, 1));
  const ad::Var cell = add(mul(step.forget_gate, state.cell), mul(step.input_gate, candidate));
  step.output_gate = sigmoid(add(conv_same(xh, l.output_gate, 1), channel_scale(cell, l.peep_output)));
  step.state = {mul(step.output_gate, ops::tanh(cell)), cell};
  return step;
}

RecurrentState conv_lstm_step(const ad::Var& x, const RecurrentState& state, const DerainWeights& w) {
  return conv_lstm_gates(x, state, w).state;
}

std::pair<ad::Var, RecurrentState> pdu_forward(const ad::Var& prev_derained, const ad::Var& rainy,
                                               const RecurrentState& state, const DerainWeights& w) {
  check_image(prev_derained, "previous stage output");
  check_image(rainy, "rainy image");
  if (prev_derained.shape() != rainy.shape()) {
    throw InputError("pdu_forward: previous output " + prev_derained.value().shape_string() +
                     " and rainy image " + rainy.value().shape_string() + " differ");
  }
  const ModelConfig& cfg = w.config;
  const ad::Var features = ops::relu(conv_same(ops::concat_channels({prev_derained, rainy}), w.f_in, 1));
  RecurrentState next = conv_lstm_step(features, state, w);

  ad::Var x = next.hidden;
  for (const ResidualBlockWeights& block : w.blocks) {
    const ad::Var skip = x;
    for (std::size_t r = 0; r < block.convs.size(); ++r) {
      x = conv_same(x, block.convs[r], block.dilation);
      if (!block.attention.empty()) x = apply_attention(cfg.attention, x, block.attention[r]);
      x = ops::relu(x);
    }
    x = ops::add(x, skip);
  }
  return {conv_same(x, w.f_out, 1), std::move(next)};
}

DerainOutput derain(const ad::Var& rainy, const DerainWeights& w, int stages_override) {
  check_image(rainy, "rainy image");
  if (!rainy.value().all_finite()) throw NumericError("derain: non-finite values in the input image");
  const int stages = stages_override > 0 ? stages_override : w.config.stages;
  const Tensor& r = rainy.value();
  RecurrentState state = zero_state(w.config, r.height(), r.width());
  DerainOutput out;
  ad::Var prev = rainy;
  for (int t = 1; t <= stages; ++t) {
    auto [img, next] = pdu_forward(prev, rainy, state, w);
    if (!img.value().all_finite() || !next.cell.value().all_finite()) {
      throw NumericError("derain: non-finite activations at stage " + std::to_string(t));
    }
    out.intermediates.push_back(img);
    prev = img;
    state = std::move(next);
  }
  out.final = out.intermediates.back();
  return out;
}

std::size_t parameter_count(const ModelConfig& cfg) { return scalar_count(init_derain_weights(cfg, 0).parameters()); }

int receptive_field(const ModelConfig& cfg) {
  cfg.validate();
  const int reach = (cfg.kernel - 1) / 2;
  int rf = 1 + 2 * reach;       // f_in
  rf += 2 * reach;              // LSTM gate convolutions
  for (int d : cfg.dilations) rf += cfg.block_repeats * 2 * reach * d;
  rf += 2 * reach;              // f_out
  return rf;
}

int minimum_input_size(const ModelConfig& cfg) {
  cfg.validate();
  return 2 * cfg.max_dilation() * ((cfg.kernel - 1) / 2) + 1;
}

}  // namespace sapnet
