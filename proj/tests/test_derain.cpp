#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "sapnet/derain_net.hpp"
#include "sapnet/errors.hpp"
#include "sapnet/ops.hpp"

using namespace sapnet;
using sapnet::testing::grad_check;
using sapnet::testing::project;
using sapnet::testing::random_tensor;

namespace {

std::size_t conv_count(std::size_t in, std::size_t out, std::size_t k) { return in * out * k * k + out; }

// Layer-by-layer arithmetic, written independently of the weight builder.
std::size_t count_oracle(const ModelConfig& c) {
  const std::size_t C = c.channels, k = c.kernel;
  std::size_t n = conv_count(6, C, k);
  n += 4 * conv_count(2 * C, C, k) + 3 * C;
  std::size_t attn = 0;
  if (c.attention != AttentionKind::kNone) {
    const std::size_t cr = std::max<std::size_t>(1, (C + c.reduction - 1) / c.reduction);
    attn = C * cr + cr + cr * C + C;
  }
  n += c.dilations.size() * c.block_repeats * (conv_count(C, C, k) + attn);
  n += conv_count(C, 3, k);
  return n;
}

ModelConfig tiny() {
  ModelConfig c;
  c.channels = 8;
  c.dilations = {1, 2};
  c.block_repeats = 1;
  c.attention = AttentionKind::kSE;
  c.reduction = 4;
  c.stages = 2;
  return c;
}

void zero_all(const DerainWeights& w) {
  for (auto p : w.parameters()) p.var.mutable_value().fill(0.0);
}

}  // namespace

TEST_SUITE("derain") {
  TEST_CASE("config validation") {
    ModelConfig c;
    CHECK_NOTHROW(c.validate());
    c.kernel = 4;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ModelConfig{};
    c.stages = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ModelConfig{};
    c.dilations = {1, 0};
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }

  TEST_CASE("parameter count matches the per-layer oracle") {
    const ModelConfig t = tiny();
    CHECK(parameter_count(t) == count_oracle(t));
    const ModelConfig full;
    CHECK(parameter_count(full) == count_oracle(full));
    ModelConfig none = tiny();
    none.attention = AttentionKind::kNone;
    CHECK(parameter_count(none) == count_oracle(none));
  }

  TEST_CASE("parameter count does not depend on the stage count") {
    ModelConfig a;
    a.stages = 1;
    ModelConfig b;
    b.stages = 6;
    CHECK(parameter_count(a) == parameter_count(b));
    CHECK(scalar_count(init_derain_weights(a, 1).parameters()) == scalar_count(init_derain_weights(b, 1).parameters()));
  }

  TEST_CASE("zero-weight ConvLSTM") {
    ModelConfig c = tiny();
    auto w = init_derain_weights(c, 3);
    zero_all(w);
    auto x = ad::constant(random_tensor({8, 5, 5}, 1, -1, 1));
    const auto step0 = conv_lstm_gates(x, zero_state(c, 5, 5), w);
    for (const auto* g : {&step0.input_gate, &step0.forget_gate, &step0.output_gate})
      for (double v : g->value().values()) CHECK(v == 0.5);
    for (double v : step0.state.cell.value().values()) CHECK(v == 0.0);
    for (double v : step0.state.hidden.value().values()) CHECK(v == 0.0);

    const Tensor c0 = random_tensor({8, 5, 5}, 2, -2, 2);
    RecurrentState s{ad::constant(random_tensor({8, 5, 5}, 3, -1, 1)), ad::constant(c0)};
    const auto next = conv_lstm_step(x, s, w);
    for (std::size_t i = 0; i < c0.size(); ++i) CHECK(next.cell.value()[i] == 0.5 * c0[i]);
  }

  TEST_CASE("ConvLSTM gate and hidden ranges") {
    ModelConfig c = tiny();
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      auto w = init_derain_weights(c, seed);
      auto x = ad::constant(random_tensor({8, 6, 6}, 10 + seed, -3, 3));
      RecurrentState s{ad::constant(random_tensor({8, 6, 6}, 20 + seed, -1, 1)),
                       ad::constant(random_tensor({8, 6, 6}, 30 + seed, -3, 3))};
      const auto st = conv_lstm_gates(x, s, w);
      for (const auto* g : {&st.input_gate, &st.forget_gate, &st.output_gate})
        for (double v : g->value().values()) {
          CHECK(v > 0.0);
          CHECK(v < 1.0);
        }
      for (double v : st.state.hidden.value().values()) CHECK(std::abs(v) < 1.0);
    }
  }

  TEST_CASE("ConvLSTM shape mismatch") {
    ModelConfig c = tiny();
    auto w = init_derain_weights(c, 1);
    CHECK_THROWS_AS(conv_lstm_step(ad::constant(Tensor({8, 4, 4})), zero_state(c, 5, 5), w), ConfigError);
  }

  TEST_CASE("ConvLSTM gradients") {
    ModelConfig c = tiny();
    c.channels = 4;
    auto w = init_derain_weights(c, 4);
    // Peepholes start at zero; give them values so their gradients are exercised.
    for (auto* p : {&w.lstm.peep_input, &w.lstm.peep_forget, &w.lstm.peep_output})
      p->mutable_value() = random_tensor({4}, 8, -0.5, 0.5);
    auto x = ad::parameter(random_tensor({4, 6, 6}, 5, -1, 1));
    auto h = ad::parameter(random_tensor({4, 6, 6}, 6, -1, 1));
    auto cell = ad::parameter(random_tensor({4, 6, 6}, 7, -1, 1));
    ParameterList ps{{"x", x}, {"h", h}, {"c", cell}};
    for (const auto& p : w.parameters())
      if (p.name.rfind("lstm.", 0) == 0) ps.push_back(p);
    const auto r = grad_check(ps, [&] {
      const auto s = conv_lstm_step(x, RecurrentState{h, cell}, w);
      return ops::add(project(s.hidden, 1), project(s.cell, 2));
    });
    CHECK(r.rel_error < 1e-6);
  }

  TEST_CASE("output shapes and intermediates") {
    ModelConfig c = tiny();
    c.stages = 3;
    auto w = init_derain_weights(c, 1);
    auto x = ad::constant(random_tensor({3, 9, 11}, 1));
    const auto out = derain(x, w);
    REQUIRE(out.intermediates.size() == 3);
    CHECK(out.final.value() == out.intermediates.back().value());
    CHECK(out.final.value().same_shape(x.value()));
    CHECK(derain(x, w, 1).intermediates.size() == 1);
  }

  TEST_CASE("one stage equals a single PDU call") {
    ModelConfig c = tiny();
    c.stages = 1;
    auto w = init_derain_weights(c, 2);
    auto x = ad::constant(random_tensor({3, 8, 8}, 2));
    const auto [y, s] = pdu_forward(x, x, zero_state(c, 8, 8), w);
    CHECK(derain(x, w).final.value() == y.value());
  }

  TEST_CASE("deterministic") {
    ModelConfig c = tiny();
    auto w1 = init_derain_weights(c, 5);
    auto w2 = init_derain_weights(c, 5);
    auto x = ad::constant(random_tensor({3, 10, 10}, 3));
    CHECK(derain(x, w1).final.value() == derain(x, w2).final.value());
    CHECK(derain(x, w1).final.value() == derain(x, w1).final.value());
  }

  TEST_CASE("input errors") {
    ModelConfig c = tiny();
    auto w = init_derain_weights(c, 1);
    CHECK_THROWS_AS(pdu_forward(ad::constant(Tensor({3, 8, 8})), ad::constant(Tensor({3, 8, 9})), zero_state(c, 8, 8), w),
                    InputError);
    Tensor bad({3, 8, 8});
    bad[5] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(derain(ad::constant(bad), w), NumericError);
    CHECK(minimum_input_size(ModelConfig{}) == 33);
  }

  TEST_CASE("receptive field closed form") {
    ModelConfig c;
    CHECK(receptive_field(c) == 1 + 2 + 2 + 2 * 2 * (1 + 2 + 4 + 8 + 16) + 2);
    c.dilations = {1};
    c.block_repeats = 1;
    CHECK(receptive_field(c) == 9);
  }

  TEST_CASE("full tiny network gradients") {
    ModelConfig c = tiny();
    c.channels = 4;
    c.attention = AttentionKind::kCRA;
    c.reduction = 2;
    auto w = init_derain_weights(c, 6);
    auto x = ad::parameter(random_tensor({3, 16, 16}, 7));
    ParameterList ps = w.parameters();
    ps.push_back({"x", x});
    const auto r = grad_check(ps, [&] { return project(derain(x, w).final, 3); }, 1e-6, 12);
    CHECK(r.rel_error < 1e-3);
  }
}
