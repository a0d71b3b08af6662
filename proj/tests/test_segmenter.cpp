#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "gradcheck.hpp"
#include "sapnet/errors.hpp"
#include "sapnet/losses.hpp"
#include "sapnet/ops.hpp"
#include "sapnet/segmenter.hpp"

using namespace sapnet;
using sapnet::testing::grad_check;
using sapnet::testing::project;
using sapnet::testing::random_tensor;

namespace {

SegConfig small_seg() {
  SegConfig c;
  c.decoder_channels = 16;
  c.encoder_width = 4;
  c.num_classes = 5;
  return c;
}

}  // namespace

TEST_SUITE("segmenter") {
  TEST_CASE("same seed gives identical weights, another seed differs") {
    const auto a = build_segmenter(small_seg(), 3);
    const auto b = build_segmenter(small_seg(), 3);
    const auto c = build_segmenter(small_seg(), 4);
    const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
    REQUIRE(pa.size() == pb.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
      CHECK(pa[i].name == pb[i].name);
      CHECK(pa[i].var.value() == pb[i].var.value());
      if (!(pa[i].var.value() == pc[i].var.value())) any_diff = true;
    }
    CHECK(any_diff);
  }

  TEST_CASE("all segmenter tensors are frozen") {
    for (const auto& p : build_segmenter(small_seg(), 1).parameters()) CHECK_FALSE(p.var.requires_grad());
  }

  TEST_CASE("decoder weights follow the declared Gaussian") {
    const auto w = build_segmenter(SegConfig{}, 7);
    std::vector<double> xs;
    for (const auto& p : w.decoder_parameters()) {
      const bool is_bias = p.name.size() > 5 && p.name.compare(p.name.size() - 5, 5, ".bias") == 0;
      if (is_bias) {
        for (double v : p.var.value().values()) CHECK(v == 0.0);
      } else {
        xs.insert(xs.end(), p.var.value().values().begin(), p.var.value().values().end());
      }
    }
    REQUIRE(xs.size() >= 100000);
    double mean = 0.0;
    for (double v : xs) mean += v;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double v : xs) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(xs.size() - 1));
    CHECK(std::abs(mean) < 3.0 * 0.05 / std::sqrt(static_cast<double>(xs.size())));
    CHECK(std::abs(sd - 0.05) < 0.05 * 0.05);
  }

  TEST_CASE("probabilities cover the input and sum to one") {
    const auto w = build_segmenter(small_seg(), 2);
    for (auto hw : {std::pair{32, 32}, std::pair{20, 45}, std::pair{7, 9}}) {
      const auto p = segment(ad::constant(random_tensor({3, hw.first, hw.second}, 5)), w).value();
      REQUIRE(p.channels() == 5);
      CHECK(p.height() == hw.first);
      CHECK(p.width() == hw.second);
      for (int y = 0; y < p.height(); ++y)
        for (int x = 0; x < p.width(); ++x) {
          double s = 0.0;
          for (int c = 0; c < p.channels(); ++c) {
            CHECK(p.at(c, y, x) >= 0.0);
            s += p.at(c, y, x);
          }
          CHECK(std::abs(s - 1.0) < 1e-5);
        }
    }
  }

  TEST_CASE("gradient passes through the frozen network") {
    const auto w = build_segmenter(small_seg(), 9);
    auto x = ad::parameter(random_tensor({3, 32, 32}, 10));
    auto loss = [&] { return project(segment(x, w), 11); };
    ad::backward(loss());
    REQUIRE(x.has_grad());
    double norm = 0.0;
    for (double g : x.grad().values()) norm += g * g;
    CHECK(norm > 0.0);
    // Finite-difference probe on a single pixel.
    const std::size_t k = 3 * 32 + 17;
    const double analytic = x.grad()[k];
    const double h = 1e-6, orig = x.value()[k];
    double plus, minus;
    {
      ad::NoGradGuard guard;
      x.mutable_value()[k] = orig + h;
      plus = loss().item();
      x.mutable_value()[k] = orig - h;
      minus = loss().item();
      x.mutable_value()[k] = orig;
    }
    const double numeric = (plus - minus) / (2 * h);
    CHECK(numeric != 0.0);
    CHECK(analytic == doctest::Approx(numeric).epsilon(1e-4));
    for (const auto& p : w.parameters()) CHECK_FALSE(p.var.has_grad());
  }

  TEST_CASE("segmenter gradient check on a sampled subset") {
    auto cfg = small_seg();
    cfg.decoder_channels = 4;
    const auto w = build_segmenter(cfg, 12);
    auto x = ad::parameter(random_tensor({3, 16, 16}, 13));
    const auto r = grad_check({{"x", x}}, [&] { return focal_seg_loss(segment(x, w)); }, 1e-6, 40);
    CHECK(r.rel_error < 1e-3);
  }

  TEST_CASE("errors") {
    const auto w = build_segmenter(small_seg(), 1);
    Tensor bad({3, 32, 32});
    bad[0] = std::nan("");
    CHECK_THROWS_AS(segment(ad::constant(bad), w), NumericError);
    SegConfig c = small_seg();
    c.num_classes = 1;
    CHECK_THROWS_AS(build_segmenter(c, 1), ConfigError);
    c = small_seg();
    c.decoder_init_std = 0.0;
    CHECK_THROWS_AS(build_segmenter(c, 1), ConfigError);
    CHECK_THROWS_AS(parse_encoder_kind("vit"), ConfigError);
  }

  TEST_CASE("missing pretrained encoder names the seeded fallback") {
    SegConfig c = small_seg();
    c.encoder = EncoderKind::kPretrainedResnet101;
    c.encoder_weights = "/nonexistent/resnet101.sapnet";
    try {
      build_segmenter(c, 1);
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("seeded_random") != std::string::npos);
    }
  }
}

TEST_SUITE("focal") {
  TEST_CASE("fully confident map") {
    Tensor p({3, 4, 4}, 0.0);
    for (std::size_t i = 0; i < p.plane(); ++i) p.channel_ptr(1)[i] = 1.0 - 1e-7;
    CHECK(focal_seg_loss(ad::constant(p)).item() < 1e-12);
  }

  TEST_CASE("uniform 21-class map") {
    Tensor p({21, 3, 5}, 1.0 / 21.0);
    const double expected = (20.0 / 21.0) * (20.0 / 21.0) * std::log(21.0);
    CHECK(focal_seg_loss(ad::constant(p)).item() == doctest::Approx(expected).epsilon(1e-12));
  }

  TEST_CASE("gradient on 4x4 three-class maps") {
    auto logits = ad::parameter(random_tensor({3, 4, 4}, 3, -2, 2));
    const auto r = grad_check({{"logits", logits}}, [&] { return focal_seg_loss(ops::softmax_channels(logits)); });
    CHECK(r.rel_error < 1e-6);
  }

  TEST_CASE("class permutation does not change the loss") {
    auto logits = ad::constant(random_tensor({4, 5, 5}, 4, -2, 2));
    const Tensor p = ops::softmax_channels(logits).value();
    Tensor q(p.shape());
    const int perm[4] = {2, 0, 3, 1};
    for (int c = 0; c < 4; ++c)
      std::copy(p.channel_ptr(perm[c]), p.channel_ptr(perm[c]) + p.plane(), q.channel_ptr(c));
    CHECK(focal_seg_loss(ad::constant(p)).item() == doctest::Approx(focal_seg_loss(ad::constant(q)).item()).epsilon(1e-14));
  }

  TEST_CASE("raising a pixel's top probability lowers the loss") {
    Tensor p({3, 2, 2}, 0.0);
    for (std::size_t i = 0; i < 4; ++i) {
      p.channel_ptr(0)[i] = 0.5;
      p.channel_ptr(1)[i] = 0.3;
      p.channel_ptr(2)[i] = 0.2;
    }
    double prev = focal_seg_loss(ad::constant(p)).item();
    for (double top : {0.6, 0.7, 0.9, 0.99}) {
      p.channel_ptr(0)[2] = top;
      p.channel_ptr(1)[2] = (1 - top) * 0.6;
      p.channel_ptr(2)[2] = (1 - top) * 0.4;
      const double now = focal_seg_loss(ad::constant(p)).item();
      CHECK(now < prev);
      prev = now;
    }
  }
}
