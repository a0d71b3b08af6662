// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is the number of failures.
// With arguments, only the listed criteria run (e.g. `sapnet_acceptance 4 7`).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>
#include <string>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "sapnet/attention.hpp"
#include "sapnet/derain_net.hpp"
#include "sapnet/losses.hpp"
#include "sapnet/metrics.hpp"
#include "sapnet/ops.hpp"
#include "sapnet/ssim.hpp"
#include "temp_dir.hpp"

using namespace sapnet;
using namespace sapnet::testing;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------------------------
// 1. Gradient suite

Outcome gradient_suite() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  auto check = [&](const std::string& name, const GradCheckResult& r) {
    worst = std::max(worst, r.rel_error);
    o.require(r.rel_error < 1e-3 && r.analytic_norm > 0.0, name + " rel " + fmt("%.2e", r.rel_error));
  };

  {
    auto d = ad::parameter(random_tensor({3, 12, 12}, 1));
    auto g = ad::constant(random_tensor({3, 12, 12}, 2));
    check("negative_ssim", grad_check({{"d", d}}, [&] { return negative_ssim_loss(d, g); }));
  }
  ExtractorConfig ec;
  ec.width = 4;
  const auto fe = build_feature_extractor(ec, 3);
  {
    auto d = ad::parameter(random_tensor({3, 16, 16}, 4));
    auto g = ad::constant(random_tensor({3, 16, 16}, 5));
    auto r = ad::constant(random_tensor({3, 16, 16}, 6));
    check("pcl", grad_check({{"d", d}}, [&] { return perceptual_contrastive_loss(d, g, r, fe, {0.25, 0.5, 1.0}); }));
    check("lpisl", grad_check({{"d", d}}, [&] { return lpisl(d, g, fe, 16); }));
  }
  {
    auto logits = ad::parameter(random_tensor({3, 4, 4}, 7, -2, 2));
    check("focal", grad_check({{"logits", logits}}, [&] { return focal_seg_loss(ops::softmax_channels(logits)); }));
  }
  {
    std::mt19937_64 rng(8);
    auto w = make_attention_weights(8, 2, rng);
    auto x = ad::parameter(random_tensor({8, 4, 4}, 9, -1, 1));
    ParameterList ps{{"x", x}};
    w.collect(ps, "attn");
    for (auto kind : {AttentionKind::kSE, AttentionKind::kCA, AttentionKind::kCRA})
      check("attention_" + to_string(kind), grad_check(ps, [&] { return project(apply_attention(kind, x, w), 10); }));
  }
  ModelConfig m = tiny_model();
  m.channels = 4;
  m.reduction = 2;
  {
    auto w = init_derain_weights(m, 11);
    for (auto* p : {&w.lstm.peep_input, &w.lstm.peep_forget, &w.lstm.peep_output})
      p->mutable_value() = random_tensor({4}, 12, -0.5, 0.5);
    auto x = ad::parameter(random_tensor({4, 8, 8}, 13, -1, 1));
    auto h = ad::parameter(random_tensor({4, 8, 8}, 14, -1, 1));
    auto c = ad::parameter(random_tensor({4, 8, 8}, 15, -1, 1));
    ParameterList ps{{"x", x}, {"h", h}, {"c", c}};
    for (const auto& p : w.parameters())
      if (p.name.rfind("lstm.", 0) == 0) ps.push_back(p);
    check("conv_lstm", grad_check(ps, [&] {
            const auto s = conv_lstm_step(x, RecurrentState{h, c}, w);
            return ops::add(project(s.hidden, 16), project(s.cell, 17));
          }));
  }
  {
    auto w = init_derain_weights(m, 18);
    auto x = ad::parameter(random_tensor({3, 16, 16}, 19));
    ParameterList ps = w.parameters();
    ps.push_back({"x", x});
    check("derain_network", grad_check(ps, [&] { return project(derain(x, w).final, 20); }, 1e-6, 16));
  }
  const double secs = seconds_since(t0);
  o.require(secs < 300.0, "runtime");
  o.note("worst rel err " + fmt("%.2e", worst) + " over 10 checks, " + fmt("%.1f s", secs));
  return o;
}

// ---------------------------------------------------------------------------------------------
// 2. Loss identities

Outcome loss_identities() {
  Outcome o;
  const auto x = ad::constant(random_tensor({3, 16, 16}, 1));
  const auto y = ad::constant(random_tensor({3, 16, 16}, 2));
  const auto z = ad::constant(random_tensor({3, 16, 16}, 3));
  const double s = negative_ssim_loss(x, x).item();
  o.require(std::abs(s + 1.0) <= 1e-6, "negative_ssim(x,x) = " + fmt("%.9f", s));

  ExtractorConfig ec;
  ec.width = 4;
  const auto fe = build_feature_extractor(ec, 4);
  const double p = perceptual_contrastive_loss(x, x, y, fe, {0.25, 0.5, 1.0}).item();
  o.require(std::abs(p) <= 1e-6, "pcl(xD=xG) = " + fmt("%.3e", p));
  const double l = lpisl(x, x, fe, 32).item();
  o.require(l == 0.0, "lpisl(x,x) = " + fmt("%.3e", l));

  Tensor conf({21, 4, 4}, 0.0);
  for (std::size_t i = 0; i < conf.plane(); ++i) conf.channel_ptr(5)[i] = 1.0 - 1e-7;
  const double f = focal_seg_loss(ad::constant(conf)).item();
  o.require(f < 1e-12, "focal(confident) = " + fmt("%.3e", f));

  const auto seg = build_segmenter(tiny_seg(), 5);
  LossWeights lw;
  lw.lpisl_size = 32;
  const auto probs = segment(y, seg);
  const auto t = total_loss(y, z, x, probs, fe, lw).values();
  const double recomposed = lw.lambda1 * negative_ssim_loss(y, z).item() + lw.lambda2 * focal_seg_loss(probs).item() +
                            lw.lambda3 * perceptual_contrastive_loss(y, z, x, fe, lw.omega).item() +
                            lw.lambda4 * lpisl(y, z, fe, lw.lpisl_size).item();
  o.require(t.total == recomposed, "total recomposition");
  o.note("ssim(x,x)=" + fmt("%.12f", -s) + ", pcl=" + fmt("%.1e", p) + ", lpisl=" + fmt("%.1e", l) +
         ", focal=" + fmt("%.1e", f) + ", total exact");
  return o;
}

// ---------------------------------------------------------------------------------------------
// 3. Oracle equivalence

double naive_ssim(const Tensor& a, const Tensor& b) {
  const int n = 11;
  const double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
  std::vector<double> g(n);
  double gs = 0.0;
  for (int i = 0; i < n; ++i) gs += g[i] = std::exp(-((i - 5) * (i - 5)) / (2 * sigma * sigma));
  double total = 0.0;
  int count = 0;
  for (int c = 0; c < a.channels(); ++c)
    for (int y = 0; y + n <= a.height(); ++y)
      for (int x = 0; x + n <= a.width(); ++x) {
        double ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            const double w = g[i] * g[j] / (gs * gs);
            const double va = a.at(c, y + i, x + j), vb = b.at(c, y + i, x + j);
            ma += w * va;
            mb += w * vb;
            aa += w * va * va;
            bb += w * vb * vb;
            ab += w * va * vb;
          }
        const double sa = aa - ma * ma, sb = bb - mb * mb, sab = ab - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * sab + c2)) / ((ma * ma + mb * mb + c1) * (sa + sb + c2));
        ++count;
      }
  return total / count;
}

std::size_t param_oracle(const ModelConfig& c) {
  auto conv = [&](std::size_t in, std::size_t out) { return in * out * c.kernel * c.kernel + out; };
  const std::size_t C = c.channels;
  std::size_t n = conv(6, C) + 4 * conv(2 * C, C) + 3 * C + conv(C, 3);
  std::size_t attn = 0;
  if (c.attention != AttentionKind::kNone) {
    const std::size_t r = std::max<std::size_t>(1, (C + c.reduction - 1) / c.reduction);
    attn = (C * r + r) + (r * C + C);
  }
  return n + c.dilations.size() * c.block_repeats * (conv(C, C) + attn);
}

Outcome oracle_equivalence() {
  Outcome o;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Tensor a = random_tensor({3, 16, 16}, 100 + s);
    Tensor b = random_tensor({3, 16, 16}, 200 + s);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = 0.5 * a[i] + 0.5 * b[i];
    worst = std::max(worst, std::abs(ssim_metric(a, b) - naive_ssim(a, b)));
  }
  o.require(worst < 1e-6, "ssim oracle diff " + fmt("%.2e", worst));

  ModelConfig tiny;
  tiny.channels = 8;
  tiny.dilations = {1, 2};
  tiny.block_repeats = 1;
  tiny.attention = AttentionKind::kSE;
  tiny.reduction = 4;
  const ModelConfig full;
  o.require(parameter_count(tiny) == param_oracle(tiny), "tiny parameter count");
  o.require(parameter_count(full) == param_oracle(full), "full parameter count");

  const Tensor img = random_tensor({3, 16, 16}, 7, 0.0, 0.9);
  Tensor shifted = img;
  for (double& v : shifted.values()) v += 16.0 / 255.0;
  const double db = psnr(img, shifted);
  o.require(std::abs(db - 24.05) <= 0.01, "psnr " + fmt("%.4f", db));
  o.note("ssim max diff " + fmt("%.1e", worst) + ", params tiny=" + std::to_string(parameter_count(tiny)) +
         " full=" + std::to_string(parameter_count(full)) + ", psnr=" + fmt("%.4f dB", db));
  return o;
}

// ---------------------------------------------------------------------------------------------
// 4. Receptive field

// Footprint of d(output pixel)/d(input) for one PDU stage with strictly positive weights and inputs,
// so that no contributions can cancel.
bool footprint_matches(const std::vector<int>& dilations, std::string& info) {
  ModelConfig m;
  m.channels = 2;
  m.dilations = dilations;
  m.attention = AttentionKind::kNone;
  m.stages = 1;
  const int rf = receptive_field(m);
  const int side = rf + 12, cy = side / 2, cx = side / 2 - 3;
  auto w = init_derain_weights(m, 1);
  std::uint64_t seed = 50;
  for (auto p : w.parameters()) p.var.mutable_value() = random_tensor(p.var.shape(), seed++, 0.01, 0.05);
  auto x = ad::parameter(random_tensor({3, side, side}, 2, 0.1, 0.9));
  const auto [y, state] = pdu_forward(x, x, zero_state(m, side, side), w);
  Tensor pick(y.shape());
  pick.at(0, cy, cx) = 1.0;
  ad::backward(ops::sum(ops::mul(y, ad::constant(pick))));
  const int half = rf / 2;
  int mismatches = 0, support = 0;
  for (int yy = 0; yy < side; ++yy)
    for (int xx = 0; xx < side; ++xx) {
      bool nonzero = false;
      for (int c = 0; c < 3; ++c) nonzero = nonzero || x.grad().at(c, yy, xx) != 0.0;
      const bool inside = std::abs(yy - cy) <= half && std::abs(xx - cx) <= half;
      support += nonzero;
      mismatches += nonzero != inside;
    }
  info += "[" + std::to_string(dilations.size()) + " rates] RF=" + std::to_string(rf) + " support=" +
          std::to_string(support) + "/" + std::to_string(rf * rf) + (dilations.size() == 5 ? "" : ", ");
  return mismatches == 0;
}

Outcome receptive_field_check() {
  Outcome o;
  std::string info;
  for (const auto& d : {std::vector<int>{1}, std::vector<int>{1, 2}, std::vector<int>{1, 2, 4, 8, 16}})
    o.require(footprint_matches(d, info), "footprint for " + std::to_string(d.size()) + " rates");
  o.note(info);
  return o;
}

// ---------------------------------------------------------------------------------------------
// 5. Architecture invariants

Outcome architecture_invariants() {
  Outcome o;
  ModelConfig one;
  one.stages = 1;
  ModelConfig six;
  six.stages = 6;
  o.require(parameter_count(one) == parameter_count(six), "parameter count vs stages");

  TinyRun run(5, 2, 24);
  const auto data = synthetic_pairs(4, 24, 2);
  std::vector<Tensor> before;
  for (const auto& p : run.seg->parameters()) before.push_back(p.var.value());
  for (const auto& p : run.fe->parameters()) before.push_back(p.var.value());
  const auto res = train(data, run.setup);
  std::vector<Tensor> after;
  for (const auto& p : run.seg->parameters()) after.push_back(p.var.value());
  for (const auto& p : run.fe->parameters()) after.push_back(p.var.value());
  o.require(res.log.size() == 10, "10 steps");
  o.require(before == after, "frozen networks unchanged");

  auto w = init_derain_weights(tiny_model(), 3);
  ad::backward(focal_seg_loss(segment(derain(ad::constant(data[0].rainy), w).final, *run.seg)));
  double norm = 0.0;
  for (const auto& p : w.parameters())
    if (p.var.has_grad())
      for (double g : p.var.grad().values()) norm += g * g;
  o.require(norm > 0.0, "seg gradient reaches derain weights");
  o.note("params " + std::to_string(parameter_count(one)) + " for 1 and 6 stages, frozen tensors bitwise equal after " +
         std::to_string(res.log.size()) + " steps, |dseg/dw|=" + fmt("%.3e", std::sqrt(norm)));
  return o;
}

// ---------------------------------------------------------------------------------------------
// 6. Schedule

bool within_ulps(double a, double b, int ulps) {
  double x = a;
  for (int i = 0; i < ulps && x < b; ++i) x = std::nextafter(x, b);
  for (int i = 0; i < ulps && x > b; ++i) x = std::nextafter(x, b);
  return x == b;
}

Outcome schedule() {
  Outcome o;
  TrainConfig c;
  const int epochs[4] = {0, 30, 50, 80};
  const double expected[4] = {1e-3, 2e-4, 4e-5, 8e-6};
  std::string values;
  for (int i = 0; i < 4; ++i) {
    const double lr = lr_at(epochs[i], c);
    values += fmt("%.17g ", lr);
    o.require(within_ulps(lr, expected[i], 4), "epoch " + std::to_string(epochs[i]));
  }
  std::set<double> distinct;
  for (int e = 0; e < c.epochs; ++e) distinct.insert(lr_at(e, c));
  o.require(distinct.size() == 4, "4 distinct rates");
  o.note("lr(0,30,50,80) = " + values + "(double rounding; within 4 ulp)");
  return o;
}

// ---------------------------------------------------------------------------------------------
// 7, 8. Tiny-overfit smoke test and determinism

constexpr int kSmokeSteps = 200;
constexpr int kSmokeSize = 32;

struct SmokeRun {
  TinyRun run{kSmokeSteps, 4, kSmokeSize, 5};
  std::vector<PairedSample> data = synthetic_pairs(4, kSmokeSize, 1);
  SmokeRun() { run.setup.train.decay_epochs = {100, 150, 180}; }
};

double mean_psnr(const std::vector<PairedSample>& data, const DerainWeights* w) {
  ad::NoGradGuard guard;
  double s = 0.0;
  for (const auto& p : data) {
    ImageTensor y = w ? derain(ad::constant(p.rainy), *w).final.value() : p.rainy;
    for (double& v : y.values()) v = std::clamp(v, 0.0, 1.0);
    s += psnr(y, p.clean);
  }
  return s / static_cast<double>(data.size());
}

Outcome smoke_test() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  SmokeRun smoke;
  const auto res = train(smoke.data, smoke.run.setup);
  const double secs = seconds_since(t0);
  const double first = res.log.front().losses.total, last = res.log.back().losses.total;
  // total >= -lambda1 because SSIM <= 1 and the other terms are nonnegative.
  const double floor = -smoke.run.setup.loss.lambda1;
  const double before = mean_psnr(smoke.data, nullptr), after = mean_psnr(smoke.data, &res.checkpoint.weights);
  o.require(res.log.size() == static_cast<std::size_t>(kSmokeSteps), "step count");
  o.require(last <= 0.5 * first, "final loss <= 50% of initial");
  o.require(last - floor <= 0.5 * (first - floor), "loss excess over its lower bound halved");
  o.require(after - before >= 3.0, "psnr gain >= 3 dB");
  o.require(secs < 600.0, "runtime < 10 min");

  // Later stages should not be worse than the first one on the training pairs.
  double s_first = 0.0, s_last = 0.0;
  {
    ad::NoGradGuard guard;
    for (const auto& p : smoke.data) {
      const auto out = derain(ad::constant(p.rainy), res.checkpoint.weights);
      s_first += ssim_metric(out.intermediates.front().value(), p.clean);
      s_last += ssim_metric(out.final.value(), p.clean);
    }
  }
  o.require(s_last >= s_first, "final stage SSIM >= first stage SSIM");
  o.note("loss " + fmt("%.4f", first) + " -> " + fmt("%.4f", last) + ", psnr " + fmt("%.2f", before) + " -> " +
         fmt("%.2f dB", after) + ", stage ssim " + fmt("%.4f", s_first / 4) + " -> " + fmt("%.4f", s_last / 4) + ", " +
         fmt("%.1f s", secs));
  return o;
}

Outcome determinism() {
  Outcome o;
  SmokeRun a, b;
  const auto ra = train(a.data, a.run.setup);
  const auto rb = train(b.data, b.run.setup);
  double worst = 0.0;
  for (std::size_t i = 0; i < ra.log.size(); ++i)
    worst = std::max(worst, std::abs(ra.log[i].losses.total - rb.log[i].losses.total) / std::abs(ra.log[i].losses.total));
  o.require(ra.log.size() == rb.log.size() && worst <= 1e-6, "repeat trace " + fmt("%.2e", worst));

  TempDir dir;
  SmokeRun c;
  TrainOptions half;
  half.out_dir = dir.path();
  half.stop_after_epoch = kSmokeSteps / 2;
  train(c.data, c.run.setup, std::nullopt, half);
  SmokeRun d;
  TrainOptions rest;
  rest.out_dir = dir.path();
  const auto resumed =
      train(d.data, d.run.setup, load_checkpoint(dir.path() / "checkpoint_latest.bin", d.run.setup.model), rest);
  const std::size_t offset = kSmokeSteps / 2;
  double worst_resume = 0.0;
  o.require(resumed.log.size() == ra.log.size() - offset, "resumed step count");
  for (std::size_t i = 0; i < resumed.log.size() && offset + i < ra.log.size(); ++i) {
    const double x = ra.log[offset + i].losses.total, y = resumed.log[i].losses.total;
    worst_resume = std::max(worst_resume, std::abs(x - y) / std::abs(x));
  }
  o.require(worst_resume <= 1e-6, "resume trace " + fmt("%.2e", worst_resume));
  o.note("max relative step difference: repeat " + fmt("%.1e", worst) + ", resume at step " + std::to_string(offset) +
         " " + fmt("%.1e", worst_resume));
  return o;
}

// ---------------------------------------------------------------------------------------------
// 9. Ablation harness

Outcome ablation_parity() {
  Outcome o;
  std::set<std::string> hashes;
  std::string rows;
  for (const auto& name : ablation_presets()) {
    RunConfig c;
    apply_ablation_preset(c, name);
    const auto& t = c.train.toggles;
    o.require(c.model.attention == AttentionKind::kCRA, name + " uses CRA");
    rows += name + ":" + std::string(t.use_seg ? "S" : "-") + (t.use_pcl ? "P" : "-") + (t.use_dilation ? "D" : "-") +
            (t.use_decay ? "L" : "-") + (t.use_lpisl ? "I" : "-") + " ";
    hashes.insert(config_hash(c));
  }
  o.require(hashes.size() == 6, "6 distinct hashes");
  o.note(rows + "-> " + std::to_string(hashes.size()) + " distinct hashes");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<std::string, std::function<Outcome()>>> criteria{
      {1, {"gradient suite", gradient_suite}},
      {2, {"loss identities", loss_identities}},
      {3, {"oracle equivalence", oracle_equivalence}},
      {4, {"receptive field", receptive_field_check}},
      {5, {"architecture invariants", architecture_invariants}},
      {6, {"learning-rate schedule", schedule}},
      {7, {"tiny-overfit smoke test", smoke_test}},
      {8, {"determinism and resume", determinism}},
      {9, {"ablation harness", ablation_parity}},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& [id, entry] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome out;
    try {
      out = entry.second();
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail = std::string("exception: ") + e.what();
    }
    failures += !out.pass;
    std::printf("%s [%d] %s: %s\n", out.pass ? "PASS" : "FAIL", id, entry.first.c_str(), out.detail.c_str());
    std::fflush(stdout);
  }
  return failures;
}
