#include "sapnet/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "sapnet/config.hpp"
#include "sapnet/errors.hpp"

namespace sapnet {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(base_lr > 0.0)) throw ConfigError("train.base_lr must be > 0");
  if (!(decay_factor > 0.0 && decay_factor < 1.0)) throw ConfigError("train.decay_factor must lie in (0,1)");
  for (std::size_t i = 1; i < decay_epochs.size(); ++i) {
    if (decay_epochs[i] <= decay_epochs[i - 1]) throw ConfigError("train.decay_epochs must be strictly increasing");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train.beta1 and train.beta2 must lie in [0,1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be > 0");
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (!cfg.toggles.use_decay) return cfg.base_lr;
  double lr = cfg.base_lr;
  for (int e : cfg.decay_epochs)
    if (e <= epoch) lr *= cfg.decay_factor;
  return lr;
}

ModelConfig effective_model(const ModelConfig& model, const TrainToggles& toggles) {
  ModelConfig m = model;
  if (!toggles.use_dilation) std::fill(m.dilations.begin(), m.dilations.end(), 1);
  return m;
}

// --- optimizer -------------------------------------------------------------------------------

Adam::Adam(ParameterList params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    state_.m.push_back(Tensor::zeros_like(p.var.value()));
    state_.v.push_back(Tensor::zeros_like(p.var.value()));
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

void Adam::set_state(AdamState s) {
  if (s.m.size() != params_.size() || s.v.size() != params_.size()) {
    throw ConfigError("optimizer state has " + std::to_string(s.m.size()) + " slots for " +
                      std::to_string(params_.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!s.m[i].same_shape(params_[i].var.value()) || !s.v[i].same_shape(params_[i].var.value())) {
      throw ConfigError("optimizer state shape mismatch for '" + params_[i].name + "'");
    }
  }
  state_ = std::move(s);
}

void Adam::step(double lr) {
  ++state_.step;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(state_.step));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(state_.step));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ad::Var var = params_[i].var;
    if (!var.has_grad()) continue;
    const Tensor& g = var.grad();
    Tensor& p = var.mutable_value();
    Tensor& m = state_.m[i];
    Tensor& v = state_.v[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      p[k] -= lr * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
  zero_grad();
}

// --- checkpoints -----------------------------------------------------------------------------

std::string model_config_text(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "model.channels=" << cfg.channels << "\n"
     << "model.kernel=" << cfg.kernel << "\n"
     << "model.dilations=" << kv::format_int_list(cfg.dilations) << "\n"
     << "model.stages=" << cfg.stages << "\n"
     << "model.attention=" << to_string(cfg.attention) << "\n"
     << "model.reduction=" << cfg.reduction << "\n"
     << "model.block_repeats=" << cfg.block_repeats << "\n";
  return os.str();
}

ModelConfig parse_model_config_text(const std::string& text) {
  RunConfig run;
  for (const auto& [key, value] : kv::parse_lines(text)) {
    if (!key.starts_with("model.")) throw ConfigError("model config: unexpected key '" + key + "'");
    set_config_value(run, key, value);
  }
  run.model.validate();
  return run.model;
}

Archive to_archive(const Checkpoint& ck) {
  Archive a;
  a.put_text("config", model_config_text(ck.weights.config));
  const ParameterList params = ck.weights.parameters();
  for (const auto& p : params) a.put_tensor("derain_weights/" + p.name, p.var.value());
  a.put_int("optimizer_state/step", ck.optimizer.step);
  if (!ck.optimizer.m.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      a.put_tensor("optimizer_state/m/" + params[i].name, ck.optimizer.m.at(i));
      a.put_tensor("optimizer_state/v/" + params[i].name, ck.optimizer.v.at(i));
    }
  }
  a.put_int("epoch", ck.epoch);
  a.put_int("rng_seed", static_cast<std::int64_t>(ck.rng_seed));
  a.put_text("run_config", ck.run_config);
  return a;
}

Checkpoint from_archive(const Archive& a) {
  Checkpoint ck;
  const ModelConfig cfg = parse_model_config_text(a.text("config"));
  ck.weights = init_derain_weights(cfg, 0);
  const ParameterList params = ck.weights.parameters();
  const auto stored = a.keys_with_prefix("derain_weights/");
  if (stored.size() != params.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(stored.size()) + " weight tensors, config implies " +
                      std::to_string(params.size()));
  }
  for (const auto& p : params) {
    const Tensor& t = a.tensor("derain_weights/" + p.name);
    if (!t.same_shape(p.var.value())) {
      throw ConfigError("checkpoint tensor '" + p.name + "' has shape " + t.shape_string() + ", config implies " +
                        p.var.value().shape_string());
    }
    ad::Var v = p.var;
    v.mutable_value() = t;
  }
  ck.optimizer.step = a.integer("optimizer_state/step");
  if (a.contains("optimizer_state/m/" + params.front().name)) {
    for (const auto& p : params) {
      ck.optimizer.m.push_back(a.tensor("optimizer_state/m/" + p.name));
      ck.optimizer.v.push_back(a.tensor("optimizer_state/v/" + p.name));
    }
  }
  ck.epoch = static_cast<int>(a.integer("epoch"));
  ck.rng_seed = static_cast<std::uint64_t>(a.integer("rng_seed"));
  if (a.contains("run_config")) ck.run_config = a.text("run_config");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) { to_archive(ck).save(path); }

Checkpoint load_checkpoint(const std::filesystem::path& path) { return from_archive(Archive::load(path)); }

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  const Archive a = Archive::load(path);
  const ModelConfig stored = parse_model_config_text(a.text("config"));
  if (!(stored == expected)) {
    throw ConfigError("checkpoint '" + path.string() + "' was written for a different model configuration:\n" +
                      model_config_text(stored) + "expected:\n" + model_config_text(expected));
  }
  return from_archive(a);
}

// --- log records ------------------------------------------------------------------------------

std::string TrainLogRecord::to_line() const {
  std::ostringstream os;
  os << "epoch=" << epoch << " step=" << step << " ssim_loss=" << kv::format_double(losses.ssim_loss)
     << " seg_loss=" << kv::format_double(losses.seg_loss) << " pcl=" << kv::format_double(losses.pcl)
     << " lpisl=" << kv::format_double(losses.lpisl) << " total=" << kv::format_double(losses.total)
     << " lr=" << kv::format_double(lr) << " wall_time=" << kv::format_double(wall_time);
  return os.str();
}

TrainLogRecord TrainLogRecord::parse_line(const std::string& line) {
  TrainLogRecord r;
  std::istringstream is(line);
  std::string token;
  while (is >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw InputError("log record: malformed token '" + token + "'");
    const std::string key = token.substr(0, eq), value = token.substr(eq + 1);
    if (key == "epoch") r.epoch = kv::parse_int(key, value);
    else if (key == "step") r.step = static_cast<std::int64_t>(kv::parse_u64(key, value));
    else if (key == "ssim_loss") r.losses.ssim_loss = kv::parse_double(key, value);
    else if (key == "seg_loss") r.losses.seg_loss = kv::parse_double(key, value);
    else if (key == "pcl") r.losses.pcl = kv::parse_double(key, value);
    else if (key == "lpisl") r.losses.lpisl = kv::parse_double(key, value);
    else if (key == "total") r.losses.total = kv::parse_double(key, value);
    else if (key == "lr") r.lr = kv::parse_double(key, value);
    else if (key == "wall_time") r.wall_time = kv::parse_double(key, value);
    else throw InputError("log record: unknown key '" + key + "'");
  }
  return r;
}

// --- training ---------------------------------------------------------------------------------

namespace {

std::string describe(const LossBreakdown& b) {
  return "ssim_loss=" + kv::format_double(b.ssim_loss) + " seg_loss=" + kv::format_double(b.seg_loss) +
         " pcl=" + kv::format_double(b.pcl) + " lpisl=" + kv::format_double(b.lpisl) +
         " total=" + kv::format_double(b.total);
}

LossToggles loss_toggles(const TrainToggles& t) { return {t.use_seg, t.use_pcl, t.use_lpisl}; }

}  // namespace

LossBreakdown accumulate_batch_gradients(const DerainWeights& w, const std::vector<PairedSample>& batch,
                                         const TrainSetup& setup) {
  if (batch.empty()) throw InputError("empty batch");
  if (!setup.extractor) throw ConfigError("training requires a feature extractor");
  const TrainToggles& toggles = setup.train.toggles;
  if (toggles.use_seg && !setup.segmenter) throw ConfigError("use_seg requires a segmenter");
  const double inv = 1.0 / static_cast<double>(batch.size());
  LossBreakdown mean;
  for (const PairedSample& s : batch) {
    const ad::Var rainy = ad::constant(s.rainy);
    const ad::Var clean = ad::constant(s.clean);
    const DerainOutput out = derain(rainy, w);
    ad::Var probs;
    if (toggles.use_seg) probs = segment(out.final, *setup.segmenter);
    const LossTerms terms = total_loss(out.final, clean, rainy, probs, *setup.extractor, setup.loss, loss_toggles(toggles));
    const LossBreakdown b = terms.values();
    if (!std::isfinite(b.total)) throw NumericError("non-finite loss on sample '" + s.id + "': " + describe(b));
    ad::backward(terms.total, inv);
    mean.ssim_loss += b.ssim_loss * inv;
    mean.seg_loss += b.seg_loss * inv;
    mean.pcl += b.pcl * inv;
    mean.lpisl += b.lpisl * inv;
  }
  const LossWeights& lw = setup.loss;
  mean.total = lw.lambda1 * mean.ssim_loss + lw.lambda2 * mean.seg_loss + lw.lambda3 * mean.pcl + lw.lambda4 * mean.lpisl;
  return mean;
}

TrainResult train(const std::vector<PairedSample>& data, const TrainSetup& setup, std::optional<Checkpoint> resume,
                  const TrainOptions& options) {
  if (data.empty()) throw InputError("training dataset is empty");
  setup.train.validate();
  const ModelConfig model = effective_model(setup.model, setup.train.toggles);

  TrainResult result;
  Checkpoint& ck = result.checkpoint;
  if (resume) {
    ck = std::move(*resume);
    if (!(ck.weights.config == model)) throw ConfigError("resume checkpoint was written for a different model");
  } else {
    ck.weights = init_derain_weights(model, setup.train.seed);
    ck.epoch = 0;
  }
  ck.rng_seed = setup.train.seed;
  ck.run_config = setup.run_config;

  Adam adam(ck.weights.parameters(), setup.train.beta1, setup.train.beta2, setup.train.adam_eps);
  if (!ck.optimizer.m.empty()) adam.set_state(ck.optimizer);
  std::int64_t step = adam.state().step;

  std::ofstream log_file;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    log_file.open(options.out_dir / "train.log", resume ? std::ios::app : std::ios::trunc);
    if (!log_file) throw IoError("cannot open training log in '" + options.out_dir.string() + "'");
  }
  const auto t0 = std::chrono::steady_clock::now();
  const int last_epoch = options.stop_after_epoch >= 0 ? std::min(options.stop_after_epoch, setup.train.epochs)
                                                       : setup.train.epochs;
  const std::size_t bs = static_cast<std::size_t>(setup.train.batch_size);

  for (int epoch = ck.epoch; epoch < last_epoch; ++epoch) {
    std::seed_seq seq{setup.train.seed, static_cast<std::uint64_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = lr_at(epoch, setup.train);

    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::vector<PairedSample> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) {
        batch.push_back(random_crop_pair(data[order[i]], setup.crop, rng));
      }
      ++step;
      LossBreakdown b;
      try {
        b = accumulate_batch_gradients(ck.weights, batch, setup);
      } catch (const NumericError& e) {
        adam.zero_grad();
        throw NumericError("step " + std::to_string(step) + ": " + e.what());
      }
      adam.step(lr);
      TrainLogRecord rec;
      rec.epoch = epoch;
      rec.step = step;
      rec.losses = b;
      rec.lr = lr;
      rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      result.log.push_back(rec);
      if (log_file.is_open()) log_file << rec.to_line() << std::endl;
      if (options.on_step) options.on_step(rec);
    }
    ck.epoch = epoch + 1;
    ck.optimizer = adam.state();
    if (!options.out_dir.empty()) save_checkpoint(options.out_dir / "checkpoint_latest.bin", ck);
  }
  ck.optimizer = adam.state();

  if (!options.out_dir.empty() && ck.epoch >= setup.train.epochs)
    save_checkpoint(options.out_dir / "checkpoint_final.bin", ck);
  return result;
}

}  // namespace sapnet
