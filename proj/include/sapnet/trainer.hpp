#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sapnet/archive.hpp"
#include "sapnet/data.hpp"
#include "sapnet/derain_net.hpp"
#include "sapnet/feature_extractor.hpp"
#include "sapnet/losses.hpp"
#include "sapnet/segmenter.hpp"

namespace sapnet {

/// Component switches used by the ablation matrix.
struct TrainToggles {
  bool use_seg = true;
  bool use_pcl = true;
  bool use_lpisl = true;
  bool use_dilation = true;
  bool use_decay = true;
  friend bool operator==(const TrainToggles&, const TrainToggles&) = default;
};

struct TrainConfig {
  int epochs = 100;
  int batch_size = 12;
  double base_lr = 1e-3;
  std::vector<int> decay_epochs{30, 50, 80};
  double decay_factor = 0.2;
  std::uint64_t seed = 0;
  TrainToggles toggles;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// base_lr * decay_factor^(number of decay epochs <= epoch); base_lr when decay is toggled off.
double lr_at(int epoch, const TrainConfig& cfg);

/// Model config with the dilation toggle applied (all rates 1 when off).
ModelConfig effective_model(const ModelConfig& model, const TrainToggles& toggles);

struct AdamState {
  std::int64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// Adaptive-moment optimizer with bias correction over a fixed parameter list.
class Adam {
 public:
  Adam(ParameterList params, double beta1, double beta2, double eps);

  /// Applies one update from the accumulated gradients, then clears them.
  void step(double lr);
  void zero_grad();

  const AdamState& state() const { return state_; }
  void set_state(AdamState s);
  const ParameterList& params() const { return params_; }

 private:
  ParameterList params_;
  double beta1_, beta2_, eps_;
  AdamState state_;
};

struct Checkpoint {
  DerainWeights weights;
  AdamState optimizer;
  int epoch = 0;  // completed epochs
  std::uint64_t rng_seed = 0;
  /// Full resolved run configuration, informational.
  std::string run_config;
};

/// Archive keys: config, derain_weights/<name>, optimizer_state/{step,m/<name>,v/<name>}, epoch,
/// rng_seed, run_config.
Archive to_archive(const Checkpoint& ck);
Checkpoint from_archive(const Archive& a);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Throws ConfigError if the stored model configuration differs from `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

/// Model section of the flat key=value configuration format.
std::string model_config_text(const ModelConfig& cfg);
ModelConfig parse_model_config_text(const std::string& text);

struct TrainLogRecord {
  int epoch = 0;
  std::int64_t step = 0;
  LossBreakdown losses;
  double lr = 0.0;
  double wall_time = 0.0;

  /// `epoch=.. step=.. ssim_loss=.. seg_loss=.. pcl=.. lpisl=.. total=.. lr=.. wall_time=..`
  std::string to_line() const;
  static TrainLogRecord parse_line(const std::string& line);
};

/// Everything a step needs besides the weights being trained.
struct TrainSetup {
  ModelConfig model;
  TrainConfig train;
  LossWeights loss;
  const SegWeights* segmenter = nullptr;
  const FeatureExtractor* extractor = nullptr;
  int crop = 100;
  std::string run_config;
};

/// Forward, loss and backward for one batch; gradients are averaged over the batch and left in the
/// parameters. Returns the batch-mean breakdown with total recomposed from the means.
LossBreakdown accumulate_batch_gradients(const DerainWeights& w, const std::vector<PairedSample>& batch,
                                         const TrainSetup& setup);

struct TrainOptions {
  /// When set, `train.log` is appended per step, `checkpoint_latest.bin` written after every epoch and
  /// `checkpoint_final.bin` once the last epoch completes.
  std::filesystem::path out_dir;
  /// Stop once this many epochs are complete (the returned checkpoint can be resumed).
  int stop_after_epoch = -1;
  std::function<void(const TrainLogRecord&)> on_step;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<TrainLogRecord> log;
};

/// Deterministic given setup.train.seed. Epoch e visits the data in an order and with crops drawn from
/// a generator seeded by (seed, e), so resuming from a checkpoint replays the same batches.
TrainResult train(const std::vector<PairedSample>& data, const TrainSetup& setup,
                  std::optional<Checkpoint> resume = std::nullopt, const TrainOptions& options = {});

}  // namespace sapnet
