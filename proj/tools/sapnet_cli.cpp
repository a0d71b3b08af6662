// sapnet command-line entry point: train, derain, eval, inspect, synth.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "sapnet/config.hpp"
#include "sapnet/data.hpp"
#include "sapnet/errors.hpp"
#include "sapnet/metrics.hpp"
#include "sapnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace sapnet;

namespace {

struct Options {
  std::string config;
  std::string checkpoint;
  std::string input;
  std::string output;
  std::string preset;
  std::string resume;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> stages;
  bool stages_flag = false;
  int count = 4;
  int size = 64;
};

RunConfig resolve_config(const Options& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  for (const auto& assignment : o.overrides) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + assignment + "'");
    set_config_value(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
  }
  if (!o.preset.empty()) apply_ablation_preset(cfg, o.preset);
  if (o.seed) cfg.train.seed = *o.seed;
  cfg.validate();
  return cfg;
}

std::vector<PairedSample> load_dataset(const fs::path& root, int crop, std::uint64_t seed) {
  if (!fs::is_directory(root)) throw InputError("no pairs found: '" + root.string() + "' is not a directory");
  auto pairs = load_pairs(dataset_at(root, crop, seed));
  if (pairs.empty()) throw InputError("no pairs found under '" + root.string() + "'");
  return pairs;
}

int cmd_train(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  if (cfg.data_root.empty()) throw ConfigError("data.root: no training dataset configured");
  const fs::path out = o.output.empty() ? fs::path(cfg.out_dir) : fs::path(o.output);
  const auto data = load_dataset(cfg.data_root, cfg.crop, cfg.train.seed);

  const SegWeights seg = build_segmenter(cfg.seg, cfg.seg_seed);
  const FeatureExtractor fe = build_feature_extractor(cfg.extractor, cfg.extractor_seed);
  TrainSetup setup;
  setup.model = cfg.model;
  setup.train = cfg.train;
  setup.loss = cfg.loss;
  setup.segmenter = &seg;
  setup.extractor = &fe;
  setup.crop = cfg.crop;
  setup.run_config = resolved_config_text(cfg);

  fs::create_directories(out);
  {
    std::ofstream f(out / "config.resolved");
    f << setup.run_config;
    if (!f) throw IoError("cannot write '" + (out / "config.resolved").string() + "'");
  }
  std::optional<Checkpoint> resume;
  if (!o.resume.empty()) resume = load_checkpoint(o.resume, effective_model(cfg.model, cfg.train.toggles));

  std::cout << "training on " << data.size() << " pairs, config hash " << config_hash(cfg) << ", "
            << parameter_count(cfg.model) << " parameters\n";
  TrainOptions opts;
  opts.out_dir = out;
  const std::size_t steps_per_epoch = (data.size() + cfg.train.batch_size - 1) / cfg.train.batch_size;
  opts.on_step = [&](const TrainLogRecord& r) {
    if (static_cast<std::size_t>(r.step) % steps_per_epoch == 0) std::cout << r.to_line() << '\n' << std::flush;
  };
  const TrainResult res = train(data, setup, std::move(resume), opts);
  std::cout << "finished epoch " << res.checkpoint.epoch << "; wrote " << (out / "checkpoint_final.bin").string()
            << '\n';
  return 0;
}

std::vector<std::pair<fs::path, fs::path>> derain_jobs(const fs::path& in, const fs::path& out) {
  std::vector<std::pair<fs::path, fs::path>> jobs;
  if (fs::is_directory(in)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(in)) {
      if (!e.is_regular_file()) continue;
      std::string ext = e.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) jobs.emplace_back(f, out / f.filename());
  } else {
    if (!fs::exists(in)) throw InputError("input '" + in.string() + "' does not exist");
    jobs.emplace_back(in, fs::is_directory(out) ? out / in.filename() : out);
  }
  return jobs;
}

fs::path stage_path(const fs::path& p, int k) {
  return p.parent_path() / (p.stem().string() + "_t" + std::to_string(k) + p.extension().string());
}

int cmd_derain(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  if (o.input.empty() || o.output.empty()) throw ConfigError("--input and --output are required");
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const int stages = o.stages.value_or(0);
  if (stages < 0) throw ConfigError("--stages must be >= 1");
  const int min_side = minimum_input_size(ck.weights.config);
  const auto jobs = derain_jobs(o.input, o.output);
  if (fs::is_directory(o.input)) fs::create_directories(o.output);
  ad::NoGradGuard no_grad;
  for (const auto& [src, dst] : jobs) {
    const ImageTensor img = load_image(src);
    if (img.height() < min_side || img.width() < min_side) {
      throw InputError("'" + src.string() + "' is " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                       "; this model needs at least " + std::to_string(min_side) + "x" + std::to_string(min_side));
    }
    const DerainOutput out = derain(ad::constant(img), ck.weights, stages);
    save_image(dst, out.final.value());
    if (o.stages_flag) {
      for (std::size_t k = 0; k < out.intermediates.size(); ++k)
        save_image(stage_path(dst, static_cast<int>(k) + 1), out.intermediates[k].value());
    }
    std::cout << src.string() << " -> " << dst.string() << '\n';
  }
  return 0;
}

int cmd_eval(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  if (o.input.empty()) throw ConfigError("--input (dataset root) is required");
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const auto pairs = load_dataset(o.input, 0, 0);
  ad::NoGradGuard no_grad;
  const Derainer model = [&](const ImageTensor& x) { return derain(ad::constant(x), ck.weights).final.value(); };
  const EvalReport rep = evaluate(model, pairs);
  const fs::path report = o.output.empty() ? fs::path("report.tsv") : fs::path(o.output);
  if (report.has_parent_path()) fs::create_directories(report.parent_path());
  write_report(report, rep);
  std::cout << "pairs=" << rep.per_image.size() << " mean_psnr=" << format_metric(rep.mean_psnr)
            << " mean_ssim=" << format_metric(rep.mean_ssim) << " report=" << report.string() << '\n';
  return 0;
}

int cmd_inspect(const Options& o) {
  if (!o.checkpoint.empty()) {
    const Checkpoint ck = load_checkpoint(o.checkpoint);
    const ModelConfig& m = ck.weights.config;
    std::cout << model_config_text(m);
    std::cout << "parameters=" << scalar_count(ck.weights.parameters()) << '\n'
              << "receptive_field=" << receptive_field(m) << '\n'
              << "minimum_input=" << minimum_input_size(m) << '\n'
              << "epoch=" << ck.epoch << '\n'
              << "rng_seed=" << ck.rng_seed << '\n'
              << "optimizer_step=" << ck.optimizer.step << '\n';
    return 0;
  }
  const RunConfig cfg = resolve_config(o);
  std::cout << resolved_config_text(cfg) << "# hash " << config_hash(cfg) << '\n'
            << "# parameters " << parameter_count(cfg.model) << '\n'
            << "# receptive_field " << receptive_field(cfg.model) << '\n';
  return 0;
}

int cmd_synth(const Options& o) {
  if (o.output.empty()) throw ConfigError("--output is required");
  if (o.count < 1 || o.size < 8) throw ConfigError("--count must be >= 1 and --size >= 8");
  const std::uint64_t seed = o.seed.value_or(0);
  const fs::path root = o.output;
  for (int i = 0; i < o.count; ++i) {
    const std::uint64_t s = seed * 1000 + static_cast<std::uint64_t>(i);
    const ImageTensor clean = synth_background(o.size, o.size, s);
    const ImageTensor rainy = synth_rain(clean, o.size / 2, 75.0, std::max(3, o.size / 3), 0.9, s);
    char name[32];
    std::snprintf(name, sizeof(name), "%04d.png", i);
    save_image(root / "clean" / name, clean);
    save_image(root / "rainy" / name, rainy);
  }
  std::cout << "wrote " << o.count << " pairs to " << root.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SAPNet single-image deraining"};
  app.require_subcommand(1);
  Options o;

  auto* train = app.add_subcommand("train", "Train a derain network from a config file");
  train->add_option("--config", o.config, "Run configuration (key=value lines)");
  train->add_option("--set", o.overrides, "Extra key=value assignments applied after the file");
  train->add_option("--preset", o.preset, "Ablation row: M1..M5 or ours");
  train->add_option("--seed", o.seed, "Overrides train.seed");
  train->add_option("--output", o.output, "Output directory (default: out_dir from the config)");
  train->add_option("--resume", o.resume, "Checkpoint to continue from");

  auto* der = app.add_subcommand("derain", "Derain an image or a directory of images");
  der->add_option("--checkpoint", o.checkpoint)->required();
  der->add_option("--input", o.input, "Image file or directory")->required();
  der->add_option("--output", o.output, "Image file or directory")->required();
  der->add_option("--stages", o.stages, "Also write every stage as <name>_t<k>; optional stage count")
      ->expected(0, 1);

  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a paired dataset");
  ev->add_option("--checkpoint", o.checkpoint)->required();
  ev->add_option("--input", o.input, "Dataset root with rainy/ and clean/")->required();
  ev->add_option("--output", o.output, "Report path (TSV)");

  auto* ins = app.add_subcommand("inspect", "Describe a checkpoint or a resolved config");
  ins->add_option("--checkpoint", o.checkpoint);
  ins->add_option("--config", o.config);
  ins->add_option("--set", o.overrides);
  ins->add_option("--preset", o.preset);
  ins->add_option("--seed", o.seed);

  auto* syn = app.add_subcommand("synth", "Write a synthetic rainy/clean dataset");
  syn->add_option("--output", o.output)->required();
  syn->add_option("--count", o.count);
  syn->add_option("--size", o.size);
  syn->add_option("--seed", o.seed);

  CLI11_PARSE(app, argc, argv);
  o.stages_flag = der->count("--stages") > 0;

  try {
    if (*train) return cmd_train(o);
    if (*der) return cmd_derain(o);
    if (*ev) return cmd_eval(o);
    if (*ins) return cmd_inspect(o);
    if (*syn) return cmd_synth(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
