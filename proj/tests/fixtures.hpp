#pragma once

// Small models and synthetic data shared by the trainer tests and the acceptance checks.

#include <memory>
#include <vector>

#include "sapnet/config.hpp"
#include "sapnet/data.hpp"
#include "sapnet/feature_extractor.hpp"
#include "sapnet/segmenter.hpp"
#include "sapnet/trainer.hpp"

namespace sapnet::testing {

inline ModelConfig tiny_model() {
  ModelConfig m;
  m.channels = 8;
  m.dilations = {1, 2};
  m.stages = 2;
  return m;
}

inline SegConfig tiny_seg() {
  SegConfig s;
  s.encoder_width = 4;
  s.decoder_channels = 8;
  return s;
}

inline ExtractorConfig tiny_extractor() {
  ExtractorConfig e;
  e.width = 8;
  return e;
}

/// Clean backgrounds with seeded streaks on top.
inline std::vector<PairedSample> synthetic_pairs(int count, int size, std::uint64_t seed) {
  std::vector<PairedSample> out;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t s = seed * 1000 + static_cast<std::uint64_t>(i);
    ImageTensor clean = synth_background(size, size, s);
    ImageTensor rainy = synth_rain(clean, size / 2, 75.0, size / 3, 0.9, s);
    out.push_back({std::move(rainy), std::move(clean), "pair" + std::to_string(i)});
  }
  return out;
}

/// Owns the frozen networks a TrainSetup points at.
struct TinyRun {
  std::unique_ptr<SegWeights> seg;
  std::unique_ptr<FeatureExtractor> fe;
  TrainSetup setup;

  explicit TinyRun(int epochs = 3, int batch = 2, int crop = 24, std::uint64_t seed = 5) {
    seg = std::make_unique<SegWeights>(build_segmenter(tiny_seg(), 7));
    fe = std::make_unique<FeatureExtractor>(build_feature_extractor(tiny_extractor(), 11));
    setup.model = tiny_model();
    setup.train.epochs = epochs;
    setup.train.batch_size = batch;
    setup.train.seed = seed;
    setup.loss.lpisl_size = 32;
    setup.segmenter = seg.get();
    setup.extractor = fe.get();
    setup.crop = crop;
  }
};

}  // namespace sapnet::testing
