#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "sapnet/tensor.hpp"

namespace sapnet {

/// [3,H,W] RGB image with values in [0,1].
using ImageTensor = Tensor;

/// Decodes an 8-bit PNG/JPEG into [0,1] floats. Throws IoError naming the file on failure.
ImageTensor load_image(const std::filesystem::path& path);

/// Clamps to [0,1] and rounds to 8 bits per channel.
std::vector<std::uint8_t> quantize_8bit(const ImageTensor& img);
ImageTensor dequantize_8bit(const std::vector<std::uint8_t>& bytes, int height, int width);

/// Writes an 8-bit image; the format follows the extension.
void save_image(const std::filesystem::path& path, const ImageTensor& img);

struct PairedSample {
  ImageTensor rainy;
  ImageTensor clean;
  std::string id;
};

struct DatasetSpec {
  std::filesystem::path rainy_dir;
  std::filesystem::path clean_dir;
  /// Optional `rainy_path<TAB>clean_path` listing; relative paths resolve against its directory.
  std::filesystem::path manifest;
  int crop = 100;
  std::uint64_t seed = 0;
};

/// `<root>/rainy` and `<root>/clean`, or `<root>/manifest.tsv` when present.
DatasetSpec dataset_at(const std::filesystem::path& root, int crop = 100, std::uint64_t seed = 0);

/// Pairs by identical filename, ordered lexicographically. Throws InputError listing orphans.
std::vector<PairedSample> load_pairs(const DatasetSpec& spec);

/// Same window cut from both images. Throws InputError if either side is smaller than `size`.
PairedSample random_crop_pair(const PairedSample& s, int size, std::mt19937_64& rng);

/// Adds `streaks` bright line segments at seeded positions and clamps to [0,1].
ImageTensor synth_rain(const ImageTensor& clean, int streaks, double angle_deg, int length_px, double intensity,
                       std::uint64_t seed);

/// Smooth seeded background (gradients plus soft blobs) for offline experiments.
ImageTensor synth_background(int height, int width, std::uint64_t seed);

}  // namespace sapnet
