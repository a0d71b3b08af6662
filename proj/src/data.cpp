#include "sapnet/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <set>
#include <sstream>

#include "sapnet/errors.hpp"

namespace fs = std::filesystem;

namespace sapnet {

ImageTensor load_image(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot decode image '" + path.string() + "'");
  if (bgr.depth() != CV_8U) throw IoError("image '" + path.string() + "' is not 8-bit");
  const int h = bgr.rows, w = bgr.cols;
  ImageTensor img({3, h, w});
  for (int y = 0; y < h; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = row[x][2 - c] / 255.0;
  }
  return img;
}

std::vector<std::uint8_t> quantize_8bit(const ImageTensor& img) {
  std::vector<std::uint8_t> out(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img[i], 0.0, 1.0) * 255.0));
  }
  return out;
}

ImageTensor dequantize_8bit(const std::vector<std::uint8_t>& bytes, int height, int width) {
  ImageTensor img({3, height, width});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = bytes.at(i) / 255.0;
  return img;
}

void save_image(const fs::path& path, const ImageTensor& img) {
  if (img.rank() != 3 || img.channels() != 3) throw InputError("save_image: expected [3,H,W] image");
  const auto q = quantize_8bit(img);
  const int h = img.height(), w = img.width();
  cv::Mat bgr(h, w, CV_8UC3);
  const std::size_t plane = img.plane();
  for (int y = 0; y < h; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) row[x][2 - c] = q[c * plane + static_cast<std::size_t>(y) * w + x];
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr)) throw IoError("cannot write image '" + path.string() + "'");
}

namespace {

bool is_image(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::set<std::string> image_names(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InputError("dataset directory '" + dir.string() + "' does not exist");
  std::set<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image(entry.path())) names.insert(entry.path().filename().string());
  }
  return names;
}

PairedSample make_sample(const fs::path& rainy, const fs::path& clean, std::string id) {
  PairedSample s{load_image(rainy), load_image(clean), std::move(id)};
  if (!s.rainy.same_shape(s.clean)) {
    throw InputError("pair '" + s.id + "': rainy " + s.rainy.shape_string() + " and clean " +
                     s.clean.shape_string() + " differ in size");
  }
  return s;
}

std::vector<PairedSample> load_manifest(const DatasetSpec& spec) {
  std::ifstream in(spec.manifest);
  if (!in) throw IoError("cannot open manifest '" + spec.manifest.string() + "'");
  const fs::path base = spec.manifest.parent_path();
  std::map<std::string, std::pair<fs::path, fs::path>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw InputError("manifest line " + std::to_string(lineno) + ": expected rainy_path<TAB>clean_path");
    }
    fs::path rainy = line.substr(0, tab), clean = line.substr(tab + 1);
    if (rainy.is_relative()) rainy = base / rainy;
    if (clean.is_relative()) clean = base / clean;
    rows[line.substr(0, tab)] = {rainy, clean};
  }
  std::vector<PairedSample> out;
  for (const auto& [id, paths] : rows) out.push_back(make_sample(paths.first, paths.second, id));
  return out;
}

}  // namespace

DatasetSpec dataset_at(const fs::path& root, int crop, std::uint64_t seed) {
  DatasetSpec spec;
  spec.rainy_dir = root / "rainy";
  spec.clean_dir = root / "clean";
  if (fs::exists(root / "manifest.tsv")) spec.manifest = root / "manifest.tsv";
  spec.crop = crop;
  spec.seed = seed;
  return spec;
}

std::vector<PairedSample> load_pairs(const DatasetSpec& spec) {
  if (!spec.manifest.empty()) return load_manifest(spec);
  const auto rainy = image_names(spec.rainy_dir);
  const auto clean = image_names(spec.clean_dir);
  std::vector<std::string> orphans;
  for (const auto& n : rainy)
    if (!clean.count(n)) orphans.push_back("rainy/" + n);
  for (const auto& n : clean)
    if (!rainy.count(n)) orphans.push_back("clean/" + n);
  if (!orphans.empty()) {
    std::string msg = "unpaired files:";
    for (const auto& o : orphans) msg += " " + o;
    throw InputError(msg);
  }
  std::vector<PairedSample> out;
  for (const auto& n : rainy) out.push_back(make_sample(spec.rainy_dir / n, spec.clean_dir / n, n));
  return out;
}

PairedSample random_crop_pair(const PairedSample& s, int size, std::mt19937_64& rng) {
  const int h = s.rainy.height(), w = s.rainy.width();
  if (h < size || w < size) {
    throw InputError("sample '" + s.id + "' (" + std::to_string(h) + "x" + std::to_string(w) +
                     ") is smaller than the crop size " + std::to_string(size));
  }
  std::uniform_int_distribution<int> dy(0, h - size), dx(0, w - size);
  const int y0 = dy(rng);
  const int x0 = dx(rng);
  auto cut = [&](const ImageTensor& img) {
    ImageTensor out({3, size, size});
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
    return out;
  };
  return {cut(s.rainy), cut(s.clean), s.id};
}

ImageTensor synth_rain(const ImageTensor& clean, int streaks, double angle_deg, int length_px, double intensity,
                       std::uint64_t seed) {
  ImageTensor out = clean;
  if (streaks <= 0 || intensity <= 0.0 || length_px <= 0) return out;
  const int h = clean.height(), w = clean.width();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(0.0, w), uy(0.0, h), ubright(0.6, 1.0);
  const double theta = angle_deg * std::numbers::pi / 180.0;
  const double dx = std::sin(theta), dy = std::cos(theta);
  std::vector<double> rain(static_cast<std::size_t>(h) * w, 0.0);
  std::vector<char> touched(rain.size());
  for (int s = 0; s < streaks; ++s) {
    const double x0 = ux(rng), y0 = uy(rng);
    const double amount = intensity * ubright(rng);
    std::fill(touched.begin(), touched.end(), 0);
    for (int t = 0; t < length_px; ++t) {
      const long px = std::lround(x0 + t * dx), py = std::lround(y0 + t * dy);
      if (px < 0 || py < 0 || px >= w || py >= h) continue;
      const std::size_t k = static_cast<std::size_t>(py) * w + px;
      if (touched[k]) continue;
      touched[k] = 1;
      rain[k] += amount;
    }
  }
  for (int c = 0; c < 3; ++c)
    for (std::size_t k = 0; k < rain.size(); ++k) {
      double& v = out.channel_ptr(c)[k];
      v = std::min(1.0, v + rain[k]);
    }
  return out;
}

ImageTensor synth_background(int height, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImageTensor img({3, height, width});
  const double angle = u(rng) * 2.0 * std::numbers::pi;
  const double gx = std::cos(angle), gy = std::sin(angle);
  double base[3], slope[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = 0.15 + 0.4 * u(rng);
    slope[c] = 0.3 * (u(rng) - 0.5);
  }
  struct Blob {
    double cx, cy, radius, colour[3];
  };
  std::vector<Blob> blobs(4);
  for (auto& b : blobs) {
    b.cx = u(rng) * width;
    b.cy = u(rng) * height;
    b.radius = (0.1 + 0.25 * u(rng)) * std::min(height, width);
    for (double& col : b.colour) col = 0.3 * (u(rng) - 0.5);
  }
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double t = (gx * x / width + gy * y / height);
      for (int c = 0; c < 3; ++c) {
        double v = base[c] + slope[c] * t;
        for (const auto& b : blobs) {
          const double d2 = ((x - b.cx) * (x - b.cx) + (y - b.cy) * (y - b.cy)) / (b.radius * b.radius);
          v += b.colour[c] * std::exp(-d2);
        }
        img.at(c, y, x) = std::clamp(v, 0.0, 0.8);
      }
    }
  }
  return img;
}

}  // namespace sapnet
