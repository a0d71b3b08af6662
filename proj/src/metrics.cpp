#include "sapnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "sapnet/errors.hpp"
#include "sapnet/ssim.hpp"

namespace sapnet {

double psnr(const ImageTensor& a, const ImageTensor& b, double data_range) {
  if (!a.same_shape(b)) throw InputError("psnr: shapes differ (" + a.shape_string() + " vs " + b.shape_string() + ")");
  if (a.empty()) throw InputError("psnr: empty image");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / mse);
}

double ssim_metric(const ImageTensor& a, const ImageTensor& b) {
  ad::NoGradGuard guard;
  return ssim(ad::constant(a), ad::constant(b)).item();
}

void finalize_means(EvalReport& report) {
  double sp = 0.0, ss = 0.0;
  for (const auto& s : report.per_image) {
    sp += s.psnr_db;
    ss += s.ssim;
  }
  const double n = static_cast<double>(report.per_image.size());
  report.mean_psnr = report.per_image.empty() ? 0.0 : sp / n;
  report.mean_ssim = report.per_image.empty() ? 0.0 : ss / n;
}

EvalReport evaluate(const Derainer& derainer, const std::vector<PairedSample>& pairs) {
  EvalReport report;
  for (const auto& p : pairs) {
    ImageTensor out = derainer(p.rainy);
    for (double& v : out.values()) v = std::clamp(v, 0.0, 1.0);
    report.per_image.push_back({p.id, psnr(out, p.clean), ssim_metric(out, p.clean)});
  }
  finalize_means(report);
  return report;
}

std::string format_metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void write_report(std::ostream& os, const EvalReport& report) {
  os << "id\tpsnr_db\tssim\n";
  for (const auto& s : report.per_image) os << s.id << '\t' << format_metric(s.psnr_db) << '\t' << format_metric(s.ssim) << '\n';
  os << "MEAN\t" << format_metric(report.mean_psnr) << '\t' << format_metric(report.mean_ssim) << '\n';
}

void write_report(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write report '" + path.string() + "'");
  write_report(f, report);
}

}  // namespace sapnet
