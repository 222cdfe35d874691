#include "lappyr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "lappyr/errors.hpp"

namespace lappyr {

namespace {

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// Window origins: stride steps plus a final edge-anchored origin.
std::vector<int> window_origins(int extent, int window, int stride) {
  std::vector<int> out;
  for (int o = 0; o + window <= extent; o += stride) out.push_back(o);
  if (out.empty() || out.back() + window < extent) out.push_back(extent - window);
  return out;
}

double si_mse_region(const Image& pred, const Image& gt, int y0, int x0, int h, int w) {
  double pp = 0.0, pg = 0.0;
  for (int c = 0; c < pred.channels; ++c)
    for (int y = y0; y < y0 + h; ++y)
      for (int x = x0; x < x0 + w; ++x) {
        const double p = pred.at(c, y, x);
        pp += p * p;
        pg += p * gt.at(c, y, x);
      }
  const double alpha = pp > 0.0 ? pg / pp : 0.0;
  double acc = 0.0;
  for (int c = 0; c < pred.channels; ++c)
    for (int y = y0; y < y0 + h; ++y)
      for (int x = x0; x < x0 + w; ++x) {
        const double d = alpha * pred.at(c, y, x) - gt.at(c, y, x);
        acc += d * d;
      }
  return acc / (static_cast<double>(pred.channels) * h * w);
}

}  // namespace

double optimal_scale(const Image& pred, const Image& gt) {
  check(pred.same_extents(gt), "optimal_scale: extent mismatch");
  double pp = 0.0, pg = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    pp += static_cast<double>(pred.data[i]) * pred.data[i];
    pg += static_cast<double>(pred.data[i]) * gt.data[i];
  }
  return pp > 0.0 ? pg / pp : 0.0;
}

double si_mse(const Image& pred, const Image& gt) {
  check(pred.same_extents(gt), "si_mse: extent mismatch");
  return si_mse_region(pred, gt, 0, 0, pred.height, pred.width);
}

double si_lmse(const Image& pred, const Image& gt, int window, int stride) {
  check(pred.same_extents(gt), "si_lmse: extent mismatch");
  check(window >= 1, "si_lmse: window must be >= 1");
  check(stride >= 1, "si_lmse: stride must be >= 1");
  check(window <= pred.height && window <= pred.width,
        "si_lmse: window " + std::to_string(window) + " exceeds extents " +
            std::to_string(pred.height) + "x" + std::to_string(pred.width));
  const auto ys = window_origins(pred.height, window, stride);
  const auto xs = window_origins(pred.width, window, stride);
  double acc = 0.0;
  for (int y0 : ys)
    for (int x0 : xs) acc += si_mse_region(pred, gt, y0, x0, window, window);
  return acc / (static_cast<double>(ys.size()) * xs.size());
}

double lmse(const Image& pred_albedo, const Image& gt_albedo, const Image& pred_shading,
            const Image& gt_shading, int window) {
  const int stride = std::max(1, window / 2);
  const Image zero_a(gt_albedo.channels, gt_albedo.height, gt_albedo.width, 0.0f);
  const Image zero_s(gt_shading.channels, gt_shading.height, gt_shading.width, 0.0f);
  const double denom_s = si_lmse(zero_s, gt_shading, window, stride);
  const double denom_a = si_lmse(zero_a, gt_albedo, window, stride);
  if (denom_s <= 0.0 || denom_a <= 0.0)
    throw NumericError("lmse: ground truth is identically zero; measure undefined");
  return 0.5 * si_lmse(pred_shading, gt_shading, window, stride) / denom_s +
         0.5 * si_lmse(pred_albedo, gt_albedo, window, stride) / denom_a;
}

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimK1 = 0.01;
constexpr double kSsimK2 = 0.03;

const std::vector<double>& ssim_kernel() {
  static const std::vector<double> kernel = [] {
    std::vector<double> k(kSsimWindow);
    const int r = kSsimWindow / 2;
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
      const double d = i - r;
      k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
      sum += k[static_cast<std::size_t>(i)];
    }
    for (double& v : k) v /= sum;
    return k;
  }();
  return kernel;
}

std::vector<double> clamped_luminance(const Image& img, const char* which) {
  auto lum = luminance(img);
  bool clamped = false;
  for (float& v : lum) {
    if (v < 0.0f || v > 1.0f) {
      v = std::clamp(v, 0.0f, 1.0f);
      clamped = true;
    }
  }
  if (clamped)
    std::fprintf(stderr, "warning: ssim %s values outside [0,1] were clamped\n", which);
  return std::vector<double>(lum.begin(), lum.end());
}

}  // namespace

double ssim(const Image& a, const Image& b) {
  check(a.same_extents(b), "ssim: extent mismatch");
  check(a.height >= kSsimWindow && a.width >= kSsimWindow,
        "ssim: extents must be at least " + std::to_string(kSsimWindow));
  const auto la = clamped_luminance(a, "first input");
  const auto lb = clamped_luminance(b, "second input");
  const auto& k = ssim_kernel();
  const int H = a.height, W = a.width, r = kSsimWindow / 2;
  const double c1 = kSsimK1 * kSsimK1;
  const double c2 = kSsimK2 * kSsimK2;

  double acc = 0.0;
  std::int64_t count = 0;
  // Valid positions only: the full 11x11 window must fit.
  for (int y = r; y < H - r; ++y) {
    for (int x = r; x < W - r; ++x) {
      double mx = 0.0, my = 0.0, xx = 0.0, yy = 0.0, xy = 0.0;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          const double w = k[static_cast<std::size_t>(dy + r)] * k[static_cast<std::size_t>(dx + r)];
          const double va = la[static_cast<std::size_t>(y + dy) * W + (x + dx)];
          const double vb = lb[static_cast<std::size_t>(y + dy) * W + (x + dx)];
          mx += w * va;
          my += w * vb;
          xx += w * va * va;
          yy += w * vb * vb;
          xy += w * va * vb;
        }
      }
      const double vx = xx - mx * mx;
      const double vy = yy - my * my;
      const double cxy = xy - mx * my;
      const double s = ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) /
                       ((mx * mx + my * my + c1) * (vx + vy + c2));
      acc += s;
      ++count;
    }
  }
  return acc / static_cast<double>(count);
}

double dssim(const Image& a, const Image& b) { return (1.0 - ssim(a, b)) / 2.0; }

int default_silmse_window(const Image& img) {
  return std::max(2, static_cast<int>(std::lround(0.1 * std::max(img.height, img.width))));
}

MetricRow evaluate_pair(const std::string& id, const Image& pred_albedo,
                        const Image& gt_albedo, const Image& pred_shading,
                        const Image& gt_shading) {
  MetricRow row;
  row.id = id;
  row.si_mse_albedo = si_mse(pred_albedo, gt_albedo);
  row.si_mse_shading = si_mse(pred_shading, gt_shading);
  const int win = std::min({default_silmse_window(gt_albedo), gt_albedo.height, gt_albedo.width});
  const int stride = std::max(1, win / 2);
  row.si_lmse_albedo = si_lmse(pred_albedo, gt_albedo, win, stride);
  row.si_lmse_shading = si_lmse(pred_shading, gt_shading, win, stride);
  row.dssim_albedo = dssim(pred_albedo, gt_albedo);
  row.dssim_shading = dssim(pred_shading, gt_shading);
  const int lmse_win = std::min({20, gt_albedo.height, gt_albedo.width});
  row.lmse = lmse(pred_albedo, gt_albedo, pred_shading, gt_shading, lmse_win);
  return row;
}

void MetricReport::finalize() {
  count = static_cast<int>(per_image.size());
  aggregate = MetricRow{};
  aggregate.id = "aggregate";
  if (per_image.empty()) return;
  for (const auto& r : per_image) {
    aggregate.si_mse_albedo += r.si_mse_albedo;
    aggregate.si_mse_shading += r.si_mse_shading;
    aggregate.si_lmse_albedo += r.si_lmse_albedo;
    aggregate.si_lmse_shading += r.si_lmse_shading;
    aggregate.dssim_albedo += r.dssim_albedo;
    aggregate.dssim_shading += r.dssim_shading;
    aggregate.lmse += r.lmse;
  }
  const double n = static_cast<double>(per_image.size());
  aggregate.si_mse_albedo /= n;
  aggregate.si_mse_shading /= n;
  aggregate.si_lmse_albedo /= n;
  aggregate.si_lmse_shading /= n;
  aggregate.dssim_albedo /= n;
  aggregate.dssim_shading /= n;
  aggregate.lmse /= n;
}

namespace {
nlohmann::json row_to_json(const MetricRow& r) {
  return {{"id", r.id},
          {"si_mse_albedo", r.si_mse_albedo},
          {"si_mse_shading", r.si_mse_shading},
          {"si_lmse_albedo", r.si_lmse_albedo},
          {"si_lmse_shading", r.si_lmse_shading},
          {"dssim_albedo", r.dssim_albedo},
          {"dssim_shading", r.dssim_shading},
          {"lmse", r.lmse}};
}
}  // namespace

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["count"] = count;
  j["images"] = nlohmann::json::array();
  for (const auto& r : per_image) j["images"].push_back(row_to_json(r));
  j["aggregate"] = row_to_json(aggregate);
  return j;
}

void MetricReport::print_table(std::ostream& os) const {
  char line[256];
  std::snprintf(line, sizeof(line), "%-16s %10s %10s %10s %10s %8s %8s %8s\n", "id",
                "siMSE(A)", "siMSE(S)", "siLMSE(A)", "siLMSE(S)", "DSSIM(A)", "DSSIM(S)",
                "LMSE");
  os << line;
  auto print_row = [&](const MetricRow& r) {
    std::snprintf(line, sizeof(line),
                  "%-16s %10.6f %10.6f %10.6f %10.6f %8.5f %8.5f %8.5f\n", r.id.c_str(),
                  r.si_mse_albedo, r.si_mse_shading, r.si_lmse_albedo, r.si_lmse_shading,
                  r.dssim_albedo, r.dssim_shading, r.lmse);
    os << line;
  };
  for (const auto& r : per_image) print_row(r);
  print_row(aggregate);
}

}  // namespace lappyr
