#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "lappyr/image.hpp"

namespace lappyr {

struct MetricRow {
  std::string id;
  double si_mse_albedo = 0.0;
  double si_mse_shading = 0.0;
  double si_lmse_albedo = 0.0;
  double si_lmse_shading = 0.0;
  double dssim_albedo = 0.0;
  double dssim_shading = 0.0;
  double lmse = 0.0;

  bool operator==(const MetricRow&) const = default;
};

struct MetricReport {
  std::vector<MetricRow> per_image;
  MetricRow aggregate;  // arithmetic means, id "aggregate"
  int count = 0;

  void finalize();  // recomputes aggregate/count from per_image
  nlohmann::json to_json() const;
  void print_table(std::ostream& os) const;

  bool operator==(const MetricReport&) const = default;
};

// Least-squares scale over all channels jointly; 0 when pred is all zeros.
double optimal_scale(const Image& pred, const Image& gt);

// mean((alpha * pred - gt)^2) with alpha from optimal_scale.
double si_mse(const Image& pred, const Image& gt);

// Mean of si_mse over sliding windows; stride steps plus a final edge-anchored
// window per axis so every pixel is covered.
double si_lmse(const Image& pred, const Image& gt, int window, int stride);

// 0.5 * siLMSE(S~|S)/siLMSE(0|S) + 0.5 * siLMSE(A~|A)/siLMSE(0|A),
// window 20 (stride 10) by convention.
double lmse(const Image& pred_albedo, const Image& gt_albedo, const Image& pred_shading,
            const Image& gt_shading, int window = 20);

// Mean SSIM over 11x11 Gaussian windows (sigma 1.5) on luminance,
// K1 = 0.01, K2 = 0.03, dynamic range 1. Inputs outside [0,1] are clamped
// with a warning.
double ssim(const Image& a, const Image& b);
double dssim(const Image& a, const Image& b);  // (1 - ssim) / 2

// 10% of the larger extent, at least 2.
int default_silmse_window(const Image& img);

MetricRow evaluate_pair(const std::string& id, const Image& pred_albedo,
                        const Image& gt_albedo, const Image& pred_shading,
                        const Image& gt_shading);

}  // namespace lappyr
