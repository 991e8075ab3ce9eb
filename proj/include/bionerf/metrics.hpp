// Copyright 2026 The bionerf-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "bionerf/data.hpp"
#include "bionerf/image.hpp"

namespace bionerf {

inline double mean_squared_error(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw DimensionError("image shapes differ");
  double acc = 0.0;
  for (Index i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    acc += d * d;
  }
  return a.data.empty() ? 0.0 : acc / static_cast<double>(a.data.size());
}

/// PSNR in dB for images in [0,1]; +infinity when the images are identical.
inline double psnr(const Image& a, const Image& b) {
  const double mse = mean_squared_error(a, b);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

struct SsimOptions {
  Index window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean SSIM over all fully-contained Gaussian windows, per channel, then
/// averaged across channels. Dynamic range is 1.
inline double ssim(const Image& a, const Image& b, const SsimOptions& opt = {}) {
  if (!a.same_shape(b)) throw DimensionError("image shapes differ");
  const Index win = opt.window;
  if (a.width < win || a.height < win) {
    throw PreconditionError("image " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                            " smaller than the " + std::to_string(win) + "x" + std::to_string(win) + " window");
  }
  std::vector<double> kernel(win * win);
  double total = 0.0;
  const double centre = 0.5 * static_cast<double>(win - 1);
  for (Index y = 0; y < win; ++y) {
    for (Index x = 0; x < win; ++x) {
      const double dx = static_cast<double>(x) - centre, dy = static_cast<double>(y) - centre;
      kernel[y * win + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * opt.sigma * opt.sigma));
      total += kernel[y * win + x];
    }
  }
  for (auto& k : kernel) k /= total;
  const double c1 = opt.k1 * opt.k1, c2 = opt.k2 * opt.k2;
  const Index ch = a.channels;
  double channel_sum = 0.0;
  for (Index c = 0; c < ch; ++c) {
    double window_sum = 0.0;
    Index windows = 0;
    for (Index y0 = 0; y0 + win <= a.height; ++y0) {
      for (Index x0 = 0; x0 + win <= a.width; ++x0) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (Index y = 0; y < win; ++y) {
          for (Index x = 0; x < win; ++x) {
            const double k = kernel[y * win + x];
            const double va = a.at(x0 + x, y0 + y, c), vb = b.at(x0 + x, y0 + y, c);
            ma += k * va;
            mb += k * vb;
            saa += k * va * va;
            sbb += k * vb * vb;
            sab += k * va * vb;
          }
        }
        const double var_a = saa - ma * ma, var_b = sbb - mb * mb, cov = sab - ma * mb;
        window_sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                      ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        ++windows;
      }
    }
    channel_sum += window_sum / static_cast<double>(windows);
  }
  return channel_sum / static_cast<double>(ch);
}

struct MetricRow {
  std::string view;
  double psnr = 0.0;
  double ssim = 0.0;
};

namespace detail {

inline std::string fmt_metric(double v, int digits) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

inline std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.insert(0, width - s.size(), ' ');
  return s;
}

}  // namespace detail

/// Per-view PSNR/SSIM of one method on one scene split. LPIPS is reserved as
/// an always-empty column.
struct MetricReport {
  std::string method = "BioNeRF";
  std::vector<MetricRow> rows;

  bool empty() const { return rows.empty(); }

  double mean_psnr() const { return mean(&MetricRow::psnr); }
  double mean_ssim() const { return mean(&MetricRow::ssim); }

  std::string to_csv() const {
    std::string out = "view,psnr,ssim,lpips\n";
    for (const auto& r : rows) {
      out += r.view + "," + detail::fmt_metric(r.psnr, 6) + "," + detail::fmt_metric(r.ssim, 6) + ",\n";
    }
    if (!rows.empty()) {
      out += "mean," + detail::fmt_metric(mean_psnr(), 6) + "," + detail::fmt_metric(mean_ssim(), 6) + ",\n";
    }
    return out;
  }

  /// Aligned table per metric: one method row, "Avg." first, then each view.
  std::string to_table() const {
    std::string out;
    const std::size_t w = 9;
    auto header = [&](const char* metric) {
      std::string h = std::string(metric) + "\n" + detail::pad("Method", 12) + detail::pad("Avg.", w) + " |";
      for (const auto& r : rows) h += detail::pad(r.view, w);
      return h + "\n";
    };
    auto line = [&](double MetricRow::*field, double avg, int digits) {
      std::string l = detail::pad(method, 12) + detail::pad(detail::fmt_metric(avg, digits), w) + " |";
      for (const auto& r : rows) l += detail::pad(detail::fmt_metric(r.*field, digits), w);
      return l + "\n";
    };
    if (rows.empty()) return "(no views)\n";
    out += header("PSNR") + line(&MetricRow::psnr, mean_psnr(), 2) + "\n";
    out += header("SSIM") + line(&MetricRow::ssim, mean_ssim(), 3) + "\n";
    out += header("LPIPS") + detail::pad(method, 12) + detail::pad("-", w) + " |\n";
    return out;
  }

 private:
  double mean(double MetricRow::*field) const {
    if (rows.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (const auto& r : rows) s += r.*field;
    return s / static_cast<double>(rows.size());
  }
};

/// Method-per-row summary: Method | PSNR | SSIM | LPIPS.
inline std::string comparison_table(const std::vector<MetricReport>& reports) {
  std::string out = detail::pad("Method", 12) + detail::pad("PSNR", 9) + detail::pad("SSIM", 9) +
                    detail::pad("LPIPS", 9) + "\n";
  for (const auto& r : reports) {
    out += detail::pad(r.method, 12) + detail::pad(detail::fmt_metric(r.mean_psnr(), 2), 9) +
           detail::pad(detail::fmt_metric(r.mean_ssim(), 3), 9) + detail::pad("-", 9) + "\n";
  }
  return out;
}

/// Renders every view of `split` with `render` and scores it against the
/// composited ground truth.
inline MetricReport evaluate_scene(const std::function<Image(const CameraModel&)>& render, const SceneDataset& dataset,
                                   const std::string& split, const std::string& method = "BioNeRF",
                                   const SsimOptions& ssim_options = {}) {
  MetricReport report;
  report.method = method;
  const auto& views = dataset.split(split);
  for (Index i = 0; i < views.size(); ++i) {
    const Image predicted = render(views[i].camera);
    const Image truth = dataset.target(views[i]);
    report.rows.push_back({"r_" + std::to_string(i), psnr(predicted, truth), ssim(predicted, truth, ssim_options)});
  }
  return report;
}

}  // namespace bionerf
