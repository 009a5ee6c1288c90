#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mam4wf/errors.hpp"
#include "mam4wf/tensor.hpp"

namespace mam4wf {

// ---------------------------------------------------------------------------
// Pixel metrics

struct PixelMetrics {
  double mse = 0.0;
  double mae = 0.0;
  double psnr = 0.0;  // +inf when mse == 0
};

// Mean metrics over any pair of equally shaped arrays in [0, 1];
// psnr = 10 log10(1 / mse) for unit data range.
template <typename T>
PixelMetrics pixel_metrics(const Tensor<T>& pred, const Tensor<T>& obs) {
  if (!pred.same_shape(obs))
    throw ArgumentError("pixel_metrics: shape mismatch " + shape_string(pred) +
                        " vs " + shape_string(obs));
  if (pred.numel() == 0) throw ArgumentError("pixel_metrics: empty arrays");
  double se = 0.0, ae = 0.0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(obs[i]);
    if (!std::isfinite(d)) throw ArgumentError("pixel_metrics: non-finite input");
    se += d * d;
    ae += std::fabs(d);
  }
  PixelMetrics m;
  m.mse = se / static_cast<double>(pred.numel());
  m.mae = ae / static_cast<double>(pred.numel());
  m.psnr = m.mse == 0.0 ? std::numeric_limits<double>::infinity()
                        : 10.0 * std::log10(1.0 / m.mse);
  return m;
}

// ---------------------------------------------------------------------------
// SSIM

struct SsimConfig {
  int64_t window = 11;
  double k1 = 0.01;
  double k2 = 0.03;
  double sigma = 1.5;
  double data_range = 1.0;
};

namespace metrics_detail {

inline std::vector<double> gaussian_window(int64_t size, double sigma) {
  std::vector<double> w(static_cast<size_t>(size * size));
  const double c = static_cast<double>(size - 1) / 2.0;
  double sum = 0.0;
  for (int64_t y = 0; y < size; ++y)
    for (int64_t x = 0; x < size; ++x) {
      const double dy = static_cast<double>(y) - c;
      const double dx = static_cast<double>(x) - c;
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      w[static_cast<size_t>(y * size + x)] = v;
      sum += v;
    }
  for (double& v : w) v /= sum;
  return w;
}

// Windowed SSIM over one 2-D plane, averaged over all fully interior
// window positions.
template <typename T>
double ssim_plane(const T* a, const T* b, int64_t h, int64_t w,
                  const SsimConfig& cfg) {
  const int64_t win = cfg.window;
  const std::vector<double> weights = gaussian_window(win, cfg.sigma);
  const double c1 = (cfg.k1 * cfg.data_range) * (cfg.k1 * cfg.data_range);
  const double c2 = (cfg.k2 * cfg.data_range) * (cfg.k2 * cfg.data_range);
  double total = 0.0;
  int64_t positions = 0;
  for (int64_t oy = 0; oy + win <= h; ++oy) {
    for (int64_t ox = 0; ox + win <= w; ++ox) {
      double mu_a = 0.0, mu_b = 0.0;
      for (int64_t y = 0; y < win; ++y)
        for (int64_t x = 0; x < win; ++x) {
          const double wt = weights[static_cast<size_t>(y * win + x)];
          mu_a += wt * a[(oy + y) * w + ox + x];
          mu_b += wt * b[(oy + y) * w + ox + x];
        }
      double var_a = 0.0, var_b = 0.0, cov = 0.0;
      for (int64_t y = 0; y < win; ++y)
        for (int64_t x = 0; x < win; ++x) {
          const double wt = weights[static_cast<size_t>(y * win + x)];
          const double da = a[(oy + y) * w + ox + x] - mu_a;
          const double db = b[(oy + y) * w + ox + x] - mu_b;
          var_a += wt * da * da;
          var_b += wt * db * db;
          cov += wt * da * db;
        }
      const double num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
      const double den =
          (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
      total += num / den;
      ++positions;
    }
  }
  return total / static_cast<double>(positions);
}

}  // namespace metrics_detail

// Structural similarity between two images, (H, W) or (C, H, W); channels
// average. Inputs are expected in [0, data_range].
template <typename T>
double ssim(const Tensor<T>& pred, const Tensor<T>& obs,
            const SsimConfig& cfg = {}) {
  if (!pred.same_shape(obs))
    throw ArgumentError("ssim: shape mismatch");
  if (pred.rank() != 2 && pred.rank() != 3)
    throw ArgumentError("ssim: expected (H, W) or (C, H, W)");
  const int64_t c = pred.rank() == 3 ? pred.dim(0) : 1;
  const int64_t h = pred.dim(pred.rank() - 2);
  const int64_t w = pred.dim(pred.rank() - 1);
  if (cfg.window > h || cfg.window > w)
    throw ArgumentError("ssim: window larger than image");
  double total = 0.0;
  for (int64_t ci = 0; ci < c; ++ci)
    total += metrics_detail::ssim_plane(pred.data() + ci * h * w,
                                        obs.data() + ci * h * w, h, w, cfg);
  return total / static_cast<double>(c);
}

// ---------------------------------------------------------------------------
// Critical success index

// Thresholds on the 0-255 intensity scale.
inline const std::vector<double>& csi_thresholds() {
  static const std::vector<double> t = {16, 74, 133, 160, 181, 219};
  return t;
}

// Inputs on the 0-255 scale (frames in [0, 1] are rescaled by x255 upstream).
// Binarizes both fields at the threshold; empty denominator scores 0.
template <typename T>
double csi(const Tensor<T>& pred, const Tensor<T>& obs, double threshold) {
  if (!pred.same_shape(obs)) throw ArgumentError("csi: shape mismatch");
  int64_t hits = 0, misses = 0, false_alarms = 0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const bool p = static_cast<double>(pred[i]) >= threshold;
    const bool o = static_cast<double>(obs[i]) >= threshold;
    hits += (p && o);
    misses += (!p && o);
    false_alarms += (p && !o);
  }
  const int64_t denom = hits + misses + false_alarms;
  return denom == 0 ? 0.0
                    : static_cast<double>(hits) / static_cast<double>(denom);
}

template <typename T>
double csi_m(const Tensor<T>& pred, const Tensor<T>& obs) {
  double total = 0.0;
  for (double thr : csi_thresholds()) total += csi(pred, obs, thr);
  return total / static_cast<double>(csi_thresholds().size());
}

// ---------------------------------------------------------------------------
// ENSO correlation skill

struct Nino34Skill {
  double mean = 0.0;           // C-Nino3.4-M
  double weighted_mean = 0.0;  // C-Nino3.4-WM, weights proportional to lead
  std::vector<double> per_lead;
};

namespace metrics_detail {

inline double pearson(const std::vector<double>& a,
                      const std::vector<double>& b) {
  const size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double num = 0.0, va = 0.0, vb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    num += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  if (va == 0.0 || vb == 0.0)
    throw ArgumentError("nino34: zero-variance index series, correlation undefined");
  return num / std::sqrt(va * vb);
}

}  // namespace metrics_detail

// Anomaly grids (samples, steps, H, W) with latitude/longitude coordinates in
// degrees. The index is the cos-latitude weighted mean over the box
// 5S-5N, 170W-120W; a three-month running mean is applied along steps and
// Pearson correlation is taken per lead across samples. The weighted mean
// uses normalized weights proportional to the lead index.
template <typename T>
Nino34Skill nino34_skill(const Tensor<T>& pred, const Tensor<T>& obs,
                         const std::vector<double>& lat,
                         const std::vector<double>& lon) {
  if (!pred.same_shape(obs)) throw ArgumentError("nino34: shape mismatch");
  if (pred.rank() != 4) throw ArgumentError("nino34: expected (S, L, H, W)");
  const int64_t samples = pred.dim(0), steps = pred.dim(1), h = pred.dim(2),
                w = pred.dim(3);
  if (static_cast<int64_t>(lat.size()) != h ||
      static_cast<int64_t>(lon.size()) != w)
    throw ArgumentError("nino34: coordinate map does not match grid");
  if (steps < 14)
    throw ArgumentError(
        "nino34: need >= 14 forecast steps for three-month averaging");
  if (samples < 2) throw ArgumentError("nino34: need >= 2 samples");

  // Box mask: 5S-5N, 170W-120W (190E-240E).
  std::vector<std::pair<int64_t, double>> cells;  // (flat offset, weight)
  constexpr double kPi = 3.14159265358979323846;
  for (int64_t y = 0; y < h; ++y) {
    if (lat[static_cast<size_t>(y)] < -5.0 || lat[static_cast<size_t>(y)] > 5.0)
      continue;
    for (int64_t x = 0; x < w; ++x) {
      double lo = std::fmod(lon[static_cast<size_t>(x)], 360.0);
      if (lo < 0.0) lo += 360.0;
      if (lo < 190.0 || lo > 240.0) continue;
      const double weight =
          std::cos(lat[static_cast<size_t>(y)] * kPi / 180.0);
      cells.emplace_back(y * w + x, weight);
    }
  }
  if (cells.empty()) throw ArgumentError("nino34: grid does not cover the box");
  double wsum = 0.0;
  for (const auto& [off, wt] : cells) wsum += wt;

  auto index_series = [&](const Tensor<T>& grid, int64_t s) {
    std::vector<double> idx(static_cast<size_t>(steps), 0.0);
    for (int64_t l = 0; l < steps; ++l) {
      const T* plane = grid.data() + (s * steps + l) * h * w;
      double acc = 0.0;
      for (const auto& [off, wt] : cells)
        acc += wt * static_cast<double>(plane[off]);
      idx[static_cast<size_t>(l)] = acc / wsum;
    }
    // Three-month running mean.
    std::vector<double> smooth(static_cast<size_t>(steps - 2));
    for (int64_t l = 0; l + 2 < steps; ++l)
      smooth[static_cast<size_t>(l)] =
          (idx[static_cast<size_t>(l)] + idx[static_cast<size_t>(l + 1)] +
           idx[static_cast<size_t>(l + 2)]) /
          3.0;
    return smooth;
  };

  const int64_t leads = steps - 2;
  std::vector<std::vector<double>> pred_idx(static_cast<size_t>(samples)),
      obs_idx(static_cast<size_t>(samples));
  for (int64_t s = 0; s < samples; ++s) {
    pred_idx[static_cast<size_t>(s)] = index_series(pred, s);
    obs_idx[static_cast<size_t>(s)] = index_series(obs, s);
  }

  Nino34Skill skill;
  double wnorm = 0.0;
  for (int64_t l = 0; l < leads; ++l) wnorm += static_cast<double>(l + 1);
  for (int64_t l = 0; l < leads; ++l) {
    std::vector<double> p(static_cast<size_t>(samples)),
        o(static_cast<size_t>(samples));
    for (int64_t s = 0; s < samples; ++s) {
      p[static_cast<size_t>(s)] = pred_idx[static_cast<size_t>(s)][static_cast<size_t>(l)];
      o[static_cast<size_t>(s)] = obs_idx[static_cast<size_t>(s)][static_cast<size_t>(l)];
    }
    const double corr = metrics_detail::pearson(p, o);
    skill.per_lead.push_back(corr);
    skill.mean += corr / static_cast<double>(leads);
    skill.weighted_mean += corr * static_cast<double>(l + 1) / wnorm;
  }
  return skill;
}

// ---------------------------------------------------------------------------
// Reports

struct StepMetrics {
  int64_t step = 0;  // 1-based lead time
  double mse = 0.0;
  double mae = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  std::vector<double> csi;  // one per threshold
  double csi_m = 0.0;
};

struct MetricsReport {
  std::string scheme;
  bool used_ema = false;
  bool used_lp = false;
  std::vector<StepMetrics> per_step;
  StepMetrics aggregate;  // step = 0
  std::optional<Nino34Skill> nino34;

  void validate() const {
    auto check = [](const StepMetrics& m) {
      if (m.mse < 0.0 || m.mae < 0.0)
        throw StateError("metrics report: negative error metric");
      if (m.ssim < -1.0 - 1e-9 || m.ssim > 1.0 + 1e-9)
        throw StateError("metrics report: ssim outside [-1, 1]");
      for (double c : m.csi)
        if (c < 0.0 || c > 1.0)
          throw StateError("metrics report: csi outside [0, 1]");
    };
    for (const auto& m : per_step) check(m);
    check(aggregate);
  }

  std::string to_csv() const {
    std::ostringstream out;
    out.precision(10);
    out << "scheme,ema,lp,step,mse,mae,psnr,ssim";
    for (double thr : csi_thresholds()) out << ",csi_" << thr;
    out << ",csi_m\n";
    auto row = [&](const StepMetrics& m, const std::string& tag) {
      out << scheme << "," << (used_ema ? 1 : 0) << "," << (used_lp ? 1 : 0)
          << "," << tag << "," << m.mse << "," << m.mae << "," << m.psnr << ","
          << m.ssim;
      for (double c : m.csi) out << "," << c;
      out << "," << m.csi_m << "\n";
    };
    for (const auto& m : per_step) row(m, std::to_string(m.step));
    row(aggregate, "all");
    return out.str();
  }

  std::string summary() const {
    std::ostringstream out;
    out.precision(6);
    out << "scheme " << scheme << (used_ema ? " [ema]" : "")
        << (used_lp ? " [lp]" : "") << "\n";
    out << "  aggregate: mse " << aggregate.mse << "  mae " << aggregate.mae
        << "  psnr " << aggregate.psnr << "  ssim " << aggregate.ssim
        << "  csi_m " << aggregate.csi_m << "\n";
    for (const auto& m : per_step)
      out << "  t=" << m.step << ": mse " << m.mse << "  mae " << m.mae
          << "  ssim " << m.ssim << "\n";
    if (nino34) {
      out << "  nino3.4: mean " << nino34->mean << "  weighted "
          << nino34->weighted_mean << "\n";
    }
    return out.str();
  }

  void save_csv(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << to_csv();
  }
};

}  // namespace mam4wf
