#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "mam4wf/dataset.hpp"
#include "mam4wf/errors.hpp"
#include "mam4wf/metrics.hpp"
#include "mam4wf/model.hpp"
#include "mam4wf/tensor.hpp"

namespace mam4wf {

// One forecast rollout: raw (unclamped) predictions, the stored feature
// history, and the scheme that produced them. Predictions are clamped to
// [0, 1] only when metrics are computed.
template <typename T>
struct ForecastEpisode {
  Scheme scheme = Scheme::kMaskedAr;
  Tensor<T> observed;                       // (C, T, H, W)
  std::vector<Tensor<T>> predictions;       // each (C, H, W)
  std::vector<Tensor<T>> feature_history;   // each (Cf, Hf, Wf)
};

// Masked autoregressive rollout: the observation is encoded exactly once,
// each predicted frame is projected (learned prior when use_lp, encoder
// otherwise) and appended to the error-prone history.
template <typename T>
ForecastEpisode<T> masked_autoregressive_forecast(ForecastNet<T>& net,
                                                  const Tensor<T>& observed,
                                                  int64_t horizon,
                                                  bool use_lp) {
  const ModelConfig& cfg = net.config();
  if (cfg.scheme != Scheme::kMaskedAr)
    throw StateError("masked autoregressive forecast needs a masked-ar model");
  if (horizon < 1) throw RangeError("horizon must be >= 1");
  if (horizon > cfg.t_hat)
    throw CapacityError("horizon " + std::to_string(horizon) +
                        " exceeds queue capacity " + std::to_string(cfg.t_hat));
  ForecastEpisode<T> ep;
  ep.scheme = Scheme::kMaskedAr;
  ep.observed = observed;

  const Tensor<T> obs_feat = net.encode(frames_from_sequence(observed));
  for (int64_t t = 1; t <= horizon; ++t) {
    QueuePair<T> q = net.assemble_queues(obs_feat, ep.feature_history, t);
    LeadTimeEmbedding<T> emb = net.lead_time_embed(t);
    Tensor<T> frame = net.decode(net.predict(q, &emb));
    Tensor<T> pred = frame.reshaped({cfg.channels, frame.dim(2), frame.dim(3)});
    Tensor<T> feat;
    if (use_lp) {
      feat = net.lp_project(pred);
    } else {
      Tensor<T> f = net.encode(
          frame.reshaped({1, cfg.channels, frame.dim(2), frame.dim(3)}));
      feat = f.reshaped({f.dim(1), f.dim(2), f.dim(3)});
    }
    ep.feature_history.push_back(std::move(feat));
    ep.predictions.push_back(std::move(pred));
  }
  return ep;
}

// Sliding-window baseline: raw predicted frames are fed back, the oldest
// observed frame drops out, the window length stays fixed.
template <typename T>
ForecastEpisode<T> miso_autoregressive_forecast(ForecastNet<T>& net,
                                                const Tensor<T>& observed,
                                                int64_t horizon) {
  const ModelConfig& cfg = net.config();
  if (cfg.scheme != Scheme::kMisoAr)
    throw StateError("miso autoregressive forecast needs a miso-ar model");
  if (horizon < 1) throw RangeError("horizon must be >= 1");
  ForecastEpisode<T> ep;
  ep.scheme = Scheme::kMisoAr;
  ep.observed = observed;

  Tensor<T> window = observed;  // (C, T, H, W)
  const int64_t c = cfg.channels, t_obs = cfg.t_obs;
  const int64_t h = observed.dim(2), w = observed.dim(3);
  for (int64_t t = 1; t <= horizon; ++t) {
    Tensor<T> pred = net.forward_window(window);  // (C, H, W)
    // Slide: shift frames left, place the prediction last.
    Tensor<T> next({c, t_obs, h, w});
    for (int64_t ci = 0; ci < c; ++ci)
      for (int64_t ti = 0; ti < t_obs; ++ti)
        for (int64_t y = 0; y < h; ++y)
          for (int64_t x = 0; x < w; ++x)
            next.at(ci, ti, y, x) =
                ti + 1 < t_obs
                    ? window.at(ci, ti + 1, y, x)
                    : pred[(ci * h + y) * w + x];
    window = std::move(next);
    ep.predictions.push_back(std::move(pred));
  }
  for (const Tensor<T>& pred : ep.predictions) {
    Tensor<T> f =
        net.encode(pred.reshaped({1, c, h, w}));
    ep.feature_history.push_back(f.reshaped({f.dim(1), f.dim(2), f.dim(3)}));
  }
  return ep;
}

// Single-pass baseline emitting every future frame at once. The horizon is
// baked into the decoder, so any other request is a configuration error.
template <typename T>
ForecastEpisode<T> mimo_forecast(ForecastNet<T>& net, const Tensor<T>& observed,
                                 int64_t horizon) {
  const ModelConfig& cfg = net.config();
  if (cfg.scheme != Scheme::kMimo)
    throw StateError("mimo forecast needs a mimo model");
  if (horizon != cfg.t_hat)
    throw ConfigError("mimo model emits exactly " + std::to_string(cfg.t_hat) +
                      " frames, requested " + std::to_string(horizon));
  ForecastEpisode<T> ep;
  ep.scheme = Scheme::kMimo;
  ep.observed = observed;
  Tensor<T> frames = net.forward_mimo(observed);  // (T_hat, C, H, W)
  const int64_t c = cfg.channels, h = frames.dim(2), w = frames.dim(3);
  for (int64_t t = 0; t < cfg.t_hat; ++t) {
    Tensor<T> pred({c, h, w});
    std::copy(frames.data() + t * c * h * w,
              frames.data() + (t + 1) * c * h * w, pred.data());
    ep.predictions.push_back(std::move(pred));
  }
  for (const Tensor<T>& pred : ep.predictions) {
    Tensor<T> f = net.encode(pred.reshaped({1, c, h, w}));
    ep.feature_history.push_back(f.reshaped({f.dim(1), f.dim(2), f.dim(3)}));
  }
  return ep;
}

template <typename T>
ForecastEpisode<T> run_episode(ForecastNet<T>& net, const Tensor<T>& observed,
                               int64_t horizon, bool use_lp) {
  switch (net.config().scheme) {
    case Scheme::kMaskedAr:
      return masked_autoregressive_forecast(net, observed, horizon, use_lp);
    case Scheme::kMisoAr:
      return miso_autoregressive_forecast(net, observed, horizon);
    case Scheme::kMimo:
      return mimo_forecast(net, observed, horizon);
  }
  throw ArgumentError("unknown scheme");
}

template <typename T>
Tensor<T> clamp01(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (int64_t i = 0; i < y.numel(); ++i)
    y[i] = std::min(T(1), std::max(T(0), y[i]));
  return y;
}

// ---------------------------------------------------------------------------
// Test-set evaluation

struct EvalOptions {
  int64_t horizon = 0;  // 0: model t_hat
  bool use_lp = false;
  bool used_ema = false;  // recorded in the report; the caller loads EMA nets
  int64_t num_threads = 0;
  bool with_ssim = true;
  bool with_csi = true;
};

// Per-step metric accumulation over a list of test sequences. Episodes run
// on per-worker network replicas (parameters are copied, layer caches are
// private) and partial sums reduce in worker order.
template <typename T>
MetricsReport evaluate_scheme(ForecastNet<T>& net,
                              const std::vector<Tensor<float>>& test_seqs,
                              int64_t t_obs, int64_t t_hat,
                              const EvalOptions& opts) {
  const int64_t horizon = opts.horizon > 0 ? opts.horizon : net.config().t_hat;
  if (horizon > t_hat)
    throw CapacityError("horizon exceeds dataset target length");
  const int64_t n = static_cast<int64_t>(test_seqs.size());
  if (n == 0) throw ArgumentError("evaluate_scheme: empty test set");

  const int64_t hw = static_cast<int64_t>(std::thread::hardware_concurrency());
  const int64_t workers =
      std::max<int64_t>(1, std::min(opts.num_threads > 0 ? opts.num_threads : hw,
                                    n));

  struct Acc {
    std::vector<double> mse, mae, ssim_sum;
    std::vector<std::vector<double>> csi_sum;  // [step][threshold]
    int64_t count = 0;
  };
  std::vector<Acc> acc(static_cast<size_t>(workers));
  for (auto& a : acc) {
    a.mse.assign(static_cast<size_t>(horizon), 0.0);
    a.mae.assign(static_cast<size_t>(horizon), 0.0);
    a.ssim_sum.assign(static_cast<size_t>(horizon), 0.0);
    a.csi_sum.assign(static_cast<size_t>(horizon),
                     std::vector<double>(csi_thresholds().size(), 0.0));
  }

  auto run_worker = [&](int64_t wk, ForecastNet<T>& wnet) {
    Acc& a = acc[static_cast<size_t>(wk)];
    const int64_t lo = wk * n / workers, hi = (wk + 1) * n / workers;
    for (int64_t i = lo; i < hi; ++i) {
      SamplePair pair = split_frames(test_seqs[static_cast<size_t>(i)], t_obs, t_hat);
      Tensor<T> observed = tensor_cast<T>(pair.observed);
      ForecastEpisode<T> ep = run_episode(wnet, observed, horizon, opts.use_lp);
      for (int64_t t = 1; t <= horizon; ++t) {
        Tensor<T> pred = clamp01(ep.predictions[static_cast<size_t>(t - 1)]);
        Tensor<T> truth = tensor_cast<T>(sequence_frame(pair.target, t - 1));
        const PixelMetrics pm = pixel_metrics(pred, truth);
        a.mse[static_cast<size_t>(t - 1)] += pm.mse;
        a.mae[static_cast<size_t>(t - 1)] += pm.mae;
        if (opts.with_ssim)
          a.ssim_sum[static_cast<size_t>(t - 1)] += ssim(pred, truth);
        if (opts.with_csi) {
          Tensor<T> pred255 = scaled(pred, T(255));
          Tensor<T> truth255 = scaled(truth, T(255));
          for (size_t k = 0; k < csi_thresholds().size(); ++k)
            a.csi_sum[static_cast<size_t>(t - 1)][k] +=
                csi(pred255, truth255, csi_thresholds()[k]);
        }
      }
      ++a.count;
    }
  };

  std::vector<std::unique_ptr<ForecastNet<T>>> replicas;
  for (int64_t wk = 0; wk < workers; ++wk) {
    replicas.push_back(std::make_unique<ForecastNet<T>>(net.config()));
    copy_params(*replicas.back(), net);
  }
  if (workers == 1) {
    run_worker(0, *replicas[0]);
  } else {
    std::vector<std::thread> threads;
    for (int64_t wk = 1; wk < workers; ++wk)
      threads.emplace_back([&, wk] { run_worker(wk, *replicas[static_cast<size_t>(wk)]); });
    run_worker(0, *replicas[0]);
    for (auto& th : threads) th.join();
  }

  MetricsReport report;
  report.scheme = scheme_name(net.config().scheme);
  report.used_ema = opts.used_ema;
  report.used_lp = opts.use_lp;
  double agg_mse = 0.0, agg_mae = 0.0, agg_ssim = 0.0;
  std::vector<double> agg_csi(csi_thresholds().size(), 0.0);
  for (int64_t t = 0; t < horizon; ++t) {
    StepMetrics m;
    m.step = t + 1;
    double mse = 0.0, mae = 0.0, ss = 0.0;
    std::vector<double> cs(csi_thresholds().size(), 0.0);
    int64_t count = 0;
    for (const auto& a : acc) {
      mse += a.mse[static_cast<size_t>(t)];
      mae += a.mae[static_cast<size_t>(t)];
      ss += a.ssim_sum[static_cast<size_t>(t)];
      for (size_t k = 0; k < cs.size(); ++k)
        cs[k] += a.csi_sum[static_cast<size_t>(t)][k];
      count += a.count;
    }
    m.mse = mse / static_cast<double>(count);
    m.mae = mae / static_cast<double>(count);
    m.psnr = m.mse == 0.0 ? std::numeric_limits<double>::infinity()
                          : 10.0 * std::log10(1.0 / m.mse);
    m.ssim = opts.with_ssim ? ss / static_cast<double>(count) : 0.0;
    for (size_t k = 0; k < cs.size(); ++k)
      m.csi.push_back(opts.with_csi ? cs[k] / static_cast<double>(count) : 0.0);
    m.csi_m = 0.0;
    for (double c : m.csi) m.csi_m += c / static_cast<double>(m.csi.size());
    agg_mse += m.mse / static_cast<double>(horizon);
    agg_mae += m.mae / static_cast<double>(horizon);
    agg_ssim += m.ssim / static_cast<double>(horizon);
    for (size_t k = 0; k < cs.size(); ++k)
      agg_csi[k] += m.csi[k] / static_cast<double>(horizon);
    report.per_step.push_back(std::move(m));
  }
  report.aggregate.step = 0;
  report.aggregate.mse = agg_mse;
  report.aggregate.mae = agg_mae;
  report.aggregate.psnr = agg_mse == 0.0
                              ? std::numeric_limits<double>::infinity()
                              : 10.0 * std::log10(1.0 / agg_mse);
  report.aggregate.ssim = agg_ssim;
  report.aggregate.csi = agg_csi;
  report.aggregate.csi_m = 0.0;
  for (double c : agg_csi)
    report.aggregate.csi_m += c / static_cast<double>(agg_csi.size());
  report.validate();
  return report;
}

// ---------------------------------------------------------------------------
// Horizon sweep

struct HorizonSweepRow {
  std::string scheme;
  int64_t horizon = 0;
  int64_t step = 0;
  double mse = 0.0;
};

// Per-step MSE for each requested horizon, CSV-ready.
template <typename T>
std::vector<HorizonSweepRow> horizon_sweep(
    ForecastNet<T>& net, const std::vector<Tensor<float>>& test_seqs,
    int64_t t_obs, int64_t t_hat, const std::vector<int64_t>& horizons,
    bool use_lp = false) {
  std::vector<HorizonSweepRow> rows;
  for (int64_t hz : horizons) {
    EvalOptions opts;
    opts.horizon = hz;
    opts.use_lp = use_lp;
    opts.with_ssim = false;
    opts.with_csi = false;
    MetricsReport report = evaluate_scheme(net, test_seqs, t_obs, t_hat, opts);
    for (const auto& m : report.per_step)
      rows.push_back({report.scheme, hz, m.step, m.mse});
  }
  return rows;
}

inline std::string horizon_sweep_csv(const std::vector<HorizonSweepRow>& rows) {
  std::ostringstream out;
  out.precision(10);
  out << "scheme,horizon,step,mse\n";
  for (const auto& r : rows)
    out << r.scheme << "," << r.horizon << "," << r.step << "," << r.mse << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Prediction dumps

// One container file per episode holding the (horizon, C, H, W) stack of raw
// predictions, plus a manifest for the directory.
template <typename T>
void dump_predictions(const std::string& dir,
                      const std::vector<ForecastEpisode<T>>& episodes) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (size_t i = 0; i < episodes.size(); ++i) {
    const auto& ep = episodes[i];
    const int64_t horizon = static_cast<int64_t>(ep.predictions.size());
    const int64_t c = ep.predictions[0].dim(0), h = ep.predictions[0].dim(1),
                  w = ep.predictions[0].dim(2);
    Tensor<T> stack({horizon, c, h, w});
    for (int64_t t = 0; t < horizon; ++t)
      std::copy(ep.predictions[static_cast<size_t>(t)].data(),
                ep.predictions[static_cast<size_t>(t)].data() + c * h * w,
                stack.data() + t * c * h * w);
    save_array((fs::path(dir) / ("episode_" + std::to_string(i) + ".mamf")).string(),
               stack);
  }
  KvMap kv;
  kv.set("format", "mam4wf-predictions-v1");
  kv.set_int("count", static_cast<int64_t>(episodes.size()));
  if (!episodes.empty()) {
    kv.set("scheme", scheme_name(episodes[0].scheme));
    kv.set_int("horizon", static_cast<int64_t>(episodes[0].predictions.size()));
  }
  kv.save((fs::path(dir) / "manifest.txt").string());
}

}  // namespace mam4wf
