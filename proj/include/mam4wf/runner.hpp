#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mam4wf/checkpoint.hpp"
#include "mam4wf/dataset.hpp"
#include "mam4wf/errors.hpp"
#include "mam4wf/experiment.hpp"
#include "mam4wf/inference.hpp"
#include "mam4wf/model.hpp"
#include "mam4wf/training.hpp"

namespace mam4wf {

// ---------------------------------------------------------------------------
// gen-data

// Writes train/test splits plus the manifest. Refuses to overwrite an
// existing non-empty directory unless forced.
inline void generate_dataset_run(const ExperimentConfig& cfg,
                                 const std::string& root, bool force) {
  namespace fs = std::filesystem;
  if (fs::exists(root) && !fs::is_empty(root)) {
    if (!force)
      throw IoError("output directory " + root +
                    " is not empty (use --force to regenerate)");
    fs::remove_all(root);
  }
  const auto train = generate_moving_digits(cfg.generator(false));
  const auto test = generate_moving_digits(cfg.generator(true));
  DatasetManifest manifest;
  manifest.train_count = cfg.data.train_count;
  manifest.test_count = cfg.data.test_count;
  manifest.channels = 1;
  manifest.frames = cfg.data.total_frames;
  manifest.height = cfg.data.height;
  manifest.width = cfg.data.width;
  manifest.t_obs = cfg.data.t_obs;
  manifest.t_hat = cfg.data.t_hat;
  manifest.seed = cfg.data.seed;
  write_dataset(root, train, test, manifest);
}

// ---------------------------------------------------------------------------
// train

inline void check_dataset_fits(const DatasetManifest& m,
                               const ModelConfig& model) {
  if (m.t_obs != model.t_obs || m.t_hat != model.t_hat)
    throw ConfigError("dataset split (T=" + std::to_string(m.t_obs) +
                      ", T_hat=" + std::to_string(m.t_hat) +
                      ") does not match the model");
  if (m.channels != model.channels)
    throw ConfigError("dataset channel count does not match the model");
  if (m.height % model.total_downsample() != 0 ||
      m.width % model.total_downsample() != 0)
    throw ConfigError("dataset frames are not divisible by the downsample");
}

struct TrainRun {
  TrainResult result;
  std::string final_checkpoint;
};

// (C, T_total, H, W) -> window (C, t_obs, H, W) starting at `offset`.
inline Tensor<float> window_of(const Tensor<float>& seq, int64_t offset,
                               int64_t t_obs) {
  const int64_t c = seq.dim(0), h = seq.dim(2), w = seq.dim(3);
  Tensor<float> out({c, t_obs, h, w});
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t t = 0; t < t_obs; ++t)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
          out.at(ci, t, y, x) = seq.at(ci, offset + t, y, x);
  return out;
}

inline Checkpoint make_checkpoint(ForecastNet<float>& net,
                                  const ParamSnapshot<float>& ema,
                                  Adam<float>& opt, int64_t step,
                                  const Rng& train_rng) {
  Checkpoint ckpt;
  ckpt.config = net.config();
  ckpt.live = snapshot_params(net);
  ckpt.ema = ema;
  ckpt.adam_m.names = ckpt.live.names;
  ckpt.adam_m.values = opt.first_moments();
  ckpt.adam_v.names = ckpt.live.names;
  ckpt.adam_v.values = opt.second_moments();
  ckpt.extra.set_int("train.step", step);
  ckpt.extra.set_int("train.adam_t", opt.iterations());
  ckpt.extra.set("train.rng_state", train_rng.state_string());
  return ckpt;
}

// Trains one scheme on a dataset directory, writing the resolved config, a
// CSV loss log and periodic + final checkpoints into run_dir. Passing a
// checkpoint path resumes with the exact step counter, optimizer moments and
// rng state.
inline TrainRun train_run(const ExperimentConfig& cfg,
                          const std::string& dataset_dir,
                          const std::string& run_dir,
                          const std::string& resume_path = "") {
  namespace fs = std::filesystem;
  cfg.validate();
  const Dataset ds = load_dataset(dataset_dir);
  check_dataset_fits(ds.manifest, cfg.model);
  if (ds.train.empty()) throw IoError("dataset has no training sequences");

  fs::create_directories(run_dir);
  ForecastNet<float> net(cfg.model);
  ParamSnapshot<float> ema;
  Adam<float> opt(cfg.train.adam);
  Rng train_rng(cfg.train_seed());
  int64_t start_step = 0;

  if (resume_path.empty()) {
    net.init_params(cfg.init_seed());
    ema = snapshot_params(net);
    opt.attach(collect_params(net));
  } else {
    const Checkpoint ckpt = load_checkpoint(resume_path);
    if (ckpt.config.scheme != cfg.model.scheme)
      throw ConfigError("resume checkpoint has scheme " +
                        scheme_name(ckpt.config.scheme));
    load_snapshot(net, ckpt.live);
    ema = ckpt.ema;
    opt.attach(collect_params(net));
    if (!ckpt.adam_m.values.empty()) {
      opt.first_moments() = ckpt.adam_m.values;
      opt.second_moments() = ckpt.adam_v.values;
      opt.set_iterations(ckpt.extra.get_int_or("train.adam_t", 0));
    }
    start_step = ckpt.extra.get_int_or("train.step", 0);
    if (ckpt.extra.has("train.rng_state"))
      train_rng.set_state_string(ckpt.extra.get("train.rng_state"));
  }

  // Self-describing run directory.
  KvMap resolved = cfg.to_kv();
  resolved.set_int("train.resolved_threads", cfg.train.resolved_threads());
  resolved.set("dataset_dir", dataset_dir);
  resolved.save((fs::path(run_dir) / "config.resolved.cfg").string());
  TrainLog log((fs::path(run_dir) / "train_log.csv").string());

  const int64_t n_train = static_cast<int64_t>(ds.train.size());
  const double inv_batch = 1.0 / static_cast<double>(cfg.train.batch_size);
  const MaskPolicy mask = cfg.train.mask;
  const Scheme scheme = cfg.model.scheme;
  const int64_t t_obs = cfg.model.t_obs, t_hat = cfg.model.t_hat;

  auto make_batch_fn = [&](int64_t, uint64_t) {
    return [&, scheme](ForecastNet<float>& worker, int64_t, Rng& rng) {
      const int64_t seq_index = rng.uniform_int(0, n_train - 1);
      const Tensor<float>& seq = ds.train[static_cast<size_t>(seq_index)];
      switch (scheme) {
        case Scheme::kMaskedAr: {
          SamplePair pair = split_frames(seq, t_obs, t_hat);
          const double ratio = resolve_mask_ratio(mask, rng);
          return inv_batch * rollout_sample_backward(worker, pair.observed,
                                                     pair.target, inv_batch,
                                                     ratio, &rng);
        }
        case Scheme::kMisoAr: {
          // Random one-step window: frames [o, o+T) -> frame o+T.
          const int64_t offset = rng.uniform_int(0, t_hat - 1);
          Tensor<float> window = window_of(seq, offset, t_obs);
          Tensor<float> next = target_frame(seq, offset + t_obs);
          return inv_batch *
                 window_sample_backward(worker, window, next, inv_batch);
        }
        case Scheme::kMimo: {
          SamplePair pair = split_frames(seq, t_obs, t_hat);
          return inv_batch * mimo_sample_backward(worker, pair.observed,
                                                  pair.target, inv_batch);
        }
      }
      throw ArgumentError("unknown scheme");
    };
  };

  TrainRun out;
  const std::string final_path = (fs::path(run_dir) / "ckpt_final.mamc").string();
  try {
    if (cfg.train.checkpoint_every > 0) {
      // Chunked loop so periodic checkpoints hit the configured cadence.
      int64_t done = start_step;
      while (done < cfg.train.steps) {
        TrainConfig chunk_cfg = cfg.train;
        chunk_cfg.steps = std::min(cfg.train.steps,
                                   done + cfg.train.checkpoint_every);
        TrainResult r = run_training_loop(net, chunk_cfg, ema, opt, train_rng,
                                          done, &log, make_batch_fn);
        done = r.steps_done;
        out.result.loss_history.insert(out.result.loss_history.end(),
                                       r.loss_history.begin(),
                                       r.loss_history.end());
        out.result.final_loss = r.final_loss;
        out.result.steps_done = done;
        if (out.result.loss_history.size() == r.loss_history.size())
          out.result.first_loss = r.first_loss;
        save_checkpoint((fs::path(run_dir) /
                         ("ckpt_step" + std::to_string(done) + ".mamc"))
                            .string(),
                        make_checkpoint(net, ema, opt, done, train_rng));
      }
    } else {
      out.result = run_training_loop(net, cfg.train, ema, opt, train_rng,
                                     start_step, &log, make_batch_fn);
    }
  } catch (const DivergenceError&) {
    // Keep the best effort state on disk for inspection, then re-throw.
    save_checkpoint(final_path,
                    make_checkpoint(net, ema, opt, out.result.steps_done,
                                    train_rng));
    throw;
  }

  save_checkpoint(final_path, make_checkpoint(net, ema, opt,
                                              out.result.steps_done == 0
                                                  ? cfg.train.steps
                                                  : out.result.steps_done,
                                              train_rng));
  out.final_checkpoint = final_path;
  return out;
}

// ---------------------------------------------------------------------------
// finetune-lp

struct LpFinetuneRun {
  FinetuneResult result;
  std::string lp_checkpoint;
};

// Fine-tunes only the learned prior of a trained masked-ar checkpoint; the
// frozen main parameters are verified bit-identical afterwards. Writes the
// updated checkpoint alongside the input as <stem>_lp.mamc.
inline LpFinetuneRun finetune_lp_run(const ExperimentConfig& cfg,
                                     const std::string& checkpoint_path,
                                     const std::string& dataset_dir) {
  namespace fs = std::filesystem;
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  if (ckpt.config.scheme != Scheme::kMaskedAr)
    throw ConfigError("learned-prior fine-tuning needs a masked-ar checkpoint");
  const Dataset ds = load_dataset(dataset_dir);
  check_dataset_fits(ds.manifest, ckpt.config);

  ForecastNet<float> net(ckpt.config);
  load_snapshot(net, ckpt.live);

  std::vector<Tensor<float>> main_before;
  net.visit_main_params(
      [&](nn::Param<float>& p) { main_before.push_back(p.value); });

  std::vector<nn::Param<float>*> lp_params;
  net.visit_prior_params([&](nn::Param<float>& p) { lp_params.push_back(&p); });
  if (lp_params.empty()) throw StateError("checkpoint has no learned prior");

  Adam<float> opt(cfg.train.adam);
  opt.attach(lp_params);

  const int64_t t_obs = ckpt.config.t_obs, t_hat = ckpt.config.t_hat;
  const int64_t n_train = static_cast<int64_t>(ds.train.size());
  const int64_t batch = std::min<int64_t>(cfg.train.batch_size, n_train);
  const double inv_batch = 1.0 / static_cast<double>(batch);
  Rng rng(Rng::derive(cfg.train_seed(), 0x1b));

  LpFinetuneRun out;
  for (int64_t step = 1; step <= cfg.lp_steps; ++step) {
    for (auto* p : lp_params) p->grad.fill(0.0f);
    double loss = 0.0;
    for (int64_t b = 0; b < batch; ++b) {
      const int64_t idx = rng.uniform_int(0, n_train - 1);
      SamplePair pair =
          split_frames(ds.train[static_cast<size_t>(idx)], t_obs, t_hat);
      loss += inv_batch *
              lp_sample_backward(net, pair.observed, pair.target, inv_batch);
    }
    if (!std::isfinite(loss))
      throw DivergenceError("non-finite LP loss at step " +
                            std::to_string(step));
    opt.step(cosine_lr(step - 1, cfg.lp_steps, cfg.lp_learning_rate));
    if (out.result.loss_history.empty()) out.result.first_loss = loss;
    out.result.loss_history.push_back(loss);
    out.result.final_loss = loss;
  }

  // Freeze contract: every main parameter must be bit-identical.
  size_t idx = 0;
  net.visit_main_params([&](nn::Param<float>& p) {
    for (int64_t i = 0; i < p.value.numel(); ++i)
      if (p.value[i] != main_before[idx][i])
        throw StateError("main parameter mutated during LP fine-tune: " +
                         p.name);
    ++idx;
  });

  Checkpoint updated = ckpt;
  updated.live = snapshot_params(net);
  updated.extra.set_int("lp.steps", cfg.lp_steps);
  fs::path p(checkpoint_path);
  const std::string lp_path =
      (p.parent_path() / (p.stem().string() + "_lp.mamc")).string();
  save_checkpoint(lp_path, updated);
  out.lp_checkpoint = lp_path;
  return out;
}

// ---------------------------------------------------------------------------
// eval

enum class EmaMode { kOn, kOff, kBoth };

inline EmaMode ema_mode_from_name(const std::string& name) {
  if (name == "on") return EmaMode::kOn;
  if (name == "off") return EmaMode::kOff;
  if (name == "both") return EmaMode::kBoth;
  throw ConfigError("unknown --ema mode `" + name + "`");
}

struct EvalRun {
  std::vector<MetricsReport> reports;
  int64_t param_count = 0;
  int64_t trained_steps = 0;
};

// Evaluates a checkpoint on the dataset's test split and writes one CSV per
// report plus a text summary into out_dir (when non-empty).
inline EvalRun eval_run(const std::string& checkpoint_path,
                        const std::string& dataset_dir, EmaMode ema_mode,
                        bool use_lp, int64_t horizon,
                        const std::string& out_dir) {
  namespace fs = std::filesystem;
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const Dataset ds = load_dataset(dataset_dir);
  check_dataset_fits(ds.manifest, ckpt.config);
  if (ds.test.empty()) throw IoError("dataset has no test sequences");
  if (use_lp && ckpt.config.scheme != Scheme::kMaskedAr)
    throw ConfigError("--lp only applies to masked-ar checkpoints");

  EvalRun out;
  out.trained_steps = ckpt.extra.get_int_or("train.step", 0);

  auto run_one = [&](bool use_ema) {
    ForecastNet<float> net = net_from_checkpoint(ckpt, use_ema);
    out.param_count = net.param_count();
    EvalOptions opts;
    opts.horizon = horizon;
    opts.use_lp = use_lp;
    opts.used_ema = use_ema;
    MetricsReport report = evaluate_scheme(net, ds.test, ds.manifest.t_obs,
                                           ds.manifest.t_hat, opts);
    out.reports.push_back(std::move(report));
  };

  if (ema_mode == EmaMode::kOn || ema_mode == EmaMode::kBoth) run_one(true);
  if (ema_mode == EmaMode::kOff || ema_mode == EmaMode::kBoth) run_one(false);

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    for (const auto& report : out.reports) {
      std::string name = report.scheme;
      name += report.used_ema ? "_ema" : "_live";
      if (report.used_lp) name += "_lp";
      report.save_csv((fs::path(out_dir) / (name + ".csv")).string());
      std::ofstream sum((fs::path(out_dir) / (name + ".summary.txt")).string(),
                        std::ios::trunc);
      sum << kVersion << "\n" << report.summary();
    }
    KvMap meta;
    meta.set("checkpoint", checkpoint_path);
    meta.set("scheme", scheme_name(ckpt.config.scheme));
    meta.set_int("param_count", out.param_count);
    meta.set_int("trained_steps", out.trained_steps);
    meta.set_int("horizon",
                 horizon > 0 ? horizon : ckpt.config.t_hat);
    meta.save((fs::path(out_dir) / "meta.txt").string());
  }
  return out;
}

// ---------------------------------------------------------------------------
// compare

// Table-shaped comparison across completed eval runs: one row per report,
// per-step MSE columns then the aggregate.
inline std::string compare_runs(const std::vector<std::string>& eval_dirs) {
  if (eval_dirs.size() < 2)
    throw ArgumentError("compare needs at least two eval directories");
  struct Row {
    std::string scheme;
    int64_t params = 0;
    int64_t steps = 0;
    int64_t horizon = 0;
    std::vector<double> per_step;
    double aggregate = 0.0;
    bool ema = false;
    bool lp = false;
  };
  std::vector<Row> rows;
  for (const auto& dir : eval_dirs) {
    const KvMap meta = KvMap::load(dir + "/meta.txt");
    namespace fs = std::filesystem;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (entry.path().extension() != ".csv") continue;
      Row row;
      row.scheme = meta.get("scheme");
      row.params = meta.get_int("param_count");
      row.steps = meta.get_int("trained_steps");
      row.horizon = meta.get_int("horizon");
      row.ema = name.find("_ema") != std::string::npos;
      row.lp = name.find("_lp") != std::string::npos;

      std::ifstream f(entry.path());
      std::string line;
      std::getline(f, line);  // header
      while (std::getline(f, line)) {
        std::istringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() < 5) continue;
        if (fields[3] == "all")
          row.aggregate = std::stod(fields[4]);
        else
          row.per_step.push_back(std::stod(fields[4]));
      }
      rows.push_back(std::move(row));
    }
  }
  if (rows.size() < 2) throw ArgumentError("compare: fewer than two reports");
  for (const auto& row : rows)
    if (row.horizon != rows[0].horizon)
      throw ArgumentError("compare: mismatched horizons across runs");

  std::ostringstream out;
  out.precision(8);
  out << "scheme,variant,params,steps";
  for (int64_t t = 1; t <= rows[0].horizon; ++t) out << ",mse_t" << t;
  out << ",mse\n";
  for (const auto& row : rows) {
    out << row.scheme << ","
        << (std::string(row.ema ? "ema" : "live") + (row.lp ? "+lp" : ""))
        << "," << row.params << "," << row.steps;
    for (double v : row.per_step) out << "," << v;
    out << "," << row.aggregate << "\n";
  }
  return out.str();
}

}  // namespace mam4wf
