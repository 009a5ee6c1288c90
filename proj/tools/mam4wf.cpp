// Experiment runner: dataset synthesis, training, learned-prior fine-tuning,
// evaluation, prediction dumps, run comparison and gradient verification.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <mam4wf/mam4wf.hpp>

namespace {

using namespace mam4wf;

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;       // internal / argument / state errors
constexpr int kExitConfig = 2;      // bad configuration or usage
constexpr int kExitData = 3;        // missing or malformed files
constexpr int kExitCapacity = 4;    // horizon beyond queue capacity
constexpr int kExitDivergence = 5;  // non-finite training loss

ExperimentConfig load_config(const std::string& config_path, int64_t seed,
                             bool seed_set, const std::string& scheme) {
  KvMap kv;
  if (!config_path.empty()) kv = KvMap::load(config_path);
  if (seed_set) kv.set_int("seed", seed);
  if (!scheme.empty()) kv.set("model.scheme", scheme);
  return ExperimentConfig::from_kv(kv);
}

std::string default_run_dir(const ExperimentConfig& cfg) {
  return (std::filesystem::path(default_out_root()) /
          ("run-" + scheme_name(cfg.model.scheme) + "-seed" +
           std::to_string(cfg.seed)))
      .string();
}

int run_gen_data(const ExperimentConfig& cfg, std::string out, bool force) {
  if (out.empty())
    out = (std::filesystem::path(default_out_root()) / "dataset").string();
  generate_dataset_run(cfg, out, force);
  std::cout << "dataset written to " << out << " (" << cfg.data.train_count
            << " train, " << cfg.data.test_count << " test)\n";
  return kExitOk;
}

int run_train(const ExperimentConfig& cfg, const std::string& data_dir,
              std::string out, const std::string& resume) {
  if (out.empty()) out = default_run_dir(cfg);
  const TrainRun run = train_run(cfg, data_dir, out, resume);
  std::cout << "trained " << scheme_name(cfg.model.scheme) << " for "
            << run.result.steps_done << " steps; final loss "
            << run.result.final_loss << "\n"
            << "checkpoint: " << run.final_checkpoint << "\n";
  return kExitOk;
}

int run_finetune_lp(const ExperimentConfig& cfg, const std::string& ckpt,
                    const std::string& data_dir) {
  const LpFinetuneRun run = finetune_lp_run(cfg, ckpt, data_dir);
  std::cout << "learned prior fine-tuned for " << cfg.lp_steps
            << " steps; feature loss " << run.result.first_loss << " -> "
            << run.result.final_loss << "\n"
            << "checkpoint: " << run.lp_checkpoint << "\n";
  return kExitOk;
}

int run_eval(const std::string& ckpt, const std::string& data_dir,
             const std::string& ema, bool lp, int64_t horizon,
             std::string out) {
  if (out.empty())
    out = (std::filesystem::path(default_out_root()) / "eval").string();
  const EvalRun run =
      eval_run(ckpt, data_dir, ema_mode_from_name(ema), lp, horizon, out);
  for (const auto& report : run.reports) std::cout << report.summary();
  std::cout << "reports written to " << out << "\n";
  return kExitOk;
}

int run_predict(const std::string& ckpt_path, const std::string& data_dir,
                int64_t count, const std::string& ema, bool lp,
                int64_t horizon, std::string out) {
  if (out.empty())
    out = (std::filesystem::path(default_out_root()) / "predictions").string();
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Dataset ds = load_dataset(data_dir);
  check_dataset_fits(ds.manifest, ckpt.config);
  ForecastNet<float> net = net_from_checkpoint(ckpt, ema == "on");
  if (horizon <= 0) horizon = ckpt.config.t_hat;

  std::vector<ForecastEpisode<float>> episodes;
  const int64_t n =
      std::min<int64_t>(count, static_cast<int64_t>(ds.test.size()));
  for (int64_t i = 0; i < n; ++i) {
    SamplePair pair = split_frames(ds.test[static_cast<size_t>(i)],
                                   ds.manifest.t_obs, ds.manifest.t_hat);
    episodes.push_back(run_episode(net, pair.observed, horizon, lp));
  }
  dump_predictions(out, episodes);
  std::cout << n << " episodes dumped to " << out << "\n";
  return kExitOk;
}

int run_compare(const std::vector<std::string>& dirs, const std::string& out) {
  const std::string table = compare_runs(dirs);
  if (out.empty()) {
    std::cout << table;
  } else {
    std::ofstream f(out, std::ios::trunc);
    if (!f) throw IoError("cannot write " + out);
    f << table;
    std::cout << "comparison written to " << out << "\n";
  }
  return kExitOk;
}

int run_grad_check(double tolerance, int64_t coords) {
  const GradCheckReport report =
      grad_check(tiny_grad_check_config(), tolerance, coords);
  for (const auto& e : report.entries)
    std::printf("%-24s[%5lld]  analytic % .6e  numeric % .6e  rel %.3e  %s\n",
                e.param.c_str(), static_cast<long long>(e.index), e.analytic,
                e.numeric, e.rel_error, e.pass ? "ok" : "FAIL");
  std::printf("history sensitivity %.3e, cut contribution %.3e\n",
              report.history_sensitivity, report.cut_contribution);
  std::printf("gradient check: %s (max rel error %.3e, tolerance %.1e)\n",
              report.all_pass ? "PASS" : "FAIL", report.max_rel_error,
              tolerance);
  return report.all_pass && report.cut_confirmed ? kExitOk : kExitOther;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"masked autoregressive forecasting experiments"};
  app.require_subcommand(1);

  std::string config_path, scheme, data_dir, out_dir, resume, ckpt, ema = "on";
  int64_t seed = 0, horizon = 0, count = 8, coords = 24;
  bool force = false, lp = false;
  double tolerance = 1e-4;
  std::vector<std::string> compare_dirs;

  auto* gen = app.add_subcommand("gen-data", "synthesize a dataset");
  gen->add_option("--config", config_path, "config file");
  bool seed_set = false;
  gen->add_option("--seed", seed, "master seed")->each([&](const std::string&) {
    seed_set = true;
  });
  gen->add_option("--out", out_dir, "dataset directory");
  gen->add_flag("--force", force, "overwrite an existing directory");

  auto* train = app.add_subcommand("train", "train a scheme");
  train->add_option("--config", config_path, "config file");
  train->add_option("--seed", seed, "master seed")
      ->each([&](const std::string&) { seed_set = true; });
  train->add_option("--scheme", scheme, "masked-ar | miso-ar | mimo");
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--out", out_dir, "run directory");
  train->add_option("--resume", resume, "checkpoint to resume from");

  auto* ft = app.add_subcommand("finetune-lp", "fine-tune the learned prior");
  ft->add_option("--config", config_path, "config file");
  ft->add_option("--seed", seed, "master seed")
      ->each([&](const std::string&) { seed_set = true; });
  ft->add_option("--ckpt", ckpt, "trained masked-ar checkpoint")->required();
  ft->add_option("--data", data_dir, "dataset directory")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--ckpt", ckpt, "checkpoint")->required();
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--ema", ema, "on | off | both");
  ev->add_flag("--lp", lp, "use the learned prior at inference");
  ev->add_option("--horizon", horizon, "forecast horizon (default: trained)");
  ev->add_option("--out", out_dir, "report directory");

  auto* pr = app.add_subcommand("predict", "dump forecast episodes");
  pr->add_option("--ckpt", ckpt, "checkpoint")->required();
  pr->add_option("--data", data_dir, "dataset directory")->required();
  pr->add_option("--count", count, "episodes to dump");
  pr->add_option("--ema", ema, "on | off");
  pr->add_flag("--lp", lp, "use the learned prior at inference");
  pr->add_option("--horizon", horizon, "forecast horizon (default: trained)");
  pr->add_option("--out", out_dir, "dump directory");

  auto* cm = app.add_subcommand("compare", "tabulate eval reports");
  cm->add_option("dirs", compare_dirs, "eval directories")->expected(-2);
  cm->add_option("--out", out_dir, "output csv path");

  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient check");
  gc->add_option("--tolerance", tolerance, "relative error tolerance");
  gc->add_option("--coords", coords, "sampled coordinates");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (gen->parsed())
      return run_gen_data(load_config(config_path, seed, seed_set, ""),
                          out_dir, force);
    if (train->parsed())
      return run_train(load_config(config_path, seed, seed_set, scheme),
                       data_dir, out_dir, resume);
    if (ft->parsed())
      return run_finetune_lp(load_config(config_path, seed, seed_set, ""),
                             ckpt, data_dir);
    if (ev->parsed())
      return run_eval(ckpt, data_dir, ema, lp, horizon, out_dir);
    if (pr->parsed())
      return run_predict(ckpt, data_dir, count, ema, lp, horizon, out_dir);
    if (cm->parsed()) return run_compare(compare_dirs, out_dir);
    if (gc->parsed()) return run_grad_check(tolerance, coords);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CapacityError& e) {
    std::cerr << "capacity error: " << e.what() << "\n";
    return kExitCapacity;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const FormatError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const IoError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
  return kExitOther;
}
