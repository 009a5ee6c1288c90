#pragma once

#include <cstdint>
#include <cstdlib>
#include <string>

#include "mam4wf/dataset.hpp"
#include "mam4wf/errors.hpp"
#include "mam4wf/kv.hpp"
#include "mam4wf/model.hpp"
#include "mam4wf/training.hpp"

namespace mam4wf {

inline constexpr const char* kVersion = "mam4wf 0.1.0";

// Everything one run needs, resolved and serializable. The run directory
// always receives the exact resolved text, so a run is reproducible from its
// own artifacts.
struct ExperimentConfig {
  // Dataset synthesis and split convention.
  struct Data {
    uint64_t seed = 7;
    int64_t train_count = 1000;
    int64_t test_count = 200;
    int64_t height = 32;
    int64_t width = 32;
    int64_t num_digits = 2;
    int64_t total_frames = 10;
    int64_t t_obs = 5;
    int64_t t_hat = 5;
  } data;

  ModelConfig model;
  TrainConfig train;

  uint64_t seed = 0;  // master seed; see resolve_seeds()
  std::string out_dir = "runs";

  // Learned-prior fine-tuning budget.
  int64_t lp_steps = 200;
  double lp_learning_rate = 0.001;

  void validate() const {
    model.validate();
    train.validate();
    if (data.t_obs != model.t_obs || data.t_hat != model.t_hat)
      throw ConfigError("data.t_obs/t_hat must match model.t_obs/t_hat");
    if (data.t_obs + data.t_hat > data.total_frames)
      throw ConfigError("data.total_frames too short for the split");
    if (lp_steps < 0 || lp_learning_rate <= 0.0)
      throw ConfigError("lp fine-tune settings invalid");
  }

  // The master seed fans out to the independent consumers. An explicit
  // data.seed or train.seed in the config file wins over the derivation.
  uint64_t data_seed() const { return data.seed; }
  uint64_t init_seed() const { return Rng::derive(seed, 1); }
  uint64_t train_seed() const { return train.seed; }

  GeneratorConfig generator(bool test_split) const {
    GeneratorConfig g;
    g.seed = test_split ? Rng::derive(data.seed, 0x7e57) : data.seed;
    g.count = test_split ? data.test_count : data.train_count;
    g.height = data.height;
    g.width = data.width;
    g.num_digits = data.num_digits;
    g.total_frames = data.total_frames;
    return g;
  }

  KvMap to_kv() const {
    KvMap kv;
    kv.set("version", kVersion);
    kv.set_int("seed", static_cast<int64_t>(seed));
    kv.set("out_dir", out_dir);
    kv.set_int("data.seed", static_cast<int64_t>(data.seed));
    kv.set_int("data.train_count", data.train_count);
    kv.set_int("data.test_count", data.test_count);
    kv.set_int("data.height", data.height);
    kv.set_int("data.width", data.width);
    kv.set_int("data.num_digits", data.num_digits);
    kv.set_int("data.total_frames", data.total_frames);
    kv.set_int("data.t_obs", data.t_obs);
    kv.set_int("data.t_hat", data.t_hat);
    kv.merge(model.to_kv());
    kv.merge(train.to_kv());
    kv.set_int("lp.steps", lp_steps);
    kv.set_double("lp.learning_rate", lp_learning_rate);
    return kv;
  }

  static ExperimentConfig from_kv(const KvMap& kv) {
    ExperimentConfig c;
    c.seed = static_cast<uint64_t>(kv.get_int_or("seed", 0));
    c.out_dir = kv.get_or("out_dir", c.out_dir);
    c.data.seed = static_cast<uint64_t>(
        kv.get_int_or("data.seed", static_cast<int64_t>(Rng::derive(c.seed, 0))));
    c.data.train_count = kv.get_int_or("data.train_count", c.data.train_count);
    c.data.test_count = kv.get_int_or("data.test_count", c.data.test_count);
    c.data.height = kv.get_int_or("data.height", c.data.height);
    c.data.width = kv.get_int_or("data.width", c.data.width);
    c.data.num_digits = kv.get_int_or("data.num_digits", c.data.num_digits);
    c.data.total_frames =
        kv.get_int_or("data.total_frames", c.data.total_frames);
    c.data.t_obs = kv.get_int_or("data.t_obs", c.data.t_obs);
    c.data.t_hat = kv.get_int_or("data.t_hat", c.data.t_hat);

    KvMap with_model_defaults = kv;
    if (!kv.has("model.t_obs"))
      with_model_defaults.set_int("model.t_obs", c.data.t_obs);
    if (!kv.has("model.t_hat"))
      with_model_defaults.set_int("model.t_hat", c.data.t_hat);
    c.model = ModelConfig::from_kv(with_model_defaults);

    KvMap with_train_defaults = kv;
    if (!kv.has("train.seed"))
      with_train_defaults.set_int(
          "train.seed", static_cast<int64_t>(Rng::derive(c.seed, 2)));
    c.train = TrainConfig::from_kv(with_train_defaults);

    c.lp_steps = kv.get_int_or("lp.steps", c.lp_steps);
    c.lp_learning_rate = kv.get_double_or("lp.learning_rate", c.lp_learning_rate);
    c.validate();
    return c;
  }
};

// Default output root: MAM_OUT environment variable when set, else "runs".
inline std::string default_out_root() {
  const char* env = std::getenv("MAM_OUT");
  return env && *env ? std::string(env) : std::string("runs");
}

}  // namespace mam4wf
