#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mam4wf/errors.hpp"
#include "mam4wf/io.hpp"
#include "mam4wf/kv.hpp"
#include "mam4wf/rng.hpp"
#include "mam4wf/tensor.hpp"

namespace mam4wf {

// A (C, T_total, H, W) stack of frames with intensities in [0, 1], plus the
// generation metadata needed to reproduce it.
struct FrameSequence {
  Tensor<float> values;  // (C, T_total, H, W)
  uint64_t seed = 0;
  std::vector<int> digit_ids;
  std::vector<std::array<double, 2>> velocities;  // (vx, vy) per digit

  int64_t channels() const { return values.dim(0); }
  int64_t total_frames() const { return values.dim(1); }
  int64_t height() const { return values.dim(2); }
  int64_t width() const { return values.dim(3); }
};

// Observed frames plus the immediately following target frames.
struct SamplePair {
  Tensor<float> observed;  // (C, T, H, W)
  Tensor<float> target;    // (C, T_hat, H, W)
};

namespace glyph {

constexpr int kSize = 12;

// Seven-segment digit masks; segment order A,B,C,D,E,F,G.
constexpr std::array<uint8_t, 10> kSegments = {
    0b0111111,  // 0: ABCDEF
    0b0000110,  // 1: BC
    0b1011011,  // 2: ABDEG
    0b1001111,  // 3: ABCDG
    0b1100110,  // 4: BCFG
    0b1101101,  // 5: ACDFG
    0b1111101,  // 6: ACDEFG
    0b0000111,  // 7: ABC
    0b1111111,  // 8
    0b1101111,  // 9: ABCDFG
};

// Rasterize digit 0-9 on a kSize x kSize grid, values in [0, 1]. The glyph is
// a thick seven-segment shape with one binomial smoothing pass so edges carry
// intermediate intensities, then renormalized to peak 1.
inline std::vector<float> rasterize(int digit) {
  if (digit < 0 || digit > 9) throw ArgumentError("digit id out of range");
  const int n = kSize;
  std::vector<float> g(static_cast<size_t>(n) * n, 0.0f);
  auto box = [&](int x0, int y0, int x1, int y1) {
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) g[static_cast<size_t>(y) * n + x] = 1.0f;
  };
  const uint8_t seg = kSegments[static_cast<size_t>(digit)];
  if (seg & 0b0000001) box(2, 0, 9, 1);    // A  top
  if (seg & 0b0000010) box(10, 1, 11, 6);  // B  top right
  if (seg & 0b0000100) box(10, 5, 11, 10); // C  bottom right
  if (seg & 0b0001000) box(2, 10, 9, 11);  // D  bottom
  if (seg & 0b0010000) box(0, 5, 1, 10);   // E  bottom left
  if (seg & 0b0100000) box(0, 1, 1, 6);    // F  top left
  if (seg & 0b1000000) box(2, 5, 9, 6);    // G  middle

  // 3x3 binomial smoothing, zero padded.
  std::vector<float> s(g.size(), 0.0f);
  const int k[3] = {1, 2, 1};
  float peak = 0.0f;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      float acc = 0.0f;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= n || xx < 0 || xx >= n) continue;
          acc += static_cast<float>(k[dy + 1] * k[dx + 1]) *
                 g[static_cast<size_t>(yy) * n + xx];
        }
      s[static_cast<size_t>(y) * n + x] = acc / 16.0f;
      peak = std::max(peak, acc / 16.0f);
    }
  }
  if (peak > 0.0f)
    for (float& v : s) v /= peak;
  return s;
}

}  // namespace glyph

struct GeneratorConfig {
  uint64_t seed = 0;
  int64_t count = 1;
  int64_t height = 32;
  int64_t width = 32;
  int64_t num_digits = 1;
  int64_t total_frames = 10;
};

// Constant-velocity digits bouncing off the canvas borders; overlapping
// digits composite by per-pixel maximum. Pure function of the configuration:
// sequence i draws from Rng::derive(seed, i), so corpora are byte-identical
// across runs and independent of generation order.
inline FrameSequence generate_sequence(const GeneratorConfig& cfg, int64_t index) {
  if (cfg.height < glyph::kSize || cfg.width < glyph::kSize)
    throw ConfigError("canvas smaller than digit glyph");
  if (cfg.total_frames < 1) throw ConfigError("total_frames must be >= 1");
  if (cfg.num_digits < 0) throw ConfigError("num_digits must be >= 0");

  Rng rng(Rng::derive(cfg.seed, static_cast<uint64_t>(index)));
  FrameSequence seq;
  seq.seed = cfg.seed;
  seq.values = Tensor<float>({1, cfg.total_frames, cfg.height, cfg.width});

  struct Digit {
    std::vector<float> glyph;
    double x, y, vx, vy;
  };
  std::vector<Digit> digits;
  const double xmax = static_cast<double>(cfg.width - glyph::kSize);
  const double ymax = static_cast<double>(cfg.height - glyph::kSize);
  for (int64_t d = 0; d < cfg.num_digits; ++d) {
    Digit dig;
    const int id = static_cast<int>(rng.uniform_int(0, 9));
    seq.digit_ids.push_back(id);
    dig.glyph = glyph::rasterize(id);
    dig.x = rng.uniform(0.0, xmax);
    dig.y = rng.uniform(0.0, ymax);
    const double speed = rng.uniform(1.0, 3.0);
    const double angle = rng.uniform(0.0, 6.283185307179586476925286766559);
    dig.vx = speed * std::cos(angle);
    dig.vy = speed * std::sin(angle);
    seq.velocities.push_back({dig.vx, dig.vy});
    digits.push_back(std::move(dig));
  }

  auto reflect = [](double& p, double& v, double pmax) {
    // Fold the coordinate back into [0, pmax], flipping velocity each bounce.
    while (p < 0.0 || p > pmax) {
      if (p < 0.0) {
        p = -p;
        v = -v;
      } else {
        p = 2.0 * pmax - p;
        v = -v;
      }
    }
  };

  for (int64_t t = 0; t < cfg.total_frames; ++t) {
    for (auto& dig : digits) {
      const int ox = static_cast<int>(std::lround(dig.x));
      const int oy = static_cast<int>(std::lround(dig.y));
      for (int gy = 0; gy < glyph::kSize; ++gy) {
        for (int gx = 0; gx < glyph::kSize; ++gx) {
          const float v = dig.glyph[static_cast<size_t>(gy) * glyph::kSize + gx];
          float& px = seq.values.at(0, t, oy + gy, ox + gx);
          px = std::max(px, v);
        }
      }
      dig.x += dig.vx;
      dig.y += dig.vy;
      reflect(dig.x, dig.vx, xmax);
      reflect(dig.y, dig.vy, ymax);
    }
  }
  return seq;
}

inline std::vector<FrameSequence> generate_moving_digits(const GeneratorConfig& cfg) {
  if (cfg.count < 1) throw ConfigError("count must be >= 1");
  std::vector<FrameSequence> out;
  out.reserve(static_cast<size_t>(cfg.count));
  for (int64_t i = 0; i < cfg.count; ++i)
    out.push_back(generate_sequence(cfg, i));
  return out;
}

// Frames 0..T-1 observed, T..T+T_hat-1 target; no frame shared.
inline SamplePair split_frames(const Tensor<float>& values, int64_t t_obs,
                               int64_t t_hat) {
  if (t_obs < 1 || t_hat < 1) throw RangeError("split lengths must be >= 1");
  if (t_obs + t_hat > values.dim(1))
    throw RangeError("split exceeds sequence length: " +
                     std::to_string(t_obs) + "+" + std::to_string(t_hat) +
                     " > " + std::to_string(values.dim(1)));
  const int64_t c = values.dim(0), h = values.dim(2), w = values.dim(3);
  SamplePair pair;
  pair.observed = Tensor<float>({c, t_obs, h, w});
  pair.target = Tensor<float>({c, t_hat, h, w});
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t t = 0; t < t_obs + t_hat; ++t)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
          const float v = values.at(ci, t, y, x);
          if (t < t_obs)
            pair.observed.at(ci, t, y, x) = v;
          else
            pair.target.at(ci, t - t_obs, y, x) = v;
        }
  return pair;
}

inline SamplePair split_sample(const FrameSequence& seq, int64_t t_obs,
                               int64_t t_hat) {
  return split_frames(seq.values, t_obs, t_hat);
}

// ---------------------------------------------------------------------------
// On-disk dataset: <root>/train/<index>.mamf, <root>/test/<index>.mamf and a
// manifest recording counts, frame shape and the split convention.

struct DatasetManifest {
  int64_t train_count = 0;
  int64_t test_count = 0;
  int64_t channels = 1;
  int64_t frames = 0;
  int64_t height = 0;
  int64_t width = 0;
  int64_t t_obs = 0;
  int64_t t_hat = 0;
  uint64_t seed = 0;

  KvMap to_kv() const {
    KvMap kv;
    kv.set("format", "mam4wf-dataset-v1");
    kv.set_int("train_count", train_count);
    kv.set_int("test_count", test_count);
    kv.set_int("channels", channels);
    kv.set_int("frames", frames);
    kv.set_int("height", height);
    kv.set_int("width", width);
    kv.set_int("t_obs", t_obs);
    kv.set_int("t_hat", t_hat);
    kv.set_int("seed", static_cast<int64_t>(seed));
    return kv;
  }

  static DatasetManifest from_kv(const KvMap& kv) {
    if (kv.get_or("format", "") != "mam4wf-dataset-v1")
      throw FormatError("not a mam4wf dataset manifest");
    DatasetManifest m;
    m.train_count = kv.get_int("train_count");
    m.test_count = kv.get_int("test_count");
    m.channels = kv.get_int("channels");
    m.frames = kv.get_int("frames");
    m.height = kv.get_int("height");
    m.width = kv.get_int("width");
    m.t_obs = kv.get_int("t_obs");
    m.t_hat = kv.get_int("t_hat");
    m.seed = static_cast<uint64_t>(kv.get_int("seed"));
    return m;
  }
};

inline std::string manifest_path(const std::string& root) {
  return (std::filesystem::path(root) / "manifest.txt").string();
}

inline std::string sequence_path(const std::string& root, const std::string& split,
                                 int64_t index) {
  return (std::filesystem::path(root) / split / (std::to_string(index) + ".mamf"))
      .string();
}

inline void write_dataset(const std::string& root,
                          const std::vector<FrameSequence>& train,
                          const std::vector<FrameSequence>& test,
                          const DatasetManifest& manifest) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(root) / "train");
  fs::create_directories(fs::path(root) / "test");
  for (size_t i = 0; i < train.size(); ++i)
    save_array(sequence_path(root, "train", static_cast<int64_t>(i)),
               train[i].values);
  for (size_t i = 0; i < test.size(); ++i)
    save_array(sequence_path(root, "test", static_cast<int64_t>(i)),
               test[i].values);
  manifest.to_kv().save(manifest_path(root));
}

struct Dataset {
  DatasetManifest manifest;
  std::vector<Tensor<float>> train;  // each (C, frames, H, W)
  std::vector<Tensor<float>> test;
};

inline Dataset load_dataset(const std::string& root) {
  Dataset ds;
  ds.manifest = DatasetManifest::from_kv(KvMap::load(manifest_path(root)));
  ds.train.reserve(static_cast<size_t>(ds.manifest.train_count));
  for (int64_t i = 0; i < ds.manifest.train_count; ++i)
    ds.train.push_back(load_array<float>(sequence_path(root, "train", i)));
  ds.test.reserve(static_cast<size_t>(ds.manifest.test_count));
  for (int64_t i = 0; i < ds.manifest.test_count; ++i)
    ds.test.push_back(load_array<float>(sequence_path(root, "test", i)));
  return ds;
}

}  // namespace mam4wf
