#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include <mam4wf/checkpoint.hpp>
#include <mam4wf/model.hpp>
#include <mam4wf/rng.hpp>

using namespace mam4wf;

namespace {

// Small masked-ar configuration on a 16x16 canvas.
ModelConfig small_cfg() {
  ModelConfig cfg;
  cfg.channels = 1;
  cfg.t_obs = 3;
  cfg.t_hat = 4;
  cfg.encoder_widths = {8, 12};
  cfg.encoder_strides = {2, 2};
  cfg.predictor_depth = 2;
  cfg.predictor_width = 16;
  cfg.embed_dim = 8;
  cfg.decoder_upsample = 4;
  cfg.decoder_channels = 4;
  cfg.scheme = Scheme::kMaskedAr;
  return cfg;
}

Tensor<float> random_sequence(const ModelConfig& cfg, int64_t frames,
                              int64_t canvas, uint64_t seed) {
  Rng rng(seed);
  Tensor<float> seq({cfg.channels, frames, canvas, canvas});
  for (int64_t i = 0; i < seq.numel(); ++i)
    seq[i] = static_cast<float>(rng.uniform());
  return seq;
}

TEST(ModelConfig, Validation) {
  ModelConfig cfg = small_cfg();
  cfg.validate();
  cfg.embed_dim = 7;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_cfg();
  cfg.decoder_upsample = 2;  // != 2*2 downsample
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_cfg();
  cfg.encoder_strides = {2};
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(ModelConfig, KvRoundTrip) {
  ModelConfig cfg = small_cfg();
  const ModelConfig back = ModelConfig::from_kv(cfg.to_kv());
  EXPECT_EQ(back.encoder_widths, cfg.encoder_widths);
  EXPECT_EQ(back.predictor_width, cfg.predictor_width);
  EXPECT_EQ(back.scheme, cfg.scheme);
}

TEST(Encode, ShapeContract) {
  ForecastNet<float> net(small_cfg());
  net.init_params(1);
  Tensor<float> frames({5, 1, 16, 16});
  Tensor<float> feat = net.encode(frames);
  EXPECT_EQ(feat.shape(), (std::vector<int64_t>{5, 12, 4, 4}));
  // Indivisible spatial dims rejected.
  Tensor<float> bad({5, 1, 18, 18});
  EXPECT_THROW(net.encode(bad), ConfigError);
}

TEST(Encode, PerFrameIndependence) {
  ForecastNet<float> net(small_cfg());
  net.init_params(2);
  Rng rng(3);
  Tensor<float> frames({4, 1, 16, 16});
  for (int64_t i = 0; i < frames.numel(); ++i)
    frames[i] = static_cast<float>(rng.uniform());
  Tensor<float> feat = net.encode(frames);

  // Reverse the frame order; features must permute identically.
  Tensor<float> reversed(frames.shape());
  const int64_t stride = frames.numel() / 4;
  for (int64_t n = 0; n < 4; ++n)
    std::copy(frames.data() + n * stride, frames.data() + (n + 1) * stride,
              reversed.data() + (3 - n) * stride);
  Tensor<float> feat_rev = net.encode(reversed);
  const int64_t fstride = feat.numel() / 4;
  for (int64_t n = 0; n < 4; ++n)
    for (int64_t i = 0; i < fstride; ++i)
      ASSERT_EQ(feat.data()[n * fstride + i],
                feat_rev.data()[(3 - n) * fstride + i]);
}

TEST(Encode, ZeroInputZeroFeatures) {
  // Freshly initialized nets have zero conv biases and zero layernorm shift,
  // so an all-zero frame maps to all-zero features.
  ForecastNet<float> net(small_cfg());
  net.init_params(4);
  Tensor<float> zeros({2, 1, 16, 16});
  Tensor<float> feat = net.encode(zeros);
  for (int64_t i = 0; i < feat.numel(); ++i) ASSERT_EQ(feat[i], 0.0f);
}

TEST(Queues, AssemblyAndZeroSuffix) {
  ForecastNet<float> net(small_cfg());
  net.init_params(5);
  Tensor<float> seq = random_sequence(net.config(), 3, 16, 6);
  Tensor<float> feat = net.encode(frames_from_sequence(seq));

  // t = 1: error-prone queue entirely zero.
  QueuePair<float> q1 = net.assemble_queues(feat, {}, 1);
  EXPECT_EQ(q1.error_prone.dim(0), 4);
  for (int64_t i = 0; i < q1.error_prone.numel(); ++i)
    ASSERT_EQ(q1.error_prone[i], 0.0f);

  // t = 3 with two stored features: slots 0 and 1 filled, 2.. zero.
  Tensor<float> f0({12, 4, 4});
  Tensor<float> f1({12, 4, 4});
  f0.fill(0.5f);
  f1.fill(-0.25f);
  QueuePair<float> q3 = net.assemble_queues(feat, {f0, f1}, 3);
  const int64_t slot = 12 * 4 * 4;
  for (int64_t i = 0; i < slot; ++i) {
    ASSERT_EQ(q3.error_prone[i], 0.5f);
    ASSERT_EQ(q3.error_prone[slot + i], -0.25f);
    ASSERT_EQ(q3.error_prone[2 * slot + i], 0.0f);
    ASSERT_EQ(q3.error_prone[3 * slot + i], 0.0f);
  }

  // Wrong history length is a state error.
  EXPECT_THROW(net.assemble_queues(feat, {f0}, 3), StateError);
}

TEST(Predict, ShapeDeterminismAndLeadSensitivity) {
  ForecastNet<float> net(small_cfg());
  net.init_params(7);
  Tensor<float> seq = random_sequence(net.config(), 3, 16, 8);
  Tensor<float> feat = net.encode(frames_from_sequence(seq));
  QueuePair<float> q = net.assemble_queues(feat, {}, 1);

  LeadTimeEmbedding<float> e1 = net.lead_time_embed(1);
  Tensor<float> a = net.predict(q, &e1);
  EXPECT_EQ(a.shape(), (std::vector<int64_t>{1, 16, 4, 4}));
  Tensor<float> b = net.predict(q, &e1);
  for (int64_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a[i], b[i]);

  LeadTimeEmbedding<float> e2 = net.lead_time_embed(2);
  Tensor<float> c = net.predict(q, &e2);
  double diff = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) diff += std::fabs(a[i] - c[i]);
  EXPECT_GT(diff, 0.0);
}

// Gives the zero-initialized output conv nonzero weights so forward outputs
// carry signal.
void unzero_output_conv(ForecastNet<float>& net, uint64_t seed) {
  Rng rng(seed);
  net.visit_params([&](nn::Param<float>& p) {
    if (p.name.rfind("decoder.out", 0) == 0)
      for (int64_t i = 0; i < p.value.numel(); ++i)
        p.value[i] = static_cast<float>(rng.truncated_normal(0.05));
  });
}

TEST(Forward, MisoContractAndDeterminism) {
  ForecastNet<float> net(small_cfg());
  net.init_params(9);
  unzero_output_conv(net, 1009);
  Tensor<float> seq = random_sequence(net.config(), 3, 16, 10);

  Tensor<float> y1 = net.forward(seq, {}, 1);
  EXPECT_EQ(y1.shape(), (std::vector<int64_t>{1, 16, 16}));
  EXPECT_THROW(net.forward(seq, {}, 0), RangeError);
  EXPECT_THROW(net.forward(seq, {}, 5), RangeError);
  double mag = 0.0;
  for (int64_t i = 0; i < y1.numel(); ++i) mag += std::fabs(y1[i]);
  EXPECT_GT(mag, 0.0);

  // Same parameters in a separate instance: bit-identical output.
  ForecastNet<float> net2(small_cfg());
  net2.init_params(9);
  unzero_output_conv(net2, 1009);
  Tensor<float> y2 = net2.forward(seq, {}, 1);
  for (int64_t i = 0; i < y1.numel(); ++i) ASSERT_EQ(y1[i], y2[i]);
}

TEST(Forward, FreshDecoderPredictsZero) {
  // The output conv starts zero-initialized.
  ForecastNet<float> net(small_cfg());
  net.init_params(11);
  Tensor<float> seq = random_sequence(net.config(), 3, 16, 12);
  Tensor<float> y = net.forward(seq, {}, 1);
  for (int64_t i = 0; i < y.numel(); ++i) ASSERT_EQ(y[i], 0.0f);
}

TEST(LearnedPrior, ShapeMatchesEncoderAndDiffers) {
  ForecastNet<float> net(small_cfg());
  net.init_params(13);
  Rng rng(14);
  Tensor<float> frame({1, 16, 16});
  for (int64_t i = 0; i < frame.numel(); ++i)
    frame[i] = static_cast<float>(rng.uniform());

  Tensor<float> lp = net.lp_project(frame);
  Tensor<float> enc = net.encode(frame.reshaped({1, 1, 16, 16}));
  EXPECT_EQ(lp.shape(), (std::vector<int64_t>{12, 4, 4}));
  EXPECT_EQ(enc.numel(), lp.numel());
  // Independently initialized stacks: outputs generally differ.
  double diff = 0.0;
  for (int64_t i = 0; i < lp.numel(); ++i) diff += std::fabs(lp[i] - enc[i]);
  EXPECT_GT(diff, 0.0);
}

TEST(Snapshot, RoundTripAndMismatch) {
  ForecastNet<float> net(small_cfg());
  net.init_params(15);
  ParamSnapshot<float> snap = snapshot_params(net);

  ForecastNet<float> other(small_cfg());
  other.init_params(99);
  load_snapshot(other, snap);
  Tensor<float> seq = random_sequence(net.config(), 3, 16, 16);
  Tensor<float> feat({12, 4, 4});
  Rng frng(17);
  for (int64_t i = 0; i < feat.numel(); ++i)
    feat[i] = static_cast<float>(frng.uniform());
  std::vector<Tensor<float>> history = {feat};
  Tensor<float> a = net.forward(seq, history, 2);
  Tensor<float> b = other.forward(seq, history, 2);
  for (int64_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a[i], b[i]);

  ModelConfig bigger = small_cfg();
  bigger.predictor_width = 24;
  ForecastNet<float> wrong(bigger);
  EXPECT_THROW(load_snapshot(wrong, snap), StateError);
}

TEST(Checkpoint, SaveLoadRoundTrip) {
  namespace fs = std::filesystem;
  ForecastNet<float> net(small_cfg());
  net.init_params(17);

  Checkpoint ckpt;
  ckpt.config = net.config();
  ckpt.live = snapshot_params(net);
  ckpt.ema = snapshot_params(net);
  ckpt.extra.set_int("train.step", 42);
  const std::string path =
      (fs::temp_directory_path() / "mam4wf_test_ckpt.mamc").string();
  save_checkpoint(path, ckpt);

  const Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(back.extra.get_int("train.step"), 42);
  EXPECT_EQ(back.config.predictor_width, net.config().predictor_width);
  ASSERT_EQ(back.live.names.size(), ckpt.live.names.size());
  ASSERT_EQ(back.ema.names.size(), ckpt.ema.names.size());
  for (size_t i = 0; i < back.live.names.size(); ++i) {
    ASSERT_EQ(back.live.names[i], ckpt.live.names[i]);
    for (int64_t j = 0; j < back.live.values[i].numel(); ++j)
      ASSERT_EQ(back.live.values[i][j], ckpt.live.values[i][j]);
  }

  ForecastNet<float> restored = net_from_checkpoint(back, false);
  Tensor<float> seq = random_sequence(net.config(), 3, 16, 18);
  Tensor<float> a = net.forward(seq, {}, 1);
  Tensor<float> b = restored.forward(seq, {}, 1);
  for (int64_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a[i], b[i]);
  fs::remove(path);
}

TEST(Checkpoint, CorruptFileRejected) {
  namespace fs = std::filesystem;
  const std::string path =
      (fs::temp_directory_path() / "mam4wf_test_bad.mamc").string();
  std::ofstream f(path, std::ios::binary);
  f << "garbage bytes here";
  f.close();
  EXPECT_THROW(load_checkpoint(path), FormatError);
  fs::remove(path);
}

TEST(ParamCount, MatchesEnumeration) {
  ForecastNet<float> net(small_cfg());
  int64_t manual = 0;
  net.visit_params([&](nn::Param<float>& p) { manual += p.value.numel(); });
  EXPECT_EQ(net.param_count(), manual);
  EXPECT_GT(manual, 0);
}

}  // namespace
