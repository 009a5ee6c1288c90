#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <mam4wf/io.hpp>
#include <mam4wf/kv.hpp>
#include <mam4wf/rng.hpp>
#include <mam4wf/tensor.hpp>

using namespace mam4wf;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

TEST(Tensor, ShapeAndIndexing) {
  Tensor<float> t({2, 3, 4, 5});
  EXPECT_EQ(t.numel(), 120);
  EXPECT_EQ(t.rank(), 4);
  t.at(1, 2, 3, 4) = 7.0f;
  EXPECT_FLOAT_EQ(t[119], 7.0f);
  Tensor<float> r = t.reshaped({6, 20});
  EXPECT_EQ(r.dim(0), 6);
  EXPECT_FLOAT_EQ(r[119], 7.0f);
  EXPECT_THROW(t.reshaped({7, 20}), ArgumentError);
}

TEST(Tensor, ScalarRankZero) {
  Tensor<double> s(std::vector<int64_t>{});
  EXPECT_EQ(s.numel(), 1);
  s[0] = 3.25;
  EXPECT_DOUBLE_EQ(s[0], 3.25);
}

TEST(ArrayIo, RoundTripIsBitExact) {
  Rng rng(11);
  Tensor<float> t({1, 10, 32, 32});
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<float>(rng.uniform());
  const std::string path = temp_path("mam4wf_io_roundtrip.mamf");
  save_array(path, t);
  Tensor<float> back = load_array<float>(path);
  ASSERT_TRUE(back.same_shape(t));
  for (int64_t i = 0; i < t.numel(); ++i) EXPECT_EQ(back[i], t[i]);
  std::filesystem::remove(path);
}

TEST(ArrayIo, ScalarRoundTrip) {
  Tensor<double> s(std::vector<int64_t>{});
  s[0] = -0.125;
  const std::string path = temp_path("mam4wf_io_scalar.mamf");
  save_array(path, s);
  Tensor<double> back = load_array<double>(path);
  EXPECT_EQ(back.rank(), 0);
  EXPECT_EQ(back[0], -0.125);
  std::filesystem::remove(path);
}

TEST(ArrayIo, TruncatedFileIsFormatError) {
  Tensor<float> t({4, 4});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(i);
  const std::string path = temp_path("mam4wf_io_trunc.mamf");
  save_array(path, t);
  const auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full - 7);
  EXPECT_THROW(load_array<float>(path), FormatError);
  std::filesystem::remove(path);
}

TEST(ArrayIo, BadMagicIsFormatError) {
  const std::string path = temp_path("mam4wf_io_magic.mamf");
  std::ofstream f(path, std::ios::binary);
  f << "NOPEnope definitely not an array";
  f.close();
  EXPECT_THROW(load_array<float>(path), FormatError);
  std::filesystem::remove(path);
}

TEST(ArrayIo, DtypeMismatchIsFormatError) {
  Tensor<float> t({3});
  const std::string path = temp_path("mam4wf_io_dtype.mamf");
  save_array(path, t);
  EXPECT_THROW(load_array<double>(path), FormatError);
  std::filesystem::remove(path);
}

TEST(ArrayIo, TrailingBytesIsFormatError) {
  Tensor<float> t({3});
  const std::string path = temp_path("mam4wf_io_trailing.mamf");
  save_array(path, t);
  std::ofstream f(path, std::ios::binary | std::ios::app);
  f << "extra";
  f.close();
  EXPECT_THROW(load_array<float>(path), FormatError);
  std::filesystem::remove(path);
}

TEST(ArrayIo, NonFiniteRefused) {
  Tensor<float> t({2});
  t[0] = std::numeric_limits<float>::quiet_NaN();
  const std::string path = temp_path("mam4wf_io_nan.mamf");
  EXPECT_THROW(save_array(path, t), ArgumentError);
}

TEST(Rng, DeterministicStreams) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng c(42), d(43);
  bool differ = false;
  for (int i = 0; i < 10; ++i) differ |= c.next_u64() != d.next_u64();
  EXPECT_TRUE(differ);
}

TEST(Rng, UniformBoundsAndStateRestore) {
  Rng a(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
  const std::string state = a.state_string();
  Rng b(999);
  b.set_state_string(state);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, TruncatedNormalClipped) {
  Rng a(5);
  for (int i = 0; i < 2000; ++i)
    EXPECT_LE(std::fabs(a.truncated_normal(0.02)), 0.04 + 1e-12);
}

TEST(Kv, ParseAndRoundTrip) {
  KvMap kv = KvMap::parse(
      "# comment\n"
      "data.canvas = 32\n"
      "model.scheme = masked-ar  # trailing comment\n"
      "train.learning_rate = 0.001\n"
      "model.encoder_widths = 32, 64\n");
  EXPECT_EQ(kv.get_int("data.canvas"), 32);
  EXPECT_EQ(kv.get("model.scheme"), "masked-ar");
  EXPECT_DOUBLE_EQ(kv.get_double("train.learning_rate"), 0.001);
  const auto widths = kv.get_int_list("model.encoder_widths");
  ASSERT_EQ(widths.size(), 2u);
  EXPECT_EQ(widths[0], 32);
  EXPECT_EQ(widths[1], 64);

  KvMap again = KvMap::parse(kv.serialize());
  EXPECT_EQ(again.serialize(), kv.serialize());
}

TEST(Kv, Errors) {
  EXPECT_THROW(KvMap::parse("novalue\n"), FormatError);
  KvMap kv = KvMap::parse("a = b\n");
  EXPECT_THROW(kv.get("missing"), ConfigError);
  EXPECT_THROW(kv.get_int("a"), ConfigError);
}

}  // namespace
