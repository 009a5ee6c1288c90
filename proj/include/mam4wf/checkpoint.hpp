#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mam4wf/errors.hpp"
#include "mam4wf/io.hpp"
#include "mam4wf/kv.hpp"
#include "mam4wf/model.hpp"

namespace mam4wf {

// Checkpoint ("MAMC"): magic, version byte, a key/value text header carrying
// the model configuration and schema version, then a named map of float32
// arrays in the container format. Live parameters use their plain names, the
// EMA shadow lives under `ema/`, optimizer and loop state under `train/`.
struct Checkpoint {
  ModelConfig config;
  ParamSnapshot<float> live;
  ParamSnapshot<float> ema;
  ParamSnapshot<float> adam_m;  // names match live; empty when absent
  ParamSnapshot<float> adam_v;
  KvMap extra;  // train.step, train.adam_t, train.rng_state, ...
};

namespace ckpt_detail {

constexpr char kMagic[4] = {'M', 'A', 'M', 'C'};
constexpr uint8_t kVersion = 1;

inline void put_u32(std::ostream& out, uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

inline uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw FormatError("checkpoint: truncated");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

inline void put_entry(std::ostream& out, const std::string& name,
                      const Tensor<float>& value) {
  if (name.size() > 0xffff) throw ArgumentError("checkpoint name too long");
  put_u32(out, static_cast<uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_array(out, value);
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);

  KvMap header = ckpt.config.to_kv();
  header.set("checkpoint.format", "mam4wf-checkpoint");
  header.set_int("checkpoint.schema", ckpt_detail::kVersion);
  header.merge(ckpt.extra);
  const std::string header_text = header.serialize();

  f.write(ckpt_detail::kMagic, 4);
  f.put(static_cast<char>(ckpt_detail::kVersion));
  ckpt_detail::put_u32(f, static_cast<uint32_t>(header_text.size()));
  f.write(header_text.data(),
          static_cast<std::streamsize>(header_text.size()));

  uint32_t count = static_cast<uint32_t>(
      ckpt.live.names.size() + ckpt.ema.names.size() +
      ckpt.adam_m.names.size() + ckpt.adam_v.names.size());
  ckpt_detail::put_u32(f, count);
  for (size_t i = 0; i < ckpt.live.names.size(); ++i)
    ckpt_detail::put_entry(f, ckpt.live.names[i], ckpt.live.values[i]);
  for (size_t i = 0; i < ckpt.ema.names.size(); ++i)
    ckpt_detail::put_entry(f, "ema/" + ckpt.ema.names[i], ckpt.ema.values[i]);
  for (size_t i = 0; i < ckpt.adam_m.names.size(); ++i)
    ckpt_detail::put_entry(f, "train/adam_m/" + ckpt.adam_m.names[i],
                           ckpt.adam_m.values[i]);
  for (size_t i = 0; i < ckpt.adam_v.names.size(); ++i)
    ckpt_detail::put_entry(f, "train/adam_v/" + ckpt.adam_v.names[i],
                           ckpt.adam_v.values[i]);
  if (!f) throw IoError("checkpoint: write failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, ckpt_detail::kMagic, 4) != 0)
    throw FormatError("checkpoint: bad magic in " + path);
  const int version = f.get();
  if (version != ckpt_detail::kVersion)
    throw FormatError("checkpoint: unsupported schema version " +
                      std::to_string(version));
  const uint32_t header_len = ckpt_detail::get_u32(f);
  std::string header_text(header_len, '\0');
  f.read(header_text.data(), header_len);
  if (!f) throw FormatError("checkpoint: truncated header");

  Checkpoint ckpt;
  ckpt.extra = KvMap::parse(header_text);
  if (ckpt.extra.get_or("checkpoint.format", "") != "mam4wf-checkpoint")
    throw FormatError("not a mam4wf checkpoint: " + path);
  ckpt.config = ModelConfig::from_kv(ckpt.extra);

  const uint32_t count = ckpt_detail::get_u32(f);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = ckpt_detail::get_u32(f);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    if (!f) throw FormatError("checkpoint: truncated entry name");
    Tensor<float> value = read_array<float>(f);
    if (name.rfind("ema/", 0) == 0) {
      ckpt.ema.names.push_back(name.substr(4));
      ckpt.ema.values.push_back(std::move(value));
    } else if (name.rfind("train/adam_m/", 0) == 0) {
      ckpt.adam_m.names.push_back(name.substr(13));
      ckpt.adam_m.values.push_back(std::move(value));
    } else if (name.rfind("train/adam_v/", 0) == 0) {
      ckpt.adam_v.names.push_back(name.substr(13));
      ckpt.adam_v.values.push_back(std::move(value));
    } else {
      ckpt.live.names.push_back(name);
      ckpt.live.values.push_back(std::move(value));
    }
  }
  f.peek();
  if (!f.eof()) throw FormatError("checkpoint: trailing bytes in " + path);
  return ckpt;
}

// Convenience: materialize a network from a checkpoint, optionally with the
// EMA shadow instead of the live parameters.
inline ForecastNet<float> net_from_checkpoint(const Checkpoint& ckpt,
                                              bool use_ema) {
  ForecastNet<float> net(ckpt.config);
  if (use_ema) {
    if (ckpt.ema.names.empty())
      throw StateError("checkpoint has no EMA shadow");
    load_snapshot(net, ckpt.ema);
  } else {
    load_snapshot(net, ckpt.live);
  }
  return net;
}

}  // namespace mam4wf
