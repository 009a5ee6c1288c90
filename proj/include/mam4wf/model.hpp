#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mam4wf/embedding.hpp"
#include "mam4wf/errors.hpp"
#include "mam4wf/kv.hpp"
#include "mam4wf/nn.hpp"
#include "mam4wf/rng.hpp"
#include "mam4wf/tensor.hpp"

namespace mam4wf {

// masked_ar: queue-conditioned MISO model with lead-time embedding.
// miso_ar:   plain MISO one-step model rolled out on its own raw frames.
// mimo:      emits every future frame in a single pass.
enum class Scheme { kMaskedAr, kMisoAr, kMimo };

inline std::string scheme_name(Scheme s) {
  switch (s) {
    case Scheme::kMaskedAr: return "masked-ar";
    case Scheme::kMisoAr: return "miso-ar";
    case Scheme::kMimo: return "mimo";
  }
  throw ArgumentError("unknown scheme");
}

inline Scheme scheme_from_name(const std::string& name) {
  if (name == "masked-ar") return Scheme::kMaskedAr;
  if (name == "miso-ar") return Scheme::kMisoAr;
  if (name == "mimo") return Scheme::kMimo;
  throw ConfigError("unknown scheme `" + name + "`");
}

struct ModelConfig {
  int64_t channels = 1;  // C
  int64_t t_obs = 5;     // observed frames T
  int64_t t_hat = 5;     // horizon / queue capacity
  std::vector<int64_t> encoder_widths = {32, 64};
  std::vector<int64_t> encoder_strides = {2, 2};
  int64_t predictor_depth = 4;
  int64_t predictor_width = 128;
  int64_t embed_dim = 128;       // d, sinusoidal + MLP
  int64_t decoder_upsample = 4;  // pixel-shuffle factor r
  int64_t decoder_channels = 8;  // channels between shuffle and output conv
  Scheme scheme = Scheme::kMaskedAr;

  int64_t feature_channels() const { return encoder_widths.back(); }

  int64_t total_downsample() const {
    int64_t f = 1;
    for (int64_t s : encoder_strides) f *= s;
    return f;
  }

  // Observed slots always feed the predictor; the error-prone queue adds
  // t_hat more for the masked autoregressive scheme.
  int64_t input_slots() const {
    return scheme == Scheme::kMaskedAr ? t_obs + t_hat : t_obs;
  }

  int64_t output_frames() const {
    return scheme == Scheme::kMimo ? t_hat : 1;
  }

  void validate() const {
    if (channels < 1 || t_obs < 1 || t_hat < 1)
      throw ConfigError("channels, t_obs, t_hat must be >= 1");
    if (encoder_widths.empty() ||
        encoder_widths.size() != encoder_strides.size())
      throw ConfigError("encoder widths/strides must be non-empty and match");
    if (predictor_depth < 1 || predictor_width < 1 || decoder_channels < 1)
      throw ConfigError("predictor/decoder sizes must be >= 1");
    if (embed_dim < 2 || embed_dim % 2 != 0)
      throw ConfigError("embed_dim must be even and >= 2");
    if (total_downsample() != decoder_upsample)
      throw ConfigError("encoder downsample product must equal decoder upsample");
  }

  KvMap to_kv() const {
    KvMap kv;
    kv.set_int("model.channels", channels);
    kv.set_int("model.t_obs", t_obs);
    kv.set_int("model.t_hat", t_hat);
    std::string widths, strides;
    for (size_t i = 0; i < encoder_widths.size(); ++i) {
      if (i) widths += ", ", strides += ", ";
      widths += std::to_string(encoder_widths[i]);
      strides += std::to_string(encoder_strides[i]);
    }
    kv.set("model.encoder_widths", widths);
    kv.set("model.encoder_strides", strides);
    kv.set_int("model.predictor_depth", predictor_depth);
    kv.set_int("model.predictor_width", predictor_width);
    kv.set_int("model.embed_dim", embed_dim);
    kv.set_int("model.decoder_upsample", decoder_upsample);
    kv.set_int("model.decoder_channels", decoder_channels);
    kv.set("model.scheme", scheme_name(scheme));
    return kv;
  }

  static ModelConfig from_kv(const KvMap& kv) {
    ModelConfig c;
    c.channels = kv.get_int_or("model.channels", c.channels);
    c.t_obs = kv.get_int_or("model.t_obs", c.t_obs);
    c.t_hat = kv.get_int_or("model.t_hat", c.t_hat);
    if (kv.has("model.encoder_widths"))
      c.encoder_widths = kv.get_int_list("model.encoder_widths");
    if (kv.has("model.encoder_strides"))
      c.encoder_strides = kv.get_int_list("model.encoder_strides");
    c.predictor_depth = kv.get_int_or("model.predictor_depth", c.predictor_depth);
    c.predictor_width = kv.get_int_or("model.predictor_width", c.predictor_width);
    c.embed_dim = kv.get_int_or("model.embed_dim", c.embed_dim);
    c.decoder_upsample = kv.get_int_or("model.decoder_upsample", c.decoder_upsample);
    c.decoder_channels = kv.get_int_or("model.decoder_channels", c.decoder_channels);
    c.scheme = scheme_from_name(kv.get_or("model.scheme", "masked-ar"));
    c.validate();
    return c;
  }
};

// The two feature queues of one forecast episode. error_free holds encoder
// features of the observation and is written once; error_prone slots at
// index >= t-1 stay exactly zero before step t is predicted.
template <typename T>
struct QueuePair {
  Tensor<T> error_free;   // (T, Cf, Hf, Wf)
  Tensor<T> error_prone;  // (T_hat, Cf, Hf, Wf)
};

// (C, T, H, W) sequence slice -> (T, C, H, W) frame batch.
template <typename T>
Tensor<T> frames_from_sequence(const Tensor<T>& seq) {
  const int64_t c = seq.dim(0), t = seq.dim(1), h = seq.dim(2), w = seq.dim(3);
  Tensor<T> out({t, c, h, w});
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t ti = 0; ti < t; ++ti)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
          out.at(ti, ci, y, x) = seq.at(ci, ti, y, x);
  return out;
}

// Frame t of a (C, T, H, W) sequence as (C, H, W).
template <typename T>
Tensor<T> sequence_frame(const Tensor<T>& seq, int64_t t) {
  const int64_t c = seq.dim(0), h = seq.dim(2), w = seq.dim(3);
  Tensor<T> out({c, h, w});
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        out[(ci * h + y) * w + x] = seq.at(ci, t, y, x);
  return out;
}

// One (Conv, LayerNorm, SiLU) downsampling stack applied to frames as
// independent images. Also serves as the learned-prior projector, which
// mirrors the encoder architecture.
template <typename T>
class SpatialEncoder {
 public:
  SpatialEncoder(const std::string& name, const ModelConfig& cfg)
      : downsample_(cfg.total_downsample()) {
    int64_t in_c = cfg.channels;
    for (size_t i = 0; i < cfg.encoder_widths.size(); ++i) {
      const int64_t out_c = cfg.encoder_widths[i];
      const int64_t stride = cfg.encoder_strides[i];
      const std::string stage = name + ".stage" + std::to_string(i);
      convs_.emplace_back(stage + ".conv", in_c, out_c, 3, stride, 1);
      norms_.emplace_back(stage + ".ln", out_c);
      acts_.emplace_back();
      in_c = out_c;
    }
  }

  void init(Rng& rng, double stddev) {
    for (auto& c : convs_) c.init(rng, stddev);
  }

  // (N, C, H, W) -> (N, Cf, H/ds, W/ds); frames never mix across N.
  Tensor<T> forward(const Tensor<T>& frames) {
    if (frames.dim(2) % downsample_ != 0 || frames.dim(3) % downsample_ != 0)
      throw ConfigError("encoder: spatial dims not divisible by downsample " +
                        std::to_string(downsample_));
    Tensor<T> x = frames;
    for (size_t i = 0; i < convs_.size(); ++i) {
      x = convs_[i].forward(x);
      x = norms_[i].forward(x);
      x = acts_[i].forward(x);
    }
    return x;
  }

  Tensor<T> backward(const Tensor<T>& dfeat) {
    Tensor<T> d = dfeat;
    for (size_t i = convs_.size(); i-- > 0;) {
      d = acts_[i].backward(d);
      d = norms_[i].backward(d);
      d = convs_[i].backward(d);
    }
    return d;
  }

  void visit_params(const nn::ParamVisitor<T>& fn) {
    for (size_t i = 0; i < convs_.size(); ++i) {
      convs_[i].visit_params(fn);
      norms_[i].visit_params(fn);
    }
  }

 private:
  int64_t downsample_;
  std::vector<nn::Conv2d<T>> convs_;
  std::vector<nn::ChannelLayerNorm<T>> norms_;
  std::vector<nn::Silu<T>> acts_;
};

// Folds the queue slots into channels, projects to the working width and
// runs ConvNeXt blocks. Lead-time vectors are added channel-wise at each
// block input when the scheme is lead-time conditioned.
template <typename T>
class SpatioTemporalPredictor {
 public:
  SpatioTemporalPredictor(const std::string& name, const ModelConfig& cfg)
      : width_(cfg.predictor_width),
        in_proj_(name + ".in_proj", cfg.input_slots() * cfg.feature_channels(),
                 cfg.predictor_width, 1, 1, 0) {
    for (int64_t k = 0; k < cfg.predictor_depth; ++k)
      blocks_.emplace_back(name + ".block" + std::to_string(k),
                           cfg.predictor_width);
  }

  void init(Rng& rng, double stddev) {
    in_proj_.init(rng, stddev);
    for (auto& b : blocks_) b.init(rng, stddev);
  }

  std::vector<int64_t> block_channels() const {
    return std::vector<int64_t>(blocks_.size(), width_);
  }

  // folded: (1, slots*Cf, Hf, Wf); emb may be null for unconditioned schemes.
  Tensor<T> forward(const Tensor<T>& folded, const LeadTimeEmbedding<T>* emb) {
    if (emb && emb->per_layer.size() != blocks_.size())
      throw StateError("lead-time embedding has wrong head count");
    Tensor<T> x = in_proj_.forward(folded);
    const int64_t plane = x.dim(2) * x.dim(3);
    for (size_t k = 0; k < blocks_.size(); ++k) {
      if (emb) {
        const Tensor<T>& e = emb->per_layer[k];
        for (int64_t c = 0; c < width_; ++c) {
          T* px = x.data() + c * plane;
          for (int64_t s = 0; s < plane; ++s) px[s] += e[c];
        }
      }
      x = blocks_[k].forward(x);
    }
    return x;
  }

  // Returns the gradient w.r.t. the folded queue tensor; d_emb (when
  // requested) receives one per-block channel gradient vector.
  Tensor<T> backward(const Tensor<T>& dlatent,
                     std::vector<Tensor<T>>* d_emb) {
    Tensor<T> d = dlatent;
    if (d_emb) d_emb->assign(blocks_.size(), Tensor<T>());
    const int64_t plane = d.dim(2) * d.dim(3);
    for (size_t k = blocks_.size(); k-- > 0;) {
      d = blocks_[k].backward(d);
      if (d_emb) {
        Tensor<T> de({width_});
        for (int64_t c = 0; c < width_; ++c) {
          const T* pd = d.data() + c * plane;
          T acc = T(0);
          for (int64_t s = 0; s < plane; ++s) acc += pd[s];
          de[c] = acc;
        }
        (*d_emb)[k] = std::move(de);
      }
    }
    return in_proj_.backward(d);
  }

  void visit_params(const nn::ParamVisitor<T>& fn) {
    in_proj_.visit_params(fn);
    for (auto& b : blocks_) b.visit_params(fn);
  }

 private:
  int64_t width_;
  nn::Conv2d<T> in_proj_;
  std::vector<nn::ConvNeXtBlock<T>> blocks_;
};

// (Conv, LayerNorm, SiLU, PixelShuffle) then an output conv. The output conv
// is zero-initialized so an untrained model predicts near-zero frames.
template <typename T>
class SpatialDecoder {
 public:
  SpatialDecoder(const std::string& name, const ModelConfig& cfg)
      : conv_(name + ".conv", cfg.predictor_width,
              cfg.decoder_upsample * cfg.decoder_upsample * cfg.decoder_channels,
              3, 1, 1),
        norm_(name + ".ln", cfg.decoder_upsample * cfg.decoder_upsample *
                                cfg.decoder_channels),
        shuffle_(cfg.decoder_upsample),
        out_conv_(name + ".out", cfg.decoder_channels,
                  cfg.channels * cfg.output_frames(), 3, 1, 1) {}

  void init(Rng& rng, double stddev) {
    conv_.init(rng, stddev);
    out_conv_.init(rng, stddev);
    out_conv_.weight().value.fill(T(0));
    out_conv_.bias().value.fill(T(0));
  }

  // latent (1, width, Hf, Wf) -> (1, C*out_frames, H, W)
  Tensor<T> forward(const Tensor<T>& latent) {
    Tensor<T> x = conv_.forward(latent);
    x = norm_.forward(x);
    x = act_.forward(x);
    x = shuffle_.forward(x);
    return out_conv_.forward(x);
  }

  Tensor<T> backward(const Tensor<T>& dframe) {
    Tensor<T> d = out_conv_.backward(dframe);
    d = shuffle_.backward(d);
    d = act_.backward(d);
    d = norm_.backward(d);
    return conv_.backward(d);
  }

  void visit_params(const nn::ParamVisitor<T>& fn) {
    conv_.visit_params(fn);
    norm_.visit_params(fn);
    out_conv_.visit_params(fn);
  }

 private:
  nn::Conv2d<T> conv_;
  nn::ChannelLayerNorm<T> norm_;
  nn::Silu<T> act_;
  nn::PixelShuffle<T> shuffle_;
  nn::Conv2d<T> out_conv_;
};

// F(X, history, t): spatial encoder, queue assembly, lead-time conditioned
// predictor, spatial decoder, plus the learned-prior projector used at
// inference. Parameters are visited in a fixed order, which defines the
// checkpoint layout and the optimizer state alignment.
template <typename T>
class ForecastNet {
 public:
  explicit ForecastNet(ModelConfig cfg)
      : cfg_(std::move(cfg)),
        encoder_("encoder", cfg_),
        predictor_("predictor", cfg_),
        decoder_("decoder", cfg_) {
    cfg_.validate();
    if (cfg_.scheme == Scheme::kMaskedAr) {
      lead_mlp_ = std::make_unique<LeadTimeMlp<T>>(
          "lead", cfg_.embed_dim, cfg_.t_hat, predictor_.block_channels());
      prior_ = std::make_unique<SpatialEncoder<T>>("prior", cfg_);
    }
  }

  const ModelConfig& config() const { return cfg_; }

  void init_params(uint64_t seed) {
    Rng rng(seed);
    const double stddev = 0.02;
    encoder_.init(rng, stddev);
    if (lead_mlp_) lead_mlp_->init(rng, stddev);
    predictor_.init(rng, stddev);
    decoder_.init(rng, stddev);
    if (prior_) prior_->init(rng, stddev);
  }

  // ---- sub-operations ---------------------------------------------------

  Tensor<T> encode(const Tensor<T>& frames) {
    ++encode_calls_;
    return encoder_.forward(frames);
  }

  Tensor<T> encode_backward(const Tensor<T>& dfeat) {
    return encoder_.backward(dfeat);
  }

  LeadTimeEmbedding<T> lead_time_embed(int64_t t) {
    if (!lead_mlp_) throw StateError("scheme has no lead-time embedding");
    return lead_mlp_->forward(t);
  }

  void lead_time_backward(const std::vector<Tensor<T>>& d_emb) {
    lead_mlp_->backward(d_emb);
  }

  // history holds the stored features of predictions 1..t-1.
  QueuePair<T> assemble_queues(const Tensor<T>& encoded_observed,
                               const std::vector<Tensor<T>>& history,
                               int64_t t) const {
    if (static_cast<int64_t>(history.size()) != t - 1)
      throw StateError("queue assembly at step " + std::to_string(t) +
                       " expects " + std::to_string(t - 1) +
                       " stored features, got " +
                       std::to_string(history.size()));
    QueuePair<T> q;
    q.error_free = encoded_observed;
    const int64_t cf = encoded_observed.dim(1), hf = encoded_observed.dim(2),
                  wf = encoded_observed.dim(3);
    q.error_prone = Tensor<T>({cfg_.t_hat, cf, hf, wf});
    const int64_t slot = cf * hf * wf;
    for (size_t i = 0; i < history.size(); ++i) {
      if (history[i].numel() != slot)
        throw StateError("stored feature has wrong shape");
      std::copy(history[i].data(), history[i].data() + slot,
                q.error_prone.data() + static_cast<int64_t>(i) * slot);
    }
    return q;
  }

  // Concatenate error-free then error-prone along the slot axis and fold
  // time into channels.
  Tensor<T> fold_queues(const QueuePair<T>& q) const {
    const int64_t cf = q.error_free.dim(1), hf = q.error_free.dim(2),
                  wf = q.error_free.dim(3);
    const int64_t slots = q.error_free.dim(0) + q.error_prone.dim(0);
    Tensor<T> folded({1, slots * cf, hf, wf});
    const int64_t free_n = q.error_free.numel();
    std::copy(q.error_free.data(), q.error_free.data() + free_n, folded.data());
    std::copy(q.error_prone.data(),
              q.error_prone.data() + q.error_prone.numel(),
              folded.data() + free_n);
    return folded;
  }

  Tensor<T> predict(const QueuePair<T>& q, const LeadTimeEmbedding<T>* emb) {
    return predictor_.forward(fold_queues(q), emb);
  }

  Tensor<T> decode(const Tensor<T>& latent) { return decoder_.forward(latent); }

  // ---- full MISO forward -------------------------------------------------

  // observed: (C, T, H, W); returns one frame (C, H, W).
  Tensor<T> forward(const Tensor<T>& observed,
                    const std::vector<Tensor<T>>& history, int64_t t) {
    if (cfg_.scheme != Scheme::kMaskedAr)
      throw StateError("forward(X, history, t) requires the masked-ar scheme");
    if (t < 1 || t > cfg_.t_hat)
      throw RangeError("lead time " + std::to_string(t) + " outside [1, " +
                       std::to_string(cfg_.t_hat) + "]");
    Tensor<T> feat = encode(frames_from_sequence(observed));
    QueuePair<T> q = assemble_queues(feat, history, t);
    LeadTimeEmbedding<T> emb = lead_time_embed(t);
    Tensor<T> latent = predict(q, &emb);
    Tensor<T> frame = decode(latent);
    return frame.reshaped({cfg_.channels, frame.dim(2), frame.dim(3)});
  }

  // Sliding-window MISO baseline: (C, T, H, W) -> next frame (C, H, W).
  Tensor<T> forward_window(const Tensor<T>& window) {
    if (cfg_.scheme != Scheme::kMisoAr)
      throw StateError("forward_window requires the miso-ar scheme");
    Tensor<T> feat = encode(frames_from_sequence(window));
    Tensor<T> latent = predictor_.forward(fold_frames(feat), nullptr);
    Tensor<T> frame = decode(latent);
    return frame.reshaped({cfg_.channels, frame.dim(2), frame.dim(3)});
  }

  // MIMO baseline: (C, T, H, W) -> (T_hat, C, H, W) in one pass.
  Tensor<T> forward_mimo(const Tensor<T>& observed) {
    if (cfg_.scheme != Scheme::kMimo)
      throw StateError("forward_mimo requires the mimo scheme");
    Tensor<T> feat = encode(frames_from_sequence(observed));
    Tensor<T> latent = predictor_.forward(fold_frames(feat), nullptr);
    Tensor<T> frames = decode(latent);
    return frames.reshaped(
        {cfg_.t_hat, cfg_.channels, frames.dim(2), frames.dim(3)});
  }

  // ---- learned prior ------------------------------------------------------

  // frame (C, H, W) -> features (Cf, Hf, Wf); same output shape as encode.
  Tensor<T> lp_project(const Tensor<T>& frame) {
    if (!prior_) throw StateError("scheme has no learned prior");
    Tensor<T> f = prior_->forward(
        frame.reshaped({1, frame.dim(0), frame.dim(1), frame.dim(2)}));
    return f.reshaped({f.dim(1), f.dim(2), f.dim(3)});
  }

  void lp_backward(const Tensor<T>& dfeat) {
    prior_->backward(
        dfeat.reshaped({1, dfeat.dim(0), dfeat.dim(1), dfeat.dim(2)}));
  }

  // ---- backward building blocks for the trainer ---------------------------

  Tensor<T> decode_backward(const Tensor<T>& dframe) {
    return decoder_.backward(dframe);
  }

  // Returns gradient w.r.t. the error-free queue content (T, Cf, Hf, Wf);
  // the error-prone part of the fold is discarded by the caller's contract
  // (stored history enters as constants).
  Tensor<T> predict_backward(const Tensor<T>& dlatent,
                             std::vector<Tensor<T>>* d_emb,
                             int64_t hf, int64_t wf) {
    Tensor<T> dfold = predictor_.backward(dlatent, d_emb);
    const int64_t cf = cfg_.feature_channels();
    Tensor<T> dfree({cfg_.t_obs, cf, hf, wf});
    std::copy(dfold.data(), dfold.data() + dfree.numel(), dfree.data());
    return dfree;
  }

  // ---- parameter plumbing --------------------------------------------------

  void visit_params(const nn::ParamVisitor<T>& fn) {
    encoder_.visit_params(fn);
    if (lead_mlp_) lead_mlp_->visit_params(fn);
    predictor_.visit_params(fn);
    decoder_.visit_params(fn);
    if (prior_) prior_->visit_params(fn);
  }

  // Everything except the learned prior; LP fine-tuning freezes these.
  void visit_main_params(const nn::ParamVisitor<T>& fn) {
    encoder_.visit_params(fn);
    if (lead_mlp_) lead_mlp_->visit_params(fn);
    predictor_.visit_params(fn);
    decoder_.visit_params(fn);
  }

  void visit_prior_params(const nn::ParamVisitor<T>& fn) {
    if (prior_) prior_->visit_params(fn);
  }

  void zero_grads() {
    visit_params([](nn::Param<T>& p) { p.grad.fill(T(0)); });
  }

  int64_t param_count() {
    int64_t n = 0;
    visit_params([&](nn::Param<T>& p) { n += p.value.numel(); });
    return n;
  }

  int64_t encode_call_count() const { return encode_calls_; }
  void reset_encode_call_count() { encode_calls_ = 0; }

 private:
  // (N, Cf, Hf, Wf) frame features -> (1, N*Cf, Hf, Wf)
  Tensor<T> fold_frames(const Tensor<T>& feat) const {
    return feat.reshaped({1, feat.dim(0) * feat.dim(1), feat.dim(2), feat.dim(3)});
  }

  ModelConfig cfg_;
  SpatialEncoder<T> encoder_;
  SpatioTemporalPredictor<T> predictor_;
  SpatialDecoder<T> decoder_;
  std::unique_ptr<LeadTimeMlp<T>> lead_mlp_;
  std::unique_ptr<SpatialEncoder<T>> prior_;
  int64_t encode_calls_ = 0;
};

// ---------------------------------------------------------------------------
// Named parameter snapshots: the EMA shadow and checkpoint payloads.

template <typename T>
struct ParamSnapshot {
  std::vector<std::string> names;
  std::vector<Tensor<T>> values;

  int64_t find(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int64_t>(i);
    return -1;
  }
};

template <typename T>
std::vector<nn::Param<T>*> collect_params(ForecastNet<T>& net) {
  std::vector<nn::Param<T>*> out;
  net.visit_params([&](nn::Param<T>& p) { out.push_back(&p); });
  return out;
}

// Copies parameter values between two nets with the same layout.
template <typename T>
void copy_params(ForecastNet<T>& dst, ForecastNet<T>& src) {
  std::vector<nn::Param<T>*> sp = collect_params(src);
  size_t i = 0;
  dst.visit_params([&](nn::Param<T>& p) {
    if (i >= sp.size() || !sp[i]->value.same_shape(p.value))
      throw StateError("parameter layout mismatch at " + p.name);
    p.value = sp[i]->value;
    ++i;
  });
}

template <typename T>
void accumulate_grads(ForecastNet<T>& dst, ForecastNet<T>& src) {
  std::vector<nn::Param<T>*> sp = collect_params(src);
  size_t i = 0;
  dst.visit_params([&](nn::Param<T>& p) {
    const Tensor<T>& g = sp[i]->grad;
    for (int64_t j = 0; j < g.numel(); ++j) p.grad[j] += g[j];
    ++i;
  });
}

template <typename T>
ParamSnapshot<T> snapshot_params(ForecastNet<T>& net) {
  ParamSnapshot<T> snap;
  net.visit_params([&](nn::Param<T>& p) {
    snap.names.push_back(p.name);
    snap.values.push_back(p.value);
  });
  return snap;
}

template <typename T>
void load_snapshot(ForecastNet<T>& net, const ParamSnapshot<T>& snap) {
  size_t i = 0;
  net.visit_params([&](nn::Param<T>& p) {
    if (i >= snap.names.size() || snap.names[i] != p.name ||
        !snap.values[i].same_shape(p.value))
      throw StateError("snapshot does not match network layout at " + p.name);
    p.value = snap.values[i];
    ++i;
  });
  if (i != snap.names.size())
    throw StateError("snapshot has extra parameters");
}

}  // namespace mam4wf
