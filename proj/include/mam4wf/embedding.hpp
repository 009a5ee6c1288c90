#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mam4wf/errors.hpp"
#include "mam4wf/nn.hpp"
#include "mam4wf/rng.hpp"
#include "mam4wf/tensor.hpp"

namespace mam4wf {

// out[2i]   = sin(t / 10000^(2i/d))
// out[2i+1] = cos(t / 10000^(2i/d))
template <typename T>
Tensor<T> sinusoidal_embedding(int64_t t, int64_t d) {
  if (d < 2 || d % 2 != 0)
    throw ConfigError("embedding dimension must be even and >= 2");
  if (t < 0) throw RangeError("embedding position must be >= 0");
  Tensor<T> out({d});
  for (int64_t i = 0; i < d / 2; ++i) {
    const double expo = static_cast<double>(2 * i) / static_cast<double>(d);
    const double arg = static_cast<double>(t) / std::pow(10000.0, expo);
    out[2 * i] = static_cast<T>(std::sin(arg));
    out[2 * i + 1] = static_cast<T>(std::cos(arg));
  }
  return out;
}

template <typename T>
struct LeadTimeEmbedding {
  Tensor<T> base;                    // (d), components in [-1, 1]
  std::vector<Tensor<T>> per_layer;  // one vector per predictor block
};

// Shared (Linear, GELU) trunk over the sinusoidal base, then one linear head
// per predictor block resizing to that block's channel count.
template <typename T>
class LeadTimeMlp {
 public:
  LeadTimeMlp(const std::string& name, int64_t d, int64_t max_lead,
              const std::vector<int64_t>& layer_channels)
      : d_(d), max_lead_(max_lead), trunk_(name + ".trunk", d, d) {
    if (max_lead < 1) throw ConfigError("max lead time must be >= 1");
    heads_.reserve(layer_channels.size());
    for (size_t k = 0; k < layer_channels.size(); ++k)
      heads_.emplace_back(name + ".head" + std::to_string(k), d,
                          layer_channels[k]);
  }

  void init(Rng& rng, double stddev) {
    trunk_.init(rng, stddev);
    for (auto& h : heads_) h.init(rng, stddev);
  }

  LeadTimeEmbedding<T> forward(int64_t t) {
    if (t < 1 || t > max_lead_)
      throw RangeError("lead time " + std::to_string(t) + " outside [1, " +
                       std::to_string(max_lead_) + "]");
    LeadTimeEmbedding<T> emb;
    emb.base = sinusoidal_embedding<T>(t, d_);
    Tensor<T> h = trunk_.forward(emb.base.reshaped({1, d_}));
    h = act_.forward(h);
    emb.per_layer.reserve(heads_.size());
    for (auto& head : heads_)
      emb.per_layer.push_back(head.forward(h).reshaped({head.out_dim()}));
    return emb;
  }

  // d_per_layer[k] is the loss gradient w.r.t. per_layer[k]; accumulates
  // parameter gradients for heads and trunk. The base embedding is constant.
  void backward(const std::vector<Tensor<T>>& d_per_layer) {
    if (d_per_layer.size() != heads_.size())
      throw StateError("lead-time backward: head count mismatch");
    Tensor<T> dh({1, d_});
    for (size_t k = 0; k < heads_.size(); ++k) {
      Tensor<T> d = heads_[k].backward(
          d_per_layer[k].reshaped({1, d_per_layer[k].numel()}));
      for (int64_t i = 0; i < d_; ++i) dh[i] += d[i];
    }
    Tensor<T> d = act_.backward(dh);
    trunk_.backward(d);
  }

  void visit_params(const nn::ParamVisitor<T>& fn) {
    trunk_.visit_params(fn);
    for (auto& h : heads_) h.visit_params(fn);
  }

  int64_t dim() const { return d_; }
  size_t head_count() const { return heads_.size(); }

 private:
  int64_t d_;
  int64_t max_lead_;
  nn::Linear<T> trunk_;
  nn::Gelu<T> act_;
  std::vector<nn::Linear<T>> heads_;
};

}  // namespace mam4wf
