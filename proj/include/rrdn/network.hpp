#pragma once

#include <atomic>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rrdn/config.hpp"
#include "rrdn/ops.hpp"
#include "rrdn/param_store.hpp"

namespace rrdn {

enum class Variant { rdispnet_m, rrdispnet_m, rrdispnet_dtm };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::rdispnet_m: return "rdispnet_m";
    case Variant::rrdispnet_m: return "rrdispnet_m";
    case Variant::rrdispnet_dtm: return "rrdispnet_dtm";
  }
  return "unknown";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "rdispnet_m") return Variant::rdispnet_m;
  if (s == "rrdispnet_m") return Variant::rrdispnet_m;
  if (s == "rrdispnet_dtm") return Variant::rrdispnet_dtm;
  throw ConfigError("unknown network variant: " + s);
}

struct NetworkConfig {
  // Full-size widths; six stages (one stride-1, five stride-2).
  static inline const std::vector<std::size_t> kDefaultEncoder{16, 32, 64, 128, 192, 384};
  static inline const std::vector<std::size_t> kDefaultDecoder{32, 64, 96, 160, 256, 384};

  Variant variant = Variant::rrdispnet_dtm;
  std::vector<std::size_t> encoder_channels = kDefaultEncoder;
  std::vector<std::size_t> decoder_channels = kDefaultDecoder;
  bool use_rect_fusion = true;
  bool use_domain_transform = true;
  std::size_t num_output_scales = 4;
  double disparity_fraction = 0.3;

  static NetworkConfig for_variant(Variant v, std::vector<std::size_t> encoder = kDefaultEncoder,
                                   std::vector<std::size_t> decoder = kDefaultDecoder) {
    NetworkConfig c;
    c.variant = v;
    c.encoder_channels = std::move(encoder);
    c.decoder_channels = std::move(decoder);
    c.use_rect_fusion = v != Variant::rdispnet_m;
    c.use_domain_transform = v == Variant::rrdispnet_dtm;
    return c;
  }

  std::size_t stages() const { return encoder_channels.size(); }

  // Input height and width must be multiples of this.
  std::size_t input_multiple() const { return std::size_t{1} << (stages() - 1); }

  void validate() const {
    if (encoder_channels.size() != decoder_channels.size()) {
      throw ConfigError("encoder and decoder stage counts differ (" + std::to_string(encoder_channels.size()) + " vs " +
                        std::to_string(decoder_channels.size()) + ")");
    }
    if (num_output_scales != 4) throw ConfigError("num_output_scales must be 4");
    if (stages() < num_output_scales + 1) throw ConfigError("need at least 5 stages for 4 output scales");
    for (auto c : encoder_channels)
      if (c == 0) throw ConfigError("encoder channel width must be positive");
    for (auto c : decoder_channels)
      if (c == 0) throw ConfigError("decoder channel width must be positive");
    const bool rect = variant != Variant::rdispnet_m;
    const bool dt = variant == Variant::rrdispnet_dtm;
    if (use_rect_fusion != rect || use_domain_transform != dt) {
      throw ConfigError("block toggles do not match variant " + to_string(variant));
    }
    if (!(disparity_fraction > 0 && disparity_fraction <= 1)) throw ConfigError("disparity_fraction must be in (0,1]");
  }

  KeyValues to_key_values() const {
    KeyValues kv;
    kv.set("variant", to_string(variant));
    kv.set("encoder_channels", join_list(encoder_channels));
    kv.set("decoder_channels", join_list(decoder_channels));
    kv.set("use_rect_fusion", use_rect_fusion ? "true" : "false");
    kv.set("use_domain_transform", use_domain_transform ? "true" : "false");
    kv.set("num_output_scales", std::to_string(num_output_scales));
    std::ostringstream frac;
    frac.precision(17);
    frac << disparity_fraction;
    kv.set("disparity_fraction", frac.str());
    return kv;
  }

  static NetworkConfig from_key_values(const KeyValues& kv) {
    auto widths = [&](const std::string& key, const std::vector<std::size_t>& fallback) {
      std::vector<double> d(fallback.begin(), fallback.end());
      std::vector<std::size_t> out;
      for (double v : kv.get_list(key, d)) out.push_back(static_cast<std::size_t>(v));
      return out;
    };
    NetworkConfig c = for_variant(parse_variant(kv.get("variant", "rrdispnet_dtm")), widths("encoder_channels", kDefaultEncoder),
                                  widths("decoder_channels", kDefaultDecoder));
    c.use_rect_fusion = kv.get_bool("use_rect_fusion", c.use_rect_fusion);
    c.use_domain_transform = kv.get_bool("use_domain_transform", c.use_domain_transform);
    c.num_output_scales = static_cast<std::size_t>(kv.get_int("num_output_scales", 4));
    c.disparity_fraction = kv.get_double("disparity_fraction", 0.3);
    c.validate();
    return c;
  }
};

/// Outputs at one scale. Disparities are in pixels of that scale.
template <typename T>
struct ScaleOutput {
  Tensor<T> disp_left;
  Tensor<T> disp_right;
  Tensor<T> mask_left;
  Tensor<T> mask_right;
  // Head activations [D_L, D_R, a_L, a_R] in (0,1), before disparity scaling.
  Tensor<T> head;
};

// Index 0 is full resolution.
template <typename T>
using ScaleOutputs = std::vector<ScaleOutput<T>>;

// ---------------------------------------------------------------------------
// Building blocks. Parameters live in a ParamStore under "<prefix>.weight"
// and "<prefix>.bias".

template <typename T>
void add_conv(ParamStore<T>& store, const std::string& prefix, std::size_t cin, std::size_t cout, std::size_t kh,
              std::size_t kw, std::mt19937_64& rng, double gain = 1.0) {
  store.add(prefix + ".weight", kaiming_normal<T>({cout, cin, kh, kw}, rng, true, gain));
  store.add(prefix + ".bias", Tensor<T>::zeros({cout, 1, 1, 1}, true));
}

// Same-size convolution for odd kernels, or stride-2 3x3 downsampling.
template <typename T>
Tensor<T> apply_conv(const ParamStore<T>& store, const std::string& prefix, const Tensor<T>& x, std::size_t stride = 1) {
  const Tensor<T>& w = store.get(prefix + ".weight");
  const Shape ws = w.shape();
  if (ws.c != x.shape().c) {
    throw ShapeError(prefix + ": input has " + std::to_string(x.shape().c) + " channels, weights expect " + std::to_string(ws.c));
  }
  Conv2dOptions o;
  o.stride = {stride, stride};
  o.padding = {ws.h / 2, ws.w / 2};
  return conv2d(x, w, store.get(prefix + ".bias"), o);
}

// Init scales for the last conv of each residual branch and for the heads.
inline constexpr double kResidualGain = 0.1;
inline constexpr double kHeadGain = 0.1;

template <typename T>
void add_residual_block(ParamStore<T>& store, const std::string& prefix, std::size_t channels, std::size_t kh,
                        std::size_t kw, std::mt19937_64& rng) {
  add_conv(store, prefix + ".conv1", channels, channels, kh, kw, rng);
  add_conv(store, prefix + ".conv2", channels, channels, kh, kw, rng, kResidualGain);
}

/// ELU(x + conv(ELU(conv(x)))), channel preserving.
template <typename T>
Tensor<T> residual_block(const Tensor<T>& x, const ParamStore<T>& store, const std::string& prefix) {
  Tensor<T> f = apply_conv(store, prefix + ".conv2", elu(apply_conv(store, prefix + ".conv1", x)));
  return elu(add(x, f));
}

// Trainable scalars in one 3x3 residual block with c channels.
constexpr std::size_t residual_block_params(std::size_t c) { return 2 * (3 * 3 * c * c + c); }

/// Encoder-to-decoder domain transform: the residual structure with 3x5 kernels.
template <typename T>
Tensor<T> domain_transform_block(const Tensor<T>& skip, const ParamStore<T>& store, const std::string& prefix) {
  return residual_block(skip, store, prefix);
}

// ---------------------------------------------------------------------------

/// The encoder-decoder disparity network.
///
/// Encoder stage 0 is a stride-1 convolution at input resolution; stages
/// 1..L-1 are stride-2 convolutions each refined by a residual block. The
/// deepest decoder stage is the bottleneck (conv + residual). Every other
/// decoder stage s upsamples the stage below, concatenates the (optionally
/// domain-transformed) encoder skip at s and the upsampled head activations
/// from s+1 when s+1 has a head, fuses with a 3x3 or 3x5 convolution and
/// refines with a residual block. Stages 0..3 carry a 1x1 sigmoid head with
/// channels [D_L, D_R, a_L, a_R].
template <typename T>
class Network {
 public:
  explicit Network(NetworkConfig config, std::uint64_t seed = 1) : config_(std::move(config)) {
    config_.validate();
    std::mt19937_64 rng(seed);
    const auto& E = config_.encoder_channels;
    const auto& D = config_.decoder_channels;
    const std::size_t L = config_.stages();
    const std::size_t fuse_w = config_.use_rect_fusion ? 5 : 3;

    add_conv(params_, "enc0.conv", 3, E[0], 3, 3, rng);
    for (std::size_t s = 1; s < L; ++s) {
      add_conv(params_, stage("enc", s) + ".down", E[s - 1], E[s], 3, 3, rng);
      add_residual_block(params_, stage("enc", s) + ".res", E[s], 3, 3, rng);
    }
    add_conv(params_, "bottleneck.conv", E[L - 1], D[L - 1], 3, 3, rng);
    add_residual_block(params_, "bottleneck.res", D[L - 1], 3, 3, rng);
    for (std::size_t s = L - 1; s-- > 0;) {
      if (config_.use_domain_transform) add_residual_block(params_, stage("dt", s), E[s], 3, 5, rng);
      const std::size_t cin = E[s] + D[s + 1] + (has_head(s + 1) ? 4 : 0);
      add_conv(params_, stage("dec", s) + ".fuse", cin, D[s], 3, fuse_w, rng);
      add_residual_block(params_, stage("dec", s) + ".res", D[s], 3, 3, rng);
      if (has_head(s)) add_conv(params_, stage("dec", s) + ".head", D[s], 4, 1, 1, rng, kHeadGain);
    }
  }

  const NetworkConfig& config() const { return config_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  std::size_t forward_calls() const { return calls_.load(); }

  ScaleOutputs<T> forward(const Tensor<T>& left) const {
    ++calls_;
    const Shape in = left.shape();
    const std::size_t m = config_.input_multiple();
    if (in.c != 3) throw ShapeError("network input must have 3 channels, got " + std::to_string(in.c));
    if (in.h % m != 0 || in.w % m != 0 || in.h == 0 || in.w == 0) {
      throw ShapeError("network input " + std::to_string(in.h) + "x" + std::to_string(in.w) +
                       " must have height and width divisible by " + std::to_string(m));
    }
    const std::size_t L = config_.stages();
    std::vector<Tensor<T>> enc(L);
    enc[0] = elu(apply_conv(params_, "enc0.conv", left));
    for (std::size_t s = 1; s < L; ++s) {
      Tensor<T> down = elu(apply_conv(params_, stage("enc", s) + ".down", enc[s - 1], 2));
      enc[s] = residual_block(down, params_, stage("enc", s) + ".res");
    }
    Tensor<T> x = residual_block(elu(apply_conv(params_, "bottleneck.conv", enc[L - 1])), params_, "bottleneck.res");

    ScaleOutputs<T> outputs(config_.num_output_scales);
    Tensor<T> prev_head;
    for (std::size_t s = L - 1; s-- > 0;) {
      Tensor<T> skip = config_.use_domain_transform ? domain_transform_block(enc[s], params_, stage("dt", s)) : enc[s];
      std::vector<Tensor<T>> parts{skip, nearest_upsample2x(x)};
      if (prev_head.defined()) parts.push_back(nearest_upsample2x(prev_head));
      x = elu(apply_conv(params_, stage("dec", s) + ".fuse", concat_channels(parts)));
      x = residual_block(x, params_, stage("dec", s) + ".res");
      if (has_head(s)) {
        Tensor<T> head = sigmoid(apply_conv(params_, stage("dec", s) + ".head", x));
        const T max_disp = static_cast<T>(config_.disparity_fraction * static_cast<double>(head.shape().w));
        ScaleOutput<T>& out = outputs[s];
        out.head = head;
        out.disp_left = scalar_mul(slice_channels(head, 0, 1), max_disp);
        out.disp_right = scalar_mul(slice_channels(head, 1, 2), max_disp);
        out.mask_left = slice_channels(head, 2, 3);
        out.mask_right = slice_channels(head, 3, 4);
        prev_head = head;
      }
    }
    return outputs;
  }

 private:
  bool has_head(std::size_t s) const { return s < config_.num_output_scales; }
  static std::string stage(const char* kind, std::size_t s) { return std::string(kind) + std::to_string(s); }

  NetworkConfig config_;
  ParamStore<T> params_;
  mutable std::atomic<std::size_t> calls_{0};
};

/// Parameter count of a configuration without allocating weights.
inline std::size_t param_count(const NetworkConfig& c) {
  c.validate();
  const auto& E = c.encoder_channels;
  const auto& D = c.decoder_channels;
  const std::size_t L = c.stages();
  const std::size_t fuse_w = c.use_rect_fusion ? 5 : 3;
  auto conv = [](std::size_t cin, std::size_t cout, std::size_t kh, std::size_t kw) { return cout * cin * kh * kw + cout; };
  std::size_t total = conv(3, E[0], 3, 3);
  for (std::size_t s = 1; s < L; ++s) total += conv(E[s - 1], E[s], 3, 3) + residual_block_params(E[s]);
  total += conv(E[L - 1], D[L - 1], 3, 3) + residual_block_params(D[L - 1]);
  for (std::size_t s = 0; s + 1 < L; ++s) {
    if (c.use_domain_transform) total += 2 * conv(E[s], E[s], 3, 5);
    const std::size_t cin = E[s] + D[s + 1] + (s + 1 < c.num_output_scales ? 4 : 0);
    total += conv(cin, D[s], 3, fuse_w) + residual_block_params(D[s]);
    if (s < c.num_output_scales) total += conv(D[s], 4, 1, 1);
  }
  return total;
}

}  // namespace rrdn
