#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "rrdn/adam.hpp"
#include "rrdn/checkpoint.hpp"
#include "rrdn/data.hpp"
#include "rrdn/eval.hpp"
#include "rrdn/losses.hpp"
#include "rrdn/network.hpp"
#include "rrdn/threads.hpp"

namespace rrdn {

class TrainingError : public Error {
 public:
  using Error::Error;
};

struct TrainConfig {
  std::size_t epochs = 50;
  double lr = 1e-4;
  std::vector<std::size_t> lr_halve_epochs{30, 40};
  AdamOptions adam;
  std::size_t batch_size = 2;
  std::size_t crop_height = 256;
  std::size_t crop_width = 512;
  std::uint64_t seed = 1;
  bool augment = true;
  // Stops after this many optimizer steps when non-zero.
  std::size_t max_steps = 0;
  bool keep_epoch_checkpoints = true;
  LossWeights weights;
  NetworkConfig network;
  std::array<std::size_t, 3> perceptual_channels = FeatureExtractor<float>::kDefaultChannels;
  std::string perceptual_weights;  // optional checkpoint-format file

  // Learning rate for a 0-based epoch index: halved once per listed epoch reached.
  double lr_at_epoch(std::size_t epoch) const {
    double out = lr;
    for (std::size_t e : lr_halve_epochs)
      if (epoch >= e) out *= 0.5;
    return out;
  }

  void validate() const {
    network.validate();
    weights.validate();
    const std::size_t m = network.input_multiple();
    if (crop_height == 0 || crop_width == 0 || crop_height % m != 0 || crop_width % m != 0) {
      throw ConfigError("crop size " + std::to_string(crop_height) + "x" + std::to_string(crop_width) +
                        " must be a positive multiple of " + std::to_string(m));
    }
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0)) throw ConfigError("lr must be positive");
  }

  static TrainConfig from_key_values(const KeyValues& kv) {
    TrainConfig c;
    c.network = NetworkConfig::from_key_values(kv);
    c.epochs = static_cast<std::size_t>(kv.get_int("epochs", 50));
    c.lr = kv.get_double("lr", 1e-4);
    c.lr_halve_epochs.clear();
    for (double e : kv.get_list("lr_halve_epochs", {30, 40})) c.lr_halve_epochs.push_back(static_cast<std::size_t>(e));
    c.adam.beta1 = kv.get_double("beta1", 0.9);
    c.adam.beta2 = kv.get_double("beta2", 0.999);
    c.adam.eps = kv.get_double("adam_eps", 1e-8);
    c.batch_size = static_cast<std::size_t>(kv.get_int("batch_size", 2));
    c.crop_height = static_cast<std::size_t>(kv.get_int("crop_height", 256));
    c.crop_width = static_cast<std::size_t>(kv.get_int("crop_width", 512));
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));
    c.augment = kv.get_bool("augment", true);
    c.max_steps = static_cast<std::size_t>(kv.get_int("max_steps", 0));
    c.keep_epoch_checkpoints = kv.get_bool("keep_epoch_checkpoints", true);
    c.weights.rec = kv.get_double("a_rec", 1.0);
    c.weights.ds = kv.get_double("a_ds", 0.1);
    c.weights.p = kv.get_double("a_p", 0.1);
    c.weights.a = kv.get_double("a_a", 0.2);
    c.weights.lr = kv.get_double("a_lr", 1.0);
    c.weights.alpha = kv.get_double("alpha", 0.85);
    auto pc = kv.get_list("perceptual_channels", {64, 128, 256});
    if (pc.size() != 3) throw ConfigError("perceptual_channels needs three values");
    for (std::size_t i = 0; i < 3; ++i) c.perceptual_channels[i] = static_cast<std::size_t>(pc[i]);
    c.perceptual_weights = kv.get("perceptual_weights", "");
    c.validate();
    return c;
  }
};

struct StepStats {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0;
  double total = 0;
  double rec = 0, ds = 0, p = 0, a = 0, lr_consistency = 0;
};

inline constexpr const char* kLossLogHeader = "step,epoch,lr,total,rec,ds,p,a,lr_consistency";

inline std::string loss_log_row(const StepStats& s) {
  std::ostringstream os;
  os.precision(9);
  os << s.step << ',' << s.epoch << ',' << s.lr << ',' << s.total << ',' << s.rec << ',' << s.ds << ',' << s.p << ',' << s.a
     << ',' << s.lr_consistency;
  return os.str();
}

/// Owns the network, the frozen perceptual extractor and the optimizer state.
template <typename T>
class Trainer {
 public:
  explicit Trainer(TrainConfig config)
      : config_(std::move(config)), network_(config_.network, config_.seed), extractor_(config_.perceptual_channels) {
    config_.validate();
    if (!config_.perceptual_weights.empty()) extractor_.load(decode_checkpoint(read_file(config_.perceptual_weights)));
  }

  const TrainConfig& config() const { return config_; }
  Network<T>& network() { return network_; }
  const Network<T>& network() const { return network_; }
  const FeatureExtractor<T>& extractor() const { return extractor_; }
  const AdamState<T>& optimizer_state() const { return adam_; }

  // Forward, loss, backward and one Adam update on an already-augmented batch.
  StepStats step(const std::vector<const StereoSample*>& batch, double lr) {
    std::vector<const Image*> lefts, rights;
    for (const auto* s : batch) {
      lefts.push_back(&s->left);
      rights.push_back(&s->right);
    }
    const Tensor<T> left = to_tensor<T>(lefts);
    const Tensor<T> right = to_tensor<T>(rights);
    network_.params().zero_grad();
    ScaleOutputs<T> outputs = network_.forward(left);
    const std::string at_step = " at step " + std::to_string(adam_.step + 1);
    for (const auto& o : outputs)
      for (T v : o.head.data())
        if (!std::isfinite(v)) throw TrainingError("non-finite loss" + at_step + " (network output)");
    LossTerms<T> loss = total_loss(outputs, left, right, config_.weights, &extractor_);
    StepStats stats;
    stats.total = static_cast<double>(loss.total.item());
    stats.rec = loss.rec;
    stats.ds = loss.ds;
    stats.p = loss.p;
    stats.a = loss.a;
    stats.lr_consistency = loss.lr;
    stats.lr = lr;
    if (!std::isfinite(stats.total)) throw TrainingError("non-finite loss" + at_step);
    backward(loss.total);
    try {
      adam_step(network_.params(), adam_, lr, config_.adam);
    } catch (const Error& e) {
      throw TrainingError(std::string(e.what()) + at_step);
    }
    stats.step = adam_.step;
    return stats;
  }

  KeyValues checkpoint_config() const {
    KeyValues kv = network_.config().to_key_values();
    kv.set("input_height", std::to_string(config_.crop_height));
    kv.set("input_width", std::to_string(config_.crop_width));
    return kv;
  }

  void save(const std::string& path) const {
    const std::string tmp = path + ".tmp";
    write_file(tmp, encode_checkpoint(to_checkpoint(checkpoint_config(), network_.params())));
    std::filesystem::rename(tmp, path);
  }

 private:
  TrainConfig config_;
  Network<T> network_;
  FeatureExtractor<T> extractor_;
  AdamState<T> adam_;
};

// Per-epoch sample order from a seed derived from (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + epoch + 1);
  for (std::size_t i = count; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

struct TrainResult {
  std::string checkpoint;
  std::string loss_log;
  std::vector<StepStats> steps;
};

/// Full training run writing `loss_log.csv`, `latest.rrdn` and (optionally)
/// `epoch_NNN.rrdn` into out_dir. On a non-finite loss the run aborts and
/// `latest.rrdn` keeps the last completed epoch.
template <typename T = float>
TrainResult train(const TrainConfig& config, const std::vector<StereoSample>& samples, const std::string& out_dir,
                  const std::function<void(const StepStats&)>& on_step = {}) {
  config.validate();
  if (samples.empty()) throw DataError("no training samples");
  configure_threads();
  std::filesystem::create_directories(out_dir);
  Trainer<T> trainer(config);
  TrainResult result;
  result.loss_log = (std::filesystem::path(out_dir) / "loss_log.csv").string();
  result.checkpoint = (std::filesystem::path(out_dir) / "latest.rrdn").string();
  std::ofstream log(result.loss_log);
  if (!log) throw TrainingError("cannot write loss log in " + out_dir);
  log << kLossLogHeader << "\n";

  std::mt19937_64 aug_rng(config.seed ^ 0xA5A5'5A5A'1234'4321ULL);
  AugmentRanges ranges;
  if (!config.augment) {
    ranges.flip_probability = 0;
    ranges.photometric_probability = 0;
  }
  bool done = false;
  for (std::size_t epoch = 0; epoch < config.epochs && !done; ++epoch) {
    const double lr = config.lr_at_epoch(epoch);
    const auto order = epoch_order(samples.size(), config.seed, epoch);
    for (std::size_t b = 0; b < order.size() && !done; b += config.batch_size) {
      std::vector<StereoSample> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + config.batch_size); ++i) {
        // With augmentation off only the crop origin is random.
        batch.push_back(augment(samples[order[i]], aug_rng, config.crop_height, config.crop_width, ranges));
      }
      std::vector<const StereoSample*> ptrs;
      for (const auto& s : batch) ptrs.push_back(&s);
      StepStats stats;
      try {
        stats = trainer.step(ptrs, lr);
      } catch (const TrainingError& e) {
        log.flush();
        throw TrainingError(std::string(e.what()) + "; last good checkpoint: " +
                            (std::filesystem::exists(result.checkpoint) ? result.checkpoint : std::string("<none>")));
      }
      stats.epoch = epoch;
      log << loss_log_row(stats) << "\n";
      result.steps.push_back(stats);
      if (on_step) on_step(stats);
      if (config.max_steps > 0 && stats.step >= config.max_steps) done = true;
    }
    trainer.save(result.checkpoint);
    if (config.keep_epoch_checkpoints) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%03zu.rrdn", epoch);
      std::filesystem::copy_file(result.checkpoint, std::filesystem::path(out_dir) / name,
                                 std::filesystem::copy_options::overwrite_existing);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Inference

template <typename T>
struct LoadedModel {
  std::unique_ptr<Network<T>> network;
  KeyValues config;
  std::size_t input_height = 0, input_width = 0;  // 0 when not recorded
};

template <typename T = float>
LoadedModel<T> load_model(const std::string& checkpoint) {
  CheckpointContents c = decode_checkpoint(read_file(checkpoint));
  LoadedModel<T> m;
  m.config = c.config;
  m.network = std::make_unique<Network<T>>(NetworkConfig::from_key_values(c.config));
  try {
    load_into(c, m.network->params());
  } catch (const CheckpointError& e) {
    throw CheckpointError(std::string("checkpoint/config mismatch: ") + e.what());
  }
  m.input_height = static_cast<std::size_t>(c.config.get_int("input_height", 0));
  m.input_width = static_cast<std::size_t>(c.config.get_int("input_width", 0));
  return m;
}

struct InferResult {
  std::size_t height = 0, width = 0;
  // Padded size actually fed to the network.
  std::size_t padded_height = 0, padded_width = 0;
  std::vector<double> disp_left, disp_right, mask_left, mask_right;
  std::size_t forward_passes = 0;
  double seconds = 0;
};

// Edge-replicating pad to (h, w).
inline Image pad_replicate(const Image& img, std::size_t h, std::size_t w) {
  Image out(img.channels, h, w);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, std::min(y, img.height - 1), std::min(x, img.width - 1));
  return out;
}

/// Scale-0 maps for one image. The image is padded up to the network's size
/// multiple and the outputs cropped back. With pp, D_L comes from the
/// two-pass flip blend; the other maps come from the first pass.
template <typename T>
InferResult infer(const Network<T>& net, const Image& image, bool pp) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t calls_before = net.forward_calls();
  const std::size_t m = net.config().input_multiple();
  InferResult r;
  r.height = image.height;
  r.width = image.width;
  r.padded_height = (image.height + m - 1) / m * m;
  r.padded_width = (image.width + m - 1) / m * m;
  const Image padded = pad_replicate(to_rgb(image), r.padded_height, r.padded_width);
  const Tensor<T> x = to_tensor<T>(padded);

  NoGradGuard no_grad;
  ScaleOutputs<T> out = net.forward(x);
  Tensor<T> disp_left = out[0].disp_left;
  if (pp) {
    Tensor<T> mirrored = flip_h(net.forward(flip_h(x))[0].disp_left);
    disp_left = blend_postprocess(disp_left, mirrored);
  }
  auto crop_map = [&](const Tensor<T>& t) {
    std::vector<double> v(r.height * r.width);
    for (std::size_t y = 0; y < r.height; ++y)
      for (std::size_t xx = 0; xx < r.width; ++xx) v[y * r.width + xx] = static_cast<double>(t.at(0, 0, y, xx));
    return v;
  };
  r.disp_left = crop_map(disp_left);
  r.disp_right = crop_map(out[0].disp_right);
  r.mask_left = crop_map(out[0].mask_left);
  r.mask_right = crop_map(out[0].mask_right);
  r.forward_passes = net.forward_calls() - calls_before;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

// ---------------------------------------------------------------------------
// Dataset evaluation

struct GroundTruth {
  std::size_t height = 0, width = 0;
  std::vector<double> disparity;
  std::vector<unsigned char> valid;
};

/// 16-bit disparity map stored as value * 256, zero meaning no measurement.
inline GroundTruth read_ground_truth(const std::string& path) {
  RawImage raw = read_raw_image(path);
  if (raw.channels != 1) throw ImageError("ground truth must be single-channel: " + path);
  GroundTruth gt;
  gt.height = raw.height;
  gt.width = raw.width;
  gt.disparity.resize(raw.samples.size());
  gt.valid.resize(raw.samples.size());
  for (std::size_t i = 0; i < raw.samples.size(); ++i) {
    gt.valid[i] = raw.samples[i] > 0;
    gt.disparity[i] = raw.samples[i] / 256.0;
  }
  return gt;
}

struct EvalOptions {
  bool pp = false;
  bool depth_space = false;
  double focal = 721.5377;  // pixels at ground-truth resolution
  double baseline = 0.54;   // meters
  std::string model_name;
};

/// Runs the network over stereo pairs and scores left disparities against
/// ground truth; warp rmse uses the single-pass right disparity.
template <typename T>
EvalReport evaluate(const LoadedModel<T>& model, const std::vector<StereoSample>& samples, const std::vector<GroundTruth>& gts,
                    const EvalOptions& opt) {
  if (samples.size() != gts.size()) throw DataError("evaluate: sample and ground-truth counts differ");
  if (samples.empty()) throw DataError("evaluate: no samples");
  const Network<T>& net = *model.network;
  std::vector<double> pred_all, gt_all;
  std::vector<unsigned char> valid_all;
  double warp_sq = 0;
  double seconds = 0;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const StereoSample& s = samples[k];
    const GroundTruth& gt = gts[k];
    const std::size_t h = model.input_height ? model.input_height : s.left.height;
    const std::size_t w = model.input_width ? model.input_width : s.left.width;
    const Image left = resize_bilinear(s.left, h, w);
    const Image right = resize_bilinear(s.right, h, w);
    InferResult r = infer(net, left, opt.pp);
    seconds += r.seconds;
    {
      const Tensor<T> lt = to_tensor<T>(left);
      const Tensor<T> rt = to_tensor<T>(right);
      std::vector<T> dr(r.disp_right.begin(), r.disp_right.end());
      const double rmse = warp_rmse(lt, rt, Tensor<T>::from({1, 1, h, w}, std::move(dr)));
      warp_sq += rmse * rmse;
    }
    std::vector<double> pred = resize_disparity(r.disp_left, r.height, r.width, gt.height, gt.width);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      double p = pred[i];
      double g = gt.disparity[i];
      if (opt.depth_space && gt.valid[i]) {
        p = disparity_to_depth(p, opt.focal, opt.baseline);
        g = disparity_to_depth(g, opt.focal, opt.baseline);
      }
      pred_all.push_back(p);
      gt_all.push_back(g);
      valid_all.push_back(gt.valid[i]);
    }
  }
  EvalReport report;
  report.model = opt.model_name.empty() ? model.config.get("variant", "model") : opt.model_name;
  report.metrics = kitti_metrics(pred_all, gt_all, valid_all);
  report.warp_rmse = std::sqrt(warp_sq / static_cast<double>(samples.size()));
  report.param_count = param_count(net.params());
  report.inference_time = seconds / static_cast<double>(samples.size());
  return report;
}

}  // namespace rrdn
