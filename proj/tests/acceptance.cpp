#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "rrdn/rrdn.hpp"

using namespace rrdn;
using TD = Tensor<double>;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a = 0, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::filesystem::path scratch(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("rrdn_accept_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

TD random_tensor(Shape s, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::vector<double> v(s.size());
  for (auto& x : v) x = uniform(rng, lo, hi);
  return TD::from(s, std::move(v));
}

// Multi-octave value noise; coarse octaves dominate so warping losses have wide basins.
Image texture(std::mt19937_64& rng, std::size_t h, std::size_t w) {
  const std::vector<std::size_t> cells{4, 8, 16, 32, 64};
  double total = 0;
  for (auto c : cells) total += static_cast<double>(c);
  Image out(3, h, w, 0.f);
  for (auto c : cells) {
    Image lo(3, h / c + 2, w / c + 2);
    for (auto& v : lo.data) v = static_cast<float>(uniform01(rng));
    const Image up = resize_bilinear(lo, h, w);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += static_cast<float>(up.data[i] * c / total);
  }
  return out;
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto reports = run_gradient_suite(7);
  const double secs = seconds_since(t0);
  double worst = 0;
  std::string failed;
  for (const auto& r : reports) {
    worst = std::max(worst, r.max_rel_error);
    if (!r.passed) failed += " " + r.name;
  }
  Outcome o;
  o.pass = failed.empty() && secs < 60.0;
  o.detail = std::to_string(reports.size()) + " checks, max rel " + fmt("%.2e", worst) + ", " + fmt("%.2fs", secs);
  if (!failed.empty()) o.detail += ", failed:" + failed;
  return o;
}

Outcome warp_identities() {
  bool ok = true;
  const TD img = random_tensor({2, 3, 6, 16}, 1, 0, 1);
  ok = ok && warp_right_to_left(img, TD::zeros({2, 1, 6, 16})).data() == img.data();
  ok = ok && warp_left_to_right(img, TD::zeros({2, 1, 6, 16})).data() == img.data();
  for (std::size_t d = 1; d <= 5; ++d) {
    const TD rl = warp_right_to_left(img, TD::full({2, 1, 6, 16}, static_cast<double>(d)));
    const TD lr = warp_left_to_right(img, TD::full({2, 1, 6, 16}, static_cast<double>(d)));
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 6; ++i)
          for (std::size_t j = 0; j < 16; ++j) {
            if (j >= d) ok = ok && rl.at(n, c, i, j) == img.at(n, c, i, j - d);
            if (j + d < 16) ok = ok && lr.at(n, c, i, j) == img.at(n, c, i, j + d);
          }
  }
  const TD other = random_tensor({2, 3, 6, 16}, 2, 0, 1);
  const TD disp = random_tensor({2, 1, 6, 16}, 3, 0, 4);
  ok = ok && reconstruct_left(img, other, disp, TD::zeros({2, 1, 6, 16})).image.data() == img.data();
  ok = ok && reconstruct_right(other, img, disp, TD::zeros({2, 1, 6, 16})).image.data() == img.data();
  return {ok, "identity, integer shifts 1..5, zero-mask reconstruction"};
}

Outcome disocclusion() {
  bool ok = true;
  for (std::size_t w : {1u, 7u, 20u, 512u}) {
    auto [l, r] = disocclusion_masks<double>(w);
    for (std::size_t j = 0; j < w; ++j) {
      const double jj = static_cast<double>(j), ww = static_cast<double>(w);
      ok = ok && l.data()[j] == (jj < 0.15 * ww ? 0.0 : 1.0);
      ok = ok && r.data()[j] == (jj > 0.85 * ww ? 0.0 : 1.0);
    }
  }
  return {ok, "W in {1, 7, 20, 512}, every column"};
}

Outcome loss_oracles() {
  const TD half = TD::full({1, 1, 4, 6}, 0.5);
  const double amb = ambiguity_loss(half, half).item();
  const TD two = TD::full({1, 1, 4, 6}, 2.0);
  const TD zero = TD::zeros({1, 1, 4, 6});
  const TD one = TD::full({1, 1, 4, 6}, 1.0);
  const double lr_left = lr_consistency_loss(two, zero, one, zero).item();
  const double factor = 0.1 * smoothness_scale_factor(0);
  const bool ok = std::abs(amb - 2 * std::log(2.0)) <= 1e-9 && std::abs(lr_left - 2.0) <= 1e-9 &&
                  std::abs(factor - 0.02) <= 1e-12;
  return {ok, "ambiguity " + fmt("%.12f", amb) + ", lr " + fmt("%.12f", lr_left) + ", s0 factor " + fmt("%.12f", factor)};
}

Outcome metric_oracles() {
  bool ok = true;
  const std::vector<double> p1{1.0, 1.0}, g1{1.0, 2.0}, p2{3.0, 7.0};
  const std::vector<unsigned char> both{1, 1};
  const auto m = kitti_metrics(p1, g1, both);
  ok = ok && std::abs(m.abs_rel - 0.25) <= 1e-9 && std::abs(m.rmse - std::sqrt(0.5)) <= 1e-9;
  ok = ok && std::abs(m.sq_rel - 0.25) <= 1e-9 && std::abs(m.a1 - 0.5) <= 1e-9;
  const auto perfect = kitti_metrics(p2, p2, both);
  ok = ok && perfect.abs_rel == 0.0 && perfect.rmse == 0.0 && perfect.a1 == 1.0;
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 300;
    std::vector<double> p(n), g(n);
    std::vector<unsigned char> v(n);
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = uniform(rng, 0.5, 80.0);
      p[i] = g[i] * std::exp(uniform(rng, -1.0, 1.0));
      v[i] = uniform01(rng) < 0.3;
    }
    v[0] = 1;
    const auto r = kitti_metrics(p, g, v);
    ok = ok && r.a1 <= r.a2 && r.a2 <= r.a3;
  }
  return {ok, "hand cases, 1000 random sparse maps"};
}

// Criteria 6 and 7 share one run.
struct OverfitResult {
  double early = 0, late = 0;
  double median_disp = 0;
  double band_mask = 0, rest_mask = 0;
  double seconds = 0;
};

constexpr std::size_t kOverfitH = 64, kOverfitW = 128;
constexpr std::size_t kTrueDisparity = 6;
// Columns holding independent noise in each view.
constexpr std::size_t kBandBegin = 56, kBandEnd = 72;

OverfitResult overfit_run() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  std::vector<StereoSample> data;
  for (int k = 0; k < 5; ++k) {
    const Image scene = texture(rng, kOverfitH, kOverfitW + kTrueDisparity);
    StereoSample s;
    s.left = Image(3, kOverfitH, kOverfitW);
    s.right = Image(3, kOverfitH, kOverfitW);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < kOverfitH; ++y)
        for (std::size_t x = 0; x < kOverfitW; ++x) {
          s.left.at(c, y, x) = scene.at(c, y, x);
          s.right.at(c, y, x) = scene.at(c, y, x + kTrueDisparity);
        }
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < kOverfitH; ++y)
        for (std::size_t x = kBandBegin; x < kBandEnd; ++x) {
          s.left.at(c, y, x) = static_cast<float>(uniform01(rng));
          s.right.at(c, y, x) = static_cast<float>(uniform01(rng));
        }
    data.push_back(std::move(s));
  }

  TrainConfig config;
  config.network = NetworkConfig::for_variant(Variant::rrdispnet_dtm);
  config.crop_height = kOverfitH;
  config.crop_width = kOverfitW;
  config.batch_size = 1;
  config.augment = false;
  config.lr = 2e-5;
  config.lr_halve_epochs = {};
  config.epochs = 60;
  config.max_steps = 300;
  config.keep_epoch_checkpoints = false;
  const auto dir = scratch("overfit");
  const TrainResult tr = train<float>(config, data, dir.string());

  OverfitResult r;
  for (std::size_t i = 0; i < 10; ++i) r.early += tr.steps[i].total / 10.0;
  for (std::size_t i = tr.steps.size() - 10; i < tr.steps.size(); ++i) r.late += tr.steps[i].total / 10.0;

  const LoadedModel<float> model = load_model<float>(tr.checkpoint);
  std::vector<double> disp;
  double band = 0, rest = 0;
  std::size_t nb = 0, nr = 0;
  for (const auto& s : data) {
    const InferResult ir = infer(*model.network, s.left, false);
    const double w = static_cast<double>(kOverfitW);
    for (std::size_t y = 0; y < kOverfitH; ++y)
      for (std::size_t x = 0; x < kOverfitW; ++x) {
        const std::size_t i = y * kOverfitW + x;
        if (!(static_cast<double>(x) < 0.15 * w)) disp.push_back(ir.disp_left[i]);
        if (x >= kBandBegin && x < kBandEnd) {
          band += ir.mask_right[i];
          ++nb;
        } else if (!(static_cast<double>(x) > 0.85 * w)) {
          rest += ir.mask_right[i];
          ++nr;
        }
      }
  }
  std::nth_element(disp.begin(), disp.begin() + static_cast<std::ptrdiff_t>(disp.size() / 2), disp.end());
  r.median_disp = disp[disp.size() / 2];
  r.band_mask = band / static_cast<double>(nb);
  r.rest_mask = rest / static_cast<double>(nr);
  r.seconds = seconds_since(t0);
  std::filesystem::remove_all(dir);
  return r;
}

Outcome overfit_dynamics(const OverfitResult& r) {
  const double d = static_cast<double>(kTrueDisparity);
  const bool ok = r.late < 0.5 * r.early && std::abs(r.median_disp - d) <= 0.3 * d && r.seconds < 900.0;
  return {ok, "loss " + fmt("%.4f -> %.4f", r.early, r.late) + ", median D_L " + fmt("%.3f (d* %.0f)", r.median_disp, d) +
                  ", " + fmt("%.0fs", r.seconds)};
}

Outcome mask_behavior(const OverfitResult& r) {
  const bool ok = r.band_mask < r.rest_mask && r.rest_mask > 0.8;
  return {ok, "band " + fmt("%.4f", r.band_mask) + ", elsewhere " + fmt("%.4f", r.rest_mask)};
}

Outcome calibration() {
  const std::size_t m = param_count(NetworkConfig::for_variant(Variant::rdispnet_m));
  const std::size_t rm = param_count(NetworkConfig::for_variant(Variant::rrdispnet_m));
  const std::size_t dtm = param_count(NetworkConfig::for_variant(Variant::rrdispnet_dtm));
  auto within = [](std::size_t n, double ref) { return std::abs(static_cast<double>(n) - ref) <= 0.2 * ref; };
  const bool ok = within(m, 12.8e6) && within(rm, 14.2e6) && within(dtm, 16.0e6) && m < rm && rm < dtm;
  return {ok, fmt("%.2fM / %.2fM / %.2fM", m / 1e6, rm / 1e6, dtm / 1e6)};
}

Outcome single_pass() {
  const Network<float> net(NetworkConfig::for_variant(Variant::rrdispnet_dtm), 1);
  std::mt19937_64 rng(5);
  const Image img = texture(rng, 70, 150);
  const InferResult one = infer(net, img, false);
  const InferResult two = infer(net, img, true);
  bool ok = one.forward_passes == 1 && two.forward_passes == 2;
  for (const auto* m : {&one.disp_left, &one.disp_right, &one.mask_left, &one.mask_right}) ok = ok && m->size() == 70u * 150u;
  return {ok, "passes " + std::to_string(one.forward_passes) + " / " + std::to_string(two.forward_passes) +
                  ", four 150x70 maps"};
}

Outcome determinism() {
  TrainConfig c;
  c.network = NetworkConfig::for_variant(Variant::rrdispnet_dtm, {8, 16, 24, 32, 48, 64}, {16, 16, 24, 32, 48, 64});
  c.perceptual_channels = {8, 16, 32};
  c.crop_height = 32;
  c.crop_width = 64;
  c.epochs = 2;
  c.lr = 1e-4;
  std::mt19937_64 rng(9);
  std::vector<StereoSample> data(3);
  for (auto& s : data) {
    s.left = texture(rng, 48, 80);
    s.right = texture(rng, 48, 80);
  }
  const auto dir = scratch("determinism");
  const TrainResult a = train<float>(c, data, (dir / "a").string());
  const TrainResult b = train<float>(c, data, (dir / "b").string());
  bool ok = !a.steps.empty() && slurp(a.loss_log) == slurp(b.loss_log) && slurp(a.checkpoint) == slurp(b.checkpoint);

  const LoadedModel<float> m1 = load_model<float>(a.checkpoint);
  const std::string resaved = (dir / "resaved.rrdn").string();
  write_file(resaved, encode_checkpoint(to_checkpoint(m1.config, m1.network->params())));
  ok = ok && slurp(resaved) == slurp(a.checkpoint);
  const LoadedModel<float> m2 = load_model<float>(resaved);
  const Tensor<float> x = to_tensor<float>(resize_bilinear(data[0].left, 32, 64));
  NoGradGuard no_grad;
  const auto o1 = m1.network->forward(x);
  const auto o2 = m2.network->forward(x);
  for (std::size_t s = 0; s < o1.size(); ++s) ok = ok && o1[s].head.data() == o2[s].head.data();
  std::filesystem::remove_all(dir);
  return {ok, std::to_string(a.steps.size()) + " steps twice, identical logs and checkpoints, bitwise round trip"};
}

}  // namespace

int main() {
  configure_threads();
  std::vector<std::pair<int, std::function<Outcome()>>> criteria;
  OverfitResult overfit;
  bool overfit_done = false;
  auto need_overfit = [&]() -> const OverfitResult& {
    if (!overfit_done) {
      overfit = overfit_run();
      overfit_done = true;
    }
    return overfit;
  };
  criteria.emplace_back(1, gradient_suite);
  criteria.emplace_back(2, warp_identities);
  criteria.emplace_back(3, disocclusion);
  criteria.emplace_back(4, loss_oracles);
  criteria.emplace_back(5, metric_oracles);
  criteria.emplace_back(6, [&] { return overfit_dynamics(need_overfit()); });
  criteria.emplace_back(7, [&] { return mask_behavior(need_overfit()); });
  criteria.emplace_back(8, calibration);
  criteria.emplace_back(9, single_pass);
  criteria.emplace_back(10, determinism);

  int failures = 0;
  for (auto& [id, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %d: %s  %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
