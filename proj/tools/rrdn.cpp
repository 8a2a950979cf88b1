#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "rrdn/rrdn.hpp"

namespace fs = std::filesystem;
using namespace rrdn;

namespace {

enum Exit { kOk = 0, kFailed = 1, kUsage = 2, kConfig = 3, kData = 4, kCheckpoint = 5, kTraining = 6 };

int fail(int code, const char* kind, std::string msg) {
  for (char& c : msg)
    if (c == '\n' || c == '\r') c = ';';
  std::cerr << "error: " << kind << ": " << msg << std::endl;
  return code;
}

std::string find_ground_truth(const std::string& dir, const std::string& left_path) {
  const fs::path left(left_path);
  for (const fs::path& candidate : {fs::path(dir) / left.filename(), fs::path(dir) / (left.stem().string() + ".png"),
                                    fs::path(dir) / (left.stem().string() + ".pgm")}) {
    if (fs::exists(candidate)) return candidate.string();
  }
  throw DataError("no ground truth for " + left.filename().string() + " in " + dir);
}

int cmd_train(const std::string& config_path, const std::string& manifest, const std::string& out) {
  const TrainConfig config = TrainConfig::from_key_values(KeyValues::load(config_path));
  const auto samples = load_pairs(manifest);
  const TrainResult r = train<float>(config, samples, out, [](const StepStats& s) {
    if (s.step % 50 == 0) std::printf("step %zu epoch %zu loss %.6f\n", s.step, s.epoch, s.total);
  });
  std::printf("checkpoint=%s\nloss_log=%s\nsteps=%zu\n", r.checkpoint.c_str(), r.loss_log.c_str(), r.steps.size());
  return kOk;
}

int cmd_infer(const std::string& checkpoint, const std::string& image_path, bool pp, const std::string& out) {
  const LoadedModel<float> model = load_model<float>(checkpoint);
  const Image image = read_image(image_path);
  const InferResult r = infer(*model.network, image, pp);
  fs::create_directories(out);
  const auto path = [&](const char* name) { return (fs::path(out) / name).string(); };
  write_pgm16(path("disp_left.pgm"), r.height, r.width, r.disp_left, 256.0);
  write_pgm16(path("disp_right.pgm"), r.height, r.width, r.disp_right, 256.0);
  write_pgm8(path("mask_left.pgm"), r.height, r.width, r.mask_left, 255.0);
  write_pgm8(path("mask_right.pgm"), r.height, r.width, r.mask_right, 255.0);
  KeyValues meta;
  meta.set("height", std::to_string(r.height));
  meta.set("width", std::to_string(r.width));
  meta.set("padded_height", std::to_string(r.padded_height));
  meta.set("padded_width", std::to_string(r.padded_width));
  meta.set("pp", pp ? "true" : "false");
  meta.set("forward_passes", std::to_string(r.forward_passes));
  meta.set("disparity_scale", "256");
  meta.set("mask_scale", "255");
  std::ofstream(path("meta.txt")) << meta.serialize();
  std::printf("forward_passes=%zu\nseconds=%.6f\n", r.forward_passes, r.seconds);
  return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest, const std::string& gt_dir, bool pp,
             bool depth_space, const std::string& report_path) {
  const LoadedModel<float> model = load_model<float>(checkpoint);
  const auto samples = load_pairs(manifest);
  std::vector<GroundTruth> gts;
  for (const auto& s : samples) gts.push_back(read_ground_truth(find_ground_truth(gt_dir, s.left_path)));
  EvalOptions opt;
  opt.pp = pp;
  opt.depth_space = depth_space;
  const EvalReport report = evaluate(model, samples, gts, opt);
  std::ofstream f(report_path);
  if (!f) throw DataError("cannot write report: " + report_path);
  f << kReportHeader << "\n" << report_row(report) << "\n";
  std::printf("%s\n%s\n", kReportHeader, report_row(report).c_str());
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed) {
  bool ok = true;
  for (const auto& r : run_gradient_suite(seed)) {
    std::printf("%-28s %s checked=%zu max_rel=%.3e max_abs=%.3e\n", r.name.c_str(), r.passed ? "PASS" : "FAIL", r.checked,
                r.max_rel_error, r.max_abs_error);
    ok = ok && r.passed;
  }
  return ok ? kOk : fail(kFailed, "gradcheck", "one or more operations failed the finite-difference check");
}

int cmd_params(const std::string& config_path) {
  const NetworkConfig c = NetworkConfig::from_key_values(KeyValues::load(config_path));
  std::printf("%s %zu\n", to_string(c.variant).c_str(), param_count(c));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rrdn: unsupervised monocular disparity with ambiguity masks"};
  app.require_subcommand(1);
  std::string config, manifest, out, checkpoint, image, gt, report;
  bool pp = false, depth_space = false;
  std::uint64_t seed = 7;

  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--config", config)->required();
  train_cmd->add_option("--manifest", manifest)->required();
  train_cmd->add_option("--out", out)->required();

  auto* infer_cmd = app.add_subcommand("infer", "predict disparity and masks for one image");
  infer_cmd->add_option("--checkpoint", checkpoint)->required();
  infer_cmd->add_option("--image", image)->required();
  infer_cmd->add_flag("--pp", pp, "flip post-processing");
  infer_cmd->add_option("--out", out)->required();

  auto* eval_cmd = app.add_subcommand("eval", "score a model against ground truth");
  eval_cmd->add_option("--checkpoint", checkpoint)->required();
  eval_cmd->add_option("--manifest", manifest)->required();
  eval_cmd->add_option("--gt", gt)->required();
  eval_cmd->add_flag("--pp", pp, "flip post-processing");
  eval_cmd->add_flag("--depth-space", depth_space, "compute metrics on depth instead of disparity");
  eval_cmd->add_option("--report", report)->required();

  auto* grad_cmd = app.add_subcommand("gradcheck", "run the finite-difference gradient suite");
  grad_cmd->add_option("--seed", seed);

  auto* params_cmd = app.add_subcommand("params", "print the parameter count of a configuration");
  params_cmd->add_option("--config", config)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kUsage, "usage", e.what());
  }

  configure_threads();
  try {
    if (*train_cmd) return cmd_train(config, manifest, out);
    if (*infer_cmd) return cmd_infer(checkpoint, image, pp, out);
    if (*eval_cmd) return cmd_eval(checkpoint, manifest, gt, pp, depth_space, report);
    if (*grad_cmd) return cmd_gradcheck(seed);
    if (*params_cmd) return cmd_params(config);
  } catch (const ConfigError& e) {
    return fail(kConfig, "config", e.what());
  } catch (const ImageError& e) {
    return fail(kData, "image", e.what());
  } catch (const DataError& e) {
    return fail(kData, "data", e.what());
  } catch (const CheckpointError& e) {
    return fail(kCheckpoint, "checkpoint", e.what());
  } catch (const TrainingError& e) {
    return fail(kTraining, "training", e.what());
  } catch (const std::exception& e) {
    return fail(kFailed, "internal", e.what());
  }
  return kFailed;
}
