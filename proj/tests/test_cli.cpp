#include "test_util.hpp"

#include <sys/wait.h>

#include <fstream>
#include <sstream>

using namespace rrdn;
using namespace rrdn::testing;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

CliRun run(const TempDir& dir, const std::string& args) {
  const std::string out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string("RRDN_THREADS=1 '") + RRDN_CLI_PATH + "' " + args + " >'" + out + "' 2>'" + err + "'";
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

void expect_one_line_error(const CliRun& r, int code, const std::string& kind) {
  EXPECT_EQ(r.code, code) << r.err;
  EXPECT_EQ(r.err.rfind("error: " + kind + ": ", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;
}

void write_text(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

const char* kTinyConfig =
    "variant = rrdispnet_dtm\n"
    "encoder_channels = 4,6,8,8,12,12\n"
    "decoder_channels = 6,6,8,8,12,12\n"
    "perceptual_channels = 4,4,4\n"
    "crop_height = 32\n"
    "crop_width = 64\n"
    "epochs = 1\n"
    "batch_size = 1\n"
    "lr = 0.001\n";

// Writes a stereo pair with a 2-pixel shift plus a manifest listing it twice.
void write_dataset(const TempDir& dir) {
  std::mt19937_64 rng(1);
  Image left(3, 40, 70);
  for (auto& v : left.data) v = static_cast<float>(uniform01(rng));
  Image right(3, 40, 70);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 40; ++y)
      for (std::size_t x = 0; x < 70; ++x) right.at(c, y, x) = left.at(c, y, std::min<std::size_t>(x + 2, 69));
  write_image8(dir / "left.ppm", left);
  write_image8(dir / "right.ppm", right);
  write_text(dir / "train.txt", "left.ppm right.ppm\nleft.ppm right.ppm\n");
  write_text(dir / "tiny.cfg", kTinyConfig);
}

}  // namespace

TEST(Cli, ParamsPrintsVariantAndCount) {
  TempDir dir("rrdn_cli");
  write_text(dir / "m.cfg", "variant = rdispnet_m\n");
  const CliRun r = run(dir, "params --config '" + (dir / "m.cfg") + "'");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "rdispnet_m " + std::to_string(param_count(NetworkConfig::for_variant(Variant::rdispnet_m))) + "\n");
}

TEST(Cli, GradcheckAllPass) {
  TempDir dir("rrdn_cli");
  const CliRun r = run(dir, "gradcheck");
  ASSERT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
  EXPECT_NE(r.out.find("conv2d"), std::string::npos);
  EXPECT_NE(r.out.find("total_loss"), std::string::npos);
}

TEST(Cli, TrainInferEval) {
  TempDir dir("rrdn_cli");
  write_dataset(dir);
  const CliRun t = run(dir, "train --config '" + (dir / "tiny.cfg") + "' --manifest '" + (dir / "train.txt") + "' --out '" +
                             (dir / "run") + "'");
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_NE(t.out.find("steps=2"), std::string::npos) << t.out;
  const std::string ckpt = dir / "run/latest.rrdn";
  ASSERT_TRUE(std::filesystem::exists(ckpt));

  const CliRun i = run(dir, "infer --checkpoint '" + ckpt + "' --image '" + (dir / "left.ppm") + "' --pp --out '" + (dir / "pred") + "'");
  ASSERT_EQ(i.code, 0) << i.err;
  EXPECT_NE(i.out.find("forward_passes=2"), std::string::npos);
  for (const char* name : {"disp_left.pgm", "disp_right.pgm", "mask_left.pgm", "mask_right.pgm"}) {
    const RawImage img = read_raw_image(dir / (std::string("pred/") + name));
    EXPECT_EQ(img.height, 40u);
    EXPECT_EQ(img.width, 70u);
  }
  EXPECT_EQ(read_raw_image(dir / "pred/disp_left.pgm").max_value, 65535u);
  EXPECT_EQ(read_raw_image(dir / "pred/mask_left.pgm").max_value, 255u);
  const KeyValues meta = KeyValues::load(dir / "pred/meta.txt");
  EXPECT_EQ(meta.get_int("padded_height", 0), 64);
  EXPECT_EQ(meta.get_int("padded_width", 0), 96);
  EXPECT_TRUE(meta.get_bool("pp", false));

  std::filesystem::create_directories(dir.path / "gt");
  std::vector<std::uint16_t> gt(40 * 70, 0);
  for (std::size_t k = 0; k < gt.size(); k += 3) gt[k] = 2 * 256;
  write_png(dir / "gt/left.png", 1, 40, 70, 65535, gt);
  const CliRun e = run(dir, "eval --checkpoint '" + ckpt + "' --manifest '" + (dir / "train.txt") + "' --gt '" + (dir / "gt") +
                             "' --report '" + (dir / "report.csv") + "'");
  ASSERT_EQ(e.code, 0) << e.err;
  const std::string csv = slurp(dir / "report.csv");
  EXPECT_EQ(csv.rfind(std::string(kReportHeader) + "\nrrdispnet_dtm,", 0), 0u) << csv;
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
}

TEST(Cli, UsageErrors) {
  TempDir dir("rrdn_cli");
  expect_one_line_error(run(dir, ""), 2, "usage");
  expect_one_line_error(run(dir, "train --config x"), 2, "usage");
  expect_one_line_error(run(dir, "bogus"), 2, "usage");
}

TEST(Cli, InputErrorsAreOneLine) {
  TempDir dir("rrdn_cli");
  write_dataset(dir);
  expect_one_line_error(run(dir, "params --config '" + (dir / "missing.cfg") + "'"), 3, "config");
  write_text(dir / "bad.cfg", "crop_height = 100\n");
  expect_one_line_error(run(dir, "train --config '" + (dir / "bad.cfg") + "' --manifest '" + (dir / "train.txt") +
                                     "' --out '" + (dir / "run") + "'"),
                        3, "config");
  write_text(dir / "broken.txt", "left.ppm\nleft.ppm nope.ppm\n");
  const CliRun m = run(dir, "train --config '" + (dir / "tiny.cfg") + "' --manifest '" + (dir / "broken.txt") + "' --out '" +
                             (dir / "run") + "'");
  expect_one_line_error(m, 4, "data");
  expect_one_line_error(run(dir, "infer --checkpoint '" + (dir / "none.rrdn") + "' --image '" + (dir / "left.ppm") +
                                     "' --out '" + (dir / "pred") + "'"),
                        5, "checkpoint");
  write_text(dir / "junk.rrdn", "RRDN0garbage");
  expect_one_line_error(run(dir, "infer --checkpoint '" + (dir / "junk.rrdn") + "' --image '" + (dir / "left.ppm") +
                                     "' --out '" + (dir / "pred") + "'"),
                        5, "checkpoint");
}
