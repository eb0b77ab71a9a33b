// Copyright (c) the nvf authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "nvf/cli.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "nvf/pointcloud.h"
#include "test_util.h"

using namespace nvf;
using nvf_test::SphereShellCloud;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / "nvf_cli_test";
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string File(const std::string& name) const {
    return (path / name).string();
  }
};

int Run(const std::vector<std::string>& args, std::string* out_text = nullptr) {
  std::ostringstream out, err;
  const int code = RunCli(args, out, err);
  if (out_text != nullptr) *out_text = out.str() + err.str();
  return code;
}

std::vector<std::string> EncodeArgs(const TempDir& dir,
                                    const std::string& input,
                                    const std::string& output) {
  return {"encode",          input,
          "--output",        output,
          "--octree-levels", "2",
          "--cube-levels",   "4",
          "--widths",        "8,8,8",
          "--iters",         "60",
          "--batch",         "4",
          "--lambda",        "10000",
          "--seed",          "9",
          "--probe-interval", "0",
          "--log-interval",  "50"};
}

}  // namespace

TEST_CASE("cli end to end: encode, decode, eval") {
  TempDir dir;
  const PointCloud pc = SphereShellCloud(6, 14.0);
  const std::string input = dir.File("in.ply");
  WritePly(pc, input, PlyFormat::kBinaryLittleEndian);
  const std::string stream = dir.File("out.nvf");

  std::string log;
  CHECK(Run(EncodeArgs(dir, input, stream), &log) == 0);
  CHECK(log.find("bpp=") != std::string::npos);
  CHECK(log.find("threshold=") != std::string::npos);
  CHECK(fs::exists(stream));

  CHECK(Run({"decode", stream, "--output-dir", dir.File("dec")}) == 0);
  const std::string decoded = dir.File("dec") + "/frame_0000.ply";
  CHECK(fs::exists(decoded));

  std::string eval_out;
  CHECK(Run({"eval", "--ref", input, "--dec", decoded, "--bitstream", stream,
             "--csv", dir.File("eval.csv")},
            &eval_out) == 0);
  CHECK(eval_out.find("mean_psnr=") != std::string::npos);
  CHECK(fs::exists(dir.File("eval.csv")));

  // Self-eval: identical ref and dec give the infinity sentinel.
  std::string self_out;
  CHECK(Run({"eval", "--ref", input, "--dec", input, "--bitstream", stream},
            &self_out) == 0);
  CHECK(self_out.find("mean_psnr=inf") != std::string::npos);
}

TEST_CASE("cli usage errors exit with 2") {
  TempDir dir;
  CHECK(Run({"encode"}) == 2);  // no inputs
  CHECK(Run({"bogus_command"}) == 2);
  CHECK(Run({"decode"}) == 2);  // missing argument
  CHECK(Run({"encode", "a.ply", "b.ply", "--output", dir.File("x.nvf")}) ==
        2);  // multiple inputs without --group
  CHECK(Run({"decode", dir.File("missing.nvf"), "--lambda", "3"}) == 2);
}

TEST_CASE("cli data and decode errors exit with 3 and 4") {
  TempDir dir;
  CHECK(Run({"decode", dir.File("missing.nvf")}) == 3);  // cannot open
  const std::string garbage = dir.File("garbage.nvf");
  {
    std::ofstream f(garbage, std::ios::binary);
    f << "this is not a bitstream";
  }
  CHECK(Run({"decode", garbage}) == 4);

  // Mismatched eval frame counts are a data error.
  const PointCloud pc = SphereShellCloud(6, 10.0);
  const std::string a = dir.File("a.ply");
  WritePly(pc, a, PlyFormat::kAscii);
  CHECK(Run({"eval", "--ref", a, "--dec", a, "--dec", a, "--bitstream",
             garbage}) == 3);
}

TEST_CASE("cli dump-config prints every knob") {
  std::string text;
  CHECK(Run({"encode", "--dump-config", "--lambda", "123"}, &text) == 0);
  CHECK(text.find("lambda=123") != std::string::npos);
  CHECK(text.find("widths=") != std::string::npos);
  CHECK(text.find("seed=") != std::string::npos);
  CHECK(text.find("init_separation=1") != std::string::npos);
}

TEST_CASE("cli sweep writes a csv sorted by bpp") {
  TempDir dir;
  const PointCloud pc = SphereShellCloud(6, 12.0);
  const std::string input = dir.File("in.ply");
  WritePly(pc, input, PlyFormat::kBinaryLittleEndian);
  const std::string csv = dir.File("sweep.csv");
  CHECK(Run({"sweep", input, "--output", csv,
             "--octree-levels", "2", "--cube-levels", "4",
             "--widths", "8,8,8", "--iters", "40", "--batch", "4",
             "--probe-interval", "0", "--seed", "4",
             "--rd-point", "lambda=10,channels=4",
             "--rd-point", "lambda=100000,channels=4"}) == 0);
  std::ifstream f(csv);
  REQUIRE(f.good());
  std::string header, row1, row2;
  std::getline(f, header);
  std::getline(f, row1);
  std::getline(f, row2);
  CHECK(header.find("lambda") == 0);
  REQUIRE(!row1.empty());
  REQUIRE(!row2.empty());
  // Rows are sorted by bpp ascending; bpp is column 4, mean psnr column 5.
  auto column = [](const std::string& row, int idx) {
    std::istringstream ss(row);
    std::string tok;
    for (int i = 0; i <= idx; ++i) std::getline(ss, tok, ',');
    return std::stod(tok);
  };
  CHECK(column(row1, 4) <= column(row2, 4));
  // Soft monotonicity probe: the large-lambda point should not be clearly
  // worse in quality than the tiny-lambda one (short runs are noisy, so a
  // generous margin).
  const std::string& low_rate = column(row1, 0) == 10.0 ? row1 : row2;
  const std::string& high_rate = column(row1, 0) == 10.0 ? row2 : row1;
  CHECK(column(high_rate, 5) >= column(low_rate, 5) - 3.0);
}
