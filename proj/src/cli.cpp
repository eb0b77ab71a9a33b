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

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "nvf/codec.h"
#include "nvf/metrics.h"
#include "nvf/pointcloud.h"

namespace nvf {

namespace {

struct CommonOptions {
  EncodeConfig cfg;
  std::vector<std::string> inputs;
  std::string output;
  bool group = false;
  bool voxelize = false;
  int input_depth = -1;
  bool dump_config = false;
  std::string peak_convention = "3p2";
};

void AddEncodeFlags(CLI::App* cmd, CommonOptions* opt) {
  cmd->add_option("--lambda", opt->cfg.lambda, "R-D tradeoff weight");
  cmd->add_option("--channels", opt->cfg.J, "latent channel count (J)");
  cmd->add_option("--widths", opt->cfg.widths,
                  "per-stage channel widths, comma separated")
      ->delimiter(',');
  cmd->add_option("--latent-size", opt->cfg.L, "latent side exponent (L)");
  cmd->add_option("--octree-levels", opt->cfg.M, "shallow octree levels (M)");
  cmd->add_option("--cube-levels", opt->cfg.N, "cube side exponent (N)");
  cmd->add_option("--iters", opt->cfg.iterations, "training steps");
  cmd->add_option("--seed", opt->cfg.seed, "training noise seed");
  cmd->add_option("--lr", opt->cfg.learning_rate, "base learning rate");
  cmd->add_option("--batch", opt->cfg.batch_size, "cubes per step");
  cmd->add_option("--log-interval", opt->cfg.log_interval, "steps per log line");
  cmd->add_option("--probe-interval", opt->cfg.probe_interval,
                  "steps per true-rate probe (0 = off)");
  cmd->add_option("--gamma", opt->cfg.gamma_focal, "focal loss exponent");
  cmd->add_flag("--group", opt->group, "encode inputs as a group of frames");
  cmd->add_flag("!--no-rate-loss", opt->cfg.rate_loss,
                "drop the rate terms from the loss (M0 ablation)");
  cmd->add_flag("!--no-init-sep", opt->cfg.init_separation,
                "code absolute weights instead of residuals (M2 ablation)");
  cmd->add_flag("--plain-focal", opt->cfg.plain_focal,
                "plain focal loss at full scale (M1 ablation)");
  cmd->add_flag("--raw-distance-weight", opt->cfg.raw_distance_weight,
                "use raw D_i weights without the max(D,1) floor");
  cmd->add_option("--threshold-override", opt->cfg.threshold_override,
                  "fixed reconstruction threshold in (0,1]");
  cmd->add_flag("--voxelize", opt->voxelize,
                "quantize raw (non-integer) input coordinates");
  cmd->add_option("--depth", opt->input_depth,
                  "input bit depth (default: inferred)");
  cmd->add_flag("--dump-config", opt->dump_config,
                "print the effective configuration");
}

void DumpConfig(const CommonOptions& opt, std::ostream& out) {
  const EncodeConfig& c = opt.cfg;
  out << "octree_levels=" << c.M << "\n";
  out << "cube_levels=" << c.N << "\n";
  out << "latent_size=" << c.L << "\n";
  out << "channels=" << c.J << "\n";
  std::string widths;
  for (int w : c.MakeArchitecture().widths) {
    if (!widths.empty()) widths += ",";
    widths += std::to_string(w);
  }
  out << "widths=" << widths << "\n";
  out << "lambda=" << c.lambda << "\n";
  out << "iters=" << c.iterations << "\n";
  out << "lr=" << c.learning_rate << "\n";
  out << "batch=" << c.batch_size << "\n";
  out << "seed=" << c.seed << "\n";
  out << "log_interval=" << c.log_interval << "\n";
  out << "probe_interval=" << c.probe_interval << "\n";
  out << "rate_loss=" << (c.rate_loss ? 1 : 0) << "\n";
  out << "init_separation=" << (c.init_separation ? 1 : 0) << "\n";
  out << "plain_focal=" << (c.plain_focal ? 1 : 0) << "\n";
  out << "raw_distance_weight=" << (c.raw_distance_weight ? 1 : 0) << "\n";
  out << "gamma=" << c.gamma_focal << "\n";
  out << "threshold_override=" << c.threshold_override << "\n";
  out << "group=" << (opt.group ? 1 : 0) << "\n";
  out << "peak_convention=" << opt.peak_convention << "\n";
}

std::vector<PointCloud> LoadFrames(const CommonOptions& opt) {
  std::vector<PointCloud> frames;
  for (const std::string& path : opt.inputs) {
    frames.push_back(ReadPly(path, opt.input_depth, opt.voxelize));
  }
  return frames;
}

double MeanSymmetricPsnr(const std::vector<PointCloud>& refs,
                         const std::vector<PointCloud>& decs, bool peak_3x) {
  double sum = 0.0;
  for (size_t i = 0; i < refs.size(); ++i) {
    if (decs[i].empty()) {  // legal at extreme thresholds
      return -std::numeric_limits<double>::infinity();
    }
    sum += D1Psnr(refs[i], decs[i], 0.0, peak_3x).psnr_symmetric;
  }
  return sum / static_cast<double>(refs.size());
}

void WriteStream(const std::vector<uint8_t>& bytes, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path);
}

std::vector<uint8_t> ReadStream(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return bytes;
}

int CmdEncode(CommonOptions& opt, std::ostream& out) {
  if (opt.dump_config) {
    DumpConfig(opt, out);
    if (opt.inputs.empty()) return 0;
  }
  if (opt.inputs.empty()) throw UsageError("encode: no input files");
  if (opt.inputs.size() > 1 && !opt.group) {
    throw UsageError("encode: multiple inputs require --group");
  }
  if (opt.output.empty()) throw UsageError("encode: --output is required");

  const std::vector<PointCloud> frames = LoadFrames(opt);
  const auto t0 = std::chrono::steady_clock::now();
  EncodeResult result = Encode(frames, opt.cfg, &out);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  WriteStream(result.bitstream, opt.output);

  const EncodeStats& s = result.stats;
  out << "frames=" << frames.size() << "\n";
  out << "cubes=" << s.cube_count << "\n";
  out << "points=" << s.total_points << "\n";
  out << "bits_total=" << s.total_bits << "\n";
  out << "bits_header=" << s.header_bits << "\n";
  out << "bits_octree=" << s.octree_bits << "\n";
  out << "bits_y=" << s.y_bits << "\n";
  out << "bits_z=" << s.z_bits << "\n";
  out << "bpp=" << s.bpp << "\n";
  out << "threshold=" << s.threshold << "\n";
  out << "coded_parameters=" << s.coded_parameter_count << "\n";
  out << "psnr_self=" << MeanSymmetricPsnr(frames, result.reconstructions,
                                           opt.peak_convention == "3p2")
      << "\n";
  out << "seconds=" << seconds << "\n";
  return 0;
}

int CmdDecode(const std::string& input, const std::string& output_dir,
              std::ostream& out) {
  const std::vector<uint8_t> bytes = ReadStream(input);
  const std::vector<PointCloud> frames = Decode(bytes);
  std::filesystem::create_directories(output_dir);
  for (size_t i = 0; i < frames.size(); ++i) {
    std::ostringstream name;
    name << "frame_" << std::setw(4) << std::setfill('0') << i << ".ply";
    const std::string path =
        (std::filesystem::path(output_dir) / name.str()).string();
    WritePly(frames[i], path, PlyFormat::kBinaryLittleEndian);
    out << "wrote " << path << " points=" << frames[i].size() << "\n";
  }
  return 0;
}

int CmdEval(const std::vector<std::string>& refs,
            const std::vector<std::string>& decs, const std::string& stream,
            const std::string& csv, bool peak_3x, int depth,
            std::ostream& out) {
  if (refs.size() != decs.size()) {
    throw DataError("eval: reference and decoded frame counts differ");
  }
  std::vector<PointCloud> ref_clouds, dec_clouds;
  for (const auto& p : refs) ref_clouds.push_back(ReadPly(p, depth));
  for (const auto& p : decs) dec_clouds.push_back(ReadPly(p, depth));
  // Decoded frames may be sparser than the declared depth; align depths.
  for (size_t i = 0; i < dec_clouds.size(); ++i) {
    dec_clouds[i].bit_depth = ref_clouds[i].bit_depth;
  }

  const std::vector<uint8_t> bytes = ReadStream(stream);
  const double bpp = BitsPerPoint(bytes.size(), ref_clouds);

  std::ostringstream csv_rows;
  csv_rows << "frame,bpp,psnr_ab,psnr_ba,psnr_symmetric\n";
  double mean = 0.0;
  for (size_t i = 0; i < ref_clouds.size(); ++i) {
    const D1Report r = D1Psnr(ref_clouds[i], dec_clouds[i], 0.0, peak_3x);
    out << "frame" << i << ".psnr_ab=" << r.psnr_a_to_b << "\n";
    out << "frame" << i << ".psnr_ba=" << r.psnr_b_to_a << "\n";
    out << "frame" << i << ".psnr_symmetric=" << r.psnr_symmetric << "\n";
    csv_rows << i << "," << bpp << "," << r.psnr_a_to_b << "," << r.psnr_b_to_a
             << "," << r.psnr_symmetric << "\n";
    mean += r.psnr_symmetric;
  }
  out << "bits=" << bytes.size() * 8 << "\n";
  out << "bpp=" << bpp << "\n";
  out << "mean_psnr=" << mean / static_cast<double>(ref_clouds.size()) << "\n";
  if (!csv.empty()) {
    std::ofstream f(csv);
    if (!f) throw DataError("cannot open " + csv + " for writing");
    f << csv_rows.str();
  }
  return 0;
}

struct SweepSetting {
  double lambda = 1000.0;
  int channels = 4;
  std::vector<int> widths;
  int iters = -1;
};

SweepSetting ParseSweepSetting(const std::string& text) {
  SweepSetting s;
  std::istringstream ss(text);
  std::string kv;
  while (std::getline(ss, kv, ',')) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos) {
      throw UsageError("sweep: bad setting '" + kv + "', expected key=value");
    }
    const std::string key = kv.substr(0, eq);
    const std::string value = kv.substr(eq + 1);
    if (key == "lambda") {
      s.lambda = std::stod(value);
    } else if (key == "channels") {
      s.channels = std::stoi(value);
    } else if (key == "iters") {
      s.iters = std::stoi(value);
    } else if (key == "widths") {
      std::istringstream ws(value);
      std::string tok;
      while (std::getline(ws, tok, 'x')) s.widths.push_back(std::stoi(tok));
    } else {
      throw UsageError("sweep: unknown setting key '" + key + "'");
    }
  }
  return s;
}

int CmdSweep(CommonOptions& opt, const std::vector<std::string>& settings,
             std::ostream& out) {
  if (opt.inputs.empty()) throw UsageError("sweep: no input files");
  if (opt.inputs.size() > 1 && !opt.group) {
    throw UsageError("sweep: multiple inputs require --group");
  }
  if (settings.empty()) throw UsageError("sweep: no --rd-point settings");
  if (opt.output.empty()) throw UsageError("sweep: --output is required");

  const std::vector<PointCloud> frames = LoadFrames(opt);
  struct Row {
    SweepSetting s;
    double bpp;
    double psnr;
    size_t bits;
    size_t points;
    double seconds;
  };
  std::vector<Row> rows;
  for (const std::string& text : settings) {
    const SweepSetting s = ParseSweepSetting(text);
    EncodeConfig cfg = opt.cfg;
    cfg.lambda = s.lambda;
    cfg.J = s.channels;
    if (!s.widths.empty()) cfg.widths = s.widths;
    if (s.iters > 0) cfg.iterations = s.iters;
    out << "sweep point lambda=" << cfg.lambda << " channels=" << cfg.J
        << " iters=" << cfg.iterations << "\n";
    const auto t0 = std::chrono::steady_clock::now();
    EncodeResult result = Encode(frames, cfg, nullptr);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    Row row;
    row.s = s;
    row.bpp = result.stats.bpp;
    row.psnr = MeanSymmetricPsnr(frames, result.reconstructions,
                                 opt.peak_convention == "3p2");
    row.bits = result.stats.total_bits;
    row.points = result.stats.total_points;
    row.seconds = seconds;
    rows.push_back(row);
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const Row& a, const Row& b) { return a.bpp < b.bpp; });

  std::ofstream f(opt.output);
  if (!f) throw DataError("cannot open " + opt.output + " for writing");
  f << "lambda,channels,widths,iters,bpp,mean_psnr,bits,points,seconds\n";
  for (const Row& r : rows) {
    std::string widths;
    for (int w : r.s.widths) {
      if (!widths.empty()) widths += "x";
      widths += std::to_string(w);
    }
    f << r.s.lambda << "," << r.s.channels << "," << widths << ","
      << r.s.iters << "," << r.bpp << "," << r.psnr << "," << r.bits << ","
      << r.points << "," << r.seconds << "\n";
    out << "rd_point bpp=" << r.bpp << " psnr=" << r.psnr << "\n";
  }
  return 0;
}

}  // namespace

int RunCli(const std::vector<std::string>& args, std::ostream& out,
           std::ostream& err) {
  CLI::App app{"nvf: overfit neural-field point cloud geometry codec"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value configuration file");

  CommonOptions enc_opt;
  CLI::App* enc = app.add_subcommand("encode", "compress PLY frame(s)");
  enc->add_option("inputs", enc_opt.inputs, "input PLY files");
  enc->add_option("--output,-o", enc_opt.output, "output bitstream path");
  enc->add_option("--peak-convention", enc_opt.peak_convention,
                  "psnr peak term: 3p2 or p2")
      ->check(CLI::IsMember({"3p2", "p2"}));
  AddEncodeFlags(enc, &enc_opt);

  std::string dec_input, dec_outdir = ".";
  CLI::App* dec = app.add_subcommand("decode", "decompress a bitstream");
  dec->add_option("input", dec_input, "bitstream path")->required();
  dec->add_option("--output-dir,-o", dec_outdir, "directory for decoded PLYs");

  std::vector<std::string> eval_refs, eval_decs;
  std::string eval_stream, eval_csv, eval_peak = "3p2";
  int eval_depth = -1;
  CLI::App* eva = app.add_subcommand("eval", "bpp and D1 PSNR report");
  eva->add_option("--ref", eval_refs, "reference PLY files")->required();
  eva->add_option("--dec", eval_decs, "decoded PLY files")->required();
  eva->add_option("--bitstream", eval_stream, "bitstream path")->required();
  eva->add_option("--csv", eval_csv, "CSV output path");
  eva->add_option("--depth", eval_depth, "bit depth of the reference clouds");
  eva->add_option("--peak-convention", eval_peak, "psnr peak term: 3p2 or p2")
      ->check(CLI::IsMember({"3p2", "p2"}));

  CommonOptions sweep_opt;
  std::vector<std::string> sweep_settings;
  CLI::App* swp = app.add_subcommand("sweep", "encode a list of R-D settings");
  swp->add_option("inputs", sweep_opt.inputs, "input PLY files");
  swp->add_option("--output,-o", sweep_opt.output, "output CSV path");
  swp->add_option("--rd-point", sweep_settings,
                  "setting like lambda=100,channels=4,widths=16x16x8x8");
  swp->add_option("--peak-convention", sweep_opt.peak_convention,
                  "psnr peak term: 3p2 or p2")
      ->check(CLI::IsMember({"3p2", "p2"}));
  AddEncodeFlags(swp, &sweep_opt);

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (enc->parsed()) return CmdEncode(enc_opt, out);
    if (dec->parsed()) return CmdDecode(dec_input, dec_outdir, out);
    if (eva->parsed()) {
      return CmdEval(eval_refs, eval_decs, eval_stream, eval_csv,
                     eval_peak == "3p2", eval_depth, out);
    }
    if (swp->parsed()) return CmdSweep(sweep_opt, sweep_settings, out);
    throw UsageError("no command given");
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const DecodeError& e) {
    err << "decode error: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace nvf
