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

#include "nvf/pointcloud.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

namespace nvf {

namespace {

static_assert(std::endian::native == std::endian::little,
              "binary PLY I/O assumes a little-endian host");

struct PlyProperty {
  std::string name;
  int byte_size = 0;      // 0 for list properties
  bool is_float = false;  // float32/float64
  bool is_signed = false;
  bool is_list = false;
  int list_count_size = 0;
  int list_elem_size = 0;
};

struct PlyElement {
  std::string name;
  long long count = 0;
  std::vector<PlyProperty> properties;
};

int ScalarTypeSize(const std::string& t, bool* is_float) {
  *is_float = false;
  if (t == "char" || t == "int8" || t == "uchar" || t == "uint8") return 1;
  if (t == "short" || t == "int16" || t == "ushort" || t == "uint16") return 2;
  if (t == "int" || t == "int32" || t == "uint" || t == "uint32") return 4;
  if (t == "float" || t == "float32") {
    *is_float = true;
    return 4;
  }
  if (t == "double" || t == "float64") {
    *is_float = true;
    return 8;
  }
  return 0;
}

bool TypeIsSigned(const std::string& t) {
  return t == "char" || t == "int8" || t == "short" || t == "int16" ||
         t == "int" || t == "int32";
}

[[noreturn]] void ParseFail(const std::string& path, int line,
                            const std::string& what) {
  throw DataError(path + ":" + std::to_string(line) + ": " + what);
}

double DecodeScalar(const unsigned char* p, int size, bool is_float,
                    bool is_signed) {
  if (is_float) {
    if (size == 4) {
      float f;
      std::memcpy(&f, p, 4);
      return f;
    }
    double d;
    std::memcpy(&d, p, 8);
    return d;
  }
  uint64_t u = 0;
  std::memcpy(&u, p, size);
  if (is_signed) {
    // Sign-extend.
    const int shift = 64 - 8 * size;
    return static_cast<double>((static_cast<int64_t>(u << shift)) >> shift);
  }
  return static_cast<double>(u);
}

}  // namespace

void PointCloud::Normalize() {
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());
  const int32_t hi = (1 << bit_depth) - 1;
  for (const Vec3i& p : points) {
    if (p.x < 0 || p.y < 0 || p.z < 0 || p.x > hi || p.y > hi || p.z > hi) {
      throw DataError("point (" + std::to_string(p.x) + "," +
                      std::to_string(p.y) + "," + std::to_string(p.z) +
                      ") outside depth-" + std::to_string(bit_depth) +
                      " grid");
    }
  }
}

PointCloud ReadPly(const std::string& path, int bit_depth,
                   bool allow_voxelize) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);

  std::string line;
  int line_no = 0;
  auto next_line = [&]() -> std::string& {
    if (!std::getline(in, line)) ParseFail(path, line_no, "unexpected EOF in header");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  };

  next_line();
  if (line != "ply") ParseFail(path, line_no, "missing 'ply' magic");

  bool ascii = false;
  bool have_format = false;
  std::vector<PlyElement> elements;
  for (;;) {
    next_line();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "comment" || tok == "obj_info" || tok.empty()) continue;
    if (tok == "format") {
      std::string fmt, ver;
      ls >> fmt >> ver;
      if (fmt == "ascii") {
        ascii = true;
      } else if (fmt == "binary_little_endian") {
        ascii = false;
      } else {
        ParseFail(path, line_no, "unsupported format '" + fmt + "'");
      }
      if (ver != "1.0") ParseFail(path, line_no, "unsupported PLY version");
      have_format = true;
    } else if (tok == "element") {
      PlyElement el;
      ls >> el.name >> el.count;
      if (el.name.empty() || el.count < 0 || ls.fail()) {
        ParseFail(path, line_no, "malformed element declaration");
      }
      elements.push_back(el);
    } else if (tok == "property") {
      if (elements.empty()) ParseFail(path, line_no, "property before element");
      PlyProperty prop;
      std::string type;
      ls >> type;
      if (type == "list") {
        std::string count_t, elem_t;
        ls >> count_t >> elem_t >> prop.name;
        bool f;
        prop.is_list = true;
        prop.list_count_size = ScalarTypeSize(count_t, &f);
        prop.list_elem_size = ScalarTypeSize(elem_t, &f);
        if (prop.list_count_size == 0 || prop.list_elem_size == 0) {
          ParseFail(path, line_no, "unknown list type");
        }
      } else {
        ls >> prop.name;
        prop.byte_size = ScalarTypeSize(type, &prop.is_float);
        if (prop.byte_size == 0) {
          ParseFail(path, line_no, "unknown property type '" + type + "'");
        }
        prop.is_signed = TypeIsSigned(type);
      }
      if (prop.name.empty()) ParseFail(path, line_no, "property missing name");
      elements.back().properties.push_back(prop);
    } else if (tok == "end_header") {
      break;
    } else {
      ParseFail(path, line_no, "unknown header token '" + tok + "'");
    }
  }
  if (!have_format) ParseFail(path, line_no, "missing format line");

  const PlyElement* vertex = nullptr;
  for (const auto& el : elements) {
    if (el.name == "vertex") vertex = &el;
  }
  if (vertex == nullptr) throw DataError(path + ": no vertex element");
  int ix = -1, iy = -1, iz = -1;
  for (size_t i = 0; i < vertex->properties.size(); ++i) {
    const auto& p = vertex->properties[i];
    if (p.is_list) continue;
    if (p.name == "x") ix = static_cast<int>(i);
    if (p.name == "y") iy = static_cast<int>(i);
    if (p.name == "z") iz = static_cast<int>(i);
  }
  if (ix < 0 || iy < 0 || iz < 0) {
    throw DataError(path + ": vertex element lacks x/y/z properties");
  }

  std::vector<std::array<double, 3>> raw;
  raw.reserve(static_cast<size_t>(vertex->count));

  for (const auto& el : elements) {
    const bool is_vertex = (&el == vertex);
    if (!is_vertex && el.count > 0) {
      std::cerr << "warning: skipping PLY element '" << el.name << "' ("
                << el.count << " entries)\n";
    }
    if (ascii) {
      for (long long r = 0; r < el.count; ++r) {
        next_line();
        if (!is_vertex) continue;
        std::istringstream ls(line);
        std::array<double, 3> pos{};
        double value;
        for (size_t pi = 0; pi < el.properties.size(); ++pi) {
          const auto& prop = el.properties[pi];
          if (prop.is_list) {
            long long cnt;
            if (!(ls >> cnt)) ParseFail(path, line_no, "bad list count");
            for (long long j = 0; j < cnt; ++j) ls >> value;
            continue;
          }
          if (!(ls >> value)) ParseFail(path, line_no, "missing vertex value");
          if (static_cast<int>(pi) == ix) pos[0] = value;
          if (static_cast<int>(pi) == iy) pos[1] = value;
          if (static_cast<int>(pi) == iz) pos[2] = value;
        }
        raw.push_back(pos);
      }
    } else {
      std::vector<unsigned char> buf(64);
      for (long long r = 0; r < el.count; ++r) {
        std::array<double, 3> pos{};
        for (size_t pi = 0; pi < el.properties.size(); ++pi) {
          const auto& prop = el.properties[pi];
          if (prop.is_list) {
            buf.resize(std::max<size_t>(buf.size(), 8));
            if (!in.read(reinterpret_cast<char*>(buf.data()),
                         prop.list_count_size)) {
              throw DataError(path + ": truncated at byte offset " +
                              std::to_string(in.tellg()));
            }
            const double cntd =
                DecodeScalar(buf.data(), prop.list_count_size, false, false);
            const long long cnt = static_cast<long long>(cntd);
            if (!in.ignore(cnt * prop.list_elem_size)) {
              throw DataError(path + ": truncated list data");
            }
            continue;
          }
          buf.resize(std::max<size_t>(buf.size(), prop.byte_size));
          if (!in.read(reinterpret_cast<char*>(buf.data()), prop.byte_size)) {
            throw DataError(path + ": truncated vertex data at offset " +
                            std::to_string(in.tellg()));
          }
          if (!is_vertex) continue;
          const double value = DecodeScalar(buf.data(), prop.byte_size,
                                            prop.is_float, prop.is_signed);
          if (static_cast<int>(pi) == ix) pos[0] = value;
          if (static_cast<int>(pi) == iy) pos[1] = value;
          if (static_cast<int>(pi) == iz) pos[2] = value;
        }
        if (is_vertex) raw.push_back(pos);
      }
    }
  }

  if (raw.empty()) throw DataError(path + ": empty vertex list");

  bool integral = true;
  double max_c = 0.0, min_c = 0.0;
  for (const auto& p : raw) {
    for (double c : p) {
      if (c != std::floor(c)) integral = false;
      max_c = std::max(max_c, c);
      min_c = std::min(min_c, c);
    }
  }

  if (bit_depth < 0) {
    if (!integral || min_c < 0.0) {
      throw DataError(path + ": cannot infer bit depth for raw coordinates; "
                              "pass an explicit depth");
    }
    bit_depth = 1;
    while ((1 << bit_depth) - 1 < max_c && bit_depth < 16) ++bit_depth;
  }
  if (bit_depth < 1 || bit_depth > 16) {
    throw DataError("bit depth must be in [1, 16]");
  }

  if (!integral || min_c < 0.0 || max_c > (1 << bit_depth) - 1) {
    if (!allow_voxelize) {
      throw DataError(path + ": coordinates are not integers in [0, 2^" +
                      std::to_string(bit_depth) +
                      "-1]; re-run with voxelization enabled");
    }
    return Voxelize(raw, bit_depth);
  }

  PointCloud pc;
  pc.bit_depth = bit_depth;
  pc.points.reserve(raw.size());
  for (const auto& p : raw) {
    pc.points.push_back(Vec3i{static_cast<int32_t>(p[0]),
                              static_cast<int32_t>(p[1]),
                              static_cast<int32_t>(p[2])});
  }
  pc.Normalize();
  return pc;
}

void WritePly(const PointCloud& pc, const std::string& path,
              PlyFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "ply\n";
  out << (format == PlyFormat::kAscii ? "format ascii 1.0\n"
                                      : "format binary_little_endian 1.0\n");
  out << "element vertex " << pc.points.size() << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  out << "end_header\n";
  if (format == PlyFormat::kAscii) {
    for (const Vec3i& p : pc.points) {
      out << p.x << " " << p.y << " " << p.z << "\n";
    }
  } else {
    for (const Vec3i& p : pc.points) {
      const float f[3] = {static_cast<float>(p.x), static_cast<float>(p.y),
                          static_cast<float>(p.z)};
      out.write(reinterpret_cast<const char*>(f), sizeof(f));
    }
  }
  if (!out) throw DataError("write failed for " + path);
}

PointCloud Voxelize(const std::vector<std::array<double, 3>>& raw_points,
                    int bit_depth) {
  if (raw_points.empty()) throw DataError("Voxelize: empty input");
  if (bit_depth < 1 || bit_depth > 16) {
    throw DataError("Voxelize: bit depth must be in [1, 16]");
  }
  const double side = static_cast<double>(1 << bit_depth);

  // Already-voxelized inputs pass through so that quantization is idempotent.
  bool integral_in_range = true;
  for (const auto& p : raw_points) {
    for (double c : p) {
      if (c != std::floor(c) || c < 0.0 || c > side - 1.0) {
        integral_in_range = false;
        break;
      }
    }
    if (!integral_in_range) break;
  }

  PointCloud pc;
  pc.bit_depth = bit_depth;
  pc.points.reserve(raw_points.size());
  if (integral_in_range) {
    for (const auto& p : raw_points) {
      pc.points.push_back(Vec3i{static_cast<int32_t>(p[0]),
                                static_cast<int32_t>(p[1]),
                                static_cast<int32_t>(p[2])});
    }
    pc.Normalize();
    return pc;
  }

  std::array<double, 3> mn{std::numeric_limits<double>::max(),
                           std::numeric_limits<double>::max(),
                           std::numeric_limits<double>::max()};
  std::array<double, 3> mx{std::numeric_limits<double>::lowest(),
                           std::numeric_limits<double>::lowest(),
                           std::numeric_limits<double>::lowest()};
  for (const auto& p : raw_points) {
    for (int a = 0; a < 3; ++a) {
      mn[a] = std::min(mn[a], p[a]);
      mx[a] = std::max(mx[a], p[a]);
    }
  }
  double extent = 0.0;
  for (int a = 0; a < 3; ++a) extent = std::max(extent, mx[a] - mn[a]);

  for (const auto& p : raw_points) {
    Vec3i q;
    int32_t* out[3] = {&q.x, &q.y, &q.z};
    for (int a = 0; a < 3; ++a) {
      double u = extent > 0.0 ? (p[a] - mn[a]) / extent : 0.0;
      double cell = std::floor(u * side);
      *out[a] = static_cast<int32_t>(std::min(cell, side - 1.0));
    }
    pc.points.push_back(q);
  }
  pc.Normalize();
  return pc;
}

}  // namespace nvf
