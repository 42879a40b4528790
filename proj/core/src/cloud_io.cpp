#include "treereg/cloud_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <vector>

namespace treereg {

Vec3 PointCloud::centroid() const {
  Vec3 c = Vec3::Zero();
  for (const Vec3& p : points) c += p;
  return points.empty() ? c : Vec3(c / static_cast<double>(points.size()));
}

std::pair<Vec3, Vec3> PointCloud::bounding_box() const {
  if (points.empty()) return {Vec3::Zero(), Vec3::Zero()};
  Vec3 lo = points.front(), hi = points.front();
  for (const Vec3& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return {lo, hi};
}

double PointCloud::bbox_diagonal() const {
  auto [lo, hi] = bounding_box();
  return (hi - lo).norm();
}

bool PointCloud::all_finite() const {
  return std::all_of(points.begin(), points.end(),
                     [](const Vec3& p) { return p.allFinite(); });
}

PointCloud transformed(const PointCloud& cloud, const RigidTransform& t) {
  PointCloud out;
  out.source_id = cloud.source_id;
  out.points.reserve(cloud.size());
  for (const Vec3& p : cloud.points) out.points.push_back(t(p));
  return out;
}

PointCloud unit_normalized(const PointCloud& cloud) {
  PointCloud out;
  out.source_id = cloud.source_id;
  const Vec3 c = cloud.centroid();
  const double diag = cloud.bbox_diagonal();
  const double s = diag > 0.0 ? 1.0 / diag : 1.0;
  out.points.reserve(cloud.size());
  for (const Vec3& p : cloud.points) out.points.push_back((p - c) * s);
  return out;
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open file: " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

enum class PlyScalar { kFloat32, kFloat64, kInt8, kUint8, kInt16, kUint16,
                       kInt32, kUint32 };

std::size_t scalar_size(PlyScalar s) {
  switch (s) {
    case PlyScalar::kInt8:
    case PlyScalar::kUint8: return 1;
    case PlyScalar::kInt16:
    case PlyScalar::kUint16: return 2;
    case PlyScalar::kInt32:
    case PlyScalar::kUint32:
    case PlyScalar::kFloat32: return 4;
    case PlyScalar::kFloat64: return 8;
  }
  return 0;
}

bool parse_scalar_type(const std::string& tok, PlyScalar& out) {
  if (tok == "float" || tok == "float32") out = PlyScalar::kFloat32;
  else if (tok == "double" || tok == "float64") out = PlyScalar::kFloat64;
  else if (tok == "char" || tok == "int8") out = PlyScalar::kInt8;
  else if (tok == "uchar" || tok == "uint8") out = PlyScalar::kUint8;
  else if (tok == "short" || tok == "int16") out = PlyScalar::kInt16;
  else if (tok == "ushort" || tok == "uint16") out = PlyScalar::kUint16;
  else if (tok == "int" || tok == "int32") out = PlyScalar::kInt32;
  else if (tok == "uint" || tok == "uint32") out = PlyScalar::kUint32;
  else return false;
  return true;
}

struct PlyProperty {
  std::string name;
  PlyScalar type = PlyScalar::kFloat32;
  bool is_list = false;
  PlyScalar count_type = PlyScalar::kUint8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

struct PlyHeader {
  bool binary = false;
  std::vector<PlyElement> elements;
  std::size_t data_offset = 0;
};

// Reads one header line ending in \n (optionally \r\n); advances pos.
std::string next_line(const std::string& buf, std::size_t& pos) {
  const std::size_t eol = buf.find('\n', pos);
  if (eol == std::string::npos) {
    throw ParseError("unterminated header line", pos);
  }
  std::string line = buf.substr(pos, eol - pos);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  pos = eol + 1;
  return line;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> toks;
  std::istringstream ss(line);
  std::string t;
  while (ss >> t) toks.push_back(t);
  return toks;
}

PlyHeader parse_ply_header(const std::string& buf) {
  std::size_t pos = 0;
  if (buf.size() < 4 || next_line(buf, pos) != "ply") {
    throw ParseError("missing 'ply' magic", 0);
  }
  PlyHeader header;
  bool have_format = false;
  bool done = false;
  while (!done) {
    const std::size_t line_start = pos;
    const std::string line = next_line(buf, pos);
    const auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (toks[0] == "comment" || toks[0] == "obj_info") continue;
    if (toks[0] == "format") {
      if (toks.size() != 3 || toks[2] != "1.0") {
        throw ParseError("malformed format line", line_start);
      }
      if (toks[1] == "ascii") {
        header.binary = false;
      } else if (toks[1] == "binary_little_endian") {
        header.binary = true;
      } else if (toks[1] == "binary_big_endian") {
        throw ParseError("binary_big_endian PLY is not supported", line_start);
      } else {
        throw ParseError("unknown PLY format '" + toks[1] + "'", line_start);
      }
      have_format = true;
    } else if (toks[0] == "element") {
      if (toks.size() != 3) throw ParseError("malformed element line", line_start);
      PlyElement elem;
      elem.name = toks[1];
      try {
        elem.count = std::stoull(toks[2]);
      } catch (const std::exception&) {
        throw ParseError("bad element count", line_start);
      }
      header.elements.push_back(std::move(elem));
    } else if (toks[0] == "property") {
      if (header.elements.empty()) {
        throw ParseError("property before any element", line_start);
      }
      PlyProperty prop;
      if (toks.size() == 3) {
        if (!parse_scalar_type(toks[1], prop.type)) {
          throw ParseError("unknown property type '" + toks[1] + "'", line_start);
        }
        prop.name = toks[2];
      } else if (toks.size() == 5 && toks[1] == "list") {
        prop.is_list = true;
        if (!parse_scalar_type(toks[2], prop.count_type) ||
            !parse_scalar_type(toks[3], prop.type)) {
          throw ParseError("unknown list property type", line_start);
        }
        prop.name = toks[4];
      } else {
        throw ParseError("malformed property line", line_start);
      }
      header.elements.back().properties.push_back(std::move(prop));
    } else if (toks[0] == "end_header") {
      done = true;
    } else {
      throw ParseError("unknown header keyword '" + toks[0] + "'", line_start);
    }
  }
  if (!have_format) throw ParseError("header has no format line", pos);
  header.data_offset = pos;
  return header;
}

double read_binary_scalar(const std::string& buf, std::size_t& pos,
                          PlyScalar type) {
  const std::size_t n = scalar_size(type);
  if (pos + n > buf.size()) {
    throw ParseError("truncated binary payload", pos);
  }
  const char* src = buf.data() + pos;
  pos += n;
  switch (type) {
    case PlyScalar::kFloat32: {
      float v;
      std::memcpy(&v, src, 4);
      return static_cast<double>(v);
    }
    case PlyScalar::kFloat64: {
      double v;
      std::memcpy(&v, src, 8);
      return v;
    }
    case PlyScalar::kInt8: return static_cast<double>(static_cast<std::int8_t>(src[0]));
    case PlyScalar::kUint8: return static_cast<double>(static_cast<std::uint8_t>(src[0]));
    case PlyScalar::kInt16: {
      std::int16_t v;
      std::memcpy(&v, src, 2);
      return v;
    }
    case PlyScalar::kUint16: {
      std::uint16_t v;
      std::memcpy(&v, src, 2);
      return v;
    }
    case PlyScalar::kInt32: {
      std::int32_t v;
      std::memcpy(&v, src, 4);
      return v;
    }
    case PlyScalar::kUint32: {
      std::uint32_t v;
      std::memcpy(&v, src, 4);
      return v;
    }
  }
  return 0.0;
}

// Whitespace-delimited token scanner that tracks byte offsets.
struct AsciiScanner {
  const std::string& buf;
  std::size_t pos;

  double next_number() {
    skip_ws();
    if (pos >= buf.size()) throw ParseError("truncated ascii payload", pos);
    const std::size_t start = pos;
    while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) {
      ++pos;
    }
    const std::string tok = buf.substr(start, pos - start);
    try {
      std::size_t used = 0;
      const double v = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      return v;
    } catch (const std::exception&) {
      throw ParseError("bad numeric token '" + tok + "'", start);
    }
  }

  void skip_ws() {
    while (pos < buf.size() && std::isspace(static_cast<unsigned char>(buf[pos]))) {
      ++pos;
    }
  }
};

PointCloud parse_ply(const std::string& buf, const std::filesystem::path& path) {
  const PlyHeader header = parse_ply_header(buf);

  const PlyElement* vertex = nullptr;
  for (const auto& e : header.elements) {
    if (e.name == "vertex") vertex = &e;
  }
  if (vertex == nullptr) {
    throw ParseError("no vertex element in header", header.data_offset);
  }
  int ix = -1, iy = -1, iz = -1;
  for (std::size_t i = 0; i < vertex->properties.size(); ++i) {
    const PlyProperty& p = vertex->properties[i];
    if (p.is_list) continue;
    if (p.type != PlyScalar::kFloat32 && p.type != PlyScalar::kFloat64) continue;
    if (p.name == "x") ix = static_cast<int>(i);
    if (p.name == "y") iy = static_cast<int>(i);
    if (p.name == "z") iz = static_cast<int>(i);
  }
  if (ix < 0 || iy < 0 || iz < 0) {
    throw ParseError("vertex element lacks float x/y/z properties",
                     header.data_offset);
  }

  PointCloud cloud;
  cloud.source_id = path.string();
  std::size_t pos = header.data_offset;
  AsciiScanner scanner{buf, pos};

  for (const auto& elem : header.elements) {
    const bool is_vertex = (&elem == vertex);
    if (is_vertex) cloud.points.reserve(elem.count);
    for (std::size_t row = 0; row < elem.count; ++row) {
      Vec3 p = Vec3::Zero();
      const std::size_t row_offset = header.binary ? pos : scanner.pos;
      for (std::size_t pi = 0; pi < elem.properties.size(); ++pi) {
        const PlyProperty& prop = elem.properties[pi];
        if (prop.is_list) {
          const double count_v =
              header.binary ? read_binary_scalar(buf, pos, prop.count_type)
                            : scanner.next_number();
          if (count_v < 0 || count_v > 1e9) {
            throw ParseError("implausible list count",
                             header.binary ? pos : scanner.pos);
          }
          const auto count = static_cast<std::size_t>(count_v);
          if (header.binary) {
            const std::size_t bytes = count * scalar_size(prop.type);
            if (pos + bytes > buf.size()) {
              throw ParseError("truncated binary payload", pos);
            }
            pos += bytes;
          } else {
            for (std::size_t k = 0; k < count; ++k) scanner.next_number();
          }
          continue;
        }
        const double v = header.binary
                             ? read_binary_scalar(buf, pos, prop.type)
                             : scanner.next_number();
        if (is_vertex) {
          if (static_cast<int>(pi) == ix) p.x() = v;
          if (static_cast<int>(pi) == iy) p.y() = v;
          if (static_cast<int>(pi) == iz) p.z() = v;
        }
      }
      if (is_vertex) {
        if (!p.allFinite()) {
          throw ParseError("non-finite vertex coordinate", row_offset);
        }
        cloud.points.push_back(p);
      }
    }
  }
  return cloud;
}

PointCloud parse_xyz(const std::string& buf, const std::filesystem::path& path) {
  PointCloud cloud;
  cloud.source_id = path.string();
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < buf.size()) {
    const std::size_t line_start = pos;
    std::size_t eol = buf.find('\n', pos);
    if (eol == std::string::npos) eol = buf.size();
    std::string line = buf.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::size_t first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    double x, y, z;
    if (!(ss >> x >> y >> z)) {
      throw ParseError("malformed xyz line " + std::to_string(line_no),
                       line_start);
    }
    std::string extra;
    if (ss >> extra) {
      throw ParseError("trailing tokens on xyz line " + std::to_string(line_no),
                       line_start);
    }
    const Vec3 p(x, y, z);
    if (!p.allFinite()) {
      throw ParseError("non-finite coordinate on xyz line " +
                           std::to_string(line_no),
                       line_start);
    }
    cloud.points.push_back(p);
  }
  return cloud;
}

}  // namespace

PointCloud read_cloud(const std::filesystem::path& path, CloudFormat format) {
  const std::string buf = read_file(path);
  switch (format) {
    case CloudFormat::kPlyAscii:
    case CloudFormat::kPlyBinaryLe: {
      const PlyHeader header = parse_ply_header(buf);
      const bool want_binary = (format == CloudFormat::kPlyBinaryLe);
      if (header.binary != want_binary) {
        throw ParseError(want_binary ? "expected binary_little_endian PLY"
                                     : "expected ascii PLY",
                         0);
      }
      return parse_ply(buf, path);
    }
    case CloudFormat::kXyzText:
      return parse_xyz(buf, path);
  }
  throw std::invalid_argument("read_cloud: unknown format");
}

PointCloud read_cloud(const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  if (buf.rfind("ply", 0) == 0) {
    return parse_ply(buf, path);
  }
  return parse_xyz(buf, path);
}

void write_cloud(const PointCloud& cloud, const std::filesystem::path& path,
                 CloudFormat format) {
  if (cloud.empty()) {
    throw std::invalid_argument("write_cloud: empty cloud");
  }
  if (!cloud.all_finite()) {
    throw std::invalid_argument("write_cloud: non-finite coordinates");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open for writing: " + path.string());
  }
  switch (format) {
    case CloudFormat::kPlyAscii:
    case CloudFormat::kPlyBinaryLe: {
      const bool binary = (format == CloudFormat::kPlyBinaryLe);
      out << "ply\n"
          << (binary ? "format binary_little_endian 1.0\n"
                     : "format ascii 1.0\n")
          << "element vertex " << cloud.size() << "\n"
          << "property double x\nproperty double y\nproperty double z\n"
          << "end_header\n";
      if (binary) {
        for (const Vec3& p : cloud.points) {
          double xyz[3] = {p.x(), p.y(), p.z()};
          out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
        }
      } else {
        out << std::setprecision(17);
        for (const Vec3& p : cloud.points) {
          out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
        }
      }
      break;
    }
    case CloudFormat::kXyzText: {
      out << std::setprecision(17);
      for (const Vec3& p : cloud.points) {
        out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
      }
      break;
    }
  }
  if (!out) {
    throw std::runtime_error("write failed: " + path.string());
  }
}

PointCloud subsample(const PointCloud& cloud, std::size_t n,
                     std::uint64_t seed) {
  if (n < 1 || n > cloud.size()) {
    throw std::invalid_argument("subsample: n out of range");
  }
  PointCloud out;
  out.source_id = cloud.source_id;
  out.points.reserve(n);
  // Selection sampling: scan in index order, keeping output sorted by the
  // original index.
  std::mt19937_64 rng(seed);
  std::size_t need = n;
  std::size_t remaining = cloud.size();
  for (std::size_t i = 0; i < cloud.size() && need > 0; ++i, --remaining) {
    std::uniform_int_distribution<std::size_t> pick(0, remaining - 1);
    if (pick(rng) < need) {
      out.points.push_back(cloud.points[i]);
      --need;
    }
  }
  return out;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

RigidTransform random_rigid_transform(const SyntheticTransformSpec& spec,
                                      int trial) {
  if (trial < 0 || trial >= spec.trials) {
    throw std::invalid_argument("random_rigid_transform: trial out of range");
  }
  std::mt19937_64 rng(splitmix64(spec.seed ^ splitmix64(
                          static_cast<std::uint64_t>(trial) + 1)));
  constexpr double kDegToRad = 0.017453292519943295;
  const double r = spec.rot_range_deg * kDegToRad;
  std::uniform_real_distribution<double> rot(-r, r);
  std::uniform_real_distribution<double> trans(-spec.trans_range,
                                               spec.trans_range);
  RigidTransform t;
  if (spec.rot_range_deg > 0.0) {
    const Vec3 angles(rot(rng), rot(rng), rot(rng));
    t.rotation = rotation_from_euler_xyz(angles);
  }
  if (spec.trans_range > 0.0) {
    t.translation = Vec3(trans(rng), trans(rng), trans(rng));
  }
  return t;
}

}  // namespace treereg
