#pragma once

#include "dvm/common.hpp"
#include "dvm/deformation.hpp"
#include "dvm/geodesics.hpp"
#include "dvm/geometry.hpp"
#include "dvm/matching.hpp"
#include "dvm/projection.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

// Binary layouts (all little-endian, 4-byte ASCII magic, u32 version = 1):
//   DVPC  u32 N, N x 3 f32 (point-major)
//   DVFM  u32 H, u32 W, u32 C, H*W*C f32 at (u*W + v)*C + c
//   DVPR  u32 N, N x (u32 u, u32 v)
//   DVGM  u32 N, N*N f32 row-major
//   DVTX  u32 m, m x 6 f32 (theta), m x 3 f32 (delta)
//   DVSC  u32 N, u32 M, u32 top_n, per row: u32 count, count x (u32 idx, f32 w)

namespace dvm::io {

inline constexpr std::uint32_t kFormatVersion = 1;

namespace detail {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void magic(std::string_view m) { bytes(m.data(), 4); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  const std::vector<std::uint8_t>& data() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(std::vector<std::uint8_t> data, std::string what)
      : buf_(std::move(data)), what_(std::move(what)) {}

  void need(std::size_t n) const {
    if (pos_ + n > buf_.size())
      throw FormatError(what_ + ": truncated file (need " + std::to_string(n) +
                        " bytes at offset " + std::to_string(pos_) + ")");
  }
  // Like need(count * size) but immune to overflow from hostile headers.
  void need_items(std::size_t count, std::size_t size) const {
    if (count > (buf_.size() - pos_) / size)
      throw FormatError(what_ + ": truncated file (header promises " + std::to_string(count) +
                        " items at offset " + std::to_string(pos_) + ")");
  }
  void magic(std::string_view m) {
    need(4);
    if (std::memcmp(buf_.data() + pos_, m.data(), 4) != 0)
      throw FormatError(what_ + ": bad magic, expected " + std::string(m));
    pos_ += 4;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  void version() {
    const auto v = u32();
    if (v != kFormatVersion)
      throw FormatError(what_ + ": unsupported version " + std::to_string(v));
  }
  void finish() const {
    if (pos_ != buf_.size())
      throw FormatError(what_ + ": " + std::to_string(buf_.size() - pos_) +
                        " trailing bytes after payload");
  }

 private:
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
  std::string what_;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

inline std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xFFFFFFFFu) throw FormatError(std::string(what) + ": size exceeds u32");
  return static_cast<std::uint32_t>(v);
}

}  // namespace detail

// ---- point clouds ---------------------------------------------------------

inline std::vector<std::uint8_t> encode_dvpc(const PointCloud& cloud) {
  detail::Writer w;
  w.magic("DVPC");
  w.u32(kFormatVersion);
  w.u32(detail::checked_u32(cloud.size(), "DVPC"));
  for (const auto& p : cloud)
    for (int c = 0; c < 3; ++c) w.f32(p[c]);
  return w.data();
}

inline PointCloud decode_dvpc(std::vector<std::uint8_t> bytes) {
  detail::Reader r(std::move(bytes), "DVPC");
  r.magic("DVPC");
  r.version();
  const auto n = r.u32();
  r.need_items(n, 12);
  std::vector<Vec3> pts(n);
  for (auto& p : pts)
    for (int c = 0; c < 3; ++c) p[c] = r.f32();
  r.finish();
  return PointCloud(std::move(pts));
}

inline PointCloud read_xyz(std::istream& in) {
  std::vector<Vec3> pts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    Vec3 p;
    if (!(ls >> p.x())) continue;  // blank or comment-only
    if (!(ls >> p.y() >> p.z()))
      throw FormatError("XYZ line " + std::to_string(lineno) + ": expected three coordinates");
    pts.push_back(p);
  }
  if (pts.empty()) throw FormatError("XYZ: no points");
  return PointCloud(std::move(pts));
}

inline void write_xyz(std::ostream& out, const PointCloud& cloud) {
  out.precision(17);
  for (const auto& p : cloud) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
}

/// Vertex positions of an ASCII PLY file; faces and other elements are ignored.
inline PointCloud read_ply_ascii(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) throw FormatError("PLY: missing magic");
  std::size_t vertices = 0;
  bool in_vertex = false, seen_vertex = false;
  std::vector<std::string> props;
  std::vector<std::pair<std::string, std::size_t>> before;  // elements preceding vertex
  std::string current;
  std::size_t current_count = 0;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "ascii") throw FormatError("PLY: only ascii format is supported");
    } else if (tok == "element") {
      ls >> current >> current_count;
      in_vertex = current == "vertex";
      if (in_vertex) {
        vertices = current_count;
        seen_vertex = true;
      } else if (!seen_vertex) {
        before.emplace_back(current, current_count);
      }
    } else if (tok == "property" && in_vertex) {
      std::string type, name;
      ls >> type >> name;
      if (type == "list") throw FormatError("PLY: list properties on vertices are unsupported");
      props.push_back(name);
    } else if (tok == "end_header") {
      break;
    }
  }
  if (!seen_vertex) throw FormatError("PLY: no vertex element");
  for (const auto& [name, count] : before)
    for (std::size_t i = 0; i < count; ++i) std::getline(in, line);
  auto index_of = [&](const char* n) {
    auto it = std::find(props.begin(), props.end(), n);
    if (it == props.end()) throw FormatError(std::string("PLY: vertex property ") + n + " missing");
    return static_cast<std::size_t>(it - props.begin());
  };
  const std::array<std::size_t, 3> idx{index_of("x"), index_of("y"), index_of("z")};
  std::vector<Vec3> pts;
  pts.reserve(vertices);
  std::vector<double> vals(props.size());
  for (std::size_t i = 0; i < vertices; ++i) {
    if (!std::getline(in, line)) throw FormatError("PLY: truncated vertex list");
    std::istringstream ls(line);
    for (auto& v : vals)
      if (!(ls >> v)) throw FormatError("PLY: malformed vertex line " + std::to_string(i));
    pts.emplace_back(vals[idx[0]], vals[idx[1]], vals[idx[2]]);
  }
  return PointCloud(std::move(pts));
}

inline PointCloud load_cloud(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".dvpc") return decode_dvpc(detail::read_file(path));
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  if (ext == ".ply") return read_ply_ascii(in);
  return read_xyz(in);
}

inline void save_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
  if (path.extension() == ".dvpc") return detail::write_file(path, encode_dvpc(cloud));
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  write_xyz(out, cloud);
}

// ---- feature maps and projection records --------------------------------

inline std::vector<std::uint8_t> encode_dvfm(const FeatureImage& f) {
  require(f.data.size() == f.height * f.width * f.channels, "DVFM: payload size mismatch");
  detail::Writer w;
  w.magic("DVFM");
  w.u32(kFormatVersion);
  w.u32(detail::checked_u32(f.height, "DVFM"));
  w.u32(detail::checked_u32(f.width, "DVFM"));
  w.u32(detail::checked_u32(f.channels, "DVFM"));
  for (float v : f.data) w.f32(v);
  return w.data();
}

inline FeatureImage decode_dvfm(std::vector<std::uint8_t> bytes) {
  detail::Reader r(std::move(bytes), "DVFM");
  r.magic("DVFM");
  r.version();
  FeatureImage f;
  f.height = r.u32();
  f.width = r.u32();
  f.channels = r.u32();
  if (f.channels > 0) r.need_items(f.height * f.width, 4 * f.channels);
  const std::size_t count = f.height * f.width * f.channels;
  f.data.resize(count);
  for (auto& v : f.data) {
    v = r.f32();
    if (!std::isfinite(v)) throw FormatError("DVFM: non-finite feature value");
  }
  r.finish();
  return f;
}

inline std::vector<std::uint8_t> encode_dvpr(const ProjectionRecord& rec) {
  detail::Writer w;
  w.magic("DVPR");
  w.u32(kFormatVersion);
  w.u32(detail::checked_u32(rec.pixels.size(), "DVPR"));
  for (const auto& px : rec.pixels) {
    w.u32(px.u);
    w.u32(px.v);
  }
  return w.data();
}

/// Pixel list only; image dimensions come from the paired feature map.
inline std::vector<PixelIndex> decode_dvpr(std::vector<std::uint8_t> bytes) {
  detail::Reader r(std::move(bytes), "DVPR");
  r.magic("DVPR");
  r.version();
  const auto n = r.u32();
  r.need_items(n, 8);
  std::vector<PixelIndex> px(n);
  for (auto& p : px) {
    p.u = r.u32();
    p.v = r.u32();
  }
  r.finish();
  return px;
}

// ---- geodesics, transforms, correspondences ------------------------------

inline std::vector<std::uint8_t> encode_dvgm(const GeodesicMatrix& m) {
  require(m.distances.rows() == m.distances.cols(), "DVGM: matrix must be square");
  detail::Writer w;
  w.magic("DVGM");
  w.u32(kFormatVersion);
  w.u32(detail::checked_u32(static_cast<std::size_t>(m.size()), "DVGM"));
  for (Eigen::Index i = 0; i < m.distances.rows(); ++i)
    for (Eigen::Index j = 0; j < m.distances.cols(); ++j) w.f32(m.distances(i, j));
  return w.data();
}

inline GeodesicMatrix decode_dvgm(std::vector<std::uint8_t> bytes) {
  detail::Reader r(std::move(bytes), "DVGM");
  r.magic("DVGM");
  r.version();
  const auto n = static_cast<Eigen::Index>(r.u32());
  r.need_items(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 4);
  GeodesicMatrix m;
  m.distances.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) m.distances(i, j) = r.f32();
  r.finish();
  return m;
}

inline std::vector<std::uint8_t> encode_dvtx(const TransformSet& x) {
  detail::Writer w;
  w.magic("DVTX");
  w.u32(kFormatVersion);
  w.u32(detail::checked_u32(x.size(), "DVTX"));
  for (Eigen::Index h = 0; h < x.rotation.rows(); ++h)
    for (int c = 0; c < 6; ++c) w.f32(x.rotation(h, c));
  for (Eigen::Index h = 0; h < x.translation.rows(); ++h)
    for (int c = 0; c < 3; ++c) w.f32(x.translation(h, c));
  return w.data();
}

inline TransformSet decode_dvtx(std::vector<std::uint8_t> bytes) {
  detail::Reader r(std::move(bytes), "DVTX");
  r.magic("DVTX");
  r.version();
  const auto m = static_cast<Eigen::Index>(r.u32());
  r.need_items(static_cast<std::size_t>(m), 36);
  TransformSet x;
  x.rotation.resize(m, 6);
  x.translation.resize(m, 3);
  for (Eigen::Index h = 0; h < m; ++h)
    for (int c = 0; c < 6; ++c) x.rotation(h, c) = r.f32();
  for (Eigen::Index h = 0; h < m; ++h)
    for (int c = 0; c < 3; ++c) x.translation(h, c) = r.f32();
  r.finish();
  return x;
}

inline std::vector<std::uint8_t> encode_dvsc(const SoftCorrespondence& pi) {
  detail::Writer w;
  w.magic("DVSC");
  w.u32(kFormatVersion);
  w.u32(detail::checked_u32(pi.rows, "DVSC"));
  w.u32(detail::checked_u32(pi.cols, "DVSC"));
  w.u32(detail::checked_u32(pi.top_n, "DVSC"));
  for (const auto& row : pi.entries) {
    w.u32(detail::checked_u32(row.size(), "DVSC"));
    for (const auto& e : row) {
      w.u32(e.target);
      w.f32(e.weight);
    }
  }
  return w.data();
}

inline SoftCorrespondence decode_dvsc(std::vector<std::uint8_t> bytes) {
  detail::Reader r(std::move(bytes), "DVSC");
  r.magic("DVSC");
  r.version();
  SoftCorrespondence pi;
  pi.rows = r.u32();
  pi.cols = r.u32();
  pi.top_n = r.u32();
  r.need_items(pi.rows, 4);
  pi.entries.resize(pi.rows);
  for (auto& row : pi.entries) {
    const auto count = r.u32();
    if (count > pi.top_n) throw FormatError("DVSC: row has more than top_n entries");
    r.need_items(count, 8);
    row.resize(count);
    for (auto& e : row) {
      e.target = r.u32();
      if (e.target >= pi.cols) throw FormatError("DVSC: target index out of range");
      e.weight = r.f32();
    }
  }
  r.finish();
  return pi;
}

inline void save_dvfm(const std::filesystem::path& p, const FeatureImage& f) { detail::write_file(p, encode_dvfm(f)); }
inline void save_dvpr(const std::filesystem::path& p, const ProjectionRecord& r) { detail::write_file(p, encode_dvpr(r)); }
inline void save_dvgm(const std::filesystem::path& p, const GeodesicMatrix& m) { detail::write_file(p, encode_dvgm(m)); }
inline void save_dvtx(const std::filesystem::path& p, const TransformSet& x) { detail::write_file(p, encode_dvtx(x)); }
inline void save_dvsc(const std::filesystem::path& p, const SoftCorrespondence& s) { detail::write_file(p, encode_dvsc(s)); }

inline FeatureImage load_dvfm(const std::filesystem::path& p) { return decode_dvfm(detail::read_file(p)); }
inline std::vector<PixelIndex> load_dvpr(const std::filesystem::path& p) { return decode_dvpr(detail::read_file(p)); }
inline GeodesicMatrix load_dvgm(const std::filesystem::path& p) { return decode_dvgm(detail::read_file(p)); }
inline TransformSet load_dvtx(const std::filesystem::path& p) { return decode_dvtx(detail::read_file(p)); }
inline SoftCorrespondence load_dvsc(const std::filesystem::path& p) { return decode_dvsc(detail::read_file(p)); }

// ---- index maps (dense maps and ground truth) -----------------------------

inline void write_index_map(std::ostream& out, const IndexMap& m) {
  for (auto i : m.index) out << i << '\n';
}

inline IndexMap read_index_map(std::istream& in) {
  IndexMap m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    long long v = 0;
    if (!(ls >> v)) continue;
    if (v < 0) throw FormatError("index map line " + std::to_string(lineno) + ": negative index");
    m.index.push_back(static_cast<std::size_t>(v));
  }
  return m;
}

inline void save_index_map(const std::filesystem::path& p, const IndexMap& m) {
  std::ofstream out(p);
  if (!out) throw FormatError("cannot write " + p.string());
  write_index_map(out, m);
}

inline IndexMap load_index_map(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw FormatError("cannot open " + p.string());
  return read_index_map(in);
}

}  // namespace dvm::io
