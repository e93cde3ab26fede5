#pragma once

// Single-file NIfTI-1 subset: .nii without compression or extensions.
// Reading accepts uint8/int16/int32/float32/float64 payloads in either
// endianness (detected via sizeof_hdr) and applies scl_slope/scl_inter.
// Writing always emits little-endian float32 at vox_offset 352 with magic
// "n+1"; displacement fields are written 5D with 3 components on the fifth
// axis and the vector intent code. Output bytes are stable across runs.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "fcreg/volume.hpp"

namespace fcreg {

enum class NiftiErrorCode {
  io_failure,
  bad_magic,
  bad_header,
  unsupported_datatype,
  truncated_payload,
};

class NiftiError : public std::runtime_error {
 public:
  NiftiError(NiftiErrorCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  NiftiErrorCode code() const { return code_; }

 private:
  NiftiErrorCode code_;
};

struct NiftiHeaderSubset {
  std::array<int, 5> dims = {1, 1, 1, 1, 1};  // ndim then sizes of axes 1-4
  int datatype = 16;
  std::array<double, 3> spacing = {1.0, 1.0, 1.0};
  double scl_slope = 1.0;
  double scl_inter = 0.0;
  std::int64_t vox_offset = 352;
  bool big_endian = false;
  int intent_code = 0;
  int dim5 = 1;
};

using NiftiVolume =
    std::variant<ScalarVolume, TimeSeriesVolume, DisplacementField>;

namespace detail {

constexpr int kNiftiHeaderSize = 348;
constexpr int kIntentVector = 1007;

inline std::uint32_t load_u32(const std::uint8_t* p, bool big) {
  if (big)
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t load_u16(const std::uint8_t* p, bool big) {
  if (big) return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline std::uint64_t load_u64(const std::uint8_t* p, bool big) {
  std::uint64_t hi = load_u32(big ? p : p + 4, big);
  std::uint64_t lo = load_u32(big ? p + 4 : p, big);
  return (hi << 32) | lo;
}
inline float load_f32(const std::uint8_t* p, bool big) {
  return std::bit_cast<float>(load_u32(p, big));
}
inline double load_f64(const std::uint8_t* p, bool big) {
  return std::bit_cast<double>(load_u64(p, big));
}

inline void store_u16(std::uint8_t* p, std::uint16_t v) {
  p[0] = static_cast<std::uint8_t>(v & 0xff);
  p[1] = static_cast<std::uint8_t>(v >> 8);
}
inline void store_u32(std::uint8_t* p, std::uint32_t v) {
  p[0] = static_cast<std::uint8_t>(v & 0xff);
  p[1] = static_cast<std::uint8_t>((v >> 8) & 0xff);
  p[2] = static_cast<std::uint8_t>((v >> 16) & 0xff);
  p[3] = static_cast<std::uint8_t>((v >> 24) & 0xff);
}
inline void store_f32(std::uint8_t* p, float v) {
  store_u32(p, std::bit_cast<std::uint32_t>(v));
}

inline int datatype_size(int code) {
  switch (code) {
    case 2: return 1;   // uint8
    case 4: return 2;   // int16
    case 8: return 4;   // int32
    case 16: return 4;  // float32
    case 64: return 8;  // float64
    default: return 0;
  }
}

inline double decode_element(const std::uint8_t* p, int datatype, bool big) {
  switch (datatype) {
    case 2: return static_cast<double>(*p);
    case 4: return static_cast<double>(static_cast<std::int16_t>(load_u16(p, big)));
    case 8: return static_cast<double>(static_cast<std::int32_t>(load_u32(p, big)));
    case 16: return static_cast<double>(load_f32(p, big));
    case 64: return load_f64(p, big);
    default: return 0.0;
  }
}

inline NiftiHeaderSubset parse_header(const std::vector<std::uint8_t>& buf) {
  if (buf.size() < kNiftiHeaderSize + 4)
    throw NiftiError(NiftiErrorCode::bad_magic, "nifti: file too small");

  bool big = false;
  if (load_u32(buf.data(), false) == 348) {
    big = false;
  } else if (load_u32(buf.data(), true) == 348) {
    big = true;
  } else {
    throw NiftiError(NiftiErrorCode::bad_magic,
                     "nifti: bad magic (sizeof_hdr is not 348)");
  }

  const char* magic = reinterpret_cast<const char*>(buf.data() + 344);
  if (std::strncmp(magic, "n+1", 3) != 0 && std::strncmp(magic, "ni1", 3) != 0)
    throw NiftiError(NiftiErrorCode::bad_magic, "nifti: bad magic string");

  NiftiHeaderSubset h;
  h.big_endian = big;
  const int ndim = static_cast<std::int16_t>(load_u16(buf.data() + 40, big));
  if (ndim < 1 || ndim > 7)
    throw NiftiError(NiftiErrorCode::bad_header, "nifti: invalid dim[0]");
  h.dims[0] = ndim;
  for (int d = 1; d <= 4; ++d) {
    int v = d <= ndim
                ? static_cast<std::int16_t>(load_u16(buf.data() + 40 + 2 * d, big))
                : 1;
    if (v < 1)
      throw NiftiError(NiftiErrorCode::bad_header, "nifti: invalid dimension");
    h.dims[d] = v;
  }
  h.dim5 = ndim >= 5
               ? static_cast<std::int16_t>(load_u16(buf.data() + 50, big))
               : 1;
  if (h.dim5 < 1)
    throw NiftiError(NiftiErrorCode::bad_header, "nifti: invalid dimension");
  h.intent_code = static_cast<std::int16_t>(load_u16(buf.data() + 68, big));
  h.datatype = static_cast<std::int16_t>(load_u16(buf.data() + 70, big));
  if (datatype_size(h.datatype) == 0)
    throw NiftiError(NiftiErrorCode::unsupported_datatype,
                     "nifti: unsupported datatype code " +
                         std::to_string(h.datatype));
  for (int d = 0; d < 3; ++d) {
    const float sp = load_f32(buf.data() + 76 + 4 * (d + 1), big);
    h.spacing[d] = sp > 0.0f ? sp : 1.0;
  }
  h.vox_offset = static_cast<std::int64_t>(load_f32(buf.data() + 108, big));
  if (h.vox_offset < kNiftiHeaderSize)
    throw NiftiError(NiftiErrorCode::bad_header, "nifti: invalid vox_offset");
  h.scl_slope = load_f32(buf.data() + 112, big);
  h.scl_inter = load_f32(buf.data() + 116, big);
  return h;
}

inline std::vector<double> decode_payload(const std::vector<std::uint8_t>& buf,
                                          const NiftiHeaderSubset& h,
                                          std::size_t count) {
  const int esize = datatype_size(h.datatype);
  const std::size_t need =
      static_cast<std::size_t>(h.vox_offset) + count * esize;
  if (buf.size() < need)
    throw NiftiError(NiftiErrorCode::truncated_payload,
                     "nifti: truncated payload");
  std::vector<double> out(count);
  const std::uint8_t* p = buf.data() + h.vox_offset;
  const bool apply_scl = h.scl_slope != 0.0;
  for (std::size_t i = 0; i < count; ++i, p += esize) {
    double v = decode_element(p, h.datatype, h.big_endian);
    if (apply_scl) v = v * h.scl_slope + h.scl_inter;
    out[i] = v;
  }
  return out;
}

inline std::vector<std::uint8_t> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw NiftiError(NiftiErrorCode::io_failure,
                     "nifti: cannot open " + path);
  in.seekg(0, std::ios::end);
  const std::streamoff size = in.tellg();
  in.seekg(0);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(size));
  in.read(reinterpret_cast<char*>(buf.data()), size);
  if (!in)
    throw NiftiError(NiftiErrorCode::io_failure, "nifti: read error " + path);
  return buf;
}

// Shared little-endian float32 writer; payload_count elements follow the
// 352-byte header+pad.
inline void write_nii(const std::string& path, const std::array<int, 8>& dim,
                      int intent_code, const std::array<double, 3>& spacing,
                      const std::vector<float>& payload) {
  std::vector<std::uint8_t> buf(352, 0);
  store_u32(buf.data(), 348);
  for (int d = 0; d < 8; ++d)
    store_u16(buf.data() + 40 + 2 * d, static_cast<std::uint16_t>(dim[d]));
  store_u16(buf.data() + 68, static_cast<std::uint16_t>(intent_code));
  store_u16(buf.data() + 70, 16);  // float32
  store_u16(buf.data() + 72, 32);  // bitpix
  store_f32(buf.data() + 76, 1.0f);
  for (int d = 0; d < 3; ++d)
    store_f32(buf.data() + 76 + 4 * (d + 1), static_cast<float>(spacing[d]));
  for (int d = 4; d < 8; ++d) store_f32(buf.data() + 76 + 4 * d, 1.0f);
  store_f32(buf.data() + 108, 352.0f);  // vox_offset
  store_f32(buf.data() + 112, 1.0f);    // scl_slope
  store_f32(buf.data() + 116, 0.0f);    // scl_inter
  buf[344] = 'n';
  buf[345] = '+';
  buf[346] = '1';
  buf[347] = 0;

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw NiftiError(NiftiErrorCode::io_failure,
                       "nifti: cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(buf.data()), buf.size());
    std::vector<std::uint8_t> enc(payload.size() * 4);
    for (std::size_t i = 0; i < payload.size(); ++i)
      store_f32(enc.data() + 4 * i, payload[i]);
    out.write(reinterpret_cast<const char*>(enc.data()), enc.size());
    if (!out)
      throw NiftiError(NiftiErrorCode::io_failure,
                       "nifti: write error " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec)
    throw NiftiError(NiftiErrorCode::io_failure,
                     "nifti: rename failed for " + path);
}

}  // namespace detail

inline NiftiVolume read_nifti(const std::string& path) {
  const auto buf = detail::slurp(path);
  const NiftiHeaderSubset h = detail::parse_header(buf);

  const int ndim = h.dims[0];
  GridShape shape{h.dims[1], h.dims[2], h.dims[3], h.dims[4]};

  if (ndim == 5) {
    if (h.dim5 != 3 || h.dims[4] != 1)
      throw NiftiError(NiftiErrorCode::bad_header,
                       "nifti: unsupported 5D layout (need 3 components)");
    const std::size_t n = shape.spatial_count();
    const auto vals = detail::decode_payload(buf, h, n * 3);
    DisplacementField field(shape);
    for (int c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < n; ++i) field.u[i].comp(c) = vals[c * n + i];
    return field;
  }
  if (ndim == 4 && shape.nt >= 2) {
    TimeSeriesVolume v(shape);
    v.spacing = h.spacing;
    v.data = detail::decode_payload(buf, h, shape.total_count());
    return v;
  }
  ScalarVolume v(GridShape{shape.nx, shape.ny, shape.nz, 1});
  v.spacing = h.spacing;
  v.data = detail::decode_payload(buf, h, v.shape.spatial_count());
  return v;
}

inline ScalarVolume read_nifti_scalar(const std::string& path) {
  auto v = read_nifti(path);
  if (auto* p = std::get_if<ScalarVolume>(&v)) return std::move(*p);
  throw NiftiError(NiftiErrorCode::bad_header,
                   "nifti: expected a 3D scalar volume in " + path);
}

inline TimeSeriesVolume read_nifti_series(const std::string& path) {
  auto v = read_nifti(path);
  if (auto* p = std::get_if<TimeSeriesVolume>(&v)) return std::move(*p);
  throw NiftiError(NiftiErrorCode::bad_header,
                   "nifti: expected a 4D time-series volume in " + path);
}

inline DisplacementField read_nifti_field(const std::string& path) {
  auto v = read_nifti(path);
  if (auto* p = std::get_if<DisplacementField>(&v)) return std::move(*p);
  throw NiftiError(NiftiErrorCode::bad_header,
                   "nifti: expected a 5D displacement field in " + path);
}

/// Reads a 3D volume and converts to integer labels (values must be
/// non-negative integers up to rounding noise).
inline LabelVolume read_nifti_labels(const std::string& path) {
  const ScalarVolume v = read_nifti_scalar(path);
  LabelVolume out(v.shape);
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    const double x = v.data[i];
    const long k = std::lround(x);
    if (k < 0 || std::abs(x - static_cast<double>(k)) > 1e-6)
      throw NiftiError(NiftiErrorCode::bad_header,
                       "nifti: volume is not a label map: " + path);
    out.labels[i] = static_cast<int>(k);
  }
  return out;
}

inline void write_nifti(const ScalarVolume& v, const std::string& path) {
  std::vector<float> payload(v.data.begin(), v.data.end());
  detail::write_nii(path, {3, v.shape.nx, v.shape.ny, v.shape.nz, 1, 1, 1, 1},
                    0, v.spacing, payload);
}

inline void write_nifti(const TimeSeriesVolume& v, const std::string& path) {
  std::vector<float> payload(v.data.begin(), v.data.end());
  detail::write_nii(path,
                    {4, v.shape.nx, v.shape.ny, v.shape.nz, v.shape.nt, 1, 1, 1},
                    0, v.spacing, payload);
}

inline void write_nifti(const LabelVolume& v, const std::string& path) {
  std::vector<float> payload(v.labels.begin(), v.labels.end());
  detail::write_nii(path, {3, v.shape.nx, v.shape.ny, v.shape.nz, 1, 1, 1, 1},
                    0, {1.0, 1.0, 1.0}, payload);
}

inline void write_nifti(const BrainMask& m, const std::string& path) {
  std::vector<float> payload(m.inside.begin(), m.inside.end());
  detail::write_nii(path, {3, m.shape.nx, m.shape.ny, m.shape.nz, 1, 1, 1, 1},
                    0, {1.0, 1.0, 1.0}, payload);
}

inline void write_nifti(const DisplacementField& f, const std::string& path) {
  const std::size_t n = f.shape.spatial_count();
  std::vector<float> payload(n * 3);
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < n; ++i)
      payload[c * n + i] = static_cast<float>(f.u[i].comp(c));
  detail::write_nii(path, {5, f.shape.nx, f.shape.ny, f.shape.nz, 1, 3, 1, 1},
                    detail::kIntentVector, {1.0, 1.0, 1.0}, payload);
}

}  // namespace fcreg
