#pragma once

// Core volumetric containers shared by the registration engine: scalar and
// time-series grids, displacement fields, label maps and brain masks.
// Memory layout is row-major with x fastest and t slowest throughout.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace fcreg {

struct GridShape {
  int nx = 0;
  int ny = 0;
  int nz = 0;
  int nt = 1;

  std::size_t spatial_count() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
           static_cast<std::size_t>(nz);
  }
  std::size_t total_count() const {
    return spatial_count() * static_cast<std::size_t>(nt);
  }
  bool same_spatial(const GridShape& o) const {
    return nx == o.nx && ny == o.ny && nz == o.nz;
  }
  bool operator==(const GridShape& o) const {
    return same_spatial(o) && nt == o.nt;
  }

  void validate() const {
    if (nx < 1 || ny < 1 || nz < 1 || nt < 1)
      throw std::invalid_argument("GridShape: all counts must be >= 1");
  }
};

struct VoxelIndex {
  int x = 0;
  int y = 0;
  int z = 0;
  bool operator==(const VoxelIndex&) const = default;
};

inline bool in_bounds(const GridShape& s, int x, int y, int z) {
  return x >= 0 && x < s.nx && y >= 0 && y < s.ny && z >= 0 && z < s.nz;
}
inline bool in_bounds(const GridShape& s, const VoxelIndex& v) {
  return in_bounds(s, v.x, v.y, v.z);
}

inline std::size_t spatial_index(const GridShape& s, int x, int y, int z) {
  return static_cast<std::size_t>(x) +
         static_cast<std::size_t>(s.nx) *
             (static_cast<std::size_t>(y) +
              static_cast<std::size_t>(s.ny) * static_cast<std::size_t>(z));
}

inline VoxelIndex decode_spatial(const GridShape& s, std::size_t i) {
  const std::size_t plane = static_cast<std::size_t>(s.nx) * s.ny;
  return {static_cast<int>(i % s.nx), static_cast<int>((i / s.nx) % s.ny),
          static_cast<int>(i / plane)};
}

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  double norm() const { return std::sqrt(x * x + y * y + z * z); }
  bool finite() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
  }
  double& comp(int c) { return c == 0 ? x : (c == 1 ? y : z); }
  double comp(int c) const { return c == 0 ? x : (c == 1 ? y : z); }
};

/// 3D grid of real intensities (nt = 1).
struct ScalarVolume {
  GridShape shape;
  std::array<double, 3> spacing = {1.0, 1.0, 1.0};
  std::vector<double> data;

  ScalarVolume() = default;
  explicit ScalarVolume(const GridShape& s, double fill = 0.0)
      : shape{s.nx, s.ny, s.nz, 1}, data(shape.spatial_count(), fill) {
    shape.validate();
  }

  double& at(int x, int y, int z) { return data[spatial_index(shape, x, y, z)]; }
  double at(int x, int y, int z) const {
    return data[spatial_index(shape, x, y, z)];
  }
};

/// 4D grid: 3D spatial x time, value indexed (x, y, z, t) with t slowest.
struct TimeSeriesVolume {
  GridShape shape;
  std::array<double, 3> spacing = {1.0, 1.0, 1.0};
  std::vector<double> data;

  TimeSeriesVolume() = default;
  TimeSeriesVolume(const GridShape& s, double fill = 0.0)
      : shape(s), data(s.total_count(), fill) {
    shape.validate();
    if (shape.nt < 2)
      throw std::invalid_argument("TimeSeriesVolume: nt must be >= 2");
  }

  std::size_t index(int x, int y, int z, int t) const {
    return spatial_index(shape, x, y, z) +
           shape.spatial_count() * static_cast<std::size_t>(t);
  }
  double& at(int x, int y, int z, int t) { return data[index(x, y, z, t)]; }
  double at(int x, int y, int z, int t) const { return data[index(x, y, z, t)]; }
};

/// Per-voxel 3-vector displacement, stored in voxel units of its own grid.
struct DisplacementField {
  GridShape shape;
  std::vector<Vec3> u;

  DisplacementField() = default;
  explicit DisplacementField(const GridShape& s)
      : shape{s.nx, s.ny, s.nz, 1}, u(shape.spatial_count()) {
    shape.validate();
  }

  Vec3& at(int x, int y, int z) { return u[spatial_index(shape, x, y, z)]; }
  const Vec3& at(int x, int y, int z) const {
    return u[spatial_index(shape, x, y, z)];
  }
};

/// Integer-labeled anatomical regions, 0 = background.
struct LabelVolume {
  GridShape shape;
  std::vector<int> labels;

  LabelVolume() = default;
  explicit LabelVolume(const GridShape& s, int fill = 0)
      : shape{s.nx, s.ny, s.nz, 1}, labels(shape.spatial_count(), fill) {
    shape.validate();
  }

  int& at(int x, int y, int z) { return labels[spatial_index(shape, x, y, z)]; }
  int at(int x, int y, int z) const {
    return labels[spatial_index(shape, x, y, z)];
  }
};

struct BrainMask {
  GridShape shape;
  std::vector<std::uint8_t> inside;

  BrainMask() = default;
  explicit BrainMask(const GridShape& s, bool fill = false)
      : shape{s.nx, s.ny, s.nz, 1},
        inside(shape.spatial_count(), fill ? 1 : 0) {
    shape.validate();
  }

  bool at(int x, int y, int z) const {
    return inside[spatial_index(shape, x, y, z)] != 0;
  }
  void set(int x, int y, int z, bool v) {
    inside[spatial_index(shape, x, y, z)] = v ? 1 : 0;
  }
};

struct VolumeStats {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double std = 0.0;  // population convention (divide by N)
};

/// Descriptive statistics over masked voxels (all voxels if mask == nullptr).
inline VolumeStats volume_stats(const ScalarVolume& v,
                                const BrainMask* mask = nullptr) {
  if (mask && !mask->shape.same_spatial(v.shape))
    throw std::invalid_argument("volume_stats: shape mismatch");

  double mn = std::numeric_limits<double>::infinity();
  double mx = -std::numeric_limits<double>::infinity();
  double sum = 0.0;
  std::size_t n = 0;
  const std::size_t total = v.shape.spatial_count();
  for (std::size_t i = 0; i < total; ++i) {
    if (mask && mask->inside[i] == 0) continue;
    const double x = v.data[i];
    mn = std::min(mn, x);
    mx = std::max(mx, x);
    sum += x;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("volume_stats: empty domain");

  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < total; ++i) {
    if (mask && mask->inside[i] == 0) continue;
    const double d = v.data[i] - mean;
    ss += d * d;
  }
  return {mn, mx, mean, std::sqrt(ss / static_cast<double>(n))};
}

/// Rescale intensities to [0, 1]; a constant volume maps to all zeros.
inline ScalarVolume normalize_intensity(const ScalarVolume& v) {
  const VolumeStats st = volume_stats(v);
  ScalarVolume out(v.shape);
  out.spacing = v.spacing;
  const double range = st.max - st.min;
  if (range == 0.0) return out;
  for (std::size_t i = 0; i < v.data.size(); ++i)
    out.data[i] = (v.data[i] - st.min) / range;
  return out;
}

/// The time series I(n) of one voxel, in temporal order.
inline std::vector<double> time_series_at(const TimeSeriesVolume& v,
                                          const VoxelIndex& n) {
  if (!in_bounds(v.shape, n))
    throw std::invalid_argument("time_series_at: index out of bounds");
  std::vector<double> series(static_cast<std::size_t>(v.shape.nt));
  const std::size_t stride = v.shape.spatial_count();
  std::size_t idx = spatial_index(v.shape, n.x, n.y, n.z);
  for (int t = 0; t < v.shape.nt; ++t, idx += stride) series[t] = v.data[idx];
  return series;
}

}  // namespace fcreg
