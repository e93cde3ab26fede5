#pragma once

// Local functional-connectivity patterns: per-cube Pearson correlation maps
// against the cube center, their binned distribution histograms, and the
// Bhattacharyya distance between the histograms of two images.
//
// The correlation range [-1, 1] maps to `bins` intervals (default 21) by
// b = (r + 1) * (bins - 1) / 2, bin centers at -1, -0.9, ..., 1 with
// half-width end bins. Hard binning rounds b to the nearest bin; soft
// binning splits each sample between the two nearest bins with triangular
// weights 1 - |b - k| (differentiable, used during optimization).

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "fcreg/parallel.hpp"
#include "fcreg/volume.hpp"

namespace fcreg {

struct FCConfig {
  int w = 21;             // odd cube side length in voxels
  int bins = 21;          // histogram bin count
  bool soft = true;       // soft (triangular) vs hard binning
  double var_eps = 1e-10; // variance floor; flatter series correlate as 0

  void validate() const {
    if (w < 3 || w % 2 == 0)
      throw std::invalid_argument("FCConfig: w must be odd and >= 3");
    if (bins < 2) throw std::invalid_argument("FCConfig: bins must be >= 2");
    if (var_eps < 0.0)
      throw std::invalid_argument("FCConfig: var_eps must be >= 0");
  }
};

/// One axis-aligned cube of the tiling: [start, start + extent) per axis.
/// Trailing cubes at the far boundaries are truncated, never discarded.
struct CubeRegion {
  VoxelIndex start;
  VoxelIndex extent;
  VoxelIndex center;
};

struct CubeGrid {
  std::vector<CubeRegion> cubes;
  int w = 0;
};

/// Tiles the volume with non-overlapping cubes of side w anchored at the
/// origin. The center of a (possibly truncated) cube is start + extent / 2.
inline CubeGrid make_cube_grid(const GridShape& spatial, int w) {
  if (w < 1) throw std::invalid_argument("make_cube_grid: w must be >= 1");
  CubeGrid grid;
  grid.w = w;
  for (int az = 0; az < spatial.nz; az += w)
    for (int ay = 0; ay < spatial.ny; ay += w)
      for (int ax = 0; ax < spatial.nx; ax += w) {
        CubeRegion c;
        c.start = {ax, ay, az};
        c.extent = {std::min(w, spatial.nx - ax), std::min(w, spatial.ny - ay),
                    std::min(w, spatial.nz - az)};
        c.center = {ax + c.extent.x / 2, ay + c.extent.y / 2,
                    az + c.extent.z / 2};
        grid.cubes.push_back(c);
      }
  return grid;
}

struct FCHistogram {
  std::vector<double> counts;
  VoxelIndex center;

  double total() const {
    double t = 0.0;
    for (double c : counts) t += c;
    return t;
  }
  double mean() const { return total() / static_cast<double>(counts.size()); }
};

namespace detail {

struct SeriesStats {
  double mean = 0.0;
  double norm = 0.0;  // || x - mean ||
  bool degenerate = false;
};

inline SeriesStats series_stats(std::span<const double> x, double var_eps) {
  const std::size_t n = x.size();
  double sum = 0.0;
  for (double v : x) sum += v;
  SeriesStats st;
  st.mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (double v : x) {
    const double d = v - st.mean;
    ss += d * d;
  }
  st.norm = std::sqrt(ss);
  st.degenerate = (ss / static_cast<double>(n)) < var_eps;
  return st;
}

inline double pearson_from_stats(std::span<const double> a,
                                 const SeriesStats& sa,
                                 std::span<const double> b,
                                 const SeriesStats& sb) {
  if (sa.degenerate || sb.degenerate) return 0.0;
  double dot = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t)
    dot += (a[t] - sa.mean) * (b[t] - sb.mean);
  return dot / (sa.norm * sb.norm);
}

}  // namespace detail

/// Pearson correlation of two equal-length series; returns 0 when either
/// series' population variance falls below var_eps.
inline double pearson(std::span<const double> a, std::span<const double> b,
                      double var_eps = 1e-10) {
  if (a.size() != b.size())
    throw std::invalid_argument("pearson: length mismatch");
  if (a.size() < 2) throw std::invalid_argument("pearson: length must be >= 2");
  const auto sa = detail::series_stats(a, var_eps);
  const auto sb = detail::series_stats(b, var_eps);
  return detail::pearson_from_stats(a, sa, b, sb);
}

/// Correlations between every voxel of the cube centered at `center` (side
/// cfg.w, clipped to the grid) and the center voxel, in z-major scan order
/// with x fastest.
inline std::vector<double> local_fc_map(const TimeSeriesVolume& v,
                                        const VoxelIndex& center,
                                        const FCConfig& cfg) {
  cfg.validate();
  if (!in_bounds(v.shape, center))
    throw std::invalid_argument("local_fc_map: center out of bounds");
  const int h = (cfg.w - 1) / 2;
  const std::vector<double> cs = time_series_at(v, center);
  const auto cstats = detail::series_stats(cs, cfg.var_eps);

  std::vector<double> out;
  std::vector<double> series(static_cast<std::size_t>(v.shape.nt));
  for (int z = std::max(0, center.z - h);
       z <= std::min(v.shape.nz - 1, center.z + h); ++z)
    for (int y = std::max(0, center.y - h);
         y <= std::min(v.shape.ny - 1, center.y + h); ++y)
      for (int x = std::max(0, center.x - h);
           x <= std::min(v.shape.nx - 1, center.x + h); ++x) {
        const std::size_t stride = v.shape.spatial_count();
        std::size_t idx = spatial_index(v.shape, x, y, z);
        for (int t = 0; t < v.shape.nt; ++t, idx += stride)
          series[t] = v.data[idx];
        const auto st = detail::series_stats(series, cfg.var_eps);
        out.push_back(detail::pearson_from_stats(cs, cstats, series, st));
      }
  return out;
}

namespace detail {

inline void accumulate_bin(std::vector<double>& counts, double r, int bins,
                           bool soft) {
  const double b = (r + 1.0) * static_cast<double>(bins - 1) / 2.0;
  if (soft) {
    const int k0 = static_cast<int>(std::floor(b));
    const double f = b - k0;
    if (k0 >= 0 && k0 < bins) counts[k0] += 1.0 - f;
    if (k0 + 1 < bins && f > 0.0) counts[k0 + 1] += f;
  } else {
    const long k = std::lround(b);
    counts[std::clamp<long>(k, 0, bins - 1)] += 1.0;
  }
}

}  // namespace detail

/// Bins a correlation list into an FCHistogram per cfg (hard or soft).
inline FCHistogram fc_histogram(std::span<const double> correlations,
                                const FCConfig& cfg,
                                const VoxelIndex& center = {}) {
  cfg.validate();
  FCHistogram h;
  h.center = center;
  h.counts.assign(static_cast<std::size_t>(cfg.bins), 0.0);
  for (double r : correlations) {
    if (!(r >= -1.0 - 1e-9 && r <= 1.0 + 1e-9))
      throw std::invalid_argument("fc_histogram: invalid correlation");
    detail::accumulate_bin(h.counts, std::clamp(r, -1.0, 1.0), cfg.bins,
                           cfg.soft);
  }
  return h;
}

/// Bhattacharyya distance between two FC histograms:
///   sqrt(1 - (1 / (bins * sqrt(hf_mean * hr_mean))) * sum_i sqrt(hf_i * hr_i))
/// clamped into [0, 1]. Identical histograms give exactly 0.
inline double bc_distance(const FCHistogram& hf, const FCHistogram& hr) {
  if (hf.counts.size() != hr.counts.size())
    throw std::invalid_argument("bc_distance: bin count mismatch");
  const double tf = hf.total();
  const double tr = hr.total();
  if (tf <= 0.0 || tr <= 0.0)
    throw std::invalid_argument("bc_distance: empty histogram");
  const int bins = static_cast<int>(hf.counts.size());
  double s = 0.0;
  for (int i = 0; i < bins; ++i) s += std::sqrt(hf.counts[i] * hr.counts[i]);
  const double denom =
      static_cast<double>(bins) *
      std::sqrt((tf / bins) * (tr / bins));
  const double rho = s / denom;
  return std::sqrt(std::max(1.0 - rho, 0.0));
}

namespace detail {

// Derivative floor: square-root denominators are clamped so gradients stay
// finite at empty bins and at exactly matching histograms. The value path
// above stays exact.
constexpr double kBcRootFloor = 1e-6;

struct BcBackward {
  double distance = 0.0;
  std::vector<double> d_hr;  // d distance / d hr.counts[k]
};

inline BcBackward bc_distance_backward(const FCHistogram& hf,
                                       const FCHistogram& hr) {
  const int bins = static_cast<int>(hf.counts.size());
  const double tf = hf.total();
  const double tr = hr.total();
  const double hf_mean = tf / bins;
  const double hr_mean = tr / bins;

  double s = 0.0;
  for (int i = 0; i < bins; ++i) s += std::sqrt(hf.counts[i] * hr.counts[i]);
  const double p = std::sqrt(hf_mean * hr_mean);
  const double rho = s / (bins * p);

  BcBackward out;
  out.d_hr.assign(bins, 0.0);
  const double one_minus = 1.0 - rho;
  out.distance = std::sqrt(std::max(one_minus, 0.0));
  if (one_minus <= 0.0) return out;  // clamped region: zero gradient

  const double dd_drho = -1.0 / (2.0 * std::max(out.distance, kBcRootFloor));
  const double p_safe = std::max(p, kBcRootFloor);
  // d rho / d hr_k = hf_k / (2 sqrt(hf_k hr_k) bins p) - s hf_mean / (2 bins^2 p^3)
  const double mean_term =
      s * hf_mean / (2.0 * bins * bins * p_safe * p_safe * p_safe);
  for (int k = 0; k < bins; ++k) {
    double term = -mean_term;
    if (hf.counts[k] > 0.0) {
      const double sk =
          std::max(std::sqrt(hf.counts[k] * hr.counts[k]), kBcRootFloor);
      term += hf.counts[k] / (2.0 * sk * bins * p_safe);
    }
    out.d_hr[k] = dd_drho * term;
  }
  return out;
}

// Correlations of every voxel of one tile against the tile's center, read
// from a 4D volume in standard (t-slowest) layout.
inline std::vector<double> cube_correlations(const TimeSeriesVolume& v,
                                             const CubeRegion& cube,
                                             const FCConfig& cfg) {
  const std::vector<double> cs = time_series_at(v, cube.center);
  const auto cstats = series_stats(cs, cfg.var_eps);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(cube.extent.x) * cube.extent.y *
              cube.extent.z);
  std::vector<double> series(static_cast<std::size_t>(v.shape.nt));
  const std::size_t stride = v.shape.spatial_count();
  for (int z = cube.start.z; z < cube.start.z + cube.extent.z; ++z)
    for (int y = cube.start.y; y < cube.start.y + cube.extent.y; ++y)
      for (int x = cube.start.x; x < cube.start.x + cube.extent.x; ++x) {
        std::size_t idx = spatial_index(v.shape, x, y, z);
        for (int t = 0; t < v.shape.nt; ++t, idx += stride)
          series[t] = v.data[idx];
        const auto st = series_stats(series, cfg.var_eps);
        out.push_back(pearson_from_stats(cs, cstats, series, st));
      }
  return out;
}

}  // namespace detail

/// Mean Bhattacharyya distance between per-cube FC histograms of two
/// volumes. Cubes tile the grid per make_cube_grid; only cubes whose center
/// lies inside the mask contribute (all cubes when mask == nullptr).
inline double fc_loss(const TimeSeriesVolume& f, const TimeSeriesVolume& r,
                      const FCConfig& cfg, const BrainMask* mask = nullptr) {
  cfg.validate();
  if (!(f.shape == r.shape))
    throw std::invalid_argument("fc_loss: shape mismatch");
  if (mask && !mask->shape.same_spatial(f.shape))
    throw std::invalid_argument("fc_loss: mask shape mismatch");

  const CubeGrid grid = make_cube_grid(f.shape, cfg.w);
  std::vector<const CubeRegion*> eligible;
  for (const CubeRegion& c : grid.cubes)
    if (!mask || mask->at(c.center.x, c.center.y, c.center.z))
      eligible.push_back(&c);
  if (eligible.empty())
    throw std::invalid_argument("fc_loss: no eligible cubes");

  const double sum = parallel_sum(
      eligible.size(), 4, [&](std::size_t b, std::size_t e) {
        double partial = 0.0;
        for (std::size_t i = b; i < e; ++i) {
          const CubeRegion& cube = *eligible[i];
          const auto cf = detail::cube_correlations(f, cube, cfg);
          const auto cr = detail::cube_correlations(r, cube, cfg);
          partial += bc_distance(fc_histogram(cf, cfg, cube.center),
                                 fc_histogram(cr, cfg, cube.center));
        }
        return partial;
      });
  return sum / static_cast<double>(eligible.size());
}

}  // namespace fcreg
