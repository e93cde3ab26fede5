#pragma once

// Spatial-transformer warping: trilinear resampling of scalar and
// time-series volumes through a displacement field, nearest-neighbor label
// warping, and deformation-field downsampling between grids.
//
// Sign convention: a voxel p of the warped output samples the moving image
// at p - u(p). Samples outside [0, n-1] per axis use zero padding for the
// missing corner neighbors.

#include <cmath>
#include <span>
#include <stdexcept>

#include "fcreg/parallel.hpp"
#include "fcreg/volume.hpp"

namespace fcreg {

struct SamplePoint {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

namespace detail {

// Corner bookkeeping for one trilinear sample: base lattice cell and the
// fractional offsets inside it.
struct TriCell {
  int x0, y0, z0;
  double fx, fy, fz;
};

inline TriCell tri_cell(double px, double py, double pz) {
  const double xf = std::floor(px);
  const double yf = std::floor(py);
  const double zf = std::floor(pz);
  return {static_cast<int>(xf), static_cast<int>(yf), static_cast<int>(zf),
          px - xf, py - yf, pz - zf};
}

inline double sample_plane(std::span<const double> plane, const GridShape& s,
                           double px, double py, double pz) {
  const TriCell c = tri_cell(px, py, pz);
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    const int z = c.z0 + dz;
    if (z < 0 || z >= s.nz) continue;
    const double wz = dz ? c.fz : 1.0 - c.fz;
    for (int dy = 0; dy < 2; ++dy) {
      const int y = c.y0 + dy;
      if (y < 0 || y >= s.ny) continue;
      const double wy = dy ? c.fy : 1.0 - c.fy;
      for (int dx = 0; dx < 2; ++dx) {
        const int x = c.x0 + dx;
        if (x < 0 || x >= s.nx) continue;
        const double wx = dx ? c.fx : 1.0 - c.fx;
        acc += wx * wy * wz * plane[spatial_index(s, x, y, z)];
      }
    }
  }
  return acc;
}

// Value plus derivative of the interpolant with respect to the sample
// coordinates (piecewise-constant weight derivative; subgradient at lattice
// planes).
struct TriSample {
  double value = 0.0;
  Vec3 grad;
};

inline TriSample sample_plane_grad(std::span<const double> plane,
                                   const GridShape& s, double px, double py,
                                   double pz) {
  const TriCell c = tri_cell(px, py, pz);
  TriSample out;
  for (int dz = 0; dz < 2; ++dz) {
    const int z = c.z0 + dz;
    if (z < 0 || z >= s.nz) continue;
    const double wz = dz ? c.fz : 1.0 - c.fz;
    const double gz = dz ? 1.0 : -1.0;
    for (int dy = 0; dy < 2; ++dy) {
      const int y = c.y0 + dy;
      if (y < 0 || y >= s.ny) continue;
      const double wy = dy ? c.fy : 1.0 - c.fy;
      const double gy = dy ? 1.0 : -1.0;
      for (int dx = 0; dx < 2; ++dx) {
        const int x = c.x0 + dx;
        if (x < 0 || x >= s.nx) continue;
        const double wx = dx ? c.fx : 1.0 - c.fx;
        const double gx = dx ? 1.0 : -1.0;
        const double v = plane[spatial_index(s, x, y, z)];
        out.value += wx * wy * wz * v;
        out.grad.x += gx * wy * wz * v;
        out.grad.y += wx * gy * wz * v;
        out.grad.z += wx * wy * gz * v;
      }
    }
  }
  return out;
}

inline void require_finite_point(double px, double py, double pz) {
  if (!std::isfinite(px) || !std::isfinite(py) || !std::isfinite(pz))
    throw std::invalid_argument("trilinear_sample: non-finite sample point");
}

}  // namespace detail

inline double trilinear_sample(const ScalarVolume& v, const SamplePoint& s) {
  detail::require_finite_point(s.x, s.y, s.z);
  return detail::sample_plane(v.data, v.shape, s.x, s.y, s.z);
}

/// Warped output: out(p) = trilinear_sample(m, p - u(p)) for every voxel p.
inline ScalarVolume warp_scalar(const ScalarVolume& m,
                                const DisplacementField& field) {
  if (!m.shape.same_spatial(field.shape))
    throw std::invalid_argument("warp_scalar: shape mismatch");
  ScalarVolume out(m.shape);
  out.spacing = m.spacing;
  const GridShape& s = m.shape;
  parallel_chunks(s.spatial_count(), 4096,
                  [&](std::size_t, std::size_t b, std::size_t e) {
                    for (std::size_t i = b; i < e; ++i) {
                      const int x = static_cast<int>(i % s.nx);
                      const int y = static_cast<int>((i / s.nx) % s.ny);
                      const int z = static_cast<int>(i / (static_cast<std::size_t>(s.nx) * s.ny));
                      const Vec3& u = field.u[i];
                      detail::require_finite_point(u.x, u.y, u.z);
                      out.data[i] = detail::sample_plane(
                          m.data, s, x - u.x, y - u.y, z - u.z);
                    }
                  });
  return out;
}

/// Applies the same 3D field independently at every time point.
inline TimeSeriesVolume warp_time_series(const TimeSeriesVolume& m,
                                         const DisplacementField& field) {
  if (!m.shape.same_spatial(field.shape))
    throw std::invalid_argument("warp_time_series: shape mismatch");
  TimeSeriesVolume out(m.shape);
  out.spacing = m.spacing;
  const GridShape& s = m.shape;
  const std::size_t plane = s.spatial_count();
  for (int t = 0; t < s.nt; ++t) {
    std::span<const double> src(m.data.data() + plane * t, plane);
    parallel_chunks(plane, 4096,
                    [&](std::size_t, std::size_t b, std::size_t e) {
                      for (std::size_t i = b; i < e; ++i) {
                        const int x = static_cast<int>(i % s.nx);
                        const int y = static_cast<int>((i / s.nx) % s.ny);
                        const int z = static_cast<int>(i / (static_cast<std::size_t>(s.nx) * s.ny));
                        const Vec3& u = field.u[i];
                        detail::require_finite_point(u.x, u.y, u.z);
                        out.data[plane * t + i] = detail::sample_plane(
                            src, s, x - u.x, y - u.y, z - u.z);
                      }
                    });
  }
  return out;
}

/// Nearest-neighbor label warp; samples outside the grid map to 0.
inline LabelVolume warp_labels(const LabelVolume& m,
                               const DisplacementField& field) {
  if (!m.shape.same_spatial(field.shape))
    throw std::invalid_argument("warp_labels: shape mismatch");
  LabelVolume out(m.shape);
  const GridShape& s = m.shape;
  parallel_chunks(s.spatial_count(), 4096,
                  [&](std::size_t, std::size_t b, std::size_t e) {
                    for (std::size_t i = b; i < e; ++i) {
                      const int x = static_cast<int>(i % s.nx);
                      const int y = static_cast<int>((i / s.nx) % s.ny);
                      const int z = static_cast<int>(i / (static_cast<std::size_t>(s.nx) * s.ny));
                      const Vec3& u = field.u[i];
                      detail::require_finite_point(u.x, u.y, u.z);
                      const int qx = static_cast<int>(std::lround(x - u.x));
                      const int qy = static_cast<int>(std::lround(y - u.y));
                      const int qz = static_cast<int>(std::lround(z - u.z));
                      out.labels[i] = in_bounds(s, qx, qy, qz)
                                          ? m.at(qx, qy, qz)
                                          : 0;
                    }
                  });
  return out;
}

/// Block-mean downsampling with magnitude rescale by 1/factor, converting
/// vectors from fine-grid voxel units to coarse-grid voxel units.
inline DisplacementField downsample_field(const DisplacementField& field,
                                          int factor) {
  if (factor < 1) throw std::invalid_argument("downsample_field: factor < 1");
  const GridShape& s = field.shape;
  if (s.nx % factor || s.ny % factor || s.nz % factor)
    throw std::invalid_argument(
        "downsample_field: shape not divisible by factor");
  if (factor == 1) return field;

  GridShape cs{s.nx / factor, s.ny / factor, s.nz / factor, 1};
  DisplacementField out(cs);
  const double scale =
      1.0 / (static_cast<double>(factor) * factor * factor * factor);
  parallel_chunks(cs.spatial_count(), 1024,
                  [&](std::size_t, std::size_t b, std::size_t e) {
                    for (std::size_t i = b; i < e; ++i) {
                      const int cx = static_cast<int>(i % cs.nx);
                      const int cy = static_cast<int>((i / cs.nx) % cs.ny);
                      const int cz = static_cast<int>(i / (static_cast<std::size_t>(cs.nx) * cs.ny));
                      Vec3 sum;
                      for (int dz = 0; dz < factor; ++dz)
                        for (int dy = 0; dy < factor; ++dy)
                          for (int dx = 0; dx < factor; ++dx)
                            sum += field.at(cx * factor + dx, cy * factor + dy,
                                            cz * factor + dz);
                      out.u[i] = sum * scale;
                    }
                  });
  return out;
}

/// Adjoint of downsample_field: spreads a coarse-grid gradient back to the
/// fine grid (each fine voxel receives its block's value / factor^4).
inline DisplacementField downsample_field_adjoint(
    const DisplacementField& coarse, int factor, const GridShape& fine_shape) {
  if (factor < 1)
    throw std::invalid_argument("downsample_field_adjoint: factor < 1");
  if (fine_shape.nx != coarse.shape.nx * factor ||
      fine_shape.ny != coarse.shape.ny * factor ||
      fine_shape.nz != coarse.shape.nz * factor)
    throw std::invalid_argument("downsample_field_adjoint: shape mismatch");
  if (factor == 1) return coarse;

  DisplacementField out(fine_shape);
  const GridShape& fs = out.shape;
  const double scale =
      1.0 / (static_cast<double>(factor) * factor * factor * factor);
  parallel_chunks(fs.spatial_count(), 4096,
                  [&](std::size_t, std::size_t b, std::size_t e) {
                    for (std::size_t i = b; i < e; ++i) {
                      const int x = static_cast<int>(i % fs.nx);
                      const int y = static_cast<int>((i / fs.nx) % fs.ny);
                      const int z = static_cast<int>(i / (static_cast<std::size_t>(fs.nx) * fs.ny));
                      out.u[i] = coarse.at(x / factor, y / factor, z / factor) *
                                 scale;
                    }
                  });
  return out;
}

}  // namespace fcreg
