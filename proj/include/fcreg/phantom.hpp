#pragma once

// Synthetic phantom generation for registration verification: a smooth
// multi-blob structural image with labeled parcels, per-parcel fMRI time
// courses (distinct-frequency sinusoids plus white noise), a smooth random
// ground-truth displacement field that vanishes on the boundary shell, and
// the moving images obtained by warping the fixed data with that field.
// Fully deterministic for a given seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include "fcreg/volume.hpp"
#include "fcreg/warp.hpp"

namespace fcreg {

struct PhantomSpec {
  int nx = 32;
  int ny = 32;
  int nz = 32;
  int timepoints = 20;
  std::uint64_t seed = 0;
  double max_displacement = 2.5;
  int n_regions = 5;
  double noise_std = 0.05;

  void validate() const {
    if (nx < 8 || ny < 8 || nz < 8)
      throw std::invalid_argument("PhantomSpec: sizes must be >= 8");
    if (timepoints < 10)
      throw std::invalid_argument("PhantomSpec: timepoints must be >= 10");
    const int min_dim = std::min({nx, ny, nz});
    if (!(max_displacement >= 0.0) ||
        max_displacement >= static_cast<double>(min_dim) / 4.0)
      throw std::invalid_argument(
          "PhantomSpec: max_displacement must be < min(size)/4");
    if (n_regions < 1)
      throw std::invalid_argument("PhantomSpec: n_regions must be >= 1");
    if (noise_std < 0.0)
      throw std::invalid_argument("PhantomSpec: noise_std must be >= 0");
  }
};

struct Phantom {
  ScalarVolume fixed_t1;
  ScalarVolume moving_t1;
  TimeSeriesVolume fixed_fmri;
  TimeSeriesVolume moving_fmri;
  LabelVolume labels_fixed;
  LabelVolume labels_moving;
  DisplacementField truth;
  BrainMask mask;
};

namespace detail {

inline DisplacementField gaussian_blur_field(const DisplacementField& in,
                                             double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(2.5 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double ksum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    ksum += kernel[i + radius];
  }
  for (double& k : kernel) k /= ksum;

  const GridShape& s = in.shape;
  DisplacementField a = in;
  DisplacementField b(s);
  for (int axis = 0; axis < 3; ++axis) {
    for (int z = 0; z < s.nz; ++z)
      for (int y = 0; y < s.ny; ++y)
        for (int x = 0; x < s.nx; ++x) {
          Vec3 acc;
          for (int i = -radius; i <= radius; ++i) {
            const int qx = axis == 0 ? x + i : x;
            const int qy = axis == 1 ? y + i : y;
            const int qz = axis == 2 ? z + i : z;
            if (!in_bounds(s, qx, qy, qz)) continue;  // zero padding
            acc += a.at(qx, qy, qz) * kernel[i + radius];
          }
          b.at(x, y, z) = acc;
        }
    std::swap(a, b);
  }
  return a;
}

inline double edge_taper(int p, int n, double margin) {
  const double d = static_cast<double>(std::min(p, n - 1 - p)) / margin;
  const double t = std::clamp(d, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);  // smoothstep
}

}  // namespace detail

inline Phantom make_phantom(const PhantomSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const GridShape shape{spec.nx, spec.ny, spec.nz, 1};
  const double cx = (spec.nx - 1) / 2.0;
  const double cy = (spec.ny - 1) / 2.0;
  const double cz = (spec.nz - 1) / 2.0;
  const double ax = 0.45 * (spec.nx - 1);
  const double ay = 0.45 * (spec.ny - 1);
  const double az = 0.45 * (spec.nz - 1);
  const int min_dim = std::min({spec.nx, spec.ny, spec.nz});

  Phantom ph;
  ph.mask = BrainMask(shape);
  for (int z = 0; z < spec.nz; ++z)
    for (int y = 0; y < spec.ny; ++y)
      for (int x = 0; x < spec.nx; ++x) {
        const double e = std::pow((x - cx) / ax, 2) +
                         std::pow((y - cy) / ay, 2) +
                         std::pow((z - cz) / az, 2);
        ph.mask.set(x, y, z, e <= 1.0);
      }

  // Parcel seed points inside the mask, all distinct.
  std::vector<VoxelIndex> seeds;
  while (static_cast<int>(seeds.size()) < spec.n_regions) {
    VoxelIndex p{static_cast<int>(unit(rng) * spec.nx),
                 static_cast<int>(unit(rng) * spec.ny),
                 static_cast<int>(unit(rng) * spec.nz)};
    p.x = std::min(p.x, spec.nx - 1);
    p.y = std::min(p.y, spec.ny - 1);
    p.z = std::min(p.z, spec.nz - 1);
    if (!ph.mask.at(p.x, p.y, p.z)) continue;
    if (std::find(seeds.begin(), seeds.end(), p) != seeds.end()) continue;
    seeds.push_back(p);
  }

  std::vector<double> amp(spec.n_regions);
  std::vector<double> sigma(spec.n_regions);
  for (int k = 0; k < spec.n_regions; ++k) {
    amp[k] = 0.35 + 0.65 * (k + 1) / spec.n_regions;
    sigma[k] = (0.12 + 0.10 * unit(rng)) * min_dim;
  }

  // Structural image: sum of Gaussian blobs, zero outside the mask,
  // rescaled to [0, 1]. Labels: nearest parcel seed within the mask.
  ph.fixed_t1 = ScalarVolume(shape);
  ph.labels_fixed = LabelVolume(shape);
  for (int z = 0; z < spec.nz; ++z)
    for (int y = 0; y < spec.ny; ++y)
      for (int x = 0; x < spec.nx; ++x) {
        if (!ph.mask.at(x, y, z)) continue;
        double v = 0.0;
        double best_d2 = std::numeric_limits<double>::infinity();
        int best_k = 0;
        for (int k = 0; k < spec.n_regions; ++k) {
          const double dx = x - seeds[k].x;
          const double dy = y - seeds[k].y;
          const double dz = z - seeds[k].z;
          const double d2 = dx * dx + dy * dy + dz * dz;
          v += amp[k] * std::exp(-0.5 * d2 / (sigma[k] * sigma[k]));
          if (d2 < best_d2) {
            best_d2 = d2;
            best_k = k;
          }
        }
        ph.fixed_t1.at(x, y, z) = v;
        ph.labels_fixed.at(x, y, z) = best_k + 1;
      }
  ph.fixed_t1 = normalize_intensity(ph.fixed_t1);

  // Per-parcel base time courses: distinct-frequency sinusoids.
  std::vector<std::vector<double>> base(spec.n_regions);
  for (int k = 0; k < spec.n_regions; ++k) {
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    base[k].resize(spec.timepoints);
    for (int t = 0; t < spec.timepoints; ++t)
      base[k][t] = std::sin(2.0 * std::numbers::pi * (k + 1) * t /
                                spec.timepoints +
                            phase);
  }

  GridShape fshape{spec.nx, spec.ny, spec.nz, spec.timepoints};
  ph.fixed_fmri = TimeSeriesVolume(fshape);
  for (int z = 0; z < spec.nz; ++z)
    for (int y = 0; y < spec.ny; ++y)
      for (int x = 0; x < spec.nx; ++x) {
        const int label = ph.labels_fixed.at(x, y, z);
        for (int t = 0; t < spec.timepoints; ++t) {
          double v = label > 0 ? base[label - 1][t] : 0.0;
          if (spec.noise_std > 0.0) v += spec.noise_std * gauss(rng);
          ph.fixed_fmri.at(x, y, z, t) = v;
        }
      }

  // Ground-truth field: smoothed white noise, tapered to zero on the
  // boundary shell and rescaled so the largest vector magnitude equals
  // max_displacement.
  DisplacementField raw(shape);
  for (auto& u : raw.u) {
    u.x = gauss(rng);
    u.y = gauss(rng);
    u.z = gauss(rng);
  }
  ph.truth = detail::gaussian_blur_field(raw, min_dim / 8.0);
  const double margin = std::max(3.0, min_dim / 8.0);
  double max_norm = 0.0;
  for (int z = 0; z < spec.nz; ++z)
    for (int y = 0; y < spec.ny; ++y)
      for (int x = 0; x < spec.nx; ++x) {
        const double w = detail::edge_taper(x, spec.nx, margin) *
                         detail::edge_taper(y, spec.ny, margin) *
                         detail::edge_taper(z, spec.nz, margin);
        Vec3& u = ph.truth.at(x, y, z);
        u = u * w;
        max_norm = std::max(max_norm, u.norm());
      }
  if (max_norm > 0.0 && spec.max_displacement > 0.0) {
    const double scale = spec.max_displacement / max_norm;
    for (auto& u : ph.truth.u) u = u * scale;
  } else {
    for (auto& u : ph.truth.u) u = Vec3{};
  }

  ph.moving_t1 = warp_scalar(ph.fixed_t1, ph.truth);
  ph.moving_fmri = warp_time_series(ph.fixed_fmri, ph.truth);
  ph.labels_moving = warp_labels(ph.labels_fixed, ph.truth);
  return ph;
}

}  // namespace fcreg
