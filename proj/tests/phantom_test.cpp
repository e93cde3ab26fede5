#include "fcreg/phantom.hpp"

#include <gtest/gtest.h>

#include "fcreg/evalsuite.hpp"
#include "fcreg/funcconn.hpp"

using namespace fcreg;

namespace {

PhantomSpec small_spec() {
  PhantomSpec spec;
  spec.nx = spec.ny = spec.nz = 24;
  spec.timepoints = 16;
  spec.seed = 42;
  spec.max_displacement = 2.5;
  spec.n_regions = 4;
  spec.noise_std = 0.05;
  return spec;
}

}  // namespace

TEST(Phantom, DeterministicForSameSeed) {
  const auto a = make_phantom(small_spec());
  const auto b = make_phantom(small_spec());
  EXPECT_EQ(a.fixed_t1.data, b.fixed_t1.data);
  EXPECT_EQ(a.moving_t1.data, b.moving_t1.data);
  EXPECT_EQ(a.fixed_fmri.data, b.fixed_fmri.data);
  EXPECT_EQ(a.labels_fixed.labels, b.labels_fixed.labels);
  for (std::size_t i = 0; i < a.truth.u.size(); ++i) {
    EXPECT_EQ(a.truth.u[i].x, b.truth.u[i].x);
    EXPECT_EQ(a.truth.u[i].y, b.truth.u[i].y);
    EXPECT_EQ(a.truth.u[i].z, b.truth.u[i].z);
  }
}

TEST(Phantom, DifferentSeedsDiffer) {
  auto spec = small_spec();
  const auto a = make_phantom(spec);
  spec.seed = 43;
  const auto b = make_phantom(spec);
  EXPECT_NE(a.fixed_fmri.data, b.fixed_fmri.data);
}

TEST(Phantom, TruthPeakEqualsMaxDisplacement) {
  const auto ph = make_phantom(small_spec());
  double max_norm = 0.0;
  for (const auto& u : ph.truth.u) max_norm = std::max(max_norm, u.norm());
  EXPECT_NEAR(max_norm, 2.5, 1e-6);
}

TEST(Phantom, TruthVanishesOnBoundaryShell) {
  const auto ph = make_phantom(small_spec());
  const GridShape& s = ph.truth.shape;
  for (int z = 0; z < s.nz; ++z)
    for (int y = 0; y < s.ny; ++y)
      for (int x = 0; x < s.nx; ++x) {
        if (x > 0 && x < s.nx - 1 && y > 0 && y < s.ny - 1 && z > 0 &&
            z < s.nz - 1)
          continue;
        EXPECT_EQ(ph.truth.at(x, y, z).norm(), 0.0);
      }
}

TEST(Phantom, MovingDataIsWarpedFixedData) {
  const auto ph = make_phantom(small_spec());
  const auto warped = warp_scalar(ph.fixed_t1, ph.truth);
  EXPECT_EQ(warped.data, ph.moving_t1.data);
  const auto wl = warp_labels(ph.labels_fixed, ph.truth);
  EXPECT_EQ(wl.labels, ph.labels_moving.labels);
}

TEST(Phantom, DisplacementSeparatesLabels) {
  auto spec = small_spec();
  spec.max_displacement = 2.0;
  const auto ph = make_phantom(spec);
  std::set<int> labels;
  for (int k = 1; k <= spec.n_regions; ++k) labels.insert(k);
  const auto d = dice(ph.labels_fixed, ph.labels_moving, labels);
  EXPECT_LT(d.mean, 1.0);
  EXPECT_GT(d.mean, 0.0);
}

TEST(Phantom, ParcelsHaveDistinctFcSignatures) {
  // Within-parcel correlations should dominate between-parcel ones.
  auto spec = small_spec();
  spec.noise_std = 0.05;
  const auto ph = make_phantom(spec);

  VoxelIndex in1{-1, -1, -1}, in1b{-1, -1, -1}, in2{-1, -1, -1};
  const GridShape& s = ph.labels_fixed.shape;
  for (int z = 0; z < s.nz && in2.x < 0; ++z)
    for (int y = 0; y < s.ny && in2.x < 0; ++y)
      for (int x = 0; x + 1 < s.nx && in2.x < 0; ++x) {
        if (ph.labels_fixed.at(x, y, z) == 1 &&
            ph.labels_fixed.at(x + 1, y, z) == 1 && in1.x < 0) {
          in1 = {x, y, z};
          in1b = {x + 1, y, z};
        }
        if (ph.labels_fixed.at(x, y, z) == 2) in2 = {x, y, z};
      }
  ASSERT_GE(in1.x, 0);
  ASSERT_GE(in2.x, 0);
  const auto s1 = time_series_at(ph.fixed_fmri, in1);
  const auto s1b = time_series_at(ph.fixed_fmri, in1b);
  const auto s2 = time_series_at(ph.fixed_fmri, in2);
  EXPECT_GT(pearson(s1, s1b), 0.8);
  EXPECT_LT(std::abs(pearson(s1, s2)), 0.6);
}

TEST(Phantom, SpecValidation) {
  PhantomSpec bad = small_spec();
  bad.nx = 4;
  EXPECT_THROW(make_phantom(bad), std::invalid_argument);
  bad = small_spec();
  bad.timepoints = 5;
  EXPECT_THROW(make_phantom(bad), std::invalid_argument);
  bad = small_spec();
  bad.max_displacement = 10.0;  // >= min(size)/4
  EXPECT_THROW(make_phantom(bad), std::invalid_argument);
  bad = small_spec();
  bad.n_regions = 0;
  EXPECT_THROW(make_phantom(bad), std::invalid_argument);
}

TEST(Phantom, StructuralIntensityInUnitRange) {
  const auto ph = make_phantom(small_spec());
  for (double v : ph.fixed_t1.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}
