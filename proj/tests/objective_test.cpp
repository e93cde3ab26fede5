#include "fcreg/objective.hpp"

#include <gtest/gtest.h>

#include <random>

#include "fcreg/funcconn.hpp"
#include "fcreg/warp.hpp"
#include "oracle_helpers.hpp"

using namespace fcreg;

namespace {

struct SmallInstance {
  ScalarVolume fixed_t1;
  ScalarVolume moving_t1;
  TimeSeriesVolume fixed_fmri;
  TimeSeriesVolume moving_fmri;
  DisplacementField field;
};

SmallInstance make_instance(const GridShape& spatial, int nt,
                            std::uint64_t seed, double field_scale) {
  std::mt19937_64 rng(seed);
  SmallInstance inst;
  inst.fixed_t1 = oracle::random_scalar(spatial, rng);
  inst.moving_t1 = oracle::random_scalar(spatial, rng);
  GridShape fshape{spatial.nx, spatial.ny, spatial.nz, nt};
  inst.fixed_fmri = oracle::random_series(fshape, rng);
  inst.moving_fmri = oracle::random_series(fshape, rng);
  inst.field = oracle::random_field(spatial, field_scale, rng);
  return inst;
}

FCConfig soft_cfg(int w = 3) {
  FCConfig cfg;
  cfg.w = w;
  cfg.soft = true;
  return cfg;
}

// Brute-force differentiation of the smoothness quadratic form: every
// difference term (u(p+e) - u(p))^2 contributes +/-2(u(p+e) - u(p)) to its
// two endpoints.
DisplacementField brute_force_smoothness_gradient(const DisplacementField& f) {
  const GridShape& s = f.shape;
  DisplacementField g(s);
  auto add = [&](int x, int y, int z, const Vec3& v) { g.at(x, y, z) += v; };
  for (int z = 0; z < s.nz; ++z)
    for (int y = 0; y < s.ny; ++y)
      for (int x = 0; x < s.nx; ++x) {
        if (x + 1 < s.nx) {
          const Vec3 d = f.at(x + 1, y, z) - f.at(x, y, z);
          add(x + 1, y, z, d * 2.0);
          add(x, y, z, d * -2.0);
        }
        if (y + 1 < s.ny) {
          const Vec3 d = f.at(x, y + 1, z) - f.at(x, y, z);
          add(x, y + 1, z, d * 2.0);
          add(x, y, z, d * -2.0);
        }
        if (z + 1 < s.nz) {
          const Vec3 d = f.at(x, y, z + 1) - f.at(x, y, z);
          add(x, y, z + 1, d * 2.0);
          add(x, y, z, d * -2.0);
        }
      }
  return g;
}

}  // namespace

TEST(MseLoss, Examples) {
  ScalarVolume f(GridShape{2, 1, 1});
  ScalarVolume r(GridShape{2, 1, 1});
  EXPECT_EQ(mse_loss(f, f), 0.0);

  ScalarVolume ones(GridShape{3, 3, 3}, 1.0);
  ScalarVolume zeros(GridShape{3, 3, 3}, 0.0);
  EXPECT_DOUBLE_EQ(mse_loss(zeros, ones), 1.0);

  f.data = {1.0, 3.0};
  r.data = {2.0, 1.0};
  EXPECT_DOUBLE_EQ(mse_loss(f, r), 2.5);
}

TEST(MseLoss, MatchesNaiveOracleAndChecksShapes) {
  std::mt19937_64 rng(71);
  ScalarVolume a = oracle::random_scalar(GridShape{16, 16, 16}, rng);
  ScalarVolume b = oracle::random_scalar(GridShape{16, 16, 16}, rng);
  EXPECT_NEAR(mse_loss(a, b), oracle::naive_mse(a, b), 1e-12);
  ScalarVolume c(GridShape{8, 16, 16});
  EXPECT_THROW(mse_loss(a, c), std::invalid_argument);
}

TEST(SmoothnessLoss, ConstantFieldIsZero) {
  DisplacementField f(GridShape{5, 5, 5});
  for (auto& u : f.u) u = {1.5, -2.0, 0.25};
  EXPECT_EQ(smoothness_loss(f), 0.0);
}

TEST(SmoothnessLoss, LinearRampClosedForm) {
  const int n = 6;
  DisplacementField f(GridShape{n, n, n});
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) f.at(x, y, z) = {double(x), 0.0, 0.0};
  // Every valid x-difference of u_x is 1: n*n*(n-1) of them.
  EXPECT_DOUBLE_EQ(smoothness_loss(f), double(n) * n * (n - 1));
}

TEST(SmoothnessLoss, SingleSpike) {
  DisplacementField f(GridShape{3, 3, 3});
  f.at(1, 1, 1) = {1.0, 0.0, 0.0};
  EXPECT_DOUBLE_EQ(smoothness_loss(f), 6.0);
}

TEST(SmoothnessLoss, MatchesNaiveTripleLoop) {
  std::mt19937_64 rng(73);
  DisplacementField f = oracle::random_field(GridShape{16, 16, 16}, 3.0, rng);
  EXPECT_NEAR(smoothness_loss(f), oracle::naive_smoothness(f), 1e-9);
}

TEST(TotalLoss, IdentityInputsGiveZero) {
  auto inst = make_instance(GridShape{6, 6, 6}, 10, 5, 0.0);
  inst.moving_t1 = inst.fixed_t1;
  inst.moving_fmri = inst.fixed_fmri;
  DisplacementField zero(inst.fixed_t1.shape);
  const auto b = total_loss(inst.fixed_t1, inst.moving_t1, inst.fixed_fmri,
                            inst.moving_fmri, zero, LossWeights{}, soft_cfg(),
                            1);
  EXPECT_EQ(b.t1_sim, 0.0);
  EXPECT_EQ(b.f_sim, 0.0);
  EXPECT_EQ(b.smooth, 0.0);
  EXPECT_EQ(b.total, 0.0);
}

TEST(TotalLoss, WeightedSumArithmetic) {
  // Components (1, 2, 3) with lambda = gamma = 0.01 compose to 1.05.
  const LossWeights w;
  EXPECT_DOUBLE_EQ(1.0 + w.lambda * 2.0 + w.gamma * 3.0, 1.05);

  auto inst = make_instance(GridShape{6, 6, 6}, 10, 7, 0.8);
  const auto b =
      total_loss(inst.fixed_t1, inst.moving_t1, inst.fixed_fmri,
                 inst.moving_fmri, inst.field, w, soft_cfg(), 1);
  EXPECT_NEAR(b.total, b.t1_sim + w.lambda * b.f_sim + w.gamma * b.smooth,
              1e-9);
}

TEST(TotalLoss, MatchesIndependentComponentOps) {
  auto inst = make_instance(GridShape{6, 6, 6}, 10, 9, 0.8);
  const LossWeights w{0.37, 0.11};
  const FCConfig cfg = soft_cfg();
  const auto b = total_loss(inst.fixed_t1, inst.moving_t1, inst.fixed_fmri,
                            inst.moving_fmri, inst.field, w, cfg, 1);

  const auto warped_t1 = warp_scalar(inst.moving_t1, inst.field);
  const auto warped_f = warp_time_series(inst.moving_fmri, inst.field);
  EXPECT_NEAR(b.t1_sim, mse_loss(inst.fixed_t1, warped_t1), 1e-9);
  EXPECT_NEAR(b.f_sim, fc_loss(inst.fixed_fmri, warped_f, cfg), 1e-9);
  EXPECT_NEAR(b.smooth, smoothness_loss(inst.field), 1e-9);
  EXPECT_NEAR(b.total, b.t1_sim + w.lambda * b.f_sim + w.gamma * b.smooth,
              1e-9);
}

TEST(TotalLoss, DownsampledFieldDrivesCoarseGrid) {
  // factor 2: the fMRI term must see the block-mean field / factor.
  std::mt19937_64 rng(11);
  const GridShape fine{8, 8, 8};
  const GridShape coarse{4, 4, 4, 8};
  SmallInstance inst;
  inst.fixed_t1 = oracle::random_scalar(fine, rng);
  inst.moving_t1 = oracle::random_scalar(fine, rng);
  inst.fixed_fmri = oracle::random_series(coarse, rng);
  inst.moving_fmri = oracle::random_series(coarse, rng);
  inst.field = oracle::random_field(fine, 1.0, rng);

  const FCConfig cfg = soft_cfg();
  const auto b = total_loss(inst.fixed_t1, inst.moving_t1, inst.fixed_fmri,
                            inst.moving_fmri, inst.field, LossWeights{}, cfg,
                            2);
  const auto cu = downsample_field(inst.field, 2);
  const auto warped_f = warp_time_series(inst.moving_fmri, cu);
  EXPECT_NEAR(b.f_sim, fc_loss(inst.fixed_fmri, warped_f, cfg), 1e-9);
}

TEST(TotalLoss, ShapeIncompatibilityIsError) {
  auto inst = make_instance(GridShape{6, 6, 6}, 10, 13, 0.5);
  EXPECT_THROW(total_loss(inst.fixed_t1, inst.moving_t1, inst.fixed_fmri,
                          inst.moving_fmri, inst.field, LossWeights{},
                          soft_cfg(), 2),
               std::invalid_argument);
}

TEST(LossGradient, StationaryAtPerfectAlignment) {
  auto inst = make_instance(GridShape{5, 5, 5}, 8, 17, 0.0);
  inst.moving_t1 = inst.fixed_t1;
  inst.moving_fmri = inst.fixed_fmri;
  DisplacementField zero(inst.fixed_t1.shape);
  RegistrationProblem prob(inst.fixed_t1, inst.moving_t1, inst.fixed_fmri,
                           inst.moving_fmri, LossWeights{0.0, 0.0}, soft_cfg(),
                           1);
  TermGradients g;
  prob.evaluate(zero, &g);
  for (const auto& v : g.t1.u) {
    EXPECT_EQ(v.x, 0.0);
    EXPECT_EQ(v.y, 0.0);
    EXPECT_EQ(v.z, 0.0);
  }
}

TEST(LossGradient, NonDifferentiableConfigurationIsError) {
  auto inst = make_instance(GridShape{5, 5, 5}, 8, 19, 0.3);
  FCConfig hard = soft_cfg();
  hard.soft = false;
  EXPECT_THROW(loss_gradient(inst.fixed_t1, inst.moving_t1, inst.fixed_fmri,
                             inst.moving_fmri, inst.field,
                             LossWeights{0.01, 0.01}, hard, 1),
               std::invalid_argument);
  // lambda == 0 with hard bins is fine: the FC term is not differentiated.
  EXPECT_NO_THROW(loss_gradient(inst.fixed_t1, inst.moving_t1, inst.fixed_fmri,
                                inst.moving_fmri, inst.field,
                                LossWeights{0.0, 0.01}, hard, 1));
}

TEST(LossGradient, MatchesFiniteDifferencesPerTerm) {
  auto inst = make_instance(GridShape{6, 6, 6}, 10, 23, 0.35);
  const FCConfig cfg = soft_cfg();

  struct Case {
    LossWeights w;
    const char* name;
  };
  const Case cases[] = {
      {{0.0, 0.0}, "t1 only"},
      {{1.0, 0.0}, "t1 + fc"},
      {{0.0, 1.0}, "t1 + smooth"},
      {{0.01, 0.01}, "combined"},
  };
  for (const Case& c : cases) {
    RegistrationProblem prob(inst.fixed_t1, inst.moving_t1, inst.fixed_fmri,
                             inst.moving_fmri, c.w, cfg, 1);
    const auto analytic = prob.gradient(inst.field);
    const auto fd = oracle::fd_gradient(
        inst.field,
        [&](const DisplacementField& u) { return prob.evaluate(u).total; });
    const double rate = oracle::gradient_match_rate(analytic, fd, 1e-3);
    EXPECT_GE(rate, 0.99) << c.name;
  }
}

TEST(LossGradient, SmoothTermMatchesBruteForceQuadraticForm) {
  auto inst = make_instance(GridShape{6, 6, 6}, 10, 29, 0.4);
  inst.moving_t1 = inst.fixed_t1;  // gamma-only problem: identical images
  inst.moving_fmri = inst.fixed_fmri;
  RegistrationProblem prob(inst.fixed_t1, inst.moving_t1, inst.fixed_fmri,
                           inst.moving_fmri, LossWeights{0.0, 1.0}, soft_cfg(),
                           1);
  TermGradients terms;
  prob.evaluate(inst.field, &terms);
  const auto brute = brute_force_smoothness_gradient(inst.field);
  for (std::size_t i = 0; i < brute.u.size(); ++i) {
    EXPECT_NEAR(terms.smooth.u[i].x, brute.u[i].x, 1e-9);
    EXPECT_NEAR(terms.smooth.u[i].y, brute.u[i].y, 1e-9);
    EXPECT_NEAR(terms.smooth.u[i].z, brute.u[i].z, 1e-9);
  }
}

TEST(LossGradient, FcTermCoarseGridFiniteDifferences) {
  // factor 2 exercises the downsample adjoint in the chain.
  std::mt19937_64 rng(31);
  const GridShape fine{8, 8, 8};
  const GridShape coarse{4, 4, 4, 10};
  SmallInstance inst;
  inst.fixed_t1 = oracle::random_scalar(fine, rng);
  inst.moving_t1 = oracle::random_scalar(fine, rng);
  inst.fixed_fmri = oracle::random_series(coarse, rng);
  inst.moving_fmri = oracle::random_series(coarse, rng);
  inst.field = oracle::random_field(fine, 0.3, rng);

  RegistrationProblem prob(inst.fixed_t1, inst.moving_t1, inst.fixed_fmri,
                           inst.moving_fmri, LossWeights{1.0, 0.0}, soft_cfg(),
                           2);
  const auto analytic = prob.gradient(inst.field);
  const auto fd = oracle::fd_gradient(
      inst.field,
      [&](const DisplacementField& u) { return prob.evaluate(u).total; });
  EXPECT_GE(oracle::gradient_match_rate(analytic, fd, 1e-3), 0.99);
}

TEST(Register, IdentityPairStaysPut) {
  auto inst = make_instance(GridShape{8, 8, 8}, 10, 37, 0.0);
  inst.moving_t1 = inst.fixed_t1;
  inst.moving_fmri = inst.fixed_fmri;
  OptimizerConfig opt;
  opt.iterations = 20;
  const auto res =
      register_volumes(inst.fixed_t1, inst.moving_t1, inst.fixed_fmri,
                       inst.moving_fmri, LossWeights{}, soft_cfg(), opt, 1);
  ASSERT_EQ(res.history.size(), 20u);
  double mean_mag = 0.0;
  for (const auto& u : res.field.u) mean_mag += u.norm();
  mean_mag /= res.field.u.size();
  EXPECT_LT(mean_mag, 0.1);
  EXPECT_NEAR(res.history.back().total, 0.0, 1e-4);
}

TEST(Register, ZeroIterations) {
  auto inst = make_instance(GridShape{6, 6, 6}, 10, 41, 0.0);
  OptimizerConfig opt;
  opt.iterations = 0;
  const auto res =
      register_volumes(inst.fixed_t1, inst.moving_t1, inst.fixed_fmri,
                       inst.moving_fmri, LossWeights{}, soft_cfg(), opt, 1);
  EXPECT_TRUE(res.history.empty());
  for (const auto& u : res.field.u) {
    EXPECT_EQ(u.x, 0.0);
    EXPECT_EQ(u.y, 0.0);
    EXPECT_EQ(u.z, 0.0);
  }
}

TEST(Register, DeterministicAcrossRunsAndWorkerCounts) {
  auto inst = make_instance(GridShape{8, 8, 8}, 10, 43, 0.0);
  OptimizerConfig opt;
  opt.iterations = 5;
  opt.learning_rate = 0.05;
  const LossWeights w{0.01, 0.01};

  const int saved = worker_count();
  set_worker_count(1);
  const auto a =
      register_volumes(inst.fixed_t1, inst.moving_t1, inst.fixed_fmri,
                       inst.moving_fmri, w, soft_cfg(), opt, 1);
  set_worker_count(4);
  const auto b =
      register_volumes(inst.fixed_t1, inst.moving_t1, inst.fixed_fmri,
                       inst.moving_fmri, w, soft_cfg(), opt, 1);
  set_worker_count(saved);

  for (std::size_t i = 0; i < a.field.u.size(); ++i) {
    EXPECT_EQ(a.field.u[i].x, b.field.u[i].x);
    EXPECT_EQ(a.field.u[i].y, b.field.u[i].y);
    EXPECT_EQ(a.field.u[i].z, b.field.u[i].z);
  }
  for (std::size_t i = 0; i < a.history.size(); ++i)
    EXPECT_EQ(a.history[i].total, b.history[i].total);
}

TEST(Register, DivergedInputRaises) {
  auto inst = make_instance(GridShape{6, 6, 6}, 10, 47, 0.0);
  inst.moving_t1.at(2, 2, 2) = std::numeric_limits<double>::quiet_NaN();
  OptimizerConfig opt;
  opt.iterations = 3;
  try {
    register_volumes(inst.fixed_t1, inst.moving_t1, inst.fixed_fmri,
                     inst.moving_fmri, LossWeights{}, soft_cfg(), opt, 1);
    FAIL() << "expected divergence";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("diverged"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("iteration 1"), std::string::npos);
  }
}

TEST(Register, FiniteDifferenceModeAgreesOnTinyProblem) {
  auto inst = make_instance(GridShape{4, 4, 4}, 8, 53, 0.0);
  OptimizerConfig opt;
  opt.iterations = 3;
  opt.learning_rate = 0.05;
  const LossWeights w{0.0, 0.01};
  const auto analytic =
      register_volumes(inst.fixed_t1, inst.moving_t1, inst.fixed_fmri,
                       inst.moving_fmri, w, soft_cfg(), opt, 1);
  opt.grad_mode = GradMode::finite_difference;
  const auto fd =
      register_volumes(inst.fixed_t1, inst.moving_t1, inst.fixed_fmri,
                       inst.moving_fmri, w, soft_cfg(), opt, 1);
  for (std::size_t i = 0; i < analytic.field.u.size(); ++i) {
    EXPECT_NEAR(analytic.field.u[i].x, fd.field.u[i].x, 1e-3);
    EXPECT_NEAR(analytic.field.u[i].y, fd.field.u[i].y, 1e-3);
    EXPECT_NEAR(analytic.field.u[i].z, fd.field.u[i].z, 1e-3);
  }
}
