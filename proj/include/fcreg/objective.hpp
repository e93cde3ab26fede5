#pragma once

// Composite registration objective
//
//   L(u) = L_t1(u) + lambda * L_f(u) + gamma * L_smooth(u)
//
// over a displacement field u on the structural grid:
//   L_t1     mean squared error between the fixed T1 and the moving T1
//            warped by u,
//   L_f      mean per-cube Bhattacharyya distance between local-FC
//            histograms of the fixed fMRI and the moving fMRI warped by
//            the downsampled field,
//   L_smooth sum of squared forward differences of u over all axes.
//
// Gradients are analytic, chaining through the trilinear interpolation
// weights, the soft FC histograms, and the forward differences; the fMRI
// term's coarse-grid gradient is scattered back to the fine grid by the
// adjoint of the block-mean downsampling.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcreg/funcconn.hpp"
#include "fcreg/parallel.hpp"
#include "fcreg/volume.hpp"
#include "fcreg/warp.hpp"

namespace fcreg {

struct LossWeights {
  double lambda = 0.01;
  double gamma = 0.01;

  void validate() const {
    if (lambda < 0.0 || gamma < 0.0)
      throw std::invalid_argument("LossWeights: weights must be >= 0");
  }
};

enum class GradMode { analytic, finite_difference };

struct OptimizerConfig {
  double learning_rate = 1e-4;
  int iterations = 300;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;  // recorded for provenance; the optimizer itself
                           // is deterministic
  GradMode grad_mode = GradMode::analytic;

  void validate() const {
    if (!(learning_rate > 0.0))
      throw std::invalid_argument("OptimizerConfig: learning_rate must be > 0");
    if (iterations < 0)
      throw std::invalid_argument("OptimizerConfig: iterations must be >= 0");
    if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0))
      throw std::invalid_argument("OptimizerConfig: betas must be in (0, 1)");
  }
};

struct LossBreakdown {
  double t1_sim = 0.0;
  double f_sim = 0.0;
  double smooth = 0.0;
  double total = 0.0;
};

/// Mean squared error over the domain (all voxels, or the mask if given).
inline double mse_loss(const ScalarVolume& f, const ScalarVolume& r,
                       const BrainMask* mask = nullptr) {
  if (!f.shape.same_spatial(r.shape))
    throw std::invalid_argument("mse_loss: shape mismatch");
  if (mask && !mask->shape.same_spatial(f.shape))
    throw std::invalid_argument("mse_loss: mask shape mismatch");
  double sse = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    if (mask && mask->inside[i] == 0) continue;
    const double d = f.data[i] - r.data[i];
    sse += d * d;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("mse_loss: empty domain");
  return sse / static_cast<double>(n);
}

/// Diffusion regularizer: sum over voxels of the squared forward
/// differences of u along x, y and z. Differences that would cross the far
/// boundary contribute 0.
inline double smoothness_loss(const DisplacementField& field) {
  const GridShape& s = field.shape;
  return parallel_sum(
      s.spatial_count(), 4096, [&](std::size_t b, std::size_t e) {
        double partial = 0.0;
        for (std::size_t i = b; i < e; ++i) {
          const VoxelIndex p = decode_spatial(s, i);
          const Vec3& u0 = field.u[i];
          if (p.x + 1 < s.nx) {
            const Vec3 d = field.at(p.x + 1, p.y, p.z) - u0;
            partial += d.x * d.x + d.y * d.y + d.z * d.z;
          }
          if (p.y + 1 < s.ny) {
            const Vec3 d = field.at(p.x, p.y + 1, p.z) - u0;
            partial += d.x * d.x + d.y * d.y + d.z * d.z;
          }
          if (p.z + 1 < s.nz) {
            const Vec3 d = field.at(p.x, p.y, p.z + 1) - u0;
            partial += d.x * d.x + d.y * d.y + d.z * d.z;
          }
        }
        return partial;
      });
}

/// Per-term gradient fields, each on the structural grid and unweighted;
/// the total objective gradient is t1 + lambda * fc + gamma * smooth.
struct TermGradients {
  DisplacementField t1;
  DisplacementField fc;
  DisplacementField smooth;
};

namespace detail {

inline void smoothness_gradient(const DisplacementField& field,
                                DisplacementField& grad) {
  const GridShape& s = field.shape;
  parallel_chunks(s.spatial_count(), 4096,
                  [&](std::size_t, std::size_t b, std::size_t e) {
                    for (std::size_t i = b; i < e; ++i) {
                      const VoxelIndex p = decode_spatial(s, i);
                      const Vec3& u0 = field.u[i];
                      Vec3 g;
                      for (int d = 0; d < 3; ++d) {
                        const int pd = d == 0 ? p.x : (d == 1 ? p.y : p.z);
                        const int nd = d == 0 ? s.nx : (d == 1 ? s.ny : s.nz);
                        if (pd > 0) {
                          const Vec3& um =
                              d == 0 ? field.at(p.x - 1, p.y, p.z)
                                     : (d == 1 ? field.at(p.x, p.y - 1, p.z)
                                               : field.at(p.x, p.y, p.z - 1));
                          g += (u0 - um) * 2.0;
                        }
                        if (pd + 1 < nd) {
                          const Vec3& up =
                              d == 0 ? field.at(p.x + 1, p.y, p.z)
                                     : (d == 1 ? field.at(p.x, p.y + 1, p.z)
                                               : field.at(p.x, p.y, p.z + 1));
                          g += (u0 - up) * 2.0;
                        }
                      }
                      grad.u[i] = g;
                    }
                  });
}

}  // namespace detail

/// Bundles one registration instance: the two image pairs, the weights and
/// FC configuration, and the fine-to-coarse grid factor. Precomputes the
/// cube grid and the fixed image's per-cube histograms, which do not change
/// across iterations. Holds references only; inputs must outlive it.
class RegistrationProblem {
 public:
  RegistrationProblem(const ScalarVolume& fixed_t1,
                      const ScalarVolume& moving_t1,
                      const TimeSeriesVolume& fixed_fmri,
                      const TimeSeriesVolume& moving_fmri,
                      const LossWeights& weights, const FCConfig& fc,
                      int factor)
      : fixed_t1_(fixed_t1),
        moving_t1_(moving_t1),
        fixed_fmri_(fixed_fmri),
        moving_fmri_(moving_fmri),
        weights_(weights),
        fc_(fc),
        factor_(factor) {
    weights_.validate();
    fc_.validate();
    if (factor_ < 1)
      throw std::invalid_argument("RegistrationProblem: factor must be >= 1");
    if (!fixed_t1_.shape.same_spatial(moving_t1_.shape))
      throw std::invalid_argument("RegistrationProblem: T1 shape mismatch");
    if (!(fixed_fmri_.shape == moving_fmri_.shape))
      throw std::invalid_argument("RegistrationProblem: fMRI shape mismatch");
    const GridShape& ft = fixed_t1_.shape;
    const GridShape& ff = fixed_fmri_.shape;
    if (ft.nx != ff.nx * factor_ || ft.ny != ff.ny * factor_ ||
        ft.nz != ff.nz * factor_)
      throw std::invalid_argument(
          "RegistrationProblem: T1 shape must equal fMRI shape times factor");

    cube_grid_ = make_cube_grid(fixed_fmri_.shape, fc_.w);
    fixed_hist_.reserve(cube_grid_.cubes.size());
    for (const CubeRegion& cube : cube_grid_.cubes) {
      const auto corr = detail::cube_correlations(fixed_fmri_, cube, fc_);
      fixed_hist_.push_back(fc_histogram(corr, fc_, cube.center));
    }
  }

  const GridShape& fine_shape() const { return fixed_t1_.shape; }
  const LossWeights& weights() const { return weights_; }

  LossBreakdown evaluate(const DisplacementField& u,
                         TermGradients* grads = nullptr) const {
    if (!u.shape.same_spatial(fixed_t1_.shape))
      throw std::invalid_argument("evaluate: field shape mismatch");
    if (grads && weights_.lambda > 0.0 && !fc_.soft)
      throw std::invalid_argument(
          "evaluate: non-differentiable configuration (hard histogram with "
          "lambda > 0)");

    LossBreakdown out;
    if (grads) {
      grads->t1 = DisplacementField(fixed_t1_.shape);
      grads->fc = DisplacementField(fixed_t1_.shape);
      grads->smooth = DisplacementField(fixed_t1_.shape);
    }

    out.t1_sim = t1_term(u, grads ? &grads->t1 : nullptr);

    const DisplacementField coarse_u = downsample_field(u, factor_);
    DisplacementField coarse_g;
    out.f_sim = fc_term(coarse_u, (grads && weights_.lambda > 0.0)
                                      ? &coarse_g
                                      : nullptr);
    if (grads && weights_.lambda > 0.0)
      grads->fc = downsample_field_adjoint(coarse_g, factor_, u.shape);

    out.smooth = smoothness_loss(u);
    if (grads) detail::smoothness_gradient(u, grads->smooth);

    out.total =
        out.t1_sim + weights_.lambda * out.f_sim + weights_.gamma * out.smooth;
    return out;
  }

  /// Gradient of the weighted total objective with respect to u.
  DisplacementField gradient(const DisplacementField& u,
                             LossBreakdown* breakdown = nullptr) const {
    TermGradients terms;
    const LossBreakdown b = evaluate(u, &terms);
    if (breakdown) *breakdown = b;
    DisplacementField g(u.shape);
    for (std::size_t i = 0; i < g.u.size(); ++i)
      g.u[i] = terms.t1.u[i] + terms.fc.u[i] * weights_.lambda +
               terms.smooth.u[i] * weights_.gamma;
    return g;
  }

 private:
  double t1_term(const DisplacementField& u, DisplacementField* grad) const {
    const GridShape& s = fixed_t1_.shape;
    const double inv_n = 1.0 / static_cast<double>(s.spatial_count());
    const double sse = parallel_sum(
        s.spatial_count(), 4096, [&](std::size_t b, std::size_t e) {
          double partial = 0.0;
          for (std::size_t i = b; i < e; ++i) {
            const VoxelIndex p = decode_spatial(s, i);
            const Vec3& up = u.u[i];
            detail::require_finite_point(up.x, up.y, up.z);
            const auto ts = detail::sample_plane_grad(
                moving_t1_.data, s, p.x - up.x, p.y - up.y, p.z - up.z);
            const double resid = fixed_t1_.data[i] - ts.value;
            partial += resid * resid;
            if (grad) grad->u[i] = ts.grad * (2.0 * inv_n * resid);
          }
          return partial;
        });
    return sse * inv_n;
  }

  // Warps the moving fMRI into a series-contiguous buffer r[m * nt + t].
  std::vector<double> warp_fmri_transposed(const DisplacementField& cu) const {
    const GridShape& s = fixed_fmri_.shape;
    const std::size_t plane = s.spatial_count();
    const int nt = s.nt;
    std::vector<double> out(plane * static_cast<std::size_t>(nt));
    for (int t = 0; t < nt; ++t) {
      std::span<const double> src(moving_fmri_.data.data() + plane * t, plane);
      parallel_chunks(plane, 4096,
                      [&](std::size_t, std::size_t b, std::size_t e) {
                        for (std::size_t i = b; i < e; ++i) {
                          const VoxelIndex p = decode_spatial(s, i);
                          const Vec3& up = cu.u[i];
                          detail::require_finite_point(up.x, up.y, up.z);
                          out[i * nt + t] = detail::sample_plane(
                              src, s, p.x - up.x, p.y - up.y, p.z - up.z);
                        }
                      });
    }
    return out;
  }

  // Forward + backward pass of the local-FC term on the coarse grid.
  // Returns the mean per-cube Bhattacharyya distance; when grad is given it
  // receives d f_sim / d coarse_u.
  double fc_term(const DisplacementField& coarse_u,
                 DisplacementField* grad) const {
    const GridShape& s = fixed_fmri_.shape;
    const int nt = s.nt;
    const std::size_t plane = s.spatial_count();
    const std::vector<double> warped = warp_fmri_transposed(coarse_u);

    const std::size_t n_cubes = cube_grid_.cubes.size();
    const double cube_weight = 1.0 / static_cast<double>(n_cubes);

    // d f_sim / d warped(m, t), filled per cube (cubes are disjoint).
    std::vector<double> d_warped;
    if (grad) d_warped.assign(warped.size(), 0.0);

    struct PairFwd {
      double mean = 0.0;
      double norm = 0.0;
      double r = 0.0;
      bool skip = true;  // degenerate, clamped or the self pair
    };

    const double loss = parallel_sum(n_cubes, 1, [&](std::size_t cb,
                                                     std::size_t ce) {
      double partial = 0.0;
      std::vector<PairFwd> fwd;
      std::vector<double> corr;
      for (std::size_t ci = cb; ci < ce; ++ci) {
        const CubeRegion& cube = cube_grid_.cubes[ci];
        const std::size_t center_idx =
            spatial_index(s, cube.center.x, cube.center.y, cube.center.z);
        std::span<const double> a(warped.data() + center_idx * nt,
                                  static_cast<std::size_t>(nt));
        const auto astats = detail::series_stats(a, fc_.var_eps);

        const std::size_t n_vox = static_cast<std::size_t>(cube.extent.x) *
                                  cube.extent.y * cube.extent.z;
        fwd.assign(n_vox, {});
        corr.assign(n_vox, 0.0);

        // Forward: correlations of each cube voxel against the center.
        std::size_t k = 0;
        for (int z = cube.start.z; z < cube.start.z + cube.extent.z; ++z)
          for (int y = cube.start.y; y < cube.start.y + cube.extent.y; ++y)
            for (int x = cube.start.x; x < cube.start.x + cube.extent.x;
                 ++x, ++k) {
              const std::size_t mi = spatial_index(s, x, y, z);
              std::span<const double> b(warped.data() + mi * nt,
                                        static_cast<std::size_t>(nt));
              const auto bstats = detail::series_stats(b, fc_.var_eps);
              const double r = detail::pearson_from_stats(a, astats, b, bstats);
              corr[k] = std::clamp(r, -1.0, 1.0);
              fwd[k] = {bstats.mean, bstats.norm, corr[k],
                        mi == center_idx || astats.degenerate ||
                            bstats.degenerate || std::abs(r) >= 1.0};
            }

        FCHistogram hr = fc_histogram(corr, fc_, cube.center);
        if (!grad) {
          partial += bc_distance(fixed_hist_[ci], hr);
          continue;
        }

        const auto back = detail::bc_distance_backward(fixed_hist_[ci], hr);
        partial += back.distance;

        // Backward: distance -> histogram -> correlations -> warped series.
        const double half_bins = static_cast<double>(fc_.bins - 1) / 2.0;
        k = 0;
        for (int z = cube.start.z; z < cube.start.z + cube.extent.z; ++z)
          for (int y = cube.start.y; y < cube.start.y + cube.extent.y; ++y)
            for (int x = cube.start.x; x < cube.start.x + cube.extent.x;
                 ++x, ++k) {
              const PairFwd& pf = fwd[k];
              if (pf.skip) continue;
              const double b = (pf.r + 1.0) * half_bins;
              const int k0 = static_cast<int>(std::floor(b));
              double dd_db = 0.0;
              if (k0 >= 0 && k0 < fc_.bins) dd_db -= back.d_hr[k0];
              if (k0 + 1 < fc_.bins) dd_db += back.d_hr[k0 + 1];
              const double dd_dr = cube_weight * dd_db * half_bins;
              if (dd_dr == 0.0) continue;

              const std::size_t mi = spatial_index(s, x, y, z);
              const double inv_ab = 1.0 / (astats.norm * pf.norm);
              const double r_bb = pf.r / (pf.norm * pf.norm);
              const double r_aa = pf.r / (astats.norm * astats.norm);
              double* dm = d_warped.data() + mi * nt;
              double* dc = d_warped.data() + center_idx * nt;
              const double* bm = warped.data() + mi * nt;
              for (int t = 0; t < nt; ++t) {
                const double ac = a[t] - astats.mean;
                const double bc = bm[t] - pf.mean;
                dm[t] += dd_dr * (ac * inv_ab - r_bb * bc);
                dc[t] += dd_dr * (bc * inv_ab - r_aa * ac);
              }
            }
      }
      return partial;
    });

    if (grad) {
      // Chain through the fMRI warp: d f_sim / d coarse_u(m) =
      // -sum_t d_warped(m, t) * d interp / d sample point.
      *grad = DisplacementField(GridShape{s.nx, s.ny, s.nz, 1});
      for (int t = 0; t < nt; ++t) {
        std::span<const double> src(moving_fmri_.data.data() + plane * t,
                                    plane);
        parallel_chunks(
            plane, 4096, [&](std::size_t, std::size_t b, std::size_t e) {
              for (std::size_t i = b; i < e; ++i) {
                const double w = d_warped[i * nt + t];
                if (w == 0.0) continue;
                const VoxelIndex p = decode_spatial(s, i);
                const Vec3& up = coarse_u.u[i];
                const auto ts = detail::sample_plane_grad(
                    src, s, p.x - up.x, p.y - up.y, p.z - up.z);
                grad->u[i] += ts.grad * (-w);
              }
            });
      }
    }
    return loss * cube_weight;
  }

  const ScalarVolume& fixed_t1_;
  const ScalarVolume& moving_t1_;
  const TimeSeriesVolume& fixed_fmri_;
  const TimeSeriesVolume& moving_fmri_;
  LossWeights weights_;
  FCConfig fc_;
  int factor_;
  CubeGrid cube_grid_;
  std::vector<FCHistogram> fixed_hist_;
};

/// Composite loss of Lt1 + lambda Lf + gamma Lsmooth at one field state.
inline LossBreakdown total_loss(const ScalarVolume& fixed_t1,
                                const ScalarVolume& moving_t1,
                                const TimeSeriesVolume& fixed_fmri,
                                const TimeSeriesVolume& moving_fmri,
                                const DisplacementField& field,
                                const LossWeights& weights, const FCConfig& fc,
                                int factor) {
  RegistrationProblem prob(fixed_t1, moving_t1, fixed_fmri, moving_fmri,
                           weights, fc, factor);
  return prob.evaluate(field);
}

/// Analytic gradient of the weighted total loss with respect to every
/// displacement component. Requires soft histograms when lambda > 0.
inline DisplacementField loss_gradient(const ScalarVolume& fixed_t1,
                                       const ScalarVolume& moving_t1,
                                       const TimeSeriesVolume& fixed_fmri,
                                       const TimeSeriesVolume& moving_fmri,
                                       const DisplacementField& field,
                                       const LossWeights& weights,
                                       const FCConfig& fc, int factor) {
  RegistrationProblem prob(fixed_t1, moving_t1, fixed_fmri, moving_fmri,
                           weights, fc, factor);
  return prob.gradient(field);
}

struct RegistrationResult {
  DisplacementField field;
  std::vector<LossBreakdown> history;  // loss at the start of each iteration
};

namespace detail {

inline DisplacementField fd_gradient(const RegistrationProblem& prob,
                                     DisplacementField& u, double step,
                                     LossBreakdown* breakdown) {
  if (breakdown) *breakdown = prob.evaluate(u);
  DisplacementField g(u.shape);
  for (std::size_t i = 0; i < u.u.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      const double saved = u.u[i].comp(c);
      u.u[i].comp(c) = saved + step;
      const double lp = prob.evaluate(u).total;
      u.u[i].comp(c) = saved - step;
      const double lm = prob.evaluate(u).total;
      u.u[i].comp(c) = saved;
      g.u[i].comp(c) = (lp - lm) / (2.0 * step);
    }
  }
  return g;
}

}  // namespace detail

/// Direct variational registration: starts from a zero field and runs Adam
/// on the objective gradient for opt.iterations steps. Deterministic given
/// the inputs and config, independent of the worker count.
inline RegistrationResult register_volumes(const ScalarVolume& fixed_t1,
                                           const ScalarVolume& moving_t1,
                                           const TimeSeriesVolume& fixed_fmri,
                                           const TimeSeriesVolume& moving_fmri,
                                           const LossWeights& weights,
                                           const FCConfig& fc,
                                           const OptimizerConfig& opt,
                                           int factor) {
  opt.validate();
  if (opt.grad_mode == GradMode::analytic && weights.lambda > 0.0 && !fc.soft)
    throw std::invalid_argument(
        "register: non-differentiable configuration (hard histogram with "
        "lambda > 0)");
  RegistrationProblem prob(fixed_t1, moving_t1, fixed_fmri, moving_fmri,
                           weights, fc, factor);

  RegistrationResult res;
  res.field = DisplacementField(fixed_t1.shape);
  if (opt.iterations == 0) return res;

  std::vector<Vec3> m(res.field.u.size());
  std::vector<Vec3> v(res.field.u.size());
  for (int it = 1; it <= opt.iterations; ++it) {
    LossBreakdown breakdown;
    const DisplacementField g =
        opt.grad_mode == GradMode::analytic
            ? prob.gradient(res.field, &breakdown)
            : detail::fd_gradient(prob, res.field, 1e-3, &breakdown);
    if (!std::isfinite(breakdown.total))
      throw std::runtime_error("register: diverged at iteration " +
                               std::to_string(it));
    res.history.push_back(breakdown);

    const double bc1 = 1.0 - std::pow(opt.beta1, it);
    const double bc2 = 1.0 - std::pow(opt.beta2, it);
    parallel_chunks(res.field.u.size(), 8192,
                    [&](std::size_t, std::size_t b, std::size_t e) {
                      for (std::size_t i = b; i < e; ++i) {
                        for (int c = 0; c < 3; ++c) {
                          const double gc = g.u[i].comp(c);
                          double& mc = m[i].comp(c);
                          double& vc = v[i].comp(c);
                          mc = opt.beta1 * mc + (1.0 - opt.beta1) * gc;
                          vc = opt.beta2 * vc + (1.0 - opt.beta2) * gc * gc;
                          res.field.u[i].comp(c) -=
                              opt.learning_rate * (mc / bc1) /
                              (std::sqrt(vc / bc2) + opt.adam_eps);
                        }
                      }
                    });
  }
  return res;
}

}  // namespace fcreg
