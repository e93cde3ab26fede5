#pragma once

// Evaluation metrics: Dice overlap of labeled regions, z-scoring,
// one-sample group t-maps, and threshold/overlap voxel counts.

#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <vector>

#include "fcreg/volume.hpp"

namespace fcreg {

/// Per-voxel one-sample t statistic across n subject maps. Zero-variance
/// voxels carry a +/-inf sentinel when the mean is nonzero, 0 otherwise.
struct TMap {
  GridShape shape;
  std::vector<double> t;
  int n = 0;
};

struct ThresholdReport {
  double threshold = 0.0;
  std::size_t count = 0;  // voxels with t strictly greater than threshold
  double peak = 0.0;
};

struct DiceResult {
  std::map<int, double> per_label;  // labels absent from both inputs omitted
  double mean = 0.0;
};

/// Dice overlap 2|A∩B| / (|A| + |B|) per requested label; the mean skips
/// labels absent from both volumes.
inline DiceResult dice(const LabelVolume& a, const LabelVolume& b,
                       const std::set<int>& labels) {
  if (!a.shape.same_spatial(b.shape))
    throw std::invalid_argument("dice: shape mismatch");
  if (labels.empty()) throw std::invalid_argument("dice: empty label set");
  for (int k : labels)
    if (k <= 0) throw std::invalid_argument("dice: labels must be positive");

  std::map<int, std::size_t> ca, cb, overlap;
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    const int la = a.labels[i];
    const int lb = b.labels[i];
    if (labels.count(la)) {
      ++ca[la];
      if (la == lb) ++overlap[la];
    }
    if (labels.count(lb)) ++cb[lb];
  }

  DiceResult res;
  double sum = 0.0;
  for (int k : labels) {
    const std::size_t na = ca.count(k) ? ca[k] : 0;
    const std::size_t nb = cb.count(k) ? cb[k] : 0;
    if (na + nb == 0) continue;  // absent from both: skipped
    const std::size_t ov = overlap.count(k) ? overlap[k] : 0;
    const double score = 2.0 * static_cast<double>(ov) /
                         static_cast<double>(na + nb);
    res.per_label[k] = score;
    sum += score;
  }
  if (res.per_label.empty())
    throw std::invalid_argument("dice: all labels absent");
  res.mean = sum / static_cast<double>(res.per_label.size());
  return res;
}

/// (x - mean) / std per masked voxel (population std); outside-mask voxels
/// are set to 0.
inline ScalarVolume zscore_map(const ScalarVolume& v,
                               const BrainMask* mask = nullptr) {
  const VolumeStats st = volume_stats(v, mask);
  if (st.std == 0.0) throw std::invalid_argument("zscore_map: zero variance");
  ScalarVolume out(v.shape);
  out.spacing = v.spacing;
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    if (mask && mask->inside[i] == 0) continue;
    out.data[i] = (v.data[i] - st.mean) / st.std;
  }
  return out;
}

/// One-sample t-test per voxel: t = mean / (s / sqrt(n)) with sample std s.
/// Voxels outside the mask are set to 0.
inline TMap one_sample_tmap(const std::vector<ScalarVolume>& maps,
                            const BrainMask* mask = nullptr) {
  if (maps.size() < 2)
    throw std::invalid_argument("one_sample_tmap: need at least 2 maps");
  const GridShape shape = maps[0].shape;
  for (const auto& m : maps)
    if (!m.shape.same_spatial(shape))
      throw std::invalid_argument("one_sample_tmap: shape mismatch");
  if (mask && !mask->shape.same_spatial(shape))
    throw std::invalid_argument("one_sample_tmap: mask shape mismatch");

  const int n = static_cast<int>(maps.size());
  TMap tm;
  tm.shape = GridShape{shape.nx, shape.ny, shape.nz, 1};
  tm.n = n;
  tm.t.assign(shape.spatial_count(), 0.0);
  const double inf = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < tm.t.size(); ++i) {
    if (mask && mask->inside[i] == 0) continue;
    double sum = 0.0;
    for (const auto& m : maps) sum += m.data[i];
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto& m : maps) {
      const double d = m.data[i] - mean;
      ss += d * d;
    }
    const double s = std::sqrt(ss / (n - 1));
    if (s == 0.0) {
      tm.t[i] = mean == 0.0 ? 0.0 : (mean > 0.0 ? inf : -inf);
    } else {
      tm.t[i] = mean / (s / std::sqrt(static_cast<double>(n)));
    }
  }
  return tm;
}

/// Counts voxels with t strictly greater than T and reports the peak value.
inline ThresholdReport threshold_report(const TMap& tm, double threshold) {
  ThresholdReport rep;
  rep.threshold = threshold;
  rep.peak = -std::numeric_limits<double>::infinity();
  for (double t : tm.t) {
    if (t > threshold) ++rep.count;
    rep.peak = std::max(rep.peak, t);
  }
  return rep;
}

/// Voxels supra-threshold in both maps: tmA > TA and tmB > TB.
inline std::size_t overlap_count(const TMap& tma, double ta, const TMap& tmb,
                                 double tb) {
  if (!tma.shape.same_spatial(tmb.shape))
    throw std::invalid_argument("overlap_count: shape mismatch");
  std::size_t n = 0;
  for (std::size_t i = 0; i < tma.t.size(); ++i)
    if (tma.t[i] > ta && tmb.t[i] > tb) ++n;
  return n;
}

}  // namespace fcreg
