// Command-line driver for the FC-guided deformable registration library.
//
// Subcommands:
//   synth     generate a synthetic phantom dataset
//   register  optimize a displacement field for a T1 + fMRI pair
//   warp      apply a stored field to a volume
//   fcmap     export per-cube local-FC histograms as structured text
//   dice      label overlap between two segmentations
//   tmap      one-sample group t-map with a threshold report

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "fcreg/fcreg.hpp"

namespace {

using namespace fcreg;

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Text reports are written through a temp file + rename, like the NIfTI
// writer, so readers never observe torn output.
void write_text_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << content;
    if (!out) throw std::runtime_error("write error " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::set<int> parse_label_list(const std::string& csv) {
  std::set<int> labels;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    labels.insert(std::stoi(item));
  }
  return labels;
}

int run_synth(const std::string& out_dir, const PhantomSpec& spec) {
  std::filesystem::create_directories(out_dir);
  const Phantom ph = make_phantom(spec);
  const std::filesystem::path dir(out_dir);
  write_nifti(ph.fixed_t1, (dir / "fixed_t1.nii").string());
  write_nifti(ph.moving_t1, (dir / "moving_t1.nii").string());
  write_nifti(ph.fixed_fmri, (dir / "fixed_fmri.nii").string());
  write_nifti(ph.moving_fmri, (dir / "moving_fmri.nii").string());
  write_nifti(ph.labels_fixed, (dir / "labels_fixed.nii").string());
  write_nifti(ph.labels_moving, (dir / "labels_moving.nii").string());
  write_nifti(ph.truth, (dir / "truth_field.nii").string());
  write_nifti(ph.mask, (dir / "mask.nii").string());
  std::cout << "phantom written to " << out_dir << "\n";
  return 0;
}

int run_register(const std::string& fixed_t1_path,
                 const std::string& moving_t1_path,
                 const std::string& fixed_fmri_path,
                 const std::string& moving_fmri_path,
                 const std::string& config_path, const std::string& out_field,
                 const std::string& out_warped_t1,
                 const std::string& out_warped_fmri,
                 const std::string& loss_log) {
  const RunConfig cfg =
      config_path.empty() ? RunConfig{} : load_config(config_path);
  cfg.validate();

  const ScalarVolume fixed_t1 = read_nifti_scalar(fixed_t1_path);
  const ScalarVolume moving_t1 = read_nifti_scalar(moving_t1_path);
  const TimeSeriesVolume fixed_fmri = read_nifti_series(fixed_fmri_path);
  const TimeSeriesVolume moving_fmri = read_nifti_series(moving_fmri_path);

  const RegistrationResult res =
      register_volumes(fixed_t1, moving_t1, fixed_fmri, moving_fmri,
                       cfg.weights, cfg.fc, cfg.opt, cfg.downsample_factor);

  write_nifti(res.field, out_field);
  if (!out_warped_t1.empty())
    write_nifti(warp_scalar(moving_t1, res.field), out_warped_t1);
  if (!out_warped_fmri.empty()) {
    const DisplacementField coarse =
        downsample_field(res.field, cfg.downsample_factor);
    write_nifti(warp_time_series(moving_fmri, coarse), out_warped_fmri);
  }
  if (!loss_log.empty()) {
    std::ostringstream log;
    for (std::size_t i = 0; i < res.history.size(); ++i) {
      const LossBreakdown& b = res.history[i];
      log << "iter=" << (i + 1) << " t1_sim=" << format_real(b.t1_sim)
          << " f_sim=" << format_real(b.f_sim)
          << " smooth=" << format_real(b.smooth)
          << " total=" << format_real(b.total) << "\n";
    }
    write_text_atomic(loss_log, log.str());
  }
  if (!res.history.empty())
    std::cout << "final total loss " << format_real(res.history.back().total)
              << "\n";
  return 0;
}

int run_warp(const std::string& field_path, const std::string& in_path,
             const std::string& out_path, int downsample) {
  DisplacementField field = read_nifti_field(field_path);
  if (downsample > 1) field = downsample_field(field, downsample);
  NiftiVolume input = read_nifti(in_path);
  if (auto* sv = std::get_if<ScalarVolume>(&input)) {
    write_nifti(warp_scalar(*sv, field), out_path);
  } else if (auto* tv = std::get_if<TimeSeriesVolume>(&input)) {
    write_nifti(warp_time_series(*tv, field), out_path);
  } else {
    throw std::runtime_error("warp: input must be a 3D or 4D image");
  }
  return 0;
}

int run_fcmap(const std::string& in_path, int w, const std::string& out_path) {
  const TimeSeriesVolume v = read_nifti_series(in_path);
  FCConfig cfg;
  cfg.w = w;
  cfg.soft = false;  // reporting uses hard counts
  cfg.validate();

  const CubeGrid grid = make_cube_grid(v.shape, cfg.w);
  std::ostringstream out;
  out << "w=" << cfg.w << " bins=" << cfg.bins << " mode=hard"
      << " shape=" << v.shape.nx << "x" << v.shape.ny << "x" << v.shape.nz
      << "x" << v.shape.nt << " cubes=" << grid.cubes.size() << "\n";
  for (const CubeRegion& cube : grid.cubes) {
    const auto corr = fcreg::detail::cube_correlations(v, cube, cfg);
    const FCHistogram h = fc_histogram(corr, cfg, cube.center);
    out << "center=" << cube.center.x << "," << cube.center.y << ","
        << cube.center.z << " start=" << cube.start.x << "," << cube.start.y
        << "," << cube.start.z << " extent=" << cube.extent.x << ","
        << cube.extent.y << "," << cube.extent.z << " counts=";
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
      if (i) out << ",";
      out << format_real(h.counts[i]);
    }
    out << "\n";
  }
  write_text_atomic(out_path, out.str());
  return 0;
}

int run_dice(const std::string& a_path, const std::string& b_path,
             const std::string& labels_csv) {
  const LabelVolume a = read_nifti_labels(a_path);
  const LabelVolume b = read_nifti_labels(b_path);
  std::set<int> labels;
  if (!labels_csv.empty()) {
    labels = parse_label_list(labels_csv);
  } else {
    for (int k : a.labels)
      if (k > 0) labels.insert(k);
    for (int k : b.labels)
      if (k > 0) labels.insert(k);
  }
  if (labels.empty()) throw std::runtime_error("dice: no positive labels");
  const DiceResult res = dice(a, b, labels);
  for (const auto& [k, score] : res.per_label)
    std::cout << "label_" << k << "=" << format_real(score) << "\n";
  std::cout << "mean=" << format_real(res.mean) << "\n";
  return 0;
}

int run_tmap(const std::vector<std::string>& inputs, double threshold,
             const std::string& out_path, const std::string& report_path) {
  std::vector<ScalarVolume> maps;
  maps.reserve(inputs.size());
  for (const auto& p : inputs) maps.push_back(read_nifti_scalar(p));
  const TMap tm = one_sample_tmap(maps);
  const ThresholdReport rep = threshold_report(tm, threshold);

  if (!out_path.empty()) {
    ScalarVolume tv(tm.shape);
    tv.data = tm.t;
    write_nifti(tv, out_path);
  }
  std::ostringstream out;
  out << "n_maps=" << tm.n << "\n"
      << "threshold=" << format_real(rep.threshold) << "\n"
      << "count=" << rep.count << "\n"
      << "peak=" << format_real(rep.peak) << "\n";
  if (!report_path.empty())
    write_text_atomic(report_path, out.str());
  else
    std::cout << out.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FC-guided deformable registration of T1w and fMRI volumes"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic phantom");
  std::string synth_dir;
  PhantomSpec spec;
  synth->add_option("--out-dir", synth_dir, "Output directory")->required();
  synth->add_option("--nx", spec.nx, "Voxels along x");
  synth->add_option("--ny", spec.ny, "Voxels along y");
  synth->add_option("--nz", spec.nz, "Voxels along z");
  synth->add_option("--timepoints", spec.timepoints, "fMRI time points");
  synth->add_option("--seed", spec.seed, "RNG seed");
  synth->add_option("--max-displacement", spec.max_displacement,
                    "Peak truth-field magnitude in voxels");
  synth->add_option("--n-regions", spec.n_regions, "Number of parcels");
  synth->add_option("--noise-std", spec.noise_std, "fMRI noise std");

  // register
  auto* reg = app.add_subcommand("register", "Register a moving pair onto a fixed pair");
  std::string fixed_t1, moving_t1, fixed_fmri, moving_fmri, config_path;
  std::string out_field, out_warped_t1, out_warped_fmri, loss_log;
  reg->add_option("--fixed-t1", fixed_t1)->required();
  reg->add_option("--moving-t1", moving_t1)->required();
  reg->add_option("--fixed-fmri", fixed_fmri)->required();
  reg->add_option("--moving-fmri", moving_fmri)->required();
  reg->add_option("--config", config_path, "Run configuration file");
  reg->add_option("--out-field", out_field)->required();
  reg->add_option("--out-warped-t1", out_warped_t1);
  reg->add_option("--out-warped-fmri", out_warped_fmri);
  reg->add_option("--loss-log", loss_log, "Per-iteration loss breakdown");

  // warp
  auto* warp = app.add_subcommand("warp", "Apply a displacement field");
  std::string warp_field, warp_in, warp_out;
  int warp_downsample = 1;
  warp->add_option("--field", warp_field)->required();
  warp->add_option("--in", warp_in)->required();
  warp->add_option("--out", warp_out)->required();
  warp->add_option("--downsample", warp_downsample,
                   "Downsample the field by this factor first");

  // fcmap
  auto* fcmap = app.add_subcommand("fcmap", "Per-cube local-FC histograms");
  std::string fcmap_in, fcmap_out;
  int fcmap_w = 21;
  fcmap->add_option("--in", fcmap_in)->required();
  fcmap->add_option("--w", fcmap_w, "Cube side length (odd)");
  fcmap->add_option("--out", fcmap_out)->required();

  // dice
  auto* dice_cmd = app.add_subcommand("dice", "Label overlap scores");
  std::string dice_a, dice_b, dice_labels;
  dice_cmd->add_option("--a", dice_a)->required();
  dice_cmd->add_option("--b", dice_b)->required();
  dice_cmd->add_option("--labels", dice_labels,
                       "Comma-separated labels (default: all present)");

  // tmap
  auto* tmap = app.add_subcommand("tmap", "One-sample group t-map");
  std::vector<std::string> tmap_inputs;
  double tmap_threshold = 0.0;
  std::string tmap_out, tmap_report;
  tmap->add_option("--inputs", tmap_inputs, "Subject maps")
      ->required()
      ->expected(-1);
  tmap->add_option("--threshold", tmap_threshold)->required();
  tmap->add_option("--out", tmap_out, "Write the t-map volume here");
  tmap->add_option("--report", tmap_report, "Write the threshold report here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return run_synth(synth_dir, spec);
    if (reg->parsed())
      return run_register(fixed_t1, moving_t1, fixed_fmri, moving_fmri,
                          config_path, out_field, out_warped_t1,
                          out_warped_fmri, loss_log);
    if (warp->parsed())
      return run_warp(warp_field, warp_in, warp_out, warp_downsample);
    if (fcmap->parsed()) return run_fcmap(fcmap_in, fcmap_w, fcmap_out);
    if (dice_cmd->parsed()) return run_dice(dice_a, dice_b, dice_labels);
    if (tmap->parsed())
      return run_tmap(tmap_inputs, tmap_threshold, tmap_out, tmap_report);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
