#pragma once

#include <cstddef>
#include <iosfwd>
#include <stdexcept>
#include <utility>
#include <vector>

#include "json.hpp"
#include "poseformer/tensor.hpp"

namespace poseformer {

/// Similarity alignment was asked of a configuration with no unique solution.
class AlignmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// PCK thresholds 5, 10, ..., 150 mm.
std::vector<double> auc_thresholds();

/// Mean per-joint Euclidean distance over every sample and joint. Inputs are
/// [N, J, 3] or [J, 3] in millimeters.
double mpjpe(const Tensor<double>& pred, const Tensor<double>& gt);

/// Aligns `pred` [J, 3] onto `gt` with rotation, translation and (optionally)
/// uniform scale minimizing the summed squared distance. Throws AlignmentError
/// when fewer than 3 joints are given or either point set is collinear.
Tensor<double> procrustes_align(const Tensor<double>& pred, const Tensor<double>& gt, bool with_scale = true);

/// MPJPE after per-sample alignment. Samples whose alignment fails contribute
/// their unaligned error; their count lands in `fallbacks` when given.
double p_mpjpe(const Tensor<double>& pred, const Tensor<double>& gt, bool with_scale = true,
               std::size_t* fallbacks = nullptr);

/// Fraction of joints with error <= threshold.
double pck(const Tensor<double>& pred, const Tensor<double>& gt, double threshold_mm = 150.0);

/// Mean PCK over auc_thresholds().
double auc(const Tensor<double>& pred, const Tensor<double>& gt);

/// Mean error per joint index, averaged over samples: J entries.
std::vector<double> per_joint_error(const Tensor<double>& pred, const Tensor<double>& gt);

/// Mean error per distinct frame label, averaged over joints and every sample
/// sharing that label. Returned sorted by label.
std::vector<std::pair<std::size_t, double>> per_frame_error(const Tensor<double>& pred, const Tensor<double>& gt,
                                                            const std::vector<std::size_t>& frames);

struct EvalReport {
  double mpjpe = 0;
  double p_mpjpe = 0;
  double pck150 = 0;
  double auc = 0;
  std::vector<double> per_joint;
  std::vector<std::pair<std::size_t, double>> per_frame;
  std::size_t samples = 0;
  std::size_t alignment_fallbacks = 0;
  bool scale_aligned = true;
  bool flip_averaged = false;

  nlohmann::json to_json() const;
  void write_per_joint_csv(std::ostream& out) const;
  void write_per_frame_csv(std::ostream& out) const;
};

/// Every metric of one prediction stream. `frames` labels each sample for the
/// frame-wise curve; empty labels it by sample index.
EvalReport make_report(const Tensor<double>& pred, const Tensor<double>& gt, const std::vector<std::size_t>& frames = {},
                       bool with_scale = true);

}  // namespace poseformer
