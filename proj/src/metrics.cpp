#include "poseformer/metrics.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>

namespace poseformer {

namespace {

struct Layout {
  std::size_t samples;
  std::size_t joints;
};

Layout check_pair(const Tensor<double>& pred, const Tensor<double>& gt) {
  if (pred.shape() != gt.shape()) {
    throw DimensionError("prediction " + shape_str(pred.shape()) + " and ground truth " + shape_str(gt.shape()) +
                         " differ in shape");
  }
  if ((pred.rank() != 2 && pred.rank() != 3) || pred.dim(-1) != 3) {
    throw DimensionError("poses must be [J, 3] or [N, J, 3], got " + shape_str(pred.shape()));
  }
  return pred.rank() == 3 ? Layout{pred.dim(0), pred.dim(1)} : Layout{1, pred.dim(0)};
}

double joint_distance(const double* a, const double* b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

}  // namespace

std::vector<double> auc_thresholds() {
  std::vector<double> t;
  for (int mm = 5; mm <= 150; mm += 5) t.push_back(mm);
  return t;
}

double mpjpe(const Tensor<double>& pred, const Tensor<double>& gt) {
  const Layout l = check_pair(pred, gt);
  double total = 0;
  const std::size_t n = l.samples * l.joints;
  for (std::size_t i = 0; i < n; ++i) total += joint_distance(pred.raw() + 3 * i, gt.raw() + 3 * i);
  return total / static_cast<double>(n);
}

Tensor<double> procrustes_align(const Tensor<double>& pred, const Tensor<double>& gt, bool with_scale) {
  if (pred.rank() != 2) throw DimensionError("procrustes_align expects [J, 3], got " + shape_str(pred.shape()));
  const Layout l = check_pair(pred, gt);
  if (l.joints < 3) throw AlignmentError("alignment needs at least 3 joints");

  const Eigen::Map<const Points> x(pred.raw(), static_cast<Eigen::Index>(l.joints), 3);
  const Eigen::Map<const Points> y(gt.raw(), static_cast<Eigen::Index>(l.joints), 3);
  const Eigen::RowVector3d mu_x = x.colwise().mean();
  const Eigen::RowVector3d mu_y = y.colwise().mean();
  const Points xc = x.rowwise() - mu_x;
  const Points yc = y.rowwise() - mu_y;

  auto collinear = [](const Points& p) {
    const Eigen::Vector3d sv = Eigen::JacobiSVD<Eigen::MatrixXd>(p).singularValues();
    return !(sv[0] > 0) || sv[1] <= 1e-9 * sv[0];
  };
  if (collinear(xc) || collinear(yc)) throw AlignmentError("alignment is undetermined for collinear joints");

  const Eigen::Matrix3d h = xc.transpose() * yc;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix3d u = svd.matrixU();
  const Eigen::Matrix3d v = svd.matrixV();
  Eigen::Vector3d d(1, 1, 1);
  if ((v * u.transpose()).determinant() < 0) d[2] = -1;
  const Eigen::Matrix3d r = v * d.asDiagonal() * u.transpose();
  double s = 1.0;
  if (with_scale) s = svd.singularValues().dot(d) / xc.squaredNorm();

  Tensor<double> out({l.joints, 3});
  Eigen::Map<Points> o(out.raw(), static_cast<Eigen::Index>(l.joints), 3);
  o = (s * (xc * r.transpose())).rowwise() + mu_y;
  return out;
}

double p_mpjpe(const Tensor<double>& pred, const Tensor<double>& gt, bool with_scale, std::size_t* fallbacks) {
  const Layout l = check_pair(pred, gt);
  const std::size_t stride = l.joints * 3;
  double total = 0;
  std::size_t failed = 0;
  for (std::size_t i = 0; i < l.samples; ++i) {
    Tensor<double> p({l.joints, 3}, std::vector<double>(pred.raw() + i * stride, pred.raw() + (i + 1) * stride));
    Tensor<double> g({l.joints, 3}, std::vector<double>(gt.raw() + i * stride, gt.raw() + (i + 1) * stride));
    try {
      total += mpjpe(procrustes_align(p, g, with_scale), g);
    } catch (const AlignmentError&) {
      ++failed;
      total += mpjpe(p, g);
    }
  }
  if (fallbacks) *fallbacks = failed;
  return total / static_cast<double>(l.samples);
}

double pck(const Tensor<double>& pred, const Tensor<double>& gt, double threshold_mm) {
  if (!(threshold_mm >= 0)) throw ConfigError("PCK threshold must be non-negative");
  const Layout l = check_pair(pred, gt);
  const std::size_t n = l.samples * l.joints;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (joint_distance(pred.raw() + 3 * i, gt.raw() + 3 * i) <= threshold_mm) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

double auc(const Tensor<double>& pred, const Tensor<double>& gt) {
  const auto grid = auc_thresholds();
  double total = 0;
  for (double t : grid) total += pck(pred, gt, t);
  return total / static_cast<double>(grid.size());
}

std::vector<double> per_joint_error(const Tensor<double>& pred, const Tensor<double>& gt) {
  const Layout l = check_pair(pred, gt);
  std::vector<double> out(l.joints, 0.0);
  for (std::size_t i = 0; i < l.samples; ++i) {
    for (std::size_t j = 0; j < l.joints; ++j) {
      const std::size_t k = 3 * (i * l.joints + j);
      out[j] += joint_distance(pred.raw() + k, gt.raw() + k);
    }
  }
  for (double& v : out) v /= static_cast<double>(l.samples);
  return out;
}

std::vector<std::pair<std::size_t, double>> per_frame_error(const Tensor<double>& pred, const Tensor<double>& gt,
                                                            const std::vector<std::size_t>& frames) {
  const Layout l = check_pair(pred, gt);
  if (frames.size() != l.samples) {
    throw DimensionError("per-frame error got " + std::to_string(frames.size()) + " labels for " +
                         std::to_string(l.samples) + " samples");
  }
  std::map<std::size_t, std::pair<double, std::size_t>> acc;
  for (std::size_t i = 0; i < l.samples; ++i) {
    double sum = 0;
    for (std::size_t j = 0; j < l.joints; ++j) {
      const std::size_t k = 3 * (i * l.joints + j);
      sum += joint_distance(pred.raw() + k, gt.raw() + k);
    }
    auto& slot = acc[frames[i]];
    slot.first += sum / static_cast<double>(l.joints);
    slot.second += 1;
  }
  std::vector<std::pair<std::size_t, double>> out;
  for (const auto& [frame, s] : acc) out.emplace_back(frame, s.first / static_cast<double>(s.second));
  return out;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& [f, e] : per_frame) frames.push_back({f, e});
  return nlohmann::json{{"mpjpe_mm", mpjpe},
                        {"p_mpjpe_mm", p_mpjpe},
                        {"pck150", pck150},
                        {"auc", auc},
                        {"auc_thresholds_mm", auc_thresholds()},
                        {"per_joint_mm", per_joint},
                        {"per_frame_mm", frames},
                        {"samples", samples},
                        {"alignment_fallbacks", alignment_fallbacks},
                        {"alignment_scale", scale_aligned},
                        {"flip_averaged", flip_averaged}};
}

void EvalReport::write_per_joint_csv(std::ostream& out) const {
  out << "joint,mpjpe_mm\n";
  char buf[64];
  for (std::size_t j = 0; j < per_joint.size(); ++j) {
    std::snprintf(buf, sizeof buf, "%.9g", per_joint[j]);
    out << j << ',' << buf << '\n';
  }
}

void EvalReport::write_per_frame_csv(std::ostream& out) const {
  out << "frame,mpjpe_mm\n";
  char buf[64];
  for (const auto& [f, e] : per_frame) {
    std::snprintf(buf, sizeof buf, "%.9g", e);
    out << f << ',' << buf << '\n';
  }
}

EvalReport make_report(const Tensor<double>& pred, const Tensor<double>& gt, const std::vector<std::size_t>& frames,
                       bool with_scale) {
  const Layout l = check_pair(pred, gt);
  EvalReport r;
  r.samples = l.samples;
  r.scale_aligned = with_scale;
  r.mpjpe = mpjpe(pred, gt);
  r.p_mpjpe = p_mpjpe(pred, gt, with_scale, &r.alignment_fallbacks);
  r.pck150 = pck(pred, gt, 150.0);
  r.auc = auc(pred, gt);
  r.per_joint = per_joint_error(pred, gt);
  std::vector<std::size_t> labels = frames;
  if (labels.empty()) {
    labels.resize(l.samples);
    for (std::size_t i = 0; i < l.samples; ++i) labels[i] = i;
  }
  r.per_frame = per_frame_error(pred, gt, labels);
  return r;
}

}  // namespace poseformer
