#include "meshforge/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include <Eigen/SVD>
#include <json.hpp>

#include "meshforge/error.hpp"

namespace meshforge {

namespace {

void require_matching(std::span<const Points> pred, std::span<const Points> gt,
                      const char* what) {
  if (pred.size() != gt.size())
    throw DimensionError(std::string(what) + ": frame counts differ (" +
                         std::to_string(pred.size()) + " vs " + std::to_string(gt.size()) + ")");
  if (pred.empty()) throw DimensionError(std::string(what) + ": no frames");
  for (std::size_t f = 0; f < pred.size(); ++f)
    if (pred[f].rows() != gt[f].rows())
      throw DimensionError(std::string(what) + ": point counts differ at frame " +
                           std::to_string(f) + " (" + std::to_string(pred[f].rows()) + " vs " +
                           std::to_string(gt[f].rows()) + ")");
}

Scalar row_norm_sum(const Points& a, const Points& b, int p) {
  Scalar s = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    Vec3 d = a.row(i) - b.row(i);
    s += (p == 1) ? d.lpNorm<1>() : d.norm();
  }
  return s;
}

}  // namespace

Points SimilarityTransform::apply(const Points& p) const {
  Points out(p.rows(), 3);
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    out.row(i) = scale * (rotation * Vec3(p.row(i))) + translation;
  return out;
}

Scalar mpjpe(std::span<const Points> pred, std::span<const Points> gt) {
  require_matching(pred, gt, "mpjpe");
  Scalar sum = 0;
  Eigen::Index joints = 0;
  for (std::size_t f = 0; f < pred.size(); ++f) {
    sum += row_norm_sum(pred[f], gt[f], 2);
    joints += pred[f].rows();
  }
  return sum / static_cast<Scalar>(joints);
}

ProcrustesResult procrustes_align(const Points& pred, const Points& gt) {
  if (pred.rows() != gt.rows())
    throw DimensionError("procrustes: point counts differ");
  const Eigen::Index n = pred.rows();
  if (n < 3) throw DegeneracyError("procrustes needs at least 3 points");

  Vec3 mu_p = pred.colwise().mean();
  Vec3 mu_g = gt.colwise().mean();
  Points pc = pred.rowwise() - mu_p.transpose();
  Points gc = gt.rowwise() - mu_g.transpose();

  Mat3 cov = (gc.transpose() * pc) / static_cast<Scalar>(n);
  Scalar var_p = pc.squaredNorm() / static_cast<Scalar>(n);

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3& d = svd.singularValues();
  if (d(1) <= 1e-12 * std::max<Scalar>(d(0), 1e-300) || var_p <= 0)
    throw DegeneracyError("procrustes: point configuration is rank-deficient (collinear or "
                          "coincident points)");

  Vec3 signs(1, 1, (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1 : 1);
  SimilarityTransform t;
  t.rotation = svd.matrixU() * signs.asDiagonal() * svd.matrixV().transpose();
  t.scale = d.dot(signs) / var_p;
  t.translation = mu_g - t.scale * (t.rotation * mu_p);

  ProcrustesResult res;
  res.transform = t;
  res.aligned = t.apply(pred);
  return res;
}

Scalar pa_mpjpe(std::span<const Points> pred, std::span<const Points> gt) {
  require_matching(pred, gt, "pa_mpjpe");
  Scalar total = 0;
  for (std::size_t f = 0; f < pred.size(); ++f) {
    ProcrustesResult res = procrustes_align(pred[f], gt[f]);
    Scalar aligned_ssd = (res.aligned - gt[f]).squaredNorm();
    Scalar raw_ssd = (pred[f] - gt[f]).squaredNorm();
    // the identity transform is always feasible, so alignment cannot hurt
    if (aligned_ssd > raw_ssd + 1e-9 * (1.0 + raw_ssd))
      throw NumericError("procrustes alignment increased the residual at frame " +
                         std::to_string(f));
    total += row_norm_sum(res.aligned, gt[f], 2) / static_cast<Scalar>(pred[f].rows());
  }
  return total / static_cast<Scalar>(pred.size());
}

Scalar mpvpe(std::span<const Points> pred, std::span<const Points> gt, bool normalized) {
  require_matching(pred, gt, "mpvpe");
  const Scalar m = static_cast<Scalar>(pred.size());
  const Scalar n = static_cast<Scalar>(pred.front().rows());
  Scalar sum = 0;
  for (std::size_t f = 0; f < pred.size(); ++f) sum += row_norm_sum(pred[f], gt[f], 2);
  sum /= m;
  if (normalized) sum /= n;
  return sum;
}

Scalar mrvpv(std::span<const Points> pred, int p) {
  if (p != 1 && p != 2) throw ValidationError("mrvpv: p must be 1 or 2");
  if (pred.size() < 2) throw DimensionError("mrvpv needs at least 2 frames");
  const Scalar m = static_cast<Scalar>(pred.size());
  Scalar sum = 0;
  for (std::size_t f = 0; f + 1 < pred.size(); ++f) sum += row_norm_sum(pred[f + 1], pred[f], p);
  return sum / m;  // divides by M, not M-1, matching the definition
}

Scalar mrsv(std::span<const VecX> betas, int p) {
  if (p != 1 && p != 2) throw ValidationError("mrsv: p must be 1 or 2");
  if (betas.size() < 2) throw DimensionError("mrsv needs at least 2 frames");
  for (const VecX& b : betas)
    if (b.size() != 10) throw DimensionError("mrsv: every beta must have 10 entries");
  const Scalar m = static_cast<Scalar>(betas.size());
  Scalar sum = 0;
  for (std::size_t f = 0; f + 1 < betas.size(); ++f) {
    VecX d = betas[f + 1] - betas[f];
    sum += (p == 1) ? d.lpNorm<1>() : d.norm();
  }
  return sum / m;
}

std::string metric_report_json(const MetricReport& r) {
  nlohmann::json j{{"mpjpe", r.mpjpe},       {"pa_mpjpe", r.pa_mpjpe}, {"mpvpe", r.mpvpe},
                   {"mrvpv_l1", r.mrvpv_l1}, {"mrvpv_l2", r.mrvpv_l2}, {"mrsv_l1", r.mrsv_l1},
                   {"mrsv_l2", r.mrsv_l2},   {"frame_count", r.frame_count},
                   {"joint_count", r.joint_count}, {"vertex_count", r.vertex_count}};
  return j.dump(2);
}

std::string metric_table(const std::vector<std::pair<std::string, MetricReport>>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(20) << "sequence" << std::right << std::setw(10) << "MPJPE"
      << std::setw(10) << "PA-MPJPE" << std::setw(10) << "MPVPE" << std::setw(10) << "MRSV1"
      << std::setw(10) << "MRSV2" << std::setw(10) << "MRVPV1" << std::setw(10) << "MRVPV2"
      << '\n';
  auto emit = [&out](const std::string& name, const MetricReport& r) {
    out << std::left << std::setw(20) << name << std::right << std::fixed << std::setprecision(2)
        << std::setw(10) << r.mpjpe << std::setw(10) << r.pa_mpjpe << std::setw(10) << r.mpvpe
        << std::setw(10) << r.mrsv_l1 << std::setw(10) << r.mrsv_l2 << std::setw(10) << r.mrvpv_l1
        << std::setw(10) << r.mrvpv_l2 << '\n';
    out.unsetf(std::ios::fixed);
  };
  MetricReport mean;
  for (const auto& [name, r] : rows) {
    emit(name, r);
    mean.mpjpe += r.mpjpe;
    mean.pa_mpjpe += r.pa_mpjpe;
    mean.mpvpe += r.mpvpe;
    mean.mrvpv_l1 += r.mrvpv_l1;
    mean.mrvpv_l2 += r.mrvpv_l2;
    mean.mrsv_l1 += r.mrsv_l1;
    mean.mrsv_l2 += r.mrsv_l2;
  }
  if (!rows.empty()) {
    Scalar k = static_cast<Scalar>(rows.size());
    mean.mpjpe /= k;
    mean.pa_mpjpe /= k;
    mean.mpvpe /= k;
    mean.mrvpv_l1 /= k;
    mean.mrvpv_l2 /= k;
    mean.mrsv_l1 /= k;
    mean.mrsv_l2 /= k;
    emit("mean", mean);
  }
  return out.str();
}

}  // namespace meshforge
