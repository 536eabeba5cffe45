#pragma once

#include <span>
#include <string>
#include <vector>

#include "meshforge/types.hpp"

namespace meshforge {

struct SimilarityTransform {
  Scalar scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Points apply(const Points& p) const;
};

struct ProcrustesResult {
  SimilarityTransform transform;
  Points aligned;  // transform applied to the input
};

struct MetricReport {
  Scalar mpjpe = 0;
  Scalar pa_mpjpe = 0;
  Scalar mpvpe = 0;
  Scalar mrvpv_l1 = 0;
  Scalar mrvpv_l2 = 0;
  Scalar mrsv_l1 = 0;
  Scalar mrsv_l2 = 0;
  int frame_count = 0;
  int joint_count = 0;
  int vertex_count = 0;
};

// Mean Euclidean joint error over frames and joints.
Scalar mpjpe(std::span<const Points> pred, std::span<const Points> gt);

// Least-squares similarity alignment of pred onto gt (reflections excluded).
// Throws DegeneracyError when the point set spans less than a plane.
ProcrustesResult procrustes_align(const Points& pred, const Points& gt);

// Per-frame Procrustes alignment, then MPJPE of the aligned joints.
Scalar pa_mpjpe(std::span<const Points> pred, std::span<const Points> gt);

// (1/M) sum_frames sum_vertices ||v_hat - v||_2; `normalized` divides by N too.
Scalar mpvpe(std::span<const Points> pred, std::span<const Points> gt, bool normalized = true);

// (1/M) sum_{j<M} sum_i ||v_{j+1,i} - v_{j,i}||_p with p in {1,2}. Ground
// truth unused: this measures temporal smoothness of the prediction.
Scalar mrvpv(std::span<const Points> pred, int p);

// (1/M) sum_{i<M} ||beta_{i+1} - beta_i||_p with p in {1,2}.
Scalar mrsv(std::span<const VecX> betas, int p);

std::string metric_report_json(const MetricReport& r);

// Aligned plain-text table: one row per named sequence plus a mean row.
std::string metric_table(const std::vector<std::pair<std::string, MetricReport>>& rows);

}  // namespace meshforge
