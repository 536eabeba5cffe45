#include <cmath>
#include <unordered_map>

#include "meshforge/error.hpp"
#include "net_internal.hpp"

namespace meshforge {

namespace {

constexpr int kPhi = RecoveryVector::kSize;

int sign_of(Scalar v) { return v > 0 ? 1 : (v < 0 ? -1 : 0); }

// Forward pieces shared by the loss value and its gradient.
struct BodyEval {
  std::vector<Mat4> locals;      // per joint
  std::vector<Mat4> globals;
  std::vector<int> support;      // vertices the joint regressor touches
  std::unordered_map<int, int> support_index;
  std::vector<Eigen::Matrix<Scalar, 3, 4>> blend;  // per support vertex
  Points shaped;                 // support x 3 (rest + shape offset)
  Points posed;                  // support x 3
  Points joints;                 // J x 3
};

BodyEval evaluate_body(const BodyTemplate& tmpl, const VecX& theta, const Vec10& beta) {
  const int joints = tmpl.joint_count();
  if (theta.size() != 3 * joints)
    throw DimensionError("phi theta length " + std::to_string(theta.size()) +
                         " does not match the template's " + std::to_string(3 * joints) +
                         " rotation coordinates");
  BodyEval ev;
  ev.locals.resize(joints);
  ev.globals.resize(joints);
  for (int q : tmpl.fk_order) {
    ev.locals[q] = rotation_about(tmpl.rest_joints.row(q), rodrigues(theta.segment<3>(3 * q)));
    ev.globals[q] = tmpl.parents[q] == q ? ev.locals[q]
                                         : Mat4(ev.globals[tmpl.parents[q]] * ev.locals[q]);
  }
  for (const auto& row : tmpl.regressor_entries)
    for (const auto& [vertex, weight] : row)
      if (ev.support_index.emplace(vertex, static_cast<int>(ev.support.size())).second)
        ev.support.push_back(vertex);

  const int ns = static_cast<int>(ev.support.size());
  ev.blend.resize(ns);
  ev.shaped.resize(ns, 3);
  ev.posed.resize(ns, 3);
  for (int s = 0; s < ns; ++s) {
    int i = ev.support[s];
    Eigen::Matrix<Scalar, 3, 4> blend = Eigen::Matrix<Scalar, 3, 4>::Zero();
    for (const auto& [k, w] : tmpl.vertex_weights[i]) blend += w * ev.globals[k].topRows<3>();
    ev.blend[s] = blend;
    Vec3 shaped = Vec3(tmpl.rest_vertices.row(i)) + tmpl.shape_basis.middleRows<3>(3 * i) * beta;
    ev.shaped.row(s) = shaped;
    ev.posed.row(s) = blend.leftCols<3>() * shaped + blend.col(3);
  }
  ev.joints = Points::Zero(joints, 3);
  for (int q = 0; q < joints; ++q)
    for (const auto& [vertex, weight] : tmpl.regressor_entries[q])
      ev.joints.row(q) += weight * ev.posed.row(ev.support_index.at(vertex));
  return ev;
}

struct LossWork {
  FrameLossBreakdown breakdown;
  // caches needed by the backward pass
  BodyEval body;
  Mat3 r_global;
  Scalar scale = 1;
  Points centered;    // J x 3 pelvis-centered predicted joints
  Points cam_joints;  // J x 3 rotated into the camera frame
  Points gt_centered;
  Points2 residual2d;  // gt - predicted keypoints
};

LossWork frame_loss_forward(const RecoveryVector& phi, const AnnotatedFrame& gt,
                            const BodyTemplate& tmpl, bool delta3d) {
  const int joints = tmpl.joint_count();
  if (gt.joints3d.rows() != joints || gt.keypoints2d.points.rows() != joints)
    throw DimensionError("annotation joint count does not match the template");

  LossWork w;
  w.body = evaluate_body(tmpl, phi.theta, phi.beta);
  w.r_global = rodrigues(phi.global_rotation);
  w.scale = phi.scale();

  w.centered = w.body.joints.rowwise() - w.body.joints.row(0);
  w.cam_joints = w.centered * w.r_global.transpose();
  w.gt_centered = gt.joints3d.rowwise() - gt.joints3d.row(0);

  w.residual2d.resize(joints, 2);
  for (int q = 0; q < joints; ++q) {
    Vec2 pred = w.scale * Vec2(w.cam_joints.row(q).head<2>()) + phi.translation;
    Vec2 r = Vec2(gt.keypoints2d.points.row(q)) - pred;
    if (!gt.keypoints2d.visibility(q)) r.setZero();  // masking operator
    w.residual2d.row(q) = r;
    w.breakdown.proj += std::abs(r.x()) + std::abs(r.y());
  }
  w.breakdown.joint3d = (w.gt_centered - w.cam_joints).squaredNorm();
  w.breakdown.smpl = (phi.theta - gt.theta).squaredNorm() + (phi.beta - gt.beta).squaredNorm();
  w.breakdown.total =
      w.breakdown.proj + (delta3d ? w.breakdown.joint3d + w.breakdown.smpl : 0.0);
  return w;
}

}  // namespace

FrameLossBreakdown frame_loss(const RecoveryVector& phi, const AnnotatedFrame& gt,
                              const BodyTemplate& tmpl, bool delta3d) {
  return frame_loss_forward(phi, gt, tmpl, delta3d).breakdown;
}

FrameLossBreakdown frame_loss_grad(const RecoveryVector& phi, const AnnotatedFrame& gt,
                                   const BodyTemplate& tmpl, bool delta3d, VecX& dphi) {
  if (dphi.size() != kPhi) dphi = VecX::Zero(kPhi);
  LossWork w = frame_loss_forward(phi, gt, tmpl, delta3d);
  const int joints = tmpl.joint_count();
  const Scalar delta = delta3d ? 1.0 : 0.0;

  // gradient of L_proj through the weak-perspective projection
  Scalar dscale = 0;
  Vec2 dtrans = Vec2::Zero();
  Points dcam = Points::Zero(joints, 3);
  for (int q = 0; q < joints; ++q) {
    Vec2 dpred(-sign_of(w.residual2d(q, 0)), -sign_of(w.residual2d(q, 1)));
    // residual = gt - (s xy + t); d|r|/dpred = -sign(r)
    dscale += dpred.dot(Vec2(w.cam_joints.row(q).head<2>()));
    dtrans += dpred;
    dcam(q, 0) += w.scale * dpred.x();
    dcam(q, 1) += w.scale * dpred.y();
  }
  // gradient of L_3Djoint
  dcam += delta * 2.0 * (w.cam_joints - w.gt_centered);

  // through the global rotation: cam = R * centered
  Mat3 dr = Mat3::Zero();
  Points dcentered(joints, 3);
  for (int q = 0; q < joints; ++q) {
    Vec3 dc = dcam.row(q);
    dr += dc * Vec3(w.centered.row(q)).transpose();
    dcentered.row(q) = w.r_global.transpose() * dc;
  }
  auto rjac = rodrigues_jacobian(phi.global_rotation);
  for (int i = 0; i < 3; ++i)
    dphi(RecoveryVector::kThetaSize + 10 + i) += (dr.array() * rjac[i].array()).sum();

  // pelvis centering: centered_q = joints_q - joints_0
  Points djoints = dcentered;
  djoints.row(0) -= dcentered.colwise().sum();

  // joints = regressor-weighted posed support vertices
  const int ns = static_cast<int>(w.body.support.size());
  Points dposed = Points::Zero(ns, 3);
  for (int q = 0; q < joints; ++q)
    for (const auto& [vertex, weight] : tmpl.regressor_entries[q])
      dposed.row(w.body.support_index.at(vertex)) += weight * djoints.row(q);

  // posed = blend.lin * shaped + blend.col3
  std::vector<Mat4> dglobals(static_cast<std::size_t>(joints), Mat4::Zero());
  Vec10 dbeta = Vec10::Zero();
  for (int s = 0; s < ns; ++s) {
    int i = w.body.support[s];
    Vec3 dp = dposed.row(s);
    Vec3 dshaped = w.body.blend[s].leftCols<3>().transpose() * dp;
    dbeta += tmpl.shape_basis.middleRows<3>(3 * i).transpose() * dshaped;
    Eigen::Matrix<Scalar, 3, 4> dblend;
    dblend.leftCols<3>() = dp * Vec3(w.body.shaped.row(s)).transpose();
    dblend.col(3) = dp;
    for (const auto& [k, weight] : tmpl.vertex_weights[i])
      dglobals[static_cast<std::size_t>(k)].topRows<3>() += weight * dblend;
  }

  // reverse the kinematic chain: global_q = global_parent * local_q
  VecX dtheta = VecX::Zero(3 * joints);
  for (auto it = tmpl.fk_order.rbegin(); it != tmpl.fk_order.rend(); ++it) {
    int q = *it;
    Mat4 dlocal;
    if (tmpl.parents[q] == q) {
      dlocal = dglobals[static_cast<std::size_t>(q)];
    } else {
      dlocal = w.body.globals[tmpl.parents[q]].transpose() *
               dglobals[static_cast<std::size_t>(q)];
      dglobals[static_cast<std::size_t>(tmpl.parents[q])] +=
          dglobals[static_cast<std::size_t>(q)] * w.body.locals[q].transpose();
    }
    // local = [R | p - R p]: both the linear part and the translation feed R
    Vec3 p = tmpl.rest_joints.row(q);
    Mat3 drot = dlocal.topLeftCorner<3, 3>() - dlocal.topRightCorner<3, 1>() * p.transpose();
    auto jac = rodrigues_jacobian(phi.theta.segment<3>(3 * q));
    for (int i = 0; i < 3; ++i) dtheta(3 * q + i) = (drot.array() * jac[i].array()).sum();
  }

  // L_smpl
  dtheta += delta * 2.0 * (phi.theta - gt.theta);
  dbeta += delta * 2.0 * (phi.beta - gt.beta);

  dphi.head<RecoveryVector::kThetaSize>() += dtheta;
  dphi.segment<10>(RecoveryVector::kThetaSize) += dbeta;
  dphi.segment<2>(RecoveryVector::kThetaSize + 13) += dtrans;
  dphi(RecoveryVector::kThetaSize + 15) += dscale * w.scale;  // through exp
  return w.breakdown;
}

Scalar clip_loss(std::span<const RecoveryVector> phis, std::span<const AnnotatedFrame> gt,
                 const BodyTemplate& tmpl, Scalar lambda, bool delta3d) {
  if (phis.empty() || phis.size() != gt.size())
    throw DimensionError("clip_loss needs one prediction per ground-truth frame");
  Scalar total = 0;
  for (std::size_t t = 0; t < phis.size(); ++t) {
    FrameLossBreakdown b = frame_loss(phis[t], gt[t], tmpl, delta3d);
    total += lambda * b.total;
  }
  for (std::size_t t = 0; t + 1 < phis.size(); ++t)
    total += (phis[t + 1].beta - phis[t].beta).squaredNorm();
  return total;
}

RecoveryVector extract_recovery_vector(const AnnotatedFrame& frame) {
  RecoveryVector r;
  if (frame.theta.size() != RecoveryVector::kThetaSize)
    throw DimensionError("annotation theta length does not match the recovery vector layout");
  r.theta = frame.theta;
  r.beta = frame.beta;
  r.global_rotation = rotation_log(camera_rotation(frame.camera));

  // least-squares weak-perspective fit of the pelvis-centered camera-frame
  // joints to the recorded keypoints
  Points centered = frame.joints3d.rowwise() - frame.joints3d.row(0);
  const Eigen::Index q = centered.rows();
  Vec2 mean_xy = Vec2::Zero(), mean_kp = Vec2::Zero();
  for (Eigen::Index i = 0; i < q; ++i) {
    mean_xy += Vec2(centered.row(i).head<2>());
    mean_kp += Vec2(frame.keypoints2d.points.row(i));
  }
  mean_xy /= static_cast<Scalar>(q);
  mean_kp /= static_cast<Scalar>(q);
  Scalar num = 0, den = 0;
  for (Eigen::Index i = 0; i < q; ++i) {
    Vec2 x = Vec2(centered.row(i).head<2>()) - mean_xy;
    Vec2 k = Vec2(frame.keypoints2d.points.row(i)) - mean_kp;
    num += x.dot(k);
    den += x.squaredNorm();
  }
  Scalar scale = den > 1e-12 ? num / den : 1.0;
  scale = std::max<Scalar>(scale, 1e-6);
  r.scale_raw = std::log(scale);
  r.translation = mean_kp - scale * mean_xy;
  return r;
}

}  // namespace meshforge
