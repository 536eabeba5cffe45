#include "meshforge/body_model.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "meshforge/error.hpp"
#include "json_helpers.hpp"

namespace meshforge {

namespace {

// Series-safe coefficients of R = I + a*K + b*K^2 with K = [rho]x.
//   a = sin(t)/t, b = (1-cos(t))/t^2
// fa = a'(t)/t and fb = b'(t)/t are what the Jacobian needs.
struct RodriguesCoeffs {
  Scalar a, b, fa, fb;
};

RodriguesCoeffs rodrigues_coeffs(Scalar t) {
  RodriguesCoeffs c;
  if (t < 1e-4) {
    Scalar t2 = t * t;
    c.a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
    c.b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
    c.fa = -1.0 / 3.0 + t2 / 30.0;
    c.fb = -1.0 / 12.0 + t2 / 180.0;
  } else {
    Scalar s = std::sin(t), co = std::cos(t), t2 = t * t;
    c.a = s / t;
    c.b = (1.0 - co) / t2;
    c.fa = (t * co - s) / (t2 * t);
    c.fb = (t * s - 2.0 * (1.0 - co)) / (t2 * t2);
  }
  return c;
}

}  // namespace

Mat3 rodrigues(const Vec3& axis_angle) {
  Scalar t = axis_angle.norm();
  if (t == 0.0) return Mat3::Identity();
  RodriguesCoeffs c = rodrigues_coeffs(t);
  Mat3 k = cross_matrix(axis_angle);
  return Mat3::Identity() + c.a * k + c.b * (k * k);
}

std::array<Mat3, 3> rodrigues_jacobian(const Vec3& axis_angle) {
  Scalar t = axis_angle.norm();
  RodriguesCoeffs c = rodrigues_coeffs(t);
  Mat3 k = cross_matrix(axis_angle);
  Mat3 k2 = k * k;
  std::array<Mat3, 3> out;
  for (int i = 0; i < 3; ++i) {
    Vec3 e = Vec3::Unit(i);
    Mat3 ei = cross_matrix(e);
    Scalar da = c.fa * axis_angle(i);
    Scalar db = c.fb * axis_angle(i);
    out[i] = da * k + c.a * ei + db * k2 + c.b * (ei * k + k * ei);
  }
  return out;
}

Vec3 normalize_axis_angle(const Vec3& v) {
  Scalar t = v.norm();
  if (!(t > M_PI)) return v;  // already in range: return untouched
  Scalar w = std::fmod(t, 2.0 * M_PI);
  if (w > M_PI) w -= 2.0 * M_PI;  // negative magnitude flips the axis
  return v * (w / t);
}

Vec3 rotation_log(const Mat3& rotation) {
  Eigen::AngleAxis<Scalar> aa(rotation);
  Vec3 v = aa.angle() * aa.axis();
  return normalize_axis_angle(v);
}

BodyPose BodyPose::rest(int joint_count) {
  BodyPose p;
  p.joint_rotations = Points::Zero(joint_count - 1, 3);
  return p;
}

BodyPose BodyPose::from_flat(const VecX& flat) {
  if (flat.size() < 3 || flat.size() % 3 != 0)
    throw DimensionError("pose vector length must be a positive multiple of 3, got " +
                         std::to_string(flat.size()));
  int joints = static_cast<int>(flat.size() / 3);
  BodyPose p;
  p.root_rotation = normalize_axis_angle(flat.head<3>());
  p.joint_rotations.resize(joints - 1, 3);
  for (int j = 1; j < joints; ++j)
    p.joint_rotations.row(j - 1) = normalize_axis_angle(flat.segment<3>(3 * j));
  if (!p.root_rotation.allFinite() || !p.joint_rotations.allFinite())
    throw NumericError("pose contains non-finite rotations");
  return p;
}

VecX BodyPose::flatten() const {
  VecX out(3 * joint_count());
  out.head<3>() = root_rotation;
  for (Eigen::Index j = 0; j < joint_rotations.rows(); ++j)
    out.segment<3>(3 * (j + 1)) = joint_rotations.row(j);
  return out;
}

Points BodyPose::rotation_rows() const {
  Points rows(joint_count(), 3);
  rows.row(0) = root_rotation;
  rows.bottomRows(joint_rotations.rows()) = joint_rotations;
  return rows;
}

void WeakPerspectiveCamera::validate() const {
  if (!(scale > 0)) throw ValidationError("weak-perspective camera scale must be > 0");
  if (((rotation.transpose() * rotation) - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-8)
    throw ValidationError("camera rotation is not orthonormal within 1e-8");
  if (std::abs(rotation.determinant() - 1.0) > 1e-8)
    throw ValidationError("camera rotation determinant differs from +1 by more than 1e-8");
}

void BodyTemplate::finalize() {
  const int n = vertex_count();
  const int j = joint_count();
  if (n == 0) throw ValidationError("template has no vertices");
  if (j == 0) throw ValidationError("template has no joints");
  if (!rest_vertices.allFinite()) throw ValidationError("rest_vertices contain non-finite values");
  if (skinning_weights.rows() != n || skinning_weights.cols() != j)
    throw ValidationError("skinning_weights shape must be N x J");
  if (shape_basis.rows() != 3 * n || shape_basis.cols() != 10)
    throw ValidationError("shape_basis shape must be 3N x 10");
  if (joint_regressor.rows() != j || joint_regressor.cols() != n)
    throw ValidationError("joint_regressor shape must be J x N");

  for (Eigen::Index f = 0; f < faces.rows(); ++f)
    for (int k = 0; k < 3; ++k)
      if (faces(f, k) < 0 || faces(f, k) >= n)
        throw ValidationError("face " + std::to_string(f) + " indexes an invalid vertex");

  int root = -1;
  for (int q = 0; q < j; ++q) {
    if (parents[q] < 0 || parents[q] >= j)
      throw ValidationError("kinematic tree parent index out of range at joint " +
                            std::to_string(q));
    if (parents[q] == q) {
      if (root >= 0) throw ValidationError("kinematic tree has more than one root");
      root = q;
    }
  }
  if (root < 0) throw ValidationError("kinematic tree has no root");
  for (int q = 0; q < j; ++q) {
    int cur = q, hops = 0;
    while (cur != root) {
      cur = parents[cur];
      if (++hops > j) throw ValidationError("kinematic tree contains a cycle");
    }
  }

  for (Eigen::Index i = 0; i < skinning_weights.rows(); ++i) {
    if (skinning_weights.row(i).minCoeff() < -1e-12)
      throw ValidationError("skinning weights must be nonnegative (vertex " + std::to_string(i) +
                            ")");
    Scalar s = skinning_weights.row(i).sum();
    if (std::abs(s - 1.0) > 1e-6)
      throw ValidationError("skinning weights row " + std::to_string(i) + " sums to " +
                            std::to_string(s) + ", expected 1 within 1e-6");
  }
  for (Eigen::Index q = 0; q < joint_regressor.rows(); ++q) {
    if (joint_regressor.row(q).minCoeff() < -1e-12)
      throw ValidationError("joint regressor must be nonnegative (joint " + std::to_string(q) +
                            ")");
    Scalar s = joint_regressor.row(q).sum();
    if (std::abs(s - 1.0) > 1e-6)
      throw ValidationError("joint regressor row " + std::to_string(q) + " sums to " +
                            std::to_string(s) + ", expected 1 within 1e-6");
  }
  for (int idx : metric_joint_map)
    if (idx < 0 || idx >= j) throw ValidationError("metric_joint_map entry out of range");

  rest_joints = joint_regressor * rest_vertices;

  fk_order.clear();
  fk_order.reserve(j);
  fk_order.push_back(root);
  std::vector<bool> placed(j, false);
  placed[root] = true;
  // repeatedly sweep; tree depth is small
  for (int pass = 0; static_cast<int>(fk_order.size()) < j && pass < j; ++pass)
    for (int q = 0; q < j; ++q)
      if (!placed[q] && placed[parents[q]]) {
        placed[q] = true;
        fk_order.push_back(q);
      }

  vertex_weights.assign(n, {});
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < j; ++k)
      if (skinning_weights(i, k) != 0.0) vertex_weights[i].push_back({k, skinning_weights(i, k)});

  regressor_entries.assign(j, {});
  for (int q = 0; q < j; ++q)
    for (int i = 0; i < n; ++i)
      if (joint_regressor(q, i) != 0.0) regressor_entries[q].push_back({i, joint_regressor(q, i)});
}

Mat4 rotation_about(const Vec3& center, const Mat3& rotation) {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = center - rotation * center;
  return m;
}

std::vector<Mat4> forward_kinematics(const Points& rotations, const Points& rest_joints,
                                     const std::vector<int>& parents,
                                     const std::vector<int>& fk_order) {
  const int j = static_cast<int>(parents.size());
  if (rotations.rows() != j)
    throw DimensionError("pose has " + std::to_string(rotations.rows()) + " joints, template has " +
                         std::to_string(j));
  std::vector<Mat4> out(j);
  for (int q : fk_order) {
    Mat4 local = rotation_about(rest_joints.row(q), rodrigues(rotations.row(q)));
    out[q] = (parents[q] == q) ? local : Mat4(out[parents[q]] * local);
  }
  return out;
}

std::vector<Mat4> forward_kinematics(const BodyTemplate& tmpl, const BodyPose& pose) {
  return forward_kinematics(pose.rotation_rows(), tmpl.rest_joints, tmpl.parents, tmpl.fk_order);
}

SkinnedMesh skin(const BodyTemplate& tmpl, const BodyShape& shape, const BodyPose& pose) {
  const int n = tmpl.vertex_count();
  VecX displacement = tmpl.shape_basis * shape.beta;  // 3N
  std::vector<Mat4> transforms = forward_kinematics(tmpl, pose);

  SkinnedMesh mesh;
  mesh.vertices.resize(n, 3);
  Eigen::Matrix<Scalar, 3, 4> blend;
  for (int i = 0; i < n; ++i) {
    blend.setZero();
    for (const auto& [k, w] : tmpl.vertex_weights[i])
      blend += w * transforms[k].topRows<3>();
    Vec3 shaped = Vec3(tmpl.rest_vertices.row(i)) + displacement.segment<3>(3 * i);
    Vec3 v = blend.leftCols<3>() * shaped + blend.col(3);
    if (!v.allFinite())
      throw NumericError("skinning produced a non-finite vertex at index " + std::to_string(i));
    mesh.vertices.row(i) = v;
  }
  return mesh;
}

Points skin_vertex_subset(const BodyTemplate& tmpl, const Vec10& beta,
                          const std::vector<Mat4>& joint_transforms,
                          const std::vector<int>& vertex_indices) {
  Points out(static_cast<Eigen::Index>(vertex_indices.size()), 3);
  Eigen::Matrix<Scalar, 3, 4> blend;
  for (std::size_t s = 0; s < vertex_indices.size(); ++s) {
    int i = vertex_indices[s];
    blend.setZero();
    for (const auto& [k, w] : tmpl.vertex_weights[i])
      blend += w * joint_transforms[k].topRows<3>();
    Vec3 shaped =
        Vec3(tmpl.rest_vertices.row(i)) + tmpl.shape_basis.middleRows<3>(3 * i) * beta;
    out.row(s) = blend.leftCols<3>() * shaped + blend.col(3);
  }
  return out;
}

Joints3D regress_joints(const SkinnedMesh& mesh, const BodyTemplate& tmpl) {
  if (mesh.vertices.rows() != tmpl.vertex_count())
    throw DimensionError("mesh has " + std::to_string(mesh.vertices.rows()) +
                         " vertices, template has " + std::to_string(tmpl.vertex_count()));
  return tmpl.joint_regressor * mesh.vertices;
}

Joints3D metric_joints(const Joints3D& joints, const std::vector<int>& metric_joint_map) {
  Joints3D out(static_cast<Eigen::Index>(metric_joint_map.size()), 3);
  for (std::size_t i = 0; i < metric_joint_map.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = joints.row(metric_joint_map[i]);
  return out;
}

Keypoints2D project_weak_perspective(const Joints3D& joints, const WeakPerspectiveCamera& cam) {
  cam.validate();
  Keypoints2D kp;
  kp.points.resize(joints.rows(), 2);
  for (Eigen::Index q = 0; q < joints.rows(); ++q) {
    Vec3 rotated = cam.rotation * Vec3(joints.row(q));
    kp.points.row(q) = cam.scale * rotated.head<2>() + cam.translation;
  }
  kp.visibility = BoolArray::Constant(joints.rows(), true);
  return kp;
}

// --- procedural template -------------------------------------------------

namespace {

struct MeshAccum {
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> tris;
  std::vector<std::vector<std::pair<int, Scalar>>> weights;
  std::vector<std::array<Vec3, 10>> basis;
  std::vector<int> anchor_ring_start;  // per joint, -1 until set
  int segments = 8;

  explicit MeshAccum(int segs) : anchor_ring_start(24, -1), segments(segs) {}

  int add_vertex(const Vec3& p, std::vector<std::pair<int, Scalar>> w,
                 const std::array<Vec3, 10>& b) {
    verts.push_back(p);
    weights.push_back(std::move(w));
    basis.push_back(b);
    return static_cast<int>(verts.size()) - 1;
  }
};

constexpr Scalar kHeightScale = 0.06;
constexpr Scalar kGirthScale = 0.05;
constexpr Scalar kLimbScale = 0.04;
constexpr Scalar kRegionScale = 0.03;

// Region index (basis dims 3..9) keyed by owning joint.
int region_of(int joint) {
  switch (joint) {
    case 12: case 15: return 3;                      // head
    case 0: case 3: case 6: case 9: case 13: case 14: return 4;  // torso
    case 16: case 18: case 20: return 5;             // left arm
    case 17: case 19: case 21: return 6;             // right arm
    case 1: case 4: case 7: return 7;                // left leg
    case 2: case 5: case 8: return 8;                // right leg
    default: return 9;                               // hands and feet
  }
}

std::array<Vec3, 10> basis_for(const Vec3& pos, const Vec3& radial, const Vec3& axis,
                               Scalar axis_coord, int owner) {
  std::array<Vec3, 10> b;
  b.fill(Vec3::Zero());
  b[0] = Vec3(0, 0, kHeightScale * pos.z());
  b[1] = kGirthScale * radial;
  b[2] = kLimbScale * axis_coord * axis;
  b[region_of(owner)] = kRegionScale * radial;
  return b;
}

void emit_capsule(MeshAccum& acc, int owner, int end_joint, const Vec3& pa, const Vec3& pb,
                  Scalar radius, const std::vector<Scalar>& ring_us) {
  Vec3 d = pb - pa;
  Scalar len = d.norm();
  Vec3 axis = d / len;
  Vec3 d1 = (std::abs(axis.z()) < 0.9) ? Vec3(axis.cross(Vec3(0, 0, 1)).normalized())
                                       : Vec3(axis.cross(Vec3(1, 0, 0)).normalized());
  Vec3 d2 = axis.cross(d1);

  auto end_weights = [&]() -> std::vector<std::pair<int, Scalar>> {
    if (end_joint >= 0) return {{owner, 0.5}, {end_joint, 0.5}};
    return {{owner, 1.0}};
  };

  // start pole
  Vec3 p0 = pa - radius * axis;
  int pole0 = acc.add_vertex(p0, {{owner, 1.0}}, basis_for(p0, -axis, axis, -radius, owner));

  std::vector<std::vector<int>> rings;
  for (Scalar u : ring_us) {
    Vec3 center = pa + u * d;
    std::vector<int> ring(acc.segments);
    for (int s = 0; s < acc.segments; ++s) {
      Scalar ang = 2.0 * M_PI * s / acc.segments;
      Vec3 radial = std::cos(ang) * d1 + std::sin(ang) * d2;
      Vec3 p = center + radius * radial;
      auto w = (u == 1.0) ? end_weights() : std::vector<std::pair<int, Scalar>>{{owner, 1.0}};
      ring[s] = acc.add_vertex(p, std::move(w), basis_for(p, radial, axis, u * len, owner));
    }
    if (acc.anchor_ring_start[owner] < 0 && u == 0.0) acc.anchor_ring_start[owner] = ring[0];
    rings.push_back(std::move(ring));
  }

  Vec3 p1 = pb + radius * axis;
  int pole1 = acc.add_vertex(p1, end_weights(), basis_for(p1, axis, axis, len + radius, owner));

  const int segs = acc.segments;
  for (int s = 0; s < segs; ++s) {
    int t = (s + 1) % segs;
    acc.tris.push_back({pole0, rings.front()[t], rings.front()[s]});
    acc.tris.push_back({pole1, rings.back()[s], rings.back()[t]});
  }
  for (std::size_t r = 0; r + 1 < rings.size(); ++r)
    for (int s = 0; s < segs; ++s) {
      int t = (s + 1) % segs;
      acc.tris.push_back({rings[r][s], rings[r][t], rings[r + 1][t]});
      acc.tris.push_back({rings[r][s], rings[r + 1][t], rings[r + 1][s]});
    }
}

}  // namespace

BodyTemplate procedural_template(TemplateDetail detail) {
  // SMPL-layout kinematic tree; pelvis (root) exactly at the origin, z up,
  // body facing +x, left side on +y. T-pose, about 1.7 m tall.
  static const std::array<int, 24> kParents = {0, 0,  0,  0,  1,  2,  3,  4,
                                               5, 6,  7,  8,  9,  9,  9,  12,
                                               13, 14, 16, 17, 18, 19, 20, 21};
  static const std::array<Vec3, 24> kJoints = {
      Vec3(0, 0, 0),           // 0 pelvis
      Vec3(0, 0.09, -0.06),    // 1 left hip
      Vec3(0, -0.09, -0.06),   // 2 right hip
      Vec3(0, 0, 0.10),        // 3 spine1
      Vec3(0, 0.10, -0.50),    // 4 left knee
      Vec3(0, -0.10, -0.50),   // 5 right knee
      Vec3(0, 0, 0.25),        // 6 spine2
      Vec3(0, 0.10, -0.90),    // 7 left ankle
      Vec3(0, -0.10, -0.90),   // 8 right ankle
      Vec3(0, 0, 0.38),        // 9 spine3
      Vec3(0.12, 0.10, -0.95), // 10 left foot
      Vec3(0.12, -0.10, -0.95),// 11 right foot
      Vec3(0, 0, 0.55),        // 12 neck
      Vec3(0, 0.08, 0.48),     // 13 left collar
      Vec3(0, -0.08, 0.48),    // 14 right collar
      Vec3(0, 0, 0.62),        // 15 head
      Vec3(0, 0.18, 0.50),     // 16 left shoulder
      Vec3(0, -0.18, 0.50),    // 17 right shoulder
      Vec3(0, 0.45, 0.50),     // 18 left elbow
      Vec3(0, -0.45, 0.50),    // 19 right elbow
      Vec3(0, 0.70, 0.50),     // 20 left wrist
      Vec3(0, -0.70, 0.50),    // 21 right wrist
      Vec3(0, 0.80, 0.50),     // 22 left hand
      Vec3(0, -0.80, 0.50),    // 23 right hand
  };
  // Radius of the capsule starting at each *child* joint's bone, keyed by child.
  auto bone_radius = [](int child) -> Scalar {
    switch (child) {
      case 1: case 2: return 0.085;   // pelvis-hip
      case 3: case 6: case 9: return 0.11;  // torso column
      case 4: case 5: return 0.07;    // thigh
      case 7: case 8: return 0.05;    // calf
      case 10: case 11: return 0.045; // ankle-foot
      case 12: return 0.10;           // upper torso to neck
      case 13: case 14: return 0.06;  // collar
      case 15: return 0.05;           // neck
      case 16: case 17: return 0.05;  // collar-shoulder
      case 18: case 19: return 0.045; // upper arm
      case 20: case 21: return 0.035; // forearm
      case 22: case 23: return 0.03;  // wrist-hand
      default: return 0.05;
    }
  };

  const int segments = detail == TemplateDetail::Low ? 8 : 12;
  std::vector<Scalar> ring_us;
  if (detail == TemplateDetail::Low)
    ring_us = {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};
  else
    ring_us = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};

  MeshAccum acc(segments);
  std::array<std::vector<int>, 24> children;
  for (int j = 1; j < 24; ++j) children[kParents[j]].push_back(j);

  for (int j = 0; j < 24; ++j) {
    for (int c : children[j])
      emit_capsule(acc, j, c, kJoints[j], kJoints[c], bone_radius(c), ring_us);
    if (children[j].empty()) {
      // extremity cap owned by the leaf joint, so every joint drives geometry
      Vec3 dir;
      Scalar len, radius;
      if (j == 15) { dir = Vec3(0, 0, 1); len = 0.13; radius = 0.09; }        // skull
      else if (j == 22) { dir = Vec3(0, 1, 0); len = 0.08; radius = 0.025; }  // left fingers
      else if (j == 23) { dir = Vec3(0, -1, 0); len = 0.08; radius = 0.025; } // right fingers
      else { dir = Vec3(1, 0, 0); len = 0.10; radius = 0.035; }               // toes
      emit_capsule(acc, j, -1, kJoints[j], kJoints[j] + len * dir, radius, ring_us);
    }
  }

  const int n = static_cast<int>(acc.verts.size());
  BodyTemplate tmpl;
  tmpl.rest_vertices.resize(n, 3);
  for (int i = 0; i < n; ++i) tmpl.rest_vertices.row(i) = acc.verts[i];
  tmpl.faces.resize(static_cast<Eigen::Index>(acc.tris.size()), 3);
  for (std::size_t f = 0; f < acc.tris.size(); ++f)
    for (int k = 0; k < 3; ++k) tmpl.faces(static_cast<Eigen::Index>(f), k) = acc.tris[f][k];
  tmpl.parents.assign(kParents.begin(), kParents.end());
  tmpl.skinning_weights = MatX::Zero(n, 24);
  for (int i = 0; i < n; ++i)
    for (const auto& [k, w] : acc.weights[i]) tmpl.skinning_weights(i, k) = w;
  tmpl.shape_basis = MatX::Zero(3 * n, 10);
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < 10; ++d) tmpl.shape_basis.block<3, 1>(3 * i, d) = acc.basis[i][d];
  tmpl.joint_regressor = MatX::Zero(24, n);
  for (int j = 0; j < 24; ++j) {
    int start = acc.anchor_ring_start[j];
    for (int s = 0; s < segments; ++s) tmpl.joint_regressor(j, start + s) = 1.0 / segments;
  }
  tmpl.metric_joint_map = {8, 5, 2, 1, 4, 7, 21, 19, 17, 16, 18, 20, 12, 15};
  tmpl.finalize();

  // build-time self-consistency: regressed rest joints match declared ones
  for (int j = 0; j < 24; ++j)
    if ((Vec3(tmpl.rest_joints.row(j)) - kJoints[j]).norm() > 1e-6)
      throw ValidationError("procedural template joint regressor is inconsistent at joint " +
                            std::to_string(j));
  return tmpl;
}

// --- template file I/O ----------------------------------------------------

namespace {

using nlohmann::json;

json sparse_triplets(const MatX& m) {
  json t = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      if (m(i, j) != 0.0) t.push_back(json::array({i, j, m(i, j)}));
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"triplets", std::move(t)}};
}

MatX dense_or_triplets(const json& node, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (node.is_object()) {
    if (!node.contains("triplets")) throw IoError(std::string(what) + ": missing triplets field");
    MatX m = MatX::Zero(rows, cols);
    for (const auto& t : node["triplets"]) {
      if (!t.is_array() || t.size() != 3)
        throw IoError(std::string(what) + ": malformed triplet entry");
      Eigen::Index i = t[0].get<Eigen::Index>(), j = t[1].get<Eigen::Index>();
      if (i < 0 || i >= rows || j < 0 || j >= cols)
        throw IoError(std::string(what) + ": triplet index out of range");
      m(i, j) = t[2].get<Scalar>();
    }
    return m;
  }
  return detail::matrix_from_json<MatX>(node, cols, what);
}

}  // namespace

void save_template(const BodyTemplate& tmpl, const std::filesystem::path& path) {
  const int n = tmpl.vertex_count();
  json doc;
  doc["schema_version"] = 1;
  doc["rest_vertices"] = detail::to_json_points(tmpl.rest_vertices);
  doc["faces"] = detail::to_json_points(tmpl.faces);
  doc["parents"] = tmpl.parents;
  doc["weights"] = sparse_triplets(tmpl.skinning_weights);
  json basis = json::array();
  for (int i = 0; i < n; ++i) {
    json per_vertex = json::array();
    for (int c = 0; c < 3; ++c) {
      json row = json::array();
      for (int d = 0; d < 10; ++d) row.push_back(tmpl.shape_basis(3 * i + c, d));
      per_vertex.push_back(std::move(row));
    }
    basis.push_back(std::move(per_vertex));
  }
  doc["shape_basis"] = std::move(basis);
  doc["joint_regressor"] = sparse_triplets(tmpl.joint_regressor);
  doc["metric_joint_map"] = tmpl.metric_joint_map;
  detail::write_file(path, doc.dump());
}

BodyTemplate load_template(const std::filesystem::path& path) {
  json doc = detail::parse_file(path);
  for (const char* field : {"rest_vertices", "faces", "parents", "weights", "shape_basis",
                            "joint_regressor", "metric_joint_map"})
    if (!doc.contains(field))
      throw IoError("template file " + path.string() + " is missing field '" + field + "'");

  BodyTemplate tmpl;
  tmpl.rest_vertices = detail::matrix_from_json<Points>(doc["rest_vertices"], 3, "rest_vertices");
  tmpl.faces = detail::matrix_from_json<Faces>(doc["faces"], 3, "faces");
  tmpl.parents = doc["parents"].get<std::vector<int>>();
  if (tmpl.parents.size() != 24)
    throw ValidationError("template file must declare 24 joints, got " +
                          std::to_string(tmpl.parents.size()));
  const Eigen::Index n = tmpl.rest_vertices.rows();
  tmpl.skinning_weights = dense_or_triplets(doc["weights"], n, 24, "weights");
  const json& basis = doc["shape_basis"];
  if (!basis.is_array() || static_cast<Eigen::Index>(basis.size()) != n)
    throw IoError("shape_basis must have one entry per vertex");
  tmpl.shape_basis.resize(3 * n, 10);
  for (Eigen::Index i = 0; i < n; ++i) {
    const json& pv = basis[static_cast<std::size_t>(i)];
    if (!pv.is_array() || pv.size() != 3) throw IoError("shape_basis entries must be 3 x 10");
    for (int c = 0; c < 3; ++c) {
      const json& row = pv[static_cast<std::size_t>(c)];
      if (!row.is_array() || row.size() != 10) throw IoError("shape_basis entries must be 3 x 10");
      for (int d = 0; d < 10; ++d) tmpl.shape_basis(3 * i + c, d) = row[d].get<Scalar>();
    }
  }
  tmpl.joint_regressor = dense_or_triplets(doc["joint_regressor"], 24, n, "joint_regressor");
  tmpl.metric_joint_map = doc["metric_joint_map"].get<std::vector<int>>();
  tmpl.finalize();
  return tmpl;
}

void save_obj(const Points& vertices, const Faces& faces, const std::filesystem::path& path) {
  std::ostringstream out;
  out.precision(17);
  for (Eigen::Index i = 0; i < vertices.rows(); ++i)
    out << "v " << vertices(i, 0) << ' ' << vertices(i, 1) << ' ' << vertices(i, 2) << '\n';
  for (Eigen::Index f = 0; f < faces.rows(); ++f)
    out << "f " << faces(f, 0) + 1 << ' ' << faces(f, 1) + 1 << ' ' << faces(f, 2) + 1 << '\n';
  detail::write_file(path, out.str());
}

}  // namespace meshforge
