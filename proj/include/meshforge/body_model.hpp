#pragma once

#include <array>
#include <filesystem>
#include <utility>
#include <vector>

#include "meshforge/types.hpp"

namespace meshforge {

// Shape coefficients: 10 PCA weights, zero vector = mean shape.
struct BodyShape {
  Vec10 beta = Vec10::Zero();

  static BodyShape zero() { return BodyShape{}; }
};

// Per-joint axis-angle rotations. Magnitudes are kept in [0, pi] (axis is
// flipped when reducing), which the factory functions enforce on ingestion.
struct BodyPose {
  Vec3 root_rotation = Vec3::Zero();
  Points joint_rotations{0, 3};  // K x 3, joint j stored at row j-1

  static BodyPose rest(int joint_count = 24);
  // Builds a pose from raw axis-angle rows (root first), normalizing each
  // rotation into the [0, pi] ball.
  static BodyPose from_flat(const VecX& flat);

  int joint_count() const { return 1 + static_cast<int>(joint_rotations.rows()); }
  Vec3 rotation(int joint) const {
    return joint == 0 ? root_rotation : Vec3(joint_rotations.row(joint - 1));
  }
  // Root-first flattened axis-angle vector of length 3*joint_count.
  VecX flatten() const;
  // All rotations as a joint_count x 3 matrix (row 0 = root).
  Points rotation_rows() const;
};

// Rest mesh with skinning data. Immutable after finalize().
struct BodyTemplate {
  Points rest_vertices;           // N x 3
  Faces faces;                    // triangles into rest_vertices
  std::vector<int> parents;       // per joint, root points at itself
  MatX skinning_weights;          // N x J, rows sum to 1
  MatX shape_basis;               // 3N x 10, vertex i occupies rows 3i..3i+2
  MatX joint_regressor;           // J x N, rows sum to 1
  std::vector<int> metric_joint_map;  // 14 joints used by evaluation protocols

  // Derived by finalize().
  Points rest_joints;   // J x 3 = joint_regressor * rest_vertices
  std::vector<int> fk_order;  // topological order, root first
  std::vector<std::vector<std::pair<int, Scalar>>> vertex_weights;  // nonzeros per vertex
  std::vector<std::vector<std::pair<int, Scalar>>> regressor_entries;  // nonzeros per joint

  int vertex_count() const { return static_cast<int>(rest_vertices.rows()); }
  int joint_count() const { return static_cast<int>(parents.size()); }

  // Validates every invariant (throws ValidationError naming the failed one)
  // and computes the derived members.
  void finalize();
};

struct SkinnedMesh {
  Points vertices;  // N x 3, faces shared with the originating template
};

// Q x 3 regressed skeleton joints.
using Joints3D = Points;

struct WeakPerspectiveCamera {
  Scalar scale = 1.0;            // pixels per meter after projection
  Mat3 rotation = Mat3::Identity();
  Vec2 translation = Vec2::Zero();  // pixels

  void validate() const;  // orthonormality, det +1, scale > 0
};

struct Keypoints2D {
  Points2 points;       // Q x 2 pixels
  BoolArray visibility;  // Q
};

// --- rotations ---------------------------------------------------------

// Axis-angle -> rotation matrix. The zero vector maps to the identity.
Mat3 rodrigues(const Vec3& axis_angle);

// dR/d(axis_angle_i) for i = 0,1,2.
std::array<Mat3, 3> rodrigues_jacobian(const Vec3& axis_angle);

// Reduces the magnitude into [0, pi], flipping the axis when needed.
// Vectors already in range are returned unchanged (bit for bit).
Vec3 normalize_axis_angle(const Vec3& v);

// Inverse of rodrigues (magnitude in [0, pi]).
Vec3 rotation_log(const Mat3& rotation);

// --- kinematics and skinning -------------------------------------------

// Rigid transform rotating by `rotation` about `center`.
Mat4 rotation_about(const Vec3& center, const Mat3& rotation);

// Global rigid transform per joint. Each local rotation acts about the
// joint's rest position, so the all-zero pose yields exact identities and
// the blend transforms G_k used by skinning coincide with these.
std::vector<Mat4> forward_kinematics(const BodyTemplate& tmpl, const BodyPose& pose);

// Raw variant used where poses come from unconstrained regression.
std::vector<Mat4> forward_kinematics(const Points& rotations, const Points& rest_joints,
                                     const std::vector<int>& parents,
                                     const std::vector<int>& fk_order);

// Rest-pose-factored linear blend skinning.
SkinnedMesh skin(const BodyTemplate& tmpl, const BodyShape& shape, const BodyPose& pose);

// Skins only the listed vertices given precomputed joint transforms.
Points skin_vertex_subset(const BodyTemplate& tmpl, const Vec10& beta,
                          const std::vector<Mat4>& joint_transforms,
                          const std::vector<int>& vertex_indices);

// joints = joint_regressor * vertices.
Joints3D regress_joints(const SkinnedMesh& mesh, const BodyTemplate& tmpl);

// Select the 14 metric joints of a 24-joint set.
Joints3D metric_joints(const Joints3D& joints, const std::vector<int>& metric_joint_map);

// 2DJ = s * drop_z(R * 3DJ) + t. Visibility is all-true here.
Keypoints2D project_weak_perspective(const Joints3D& joints, const WeakPerspectiveCamera& cam);

// --- templates ----------------------------------------------------------

enum class TemplateDetail { Low, Medium };

// Capsule-limb humanoid, ~1.7 m tall T-pose, 24 joints in the standard
// SMPL tree layout, pelvis exactly at the origin. Shape basis dims:
// 0 = height, 1 = girth, 2 = limb length, 3..9 = localized scalings.
BodyTemplate procedural_template(TemplateDetail detail = TemplateDetail::Low);

BodyTemplate load_template(const std::filesystem::path& path);
void save_template(const BodyTemplate& tmpl, const std::filesystem::path& path);

// Wavefront OBJ export, vertices and faces only.
void save_obj(const Points& vertices, const Faces& faces, const std::filesystem::path& path);

}  // namespace meshforge
