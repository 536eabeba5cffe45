#pragma once

#include <filesystem>
#include <vector>

#include "meshforge/body_model.hpp"
#include "meshforge/types.hpp"

namespace meshforge {

enum class SpringKind { Stretch, Shear, Bend };

struct Spring {
  int i = 0;
  int j = 0;
  Scalar rest_length = 0;
  Scalar stiffness = 0;
  Scalar damping = 0;
  SpringKind kind = SpringKind::Stretch;
};

// Pins hold a particle at an anchor point; the anchor may track a body
// vertex, in which case the caller refreshes anchor/anchor_velocity per frame.
struct PinConstraint {
  int particle = 0;
  Vec3 anchor = Vec3::Zero();
  Vec3 anchor_velocity = Vec3::Zero();
  int body_vertex = -1;
};

struct ClothState {
  VecX masses;        // kg per particle
  Points positions;   // meters
  Points velocities;  // m/s
  std::vector<Spring> springs;
  std::vector<PinConstraint> pins;
  Scalar global_damping = 0.0;  // extra velocity-proportional damping
  Faces faces;                  // grid triangulation, for export and previews

  int particle_count() const { return static_cast<int>(masses.size()); }
  void validate() const;
};

struct GarmentPanel {
  int rows = 0;
  int cols = 0;
  Scalar spacing = 0;   // meters between neighboring particles
  Scalar density = 0;   // kg / m^2
  Vec3 origin = Vec3::Zero();
  Vec3 axis_u = Vec3(1, 0, 0);  // column direction
  Vec3 axis_v = Vec3(0, 1, 0);  // row direction
};

// Paired runs of global particle indices to merge.
struct GarmentSeam {
  std::vector<int> a;
  std::vector<int> b;
};

struct GarmentPattern {
  std::vector<GarmentPanel> panels;
  std::vector<GarmentSeam> seams;
};

struct ClothMaterial {
  Scalar stretch_stiffness = 5000;  // N/m
  Scalar shear_stiffness = 500;
  Scalar bend_stiffness = 10;
  Scalar damping = 1.0;  // per-spring velocity damping
};

struct PinToBody {
  int particle = 0;
  int body_vertex = 0;
};

struct Capsule {
  Vec3 a = Vec3::Zero();
  Vec3 b = Vec3::Zero();
  Scalar radius = 0;
};

struct CapsuleSet {
  std::vector<Capsule> capsules;
};

struct SimConfig {
  Scalar timestep = 1.0 / 60.0;  // seconds
  Vec3 gravity = Vec3(0, 0, -9.81);
  Scalar air_drag = 0.05;        // velocity-proportional, per particle
  Scalar cg_tolerance = 1e-6;    // relative residual
  int cg_max_iters = 500;
  Scalar collision_epsilon = 1e-3;  // meters
  Scalar friction = 0.3;

  void validate() const;
};

struct ForceResult {
  Points forces;  // per particle, internal (spring + spring damping) only
  Scalar energy;  // total elastic energy
};

// Per-spring 3x3 blocks K with dF_i/dx_i = K, dF_i/dx_j = -K (same for v).
struct SpringJacobians {
  std::vector<Mat3> dfdx;
  std::vector<Mat3> dfdv;
};

struct DrapeResult {
  ClothState state;
  bool converged = false;
  Scalar seconds = 0;  // simulated time
};

// Grid panels -> particles, structural/shear/bend springs, seam merging.
ClothState build_garment(const GarmentPattern& pattern, const ClothMaterial& material = {});

ForceResult internal_forces(const ClothState& cloth);

SpringJacobians force_jacobians(const ClothState& cloth);

// One implicit (backward) Euler step with filtered conjugate gradient and
// collision resolution.
ClothState step(const ClothState& cloth, const CapsuleSet& colliders, const SimConfig& cfg);

// Projects penetrating particles to the epsilon offset surface, removes
// the normal velocity component and applies friction to the rest.
ClothState resolve_collisions(const ClothState& cloth, const CapsuleSet& colliders,
                              const SimConfig& cfg);

// Steps until max particle speed < 1e-4 m/s or max_seconds of simulated time.
DrapeResult drape(const ClothState& cloth, const CapsuleSet& colliders, const SimConfig& cfg,
                  Scalar max_seconds);

// Distance from p to the capsule surface (negative inside).
Scalar capsule_signed_distance(const Capsule& c, const Vec3& p);

// One capsule per kinematic-tree bone at the posed joint positions. Radii
// come from the rest-mesh geometry, scaled by the girth coefficient beta[1].
CapsuleSet body_colliders(const BodyTemplate& tmpl, const BodyPose& pose, const BodyShape& shape);

struct GarmentFile {
  GarmentPattern pattern;
  ClothMaterial material;
  std::vector<PinToBody> attachments;
};

GarmentFile load_garment(const std::filesystem::path& path);

}  // namespace meshforge
