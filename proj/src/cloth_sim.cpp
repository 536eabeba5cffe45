#include "meshforge/cloth_sim.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "meshforge/error.hpp"
#include "json_helpers.hpp"

namespace meshforge {

void ClothState::validate() const {
  const int p = particle_count();
  if (positions.rows() != p || velocities.rows() != p)
    throw ValidationError("cloth arrays disagree on particle count");
  if (p > 0 && masses.minCoeff() <= 0) throw ValidationError("cloth particle masses must be > 0");
  for (std::size_t s = 0; s < springs.size(); ++s) {
    const Spring& sp = springs[s];
    if (sp.i == sp.j) throw ValidationError("spring " + std::to_string(s) + " connects a particle to itself");
    if (sp.i < 0 || sp.i >= p || sp.j < 0 || sp.j >= p)
      throw ValidationError("spring " + std::to_string(s) + " indexes an invalid particle");
    if (!(sp.rest_length > 0))
      throw ValidationError("spring " + std::to_string(s) + " has nonpositive rest length");
  }
  for (const PinConstraint& pin : pins)
    if (pin.particle < 0 || pin.particle >= p)
      throw ValidationError("pin constraint indexes an invalid particle");
}

void SimConfig::validate() const {
  if (!(timestep > 0)) throw ValidationError("timestep must be > 0");
  if (!(cg_tolerance > 0)) throw ValidationError("cg_tolerance must be > 0");
  if (cg_max_iters <= 0) throw ValidationError("cg_max_iters must be > 0");
  if (!(collision_epsilon > 0)) throw ValidationError("collision_epsilon must be > 0");
}

// --- garment construction -------------------------------------------------

ClothState build_garment(const GarmentPattern& pattern, const ClothMaterial& material) {
  ClothState cloth;
  std::vector<Vec3> positions;
  std::vector<Scalar> masses;
  std::vector<Spring> springs;
  std::vector<std::array<int, 3>> tris;

  for (const GarmentPanel& panel : pattern.panels) {
    if (panel.rows < 2 || panel.cols < 2)
      throw ValidationError("garment panels need at least 2 rows and 2 cols");
    if (!(panel.spacing > 0)) throw ValidationError("garment panel spacing must be > 0");
    const int base = static_cast<int>(positions.size());
    auto at = [&](int r, int c) { return base + r * panel.cols + c; };

    for (int r = 0; r < panel.rows; ++r)
      for (int c = 0; c < panel.cols; ++c) {
        positions.push_back(panel.origin + panel.spacing * (c * panel.axis_u + r * panel.axis_v));
        masses.push_back(0);
      }
    // lump each cell's mass onto its four corners
    const Scalar cell_mass = panel.density * panel.spacing * panel.spacing;
    for (int r = 0; r + 1 < panel.rows; ++r)
      for (int c = 0; c + 1 < panel.cols; ++c)
        for (int dr = 0; dr < 2; ++dr)
          for (int dc = 0; dc < 2; ++dc) masses[at(r + dr, c + dc)] += cell_mass / 4;

    auto add_spring = [&](int i, int j, Scalar k, SpringKind kind) {
      Spring s;
      s.i = i;
      s.j = j;
      s.rest_length = (positions[i] - positions[j]).norm();
      s.stiffness = k;
      s.damping = material.damping;
      s.kind = kind;
      springs.push_back(s);
    };
    for (int r = 0; r < panel.rows; ++r)
      for (int c = 0; c < panel.cols; ++c) {
        if (c + 1 < panel.cols) add_spring(at(r, c), at(r, c + 1), material.stretch_stiffness, SpringKind::Stretch);
        if (r + 1 < panel.rows) add_spring(at(r, c), at(r + 1, c), material.stretch_stiffness, SpringKind::Stretch);
        if (r + 1 < panel.rows && c + 1 < panel.cols) {
          add_spring(at(r, c), at(r + 1, c + 1), material.shear_stiffness, SpringKind::Shear);
          add_spring(at(r, c + 1), at(r + 1, c), material.shear_stiffness, SpringKind::Shear);
        }
        if (c + 2 < panel.cols) add_spring(at(r, c), at(r, c + 2), material.bend_stiffness, SpringKind::Bend);
        if (r + 2 < panel.rows) add_spring(at(r, c), at(r + 2, c), material.bend_stiffness, SpringKind::Bend);
      }
    for (int r = 0; r + 1 < panel.rows; ++r)
      for (int c = 0; c + 1 < panel.cols; ++c) {
        tris.push_back({at(r, c), at(r, c + 1), at(r + 1, c + 1)});
        tris.push_back({at(r, c), at(r + 1, c + 1), at(r + 1, c)});
      }
  }

  const int total = static_cast<int>(positions.size());

  // seams: merge paired particles, keeping the lower index
  std::vector<int> remap(total);
  for (int i = 0; i < total; ++i) remap[i] = i;
  std::set<int> seen;
  for (const GarmentSeam& seam : pattern.seams) {
    if (seam.a.size() != seam.b.size())
      throw ValidationError("seam runs must pair equal numbers of particles");
    for (std::size_t k = 0; k < seam.a.size(); ++k) {
      int pa = seam.a[k], pb = seam.b[k];
      if (pa < 0 || pa >= total || pb < 0 || pb >= total)
        throw ValidationError("seam indexes an invalid particle");
      if (pa == pb) throw ValidationError("seam pairs a particle with itself");
      if (!seen.insert(pa).second || !seen.insert(pb).second)
        throw ValidationError("overlapping seam indices: a particle appears in more than one "
                              "seam pair");
      int keep = std::min(pa, pb), drop = std::max(pa, pb);
      remap[drop] = keep;
      masses[keep] += masses[drop];
    }
  }
  // compress indices
  std::vector<int> final_index(total, -1);
  int kept = 0;
  for (int i = 0; i < total; ++i)
    if (remap[i] == i) final_index[i] = kept++;
  for (int i = 0; i < total; ++i)
    if (remap[i] != i) final_index[i] = final_index[remap[i]];

  cloth.positions.resize(kept, 3);
  cloth.velocities = Points::Zero(kept, 3);
  cloth.masses.resize(kept);
  for (int i = 0; i < total; ++i)
    if (remap[i] == i) {
      cloth.positions.row(final_index[i]) = positions[i];
      cloth.masses(final_index[i]) = masses[i];
    }

  std::set<std::pair<int, int>> spring_keys;
  for (Spring s : springs) {
    s.i = final_index[s.i];
    s.j = final_index[s.j];
    if (s.i == s.j) continue;
    auto key = std::minmax(s.i, s.j);
    if (!spring_keys.insert({key.first, key.second}).second) continue;  // deduplicate
    cloth.springs.push_back(s);
  }

  std::vector<std::array<int, 3>> kept_tris;
  for (auto& t : tris) {
    std::array<int, 3> m{final_index[t[0]], final_index[t[1]], final_index[t[2]]};
    if (m[0] != m[1] && m[1] != m[2] && m[0] != m[2]) kept_tris.push_back(m);
  }
  cloth.faces.resize(static_cast<Eigen::Index>(kept_tris.size()), 3);
  for (std::size_t f = 0; f < kept_tris.size(); ++f)
    for (int k = 0; k < 3; ++k) cloth.faces(static_cast<Eigen::Index>(f), k) = kept_tris[f][k];

  cloth.validate();
  return cloth;
}

// --- forces and jacobians --------------------------------------------------

namespace {

struct SpringGeometry {
  Vec3 unit;
  Scalar length;
};

SpringGeometry spring_geometry(const ClothState& cloth, std::size_t s) {
  const Spring& sp = cloth.springs[s];
  Vec3 d = cloth.positions.row(sp.i) - cloth.positions.row(sp.j);
  Scalar len = d.norm();
  if (len < 1e-9)
    throw DegeneracyError("spring " + std::to_string(s) + " (" + std::to_string(sp.i) + "," +
                          std::to_string(sp.j) + ") has coincident endpoints");
  return {d / len, len};
}

}  // namespace

ForceResult internal_forces(const ClothState& cloth) {
  ForceResult out;
  out.forces = Points::Zero(cloth.particle_count(), 3);
  out.energy = 0;
  for (std::size_t s = 0; s < cloth.springs.size(); ++s) {
    const Spring& sp = cloth.springs[s];
    auto [u, len] = spring_geometry(cloth, s);
    Scalar stretch = len - sp.rest_length;
    out.energy += 0.5 * sp.stiffness * stretch * stretch;
    Vec3 f = -sp.stiffness * stretch * u;
    Vec3 dv = cloth.velocities.row(sp.i) - cloth.velocities.row(sp.j);
    f += -sp.damping * dv.dot(u) * u;
    out.forces.row(sp.i) += f;
    out.forces.row(sp.j) -= f;
  }
  return out;
}

SpringJacobians force_jacobians(const ClothState& cloth) {
  SpringJacobians jac;
  jac.dfdx.resize(cloth.springs.size());
  jac.dfdv.resize(cloth.springs.size());
  for (std::size_t s = 0; s < cloth.springs.size(); ++s) {
    const Spring& sp = cloth.springs[s];
    auto [u, len] = spring_geometry(cloth, s);
    Mat3 uut = u * u.transpose();
    jac.dfdx[s] = -sp.stiffness * ((1.0 - sp.rest_length / len) * (Mat3::Identity() - uut) + uut);
    jac.dfdv[s] = -sp.damping * uut;
  }
  return jac;
}

// --- implicit step ----------------------------------------------------------

namespace {

// y += J z restricted to the spring blocks (dF_i/dx_i = K, dF_i/dx_j = -K).
void accumulate_blocks(const ClothState& cloth, const std::vector<Mat3>& blocks,
                       const Points& z, Points& y) {
  for (std::size_t s = 0; s < cloth.springs.size(); ++s) {
    const Spring& sp = cloth.springs[s];
    Vec3 w = blocks[s] * Vec3(z.row(sp.i) - z.row(sp.j));
    y.row(sp.i) += w;
    y.row(sp.j) -= w;
  }
}

void filter_pinned(const ClothState& cloth, Points& z) {
  for (const PinConstraint& pin : cloth.pins) z.row(pin.particle).setZero();
}

Scalar dot(const Points& a, const Points& b) { return (a.array() * b.array()).sum(); }

}  // namespace

ClothState step(const ClothState& cloth, const CapsuleSet& colliders, const SimConfig& cfg) {
  cfg.validate();
  const int p = cloth.particle_count();
  const Scalar h = cfg.timestep;
  const Scalar drag = cfg.air_drag + cloth.global_damping;

  ForceResult internal = internal_forces(cloth);
  Points force = internal.forces;
  for (int i = 0; i < p; ++i)
    force.row(i) += cloth.masses(i) * cfg.gravity - drag * Vec3(cloth.velocities.row(i));

  // Solver variant of the stretch jacobian: the tangential term is clamped
  // to keep A positive definite when springs are compressed.
  SpringJacobians jac;
  jac.dfdx.resize(cloth.springs.size());
  jac.dfdv.resize(cloth.springs.size());
  for (std::size_t s = 0; s < cloth.springs.size(); ++s) {
    const Spring& sp = cloth.springs[s];
    auto [u, len] = spring_geometry(cloth, s);
    Mat3 uut = u * u.transpose();
    Scalar tangential = std::max<Scalar>(1.0 - sp.rest_length / len, 0.0);
    jac.dfdx[s] = -sp.stiffness * (tangential * (Mat3::Identity() - uut) + uut);
    jac.dfdv[s] = -sp.damping * uut;
  }

  Points b = Points::Zero(p, 3);
  accumulate_blocks(cloth, jac.dfdx, cloth.velocities, b);  // Jx * v
  b = h * (force + h * b);
  filter_pinned(cloth, b);

  Points dv = Points::Zero(p, 3);
  if (cloth.springs.empty()) {
    // A is diagonal: solve exactly
    for (int i = 0; i < p; ++i) dv.row(i) = b.row(i) / (cloth.masses(i) + h * drag);
    filter_pinned(cloth, dv);
  } else {
    // A = M - h dF/dv - h^2 dF/dx applied matrix-free
    auto apply_A = [&](const Points& z, Points& out) {
      for (int i = 0; i < p; ++i) out.row(i) = (cloth.masses(i) + h * drag) * z.row(i);
      Points tmp = Points::Zero(p, 3);
      accumulate_blocks(cloth, jac.dfdv, z, tmp);
      out -= h * tmp;
      tmp.setZero();
      accumulate_blocks(cloth, jac.dfdx, z, tmp);
      out -= h * h * tmp;
      filter_pinned(cloth, out);
    };

    // Jacobi preconditioner from the 3x3 block diagonals
    Points diag(p, 3);
    for (int i = 0; i < p; ++i) diag.row(i).setConstant(cloth.masses(i) + h * drag);
    for (std::size_t s = 0; s < cloth.springs.size(); ++s) {
      const Spring& sp = cloth.springs[s];
      Vec3 d = -h * jac.dfdv[s].diagonal() - h * h * jac.dfdx[s].diagonal();
      diag.row(sp.i) += d;
      diag.row(sp.j) += d;
    }

    Points r = b;
    Points z = r.array() / diag.array();
    filter_pinned(cloth, z);
    Points dir = z;
    Points q(p, 3);
    Scalar rz = dot(r, z);
    const Scalar b_norm = std::sqrt(dot(b, b));
    if (b_norm > 0) {
      int it = 0;
      for (; it < cfg.cg_max_iters; ++it) {
        if (std::sqrt(dot(r, r)) <= cfg.cg_tolerance * b_norm) break;
        apply_A(dir, q);
        Scalar alpha = rz / dot(dir, q);
        dv += alpha * dir;
        r -= alpha * q;
        z = r.array() / diag.array();
        filter_pinned(cloth, z);
        Scalar rz_new = dot(r, z);
        dir = z + (rz_new / rz) * dir;
        rz = rz_new;
      }
      if (it == cfg.cg_max_iters && std::sqrt(dot(r, r)) > cfg.cg_tolerance * b_norm)
        throw SolverError("conjugate gradient did not converge within " +
                          std::to_string(cfg.cg_max_iters) + " iterations (relative residual " +
                          std::to_string(std::sqrt(dot(r, r)) / b_norm) + ")");
    }
  }

  ClothState next = cloth;
  next.velocities += dv;
  next.positions += h * next.velocities;
  for (const PinConstraint& pin : next.pins) {
    next.positions.row(pin.particle) = pin.anchor;
    next.velocities.row(pin.particle) = pin.anchor_velocity;
  }
  next = resolve_collisions(next, colliders, cfg);
  if (!next.positions.allFinite() || !next.velocities.allFinite())
    throw NumericError("cloth state contains non-finite values after a step");
  return next;
}

Scalar capsule_signed_distance(const Capsule& c, const Vec3& p) {
  Vec3 ab = c.b - c.a;
  Scalar denom = ab.squaredNorm();
  Scalar t = denom > 0 ? std::clamp((p - c.a).dot(ab) / denom, 0.0, 1.0) : 0.0;
  return (p - (c.a + t * ab)).norm() - c.radius;
}

ClothState resolve_collisions(const ClothState& cloth, const CapsuleSet& colliders,
                              const SimConfig& cfg) {
  if (colliders.capsules.empty()) return cloth;
  ClothState next = cloth;
  const int p = next.particle_count();
  for (int pass = 0; pass < 4; ++pass) {
    bool any = false;
    for (const Capsule& c : colliders.capsules) {
      Vec3 ab = c.b - c.a;
      Scalar denom = ab.squaredNorm();
      for (int i = 0; i < p; ++i) {
        Vec3 x = next.positions.row(i);
        Scalar t = denom > 0 ? std::clamp((x - c.a).dot(ab) / denom, 0.0, 1.0) : 0.0;
        Vec3 closest = c.a + t * ab;
        Vec3 d = x - closest;
        Scalar dist = d.norm();
        if (dist - c.radius >= cfg.collision_epsilon) continue;
        any = true;
        Vec3 n;
        if (dist > 1e-12) {
          n = d / dist;
        } else {
          // on the axis: push out along any perpendicular
          Vec3 axis = denom > 0 ? Vec3(ab.normalized()) : Vec3(0, 0, 1);
          n = std::abs(axis.z()) < 0.9 ? axis.cross(Vec3(0, 0, 1)).normalized()
                                       : axis.cross(Vec3(1, 0, 0)).normalized();
        }
        next.positions.row(i) = closest + (c.radius + cfg.collision_epsilon) * n;
        Vec3 v = next.velocities.row(i);
        Vec3 vt = v - v.dot(n) * n;
        next.velocities.row(i) = (1.0 - cfg.friction) * vt;
      }
    }
    if (!any) break;
  }
  return next;
}

DrapeResult drape(const ClothState& cloth, const CapsuleSet& colliders, const SimConfig& cfg,
                  Scalar max_seconds) {
  DrapeResult result;
  result.state = cloth;
  result.seconds = 0;
  while (result.seconds < max_seconds) {
    result.state = step(result.state, colliders, cfg);
    result.seconds += cfg.timestep;
    Scalar max_speed = 0;
    for (Eigen::Index i = 0; i < result.state.velocities.rows(); ++i)
      max_speed = std::max(max_speed, result.state.velocities.row(i).norm());
    if (max_speed > 1e6)
      throw InstabilityError("cloth speed exceeded 1e6 m/s after " +
                             std::to_string(result.seconds) + " simulated seconds");
    if (max_speed < 1e-4) {
      result.converged = true;
      break;
    }
  }
  return result;
}

// --- body colliders ---------------------------------------------------------

CapsuleSet body_colliders(const BodyTemplate& tmpl, const BodyPose& pose, const BodyShape& shape) {
  std::vector<Mat4> fk = forward_kinematics(tmpl, pose);
  const int joints = tmpl.joint_count();

  Points posed(joints, 3);
  for (int j = 0; j < joints; ++j) {
    Vec3 rest = tmpl.rest_joints.row(j);
    posed.row(j) = fk[j].topLeftCorner<3, 3>() * rest + fk[j].topRightCorner<3, 1>();
  }

  // per-vertex owning joint = argmax skinning weight
  std::vector<int> owner(tmpl.vertex_count());
  for (int i = 0; i < tmpl.vertex_count(); ++i) {
    Eigen::Index best = 0;
    tmpl.skinning_weights.row(i).maxCoeff(&best);
    owner[i] = static_cast<int>(best);
  }

  const Scalar girth = std::max<Scalar>(1.0 + 0.1 * shape.beta(1), 0.1);
  CapsuleSet set;
  for (int j = 0; j < joints; ++j) {
    if (tmpl.parents[j] == j) continue;
    int parent = tmpl.parents[j];
    Vec3 a = tmpl.rest_joints.row(parent), b = tmpl.rest_joints.row(j);
    Vec3 ab = b - a;
    Scalar denom = ab.squaredNorm();
    // median radial distance of the parent's rest vertices along this bone
    std::vector<Scalar> radial;
    for (int i = 0; i < tmpl.vertex_count(); ++i) {
      if (owner[i] != parent) continue;
      Vec3 x = tmpl.rest_vertices.row(i);
      Scalar t = denom > 0 ? (x - a).dot(ab) / denom : 0.0;
      if (t < -0.05 || t > 1.05) continue;
      radial.push_back((x - (a + std::clamp(t, 0.0, 1.0) * ab)).norm());
    }
    Scalar radius = 0.04;
    if (!radial.empty()) {
      std::nth_element(radial.begin(), radial.begin() + radial.size() / 2, radial.end());
      radius = radial[radial.size() / 2];
    }
    Capsule c;
    c.a = posed.row(parent);
    c.b = posed.row(j);
    c.radius = radius * girth;
    set.capsules.push_back(c);
  }
  return set;
}

// --- garment file ------------------------------------------------------------

GarmentFile load_garment(const std::filesystem::path& path) {
  using nlohmann::json;
  json doc = detail::parse_file(path);
  if (!doc.contains("panels")) throw IoError("garment file lacks a panels list");
  GarmentFile out;
  for (const json& p : doc["panels"]) {
    GarmentPanel panel;
    panel.rows = p.at("rows").get<int>();
    panel.cols = p.at("cols").get<int>();
    panel.spacing = p.at("spacing").get<Scalar>();
    panel.density = p.at("density").get<Scalar>();
    if (p.contains("origin")) panel.origin = Vec3(detail::vec_from_json(p["origin"], "origin"));
    if (p.contains("axis_u")) panel.axis_u = Vec3(detail::vec_from_json(p["axis_u"], "axis_u"));
    if (p.contains("axis_v")) panel.axis_v = Vec3(detail::vec_from_json(p["axis_v"], "axis_v"));
    out.pattern.panels.push_back(panel);
  }
  if (doc.contains("seams"))
    for (const json& s : doc["seams"]) {
      GarmentSeam seam;
      seam.a = s.at("a").get<std::vector<int>>();
      seam.b = s.at("b").get<std::vector<int>>();
      out.pattern.seams.push_back(std::move(seam));
    }
  if (doc.contains("material")) {
    const json& m = doc["material"];
    if (m.contains("stretch")) out.material.stretch_stiffness = m["stretch"].get<Scalar>();
    if (m.contains("shear")) out.material.shear_stiffness = m["shear"].get<Scalar>();
    if (m.contains("bend")) out.material.bend_stiffness = m["bend"].get<Scalar>();
    if (m.contains("damping")) out.material.damping = m["damping"].get<Scalar>();
  }
  if (doc.contains("attachments"))
    for (const json& a : doc["attachments"])
      out.attachments.push_back({a.at("particle").get<int>(), a.at("body_vertex").get<int>()});
  return out;
}

}  // namespace meshforge
