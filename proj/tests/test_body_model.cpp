#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "meshforge/body_model.hpp"
#include "meshforge/error.hpp"
#include "meshforge/rng.hpp"

using namespace meshforge;
namespace fs = std::filesystem;

namespace {

BodyTemplate chain_template() {
  // 3-joint chain along +x with one vertex pinned to each joint
  BodyTemplate t;
  t.rest_vertices.resize(3, 3);
  t.rest_vertices << 0, 0, 0, 1, 0, 0, 2, 0, 0;
  t.faces.resize(0, 3);
  t.parents = {0, 0, 1};
  t.skinning_weights = MatX::Identity(3, 3);
  t.shape_basis = MatX::Zero(9, 10);
  t.joint_regressor = MatX::Identity(3, 3);
  t.finalize();
  return t;
}

bool exactly_equal(const Points& a, const Points& b) {
  return a.rows() == b.rows() && (a.array() == b.array()).all();
}

}  // namespace

TEST_CASE("rodrigues zero vector is the identity") {
  CHECK((rodrigues(Vec3::Zero()) - Mat3::Identity()).norm() == 0.0);
}

TEST_CASE("rodrigues quarter turn about z") {
  Mat3 r = rodrigues(Vec3(0, 0, M_PI / 2));
  Vec3 mapped = r * Vec3(1, 0, 0);
  CHECK((mapped - Vec3(0, 1, 0)).norm() < 1e-12);
}

TEST_CASE("rodrigues matches quaternion-built rotations") {
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    Vec3 axis = rng.unit_vector();
    Scalar angle = 0.7;
    Mat3 ours = rodrigues(angle * axis);
    Mat3 ref = Eigen::AngleAxis<Scalar>(angle, axis).toRotationMatrix();
    CHECK((ours - ref).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("rodrigues outputs are orthonormal with det +1") {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    Vec3 v = rng.uniform(0, 4.0) * rng.unit_vector();
    Mat3 r = rodrigues(v);
    CHECK((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(std::abs(r.determinant() - 1.0) < 1e-10);
    CHECK(std::abs(std::acos(std::clamp((r.trace() - 1) / 2, -1.0, 1.0)) -
                   std::min(v.norm(), 2 * M_PI - v.norm())) < 1e-7);
  }
}

TEST_CASE("rodrigues jacobian matches central differences") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    Vec3 v = trial == 0 ? Vec3::Zero() : Vec3(rng.uniform(0, 2.5) * rng.unit_vector());
    auto jac = rodrigues_jacobian(v);
    const Scalar h = 1e-6;
    for (int i = 0; i < 3; ++i) {
      Vec3 e = Vec3::Unit(i);
      Mat3 fd = (rodrigues(v + h * e) - rodrigues(v - h * e)) / (2 * h);
      CHECK((fd - jac[i]).cwiseAbs().maxCoeff() < 1e-7);
    }
  }
}

TEST_CASE("normalize_axis_angle") {
  Vec3 inside(0.1, -0.2, 0.3);
  CHECK((normalize_axis_angle(inside).array() == inside.array()).all());

  Vec3 big = (M_PI + 0.5) * Vec3(0, 0, 1);
  Vec3 wrapped = normalize_axis_angle(big);
  CHECK(wrapped.norm() <= M_PI + 1e-12);
  CHECK((rodrigues(wrapped) - rodrigues(big)).cwiseAbs().maxCoeff() < 1e-10);

  Vec3 full_turn = (2 * M_PI + 0.3) * Vec3(1, 0, 0);
  Vec3 w2 = normalize_axis_angle(full_turn);
  CHECK(w2.norm() == doctest::Approx(0.3).epsilon(1e-9));
  CHECK((rodrigues(w2) - rodrigues(full_turn)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("forward kinematics identity and rigid cases") {
  BodyTemplate t = chain_template();
  auto id = forward_kinematics(t, BodyPose::rest(3));
  for (const Mat4& m : id) CHECK((m - Mat4::Identity()).norm() == 0.0);

  BodyPose rooted = BodyPose::rest(3);
  rooted.root_rotation = Vec3(0.3, -0.2, 0.9);
  auto fk = forward_kinematics(t, rooted);
  for (const Mat4& m : fk) CHECK((m - fk[0]).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("forward kinematics hand-composed chain") {
  BodyTemplate t = chain_template();
  BodyPose pose = BodyPose::rest(3);
  pose.joint_rotations.row(0) = Vec3(0, 0, M_PI / 2);  // bend middle joint
  auto fk = forward_kinematics(t, pose);
  Vec3 leaf = fk[2].topLeftCorner<3, 3>() * Vec3(2, 0, 0) + fk[2].topRightCorner<3, 1>();
  CHECK((leaf - Vec3(1, 1, 0)).norm() < 1e-12);
}

TEST_CASE("forward kinematics rejects joint count mismatch") {
  BodyTemplate t = chain_template();
  CHECK_THROWS_AS(forward_kinematics(t, BodyPose::rest(4)), DimensionError);
}

TEST_CASE("skin: rest pose is a bit-exact fixed point") {
  BodyTemplate t = procedural_template();
  SkinnedMesh m = skin(t, BodyShape::zero(), BodyPose::rest(24));
  CHECK(exactly_equal(m.vertices, t.rest_vertices));
}

TEST_CASE("skin: root rotation is a rigid motion") {
  BodyTemplate t = procedural_template();
  BodyPose pose = BodyPose::rest(24);
  pose.root_rotation = Vec3(0, 0, M_PI / 2);
  SkinnedMesh m = skin(t, BodyShape::zero(), pose);
  Mat3 r = rodrigues(pose.root_rotation);
  for (Eigen::Index i = 0; i < t.rest_vertices.rows(); ++i) {
    Vec3 expect = r * Vec3(t.rest_vertices.row(i));
    CHECK((Vec3(m.vertices.row(i)) - expect).norm() < 1e-10);
  }
}

TEST_CASE("skin: root-rotation equivariance") {
  BodyTemplate t = procedural_template();
  Rng rng(3);
  BodyPose pose = BodyPose::rest(24);
  for (Eigen::Index j = 0; j < pose.joint_rotations.rows(); ++j)
    pose.joint_rotations.row(j) = 0.25 * rng.unit_vector();
  BodyPose rooted = pose;
  rooted.root_rotation = Vec3(0.4, 0.6, -0.2);
  SkinnedMesh plain = skin(t, BodyShape::zero(), pose);
  SkinnedMesh rot = skin(t, BodyShape::zero(), rooted);
  Mat3 r = rodrigues(rooted.root_rotation);
  Scalar max_err = 0;
  for (Eigen::Index i = 0; i < plain.vertices.rows(); ++i)
    max_err = std::max(max_err,
                       (Vec3(rot.vertices.row(i)) - r * Vec3(plain.vertices.row(i))).norm());
  CHECK(max_err < 1e-9);
}

TEST_CASE("skin: linear shape blend slice") {
  BodyTemplate t = procedural_template();
  BodyShape s;
  s.beta(0) = 1.0;
  SkinnedMesh m = skin(t, s, BodyPose::rest(24));
  Points expect = t.rest_vertices;
  for (Eigen::Index i = 0; i < expect.rows(); ++i)
    expect.row(i) += t.shape_basis.block<3, 1>(3 * i, 0).transpose();
  CHECK(exactly_equal(m.vertices, expect));
}

TEST_CASE("regress_joints basics and oracle") {
  BodyTemplate t = procedural_template();
  SkinnedMesh rest{t.rest_vertices};
  Joints3D joints = regress_joints(rest, t);
  CHECK((joints - t.rest_joints).cwiseAbs().maxCoeff() < 1e-12);

  // rigid equivariance
  Mat3 r = rodrigues(Vec3(0.3, 0.1, -0.8));
  Vec3 shift(0.5, -2.0, 1.0);
  SkinnedMesh moved;
  moved.vertices = (t.rest_vertices * r.transpose()).rowwise() + shift.transpose();
  Joints3D moved_joints = regress_joints(moved, t);
  Scalar max_err = 0;
  for (Eigen::Index q = 0; q < joints.rows(); ++q)
    max_err = std::max(max_err,
                       (Vec3(moved_joints.row(q)) - (r * Vec3(joints.row(q)) + shift)).norm());
  CHECK(max_err < 1e-9);

  // explicit double-loop oracle on a random mesh
  Rng rng(17);
  SkinnedMesh random;
  random.vertices.resize(t.vertex_count(), 3);
  for (Eigen::Index i = 0; i < random.vertices.rows(); ++i)
    random.vertices.row(i) = Vec3(rng.normal(), rng.normal(), rng.normal());
  Joints3D got = regress_joints(random, t);
  for (int q = 0; q < t.joint_count(); ++q) {
    Vec3 expect = Vec3::Zero();
    for (int i = 0; i < t.vertex_count(); ++i)
      expect += t.joint_regressor(q, i) * Vec3(random.vertices.row(i));
    CHECK((Vec3(got.row(q)) - expect).norm() < 1e-12);
  }
}

TEST_CASE("weak perspective projection") {
  Joints3D j(1, 3);
  j << 1, 2, 3;
  WeakPerspectiveCamera cam;
  Keypoints2D kp = project_weak_perspective(j, cam);
  CHECK((Vec2(kp.points.row(0)) - Vec2(1, 2)).norm() == 0.0);
  CHECK(kp.visibility(0));

  cam.scale = 2.0;
  cam.translation = Vec2(10, 10);
  kp = project_weak_perspective(j, cam);
  CHECK((Vec2(kp.points.row(0)) - Vec2(12, 14)).norm() == 0.0);
}

TEST_CASE("weak perspective is 2D-Lipschitz with constant s") {
  Rng rng(23);
  for (int trial = 0; trial < 25; ++trial) {
    WeakPerspectiveCamera cam;
    cam.scale = rng.uniform(0.5, 3.0);
    cam.rotation = rng.rotation();
    cam.translation = Vec2(rng.normal(), rng.normal());
    Joints3D j(6, 3);
    for (Eigen::Index q = 0; q < 6; ++q) j.row(q) = Vec3(rng.normal(), rng.normal(), rng.normal());
    Keypoints2D kp = project_weak_perspective(j, cam);
    for (Eigen::Index a = 0; a < 6; ++a)
      for (Eigen::Index b = a + 1; b < 6; ++b) {
        Scalar d2 = (kp.points.row(a) - kp.points.row(b)).norm();
        Scalar d3 = (j.row(a) - j.row(b)).norm();
        CHECK(d2 <= cam.scale * d3 + 1e-9);
      }
  }
}

TEST_CASE("weak perspective is affine in the joints") {
  Rng rng(29);
  WeakPerspectiveCamera cam;
  cam.scale = 1.7;
  cam.rotation = rng.rotation();
  cam.translation = Vec2(3, -4);
  Joints3D j1(5, 3), j2(5, 3);
  for (Eigen::Index q = 0; q < 5; ++q) {
    j1.row(q) = Vec3(rng.normal(), rng.normal(), rng.normal());
    j2.row(q) = Vec3(rng.normal(), rng.normal(), rng.normal());
  }
  Scalar a = 0.3;
  Joints3D mix = a * j1 + (1 - a) * j2;
  Keypoints2D kmix = project_weak_perspective(mix, cam);
  Keypoints2D k1 = project_weak_perspective(j1, cam);
  Keypoints2D k2 = project_weak_perspective(j2, cam);
  Points2 expect = a * k1.points + (1 - a) * k2.points;
  CHECK((kmix.points - expect).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("procedural template invariants") {
  BodyTemplate t = procedural_template();
  CHECK(t.vertex_count() >= 300);
  CHECK(t.joint_count() == 24);
  CHECK(t.metric_joint_map.size() == 14);
  // finalize() already validated all structural invariants
  for (int j = 0; j < 24; ++j) {
    Scalar err = (t.rest_joints.row(j) - (t.joint_regressor * t.rest_vertices).row(j)).norm();
    CHECK(err == 0.0);
  }
}

TEST_CASE("procedural template medium detail is denser") {
  BodyTemplate low = procedural_template(TemplateDetail::Low);
  BodyTemplate med = procedural_template(TemplateDetail::Medium);
  CHECK(med.vertex_count() > low.vertex_count());
}

TEST_CASE("height coefficient grows the bounding box") {
  BodyTemplate t = procedural_template();
  BodyShape tall;
  tall.beta(0) = 1.0;
  SkinnedMesh base = skin(t, BodyShape::zero(), BodyPose::rest(24));
  SkinnedMesh grown = skin(t, tall, BodyPose::rest(24));
  Scalar h0 = base.vertices.col(2).maxCoeff() - base.vertices.col(2).minCoeff();
  Scalar h1 = grown.vertices.col(2).maxCoeff() - grown.vertices.col(2).minCoeff();
  CHECK(h1 > h0);
}

TEST_CASE("template save/load round trip is bit-identical") {
  BodyTemplate t = procedural_template();
  fs::path path = fs::temp_directory_path() / "meshforge_template_rt.json";
  save_template(t, path);
  BodyTemplate l = load_template(path);
  CHECK(exactly_equal(l.rest_vertices, t.rest_vertices));
  CHECK((l.faces.array() == t.faces.array()).all());
  CHECK(l.parents == t.parents);
  CHECK((l.skinning_weights.array() == t.skinning_weights.array()).all());
  CHECK((l.shape_basis.array() == t.shape_basis.array()).all());
  CHECK((l.joint_regressor.array() == t.joint_regressor.array()).all());
  CHECK(l.metric_joint_map == t.metric_joint_map);
  fs::remove(path);
}

TEST_CASE("template validation rejects bad weight rows") {
  BodyTemplate t = procedural_template();
  fs::path path = fs::temp_directory_path() / "meshforge_template_bad.json";
  t.skinning_weights(0, 0) = 0.9;  // first vertex originally has weight 1 on one joint
  t.skinning_weights(0, 1) = 0.0;
  CHECK_THROWS_AS(t.finalize(), ValidationError);
  save_template(t, path);
  CHECK_THROWS_WITH_AS(load_template(path), doctest::Contains("skinning weights row 0"),
                       ValidationError);
  fs::remove(path);
}

TEST_CASE("truncated template file reports the byte offset") {
  BodyTemplate t = procedural_template();
  fs::path path = fs::temp_directory_path() / "meshforge_template_trunc.json";
  save_template(t, path);
  auto size = fs::file_size(path);
  fs::resize_file(path, size / 2);
  CHECK_THROWS_WITH_AS(load_template(path), doctest::Contains("at byte"), IoError);
  fs::remove(path);
}

TEST_CASE("obj export") {
  BodyTemplate t = chain_template();
  fs::path path = fs::temp_directory_path() / "meshforge_chain.obj";
  Faces f(1, 3);
  f << 0, 1, 2;
  save_obj(t.rest_vertices, f, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "v 0 0 0");
  fs::remove(path);
}
