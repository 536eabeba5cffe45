#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "meshforge/error.hpp"
#include "meshforge/pose_sequence.hpp"
#include "meshforge/rng.hpp"

using namespace meshforge;
namespace fs = std::filesystem;

namespace {

BodyPose random_pose(Rng& rng, int joints = 24, Scalar spread = 0.6) {
  VecX flat(3 * joints);
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat(i) = rng.uniform(-spread, spread);
  return BodyPose::from_flat(flat);
}

PoseSequence random_sequence(Rng& rng, int frames) {
  PoseSequence s;
  for (int i = 0; i < frames; ++i) s.frames.push_back({random_pose(rng), BodyShape::zero()});
  return s;
}

}  // namespace

TEST_CASE("pose_distance basics") {
  Rng rng(1);
  BodyPose a = random_pose(rng);
  CHECK(pose_distance(a, a) == 0.0);

  BodyPose b = a;
  b.joint_rotations.row(4) += Vec3(0.3, 0, 0).transpose();
  CHECK(pose_distance(a, b) == doctest::Approx(0.3).epsilon(1e-12));

  BodyPose c = random_pose(rng);
  Scalar oracle = (a.flatten() - c.flatten()).norm();
  CHECK(std::abs(pose_distance(a, c) - oracle) < 1e-12);

  CHECK_THROWS_AS(pose_distance(a, random_pose(rng, 20)), DimensionError);
}

TEST_CASE("pose_distance can exclude the root") {
  Rng rng(2);
  BodyPose a = random_pose(rng);
  BodyPose b = a;
  b.root_rotation += Vec3(0.5, 0, 0);
  CHECK(pose_distance(a, b, false) == 0.0);
  CHECK(pose_distance(a, b, true) > 0.0);
}

TEST_CASE("pose_distance is a metric on sampled triples") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    BodyPose a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
    Scalar ab = pose_distance(a, b), ba = pose_distance(b, a);
    Scalar bc = pose_distance(b, c), ac = pose_distance(a, c);
    CHECK(ab >= 0.0);
    CHECK(ab == ba);
    CHECK(ac <= ab + bc + 1e-12);
  }
}

TEST_CASE("distance_matrix structure") {
  Rng rng(4);
  PoseSequence x = random_sequence(rng, 5);
  PoseSequence y = random_sequence(rng, 7);
  DistanceMatrix dxy = distance_matrix(x, y);
  DistanceMatrix dyx = distance_matrix(y, x);
  CHECK(dxy.values.rows() == 5);
  CHECK(dxy.values.cols() == 7);
  CHECK((dxy.values - dyx.values.transpose()).cwiseAbs().maxCoeff() == 0.0);

  DistanceMatrix dxx = distance_matrix(x, x);
  CHECK(dxx.values.diagonal().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("distance_matrix 2x2 hand case") {
  BodyPose zero = BodyPose::rest(2);
  BodyPose px = BodyPose::from_flat((VecX(6) << 0, 0, 0, 0.4, 0, 0).finished());
  BodyPose py = BodyPose::from_flat((VecX(6) << 0, 0, 0, 0, 0.3, 0).finished());
  PoseSequence x{{{zero, {}}, {px, {}}}, 30};
  PoseSequence y{{{py, {}}, {px, {}}}, 30};
  DistanceMatrix d = distance_matrix(x, y);
  CHECK(d.values(0, 0) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(d.values(0, 1) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(d.values(1, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(d.values(1, 1) == 0.0);
}

TEST_CASE("select_contrast_pair") {
  DistanceMatrix d;
  d.values.resize(2, 2);
  d.values << 0, 1, 2, 0;
  ContrastPair p = select_contrast_pair(d);
  CHECK(p.i == 1);
  CHECK(p.j == 0);
  CHECK(p.distance == 2.0);

  d.values.setConstant(3.5);
  p = select_contrast_pair(d);
  CHECK(p.i == 0);
  CHECK(p.j == 0);
  CHECK(p.distance == 3.5);

  DistanceMatrix empty;
  empty.values.resize(0, 0);
  CHECK_THROWS_AS(select_contrast_pair(empty), ValidationError);
}

TEST_CASE("select_contrast_pair matches exhaustive scan") {
  Rng rng(5);
  DistanceMatrix d;
  d.values.resize(50, 40);
  for (Eigen::Index i = 0; i < 50; ++i)
    for (Eigen::Index j = 0; j < 40; ++j) d.values(i, j) = rng.uniform();
  ContrastPair p = select_contrast_pair(d);
  Scalar best = -1;
  int bi = 0, bj = 0;
  for (Eigen::Index i = 0; i < 50; ++i)
    for (Eigen::Index j = 0; j < 40; ++j)
      if (d.values(i, j) > best) {
        best = d.values(i, j);
        bi = static_cast<int>(i);
        bj = static_cast<int>(j);
      }
  CHECK(p.i == bi);
  CHECK(p.j == bj);
  CHECK(p.distance == best);
}

TEST_CASE("frames_for_distance") {
  CHECK(frames_for_distance(0.0) == 10);
  CHECK(frames_for_distance(1.0) == 20);
  CHECK(frames_for_distance(100.0) == 300);
  CHECK_THROWS_AS(frames_for_distance(-1.0), ValidationError);
}

TEST_CASE("interpolate endpoints are bit-exact and midpoint is exact") {
  Rng rng(6);
  BodyPose a = random_pose(rng);
  BodyPose b = random_pose(rng);

  PoseSequence two = interpolate(a, b, 2);
  CHECK((two.frames[0].pose.flatten().array() == a.flatten().array()).all());
  CHECK((two.frames[1].pose.flatten().array() == b.flatten().array()).all());

  PoseSequence three = interpolate(a, b, 3);
  VecX mid = (a.flatten() + b.flatten()) / 2;
  CHECK((three.frames[1].pose.flatten().array() == mid.array()).all());

  CHECK_THROWS_AS(interpolate(a, b, 1), ValidationError);
}

TEST_CASE("interpolation distance to the start is nondecreasing") {
  Rng rng(7);
  BodyPose a = random_pose(rng);
  BodyPose b = random_pose(rng);
  PoseSequence seq = interpolate(a, b, 17);
  Scalar prev = -1;
  for (const PoseFrame& f : seq.frames) {
    Scalar d = pose_distance(f.pose, a);
    CHECK(d >= prev - 1e-12);
    prev = d;
  }
}

TEST_CASE("interpolate holds shape constant") {
  Rng rng(8);
  BodyShape s;
  s.beta(3) = 1.25;
  PoseSequence seq = interpolate(random_pose(rng), random_pose(rng), 6, s);
  for (const PoseFrame& f : seq.frames) CHECK((f.shape.beta.array() == s.beta.array()).all());
}

TEST_CASE("prepend_leadin") {
  Rng rng(9);
  PoseSequence seq = random_sequence(rng, 8);
  BodyPose tpose = BodyPose::rest(24);

  PoseSequence same = prepend_leadin(seq, tpose, 0);
  CHECK(same.frames.size() == seq.frames.size());

  PoseSequence led = prepend_leadin(seq, tpose, 5);
  CHECK(led.frames.size() == seq.frames.size() + 4);
  CHECK((led.frames[0].pose.flatten().array() == tpose.flatten().array()).all());

  // splice continuity: the junction step is no rougher than the lead-in steps
  Scalar max_lead = 0;
  for (int i = 0; i + 1 < 5; ++i)
    max_lead = std::max(max_lead, pose_distance(led.frames[i].pose, led.frames[i + 1].pose));
  Scalar splice = pose_distance(led.frames[3].pose, led.frames[4].pose);
  CHECK(splice <= max_lead * 1.5 + 1e-12);
}

TEST_CASE("pose sequence file round trip") {
  Rng rng(10);
  PoseSequence seq = random_sequence(rng, 5);
  seq.fps = 24.0;
  for (std::size_t i = 0; i < seq.frames.size(); ++i) seq.frames[i].shape.beta(1) = Scalar(i);
  fs::path path = fs::temp_directory_path() / "meshforge_seq_rt.jsonl";
  save_pose_sequence(seq, path);
  PoseSequence loaded = load_pose_sequence(path);
  CHECK(loaded.fps == seq.fps);
  REQUIRE(loaded.frames.size() == seq.frames.size());
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    CHECK((loaded.frames[i].pose.flatten().array() == seq.frames[i].pose.flatten().array()).all());
    CHECK((loaded.frames[i].shape.beta.array() == seq.frames[i].shape.beta.array()).all());
  }
  fs::remove(path);
}
