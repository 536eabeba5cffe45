#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "meshforge/error.hpp"
#include "meshforge/metrics.hpp"
#include "meshforge/rng.hpp"
#include "meshforge/scene_gen.hpp"

using namespace meshforge;
namespace fs = std::filesystem;

namespace {

PoseSequence static_tpose(int frames) {
  PoseSequence seq;
  for (int i = 0; i < frames; ++i) seq.frames.push_back({BodyPose::rest(24), BodyShape::zero()});
  return seq;
}

PoseSequence wiggle_sequence(int frames, std::uint64_t seed = 5) {
  Rng rng(seed);
  VecX a = VecX::Zero(72), b(72);
  for (int i = 0; i < 72; ++i) b(i) = rng.uniform(-0.35, 0.35);
  PoseSequence seq = interpolate(BodyPose::from_flat(a), BodyPose::from_flat(b), frames);
  return seq;
}

GarmentFile cape_garment() {
  GarmentFile g;
  GarmentPanel panel;
  panel.rows = 6;
  panel.cols = 6;
  panel.spacing = 0.06;
  panel.density = 0.15;
  panel.origin = Vec3(-0.15, -0.15, 0.62);
  g.pattern.panels.push_back(panel);
  return g;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

bool same_tree_bytes(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> rel;
  for (auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), a));
  std::sort(rel.begin(), rel.end());
  for (const fs::path& r : rel) {
    if (!fs::exists(b / r)) return false;
    if (slurp(a / r) != slurp(b / r)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("camera rig placement") {
  SceneConfig cfg;
  Points pelvis(1, 3);
  pelvis.setZero();
  auto rig = place_camera_rig(pelvis, cfg);
  REQUIRE(rig.size() == 4);
  CHECK((rig[0][0].position - Vec3(6, 0, 0)).norm() == 0.0);
  CHECK(rig[0][0].look_at.norm() == 0.0);
  CHECK((rig[1][0].position - Vec3(-6, 0, 0)).norm() == 0.0);
  CHECK((rig[2][0].position - Vec3(0, -6, 0)).norm() == 0.0);
  CHECK((rig[3][0].position - Vec3(0, 6, 0)).norm() == 0.0);

  // tracking equivariance
  Vec3 d(0.4, -1.2, 0.1);
  Points moved = pelvis.rowwise() + d.transpose();
  auto rig2 = place_camera_rig(moved, cfg);
  for (std::size_t v = 0; v < 4; ++v)
    CHECK((rig2[v][0].position - (rig[v][0].position + d)).norm() < 1e-15);
}

TEST_CASE("pelvis projects to the image center") {
  SceneConfig cfg;
  Points pelvis(3, 3);
  pelvis << 0, 0, 0, 0.3, 0.2, 0.05, -0.4, 0.8, -0.1;
  auto rig = place_camera_rig(pelvis, cfg);
  for (std::size_t v = 0; v < rig.size(); ++v)
    for (Eigen::Index f = 0; f < pelvis.rows(); ++f) {
      Points p(1, 3);
      p.row(0) = pelvis.row(f);
      Keypoints2D kp = perspective_project(rig[v][static_cast<std::size_t>(f)], p);
      CHECK((Vec2(kp.points.row(0)) - Vec2(125, 125)).norm() < 0.5);
    }
}

TEST_CASE("perspective projection basics") {
  PerspectiveCamera cam;
  cam.position = Vec3(6, 0, 0);
  cam.look_at = Vec3::Zero();
  CHECK(focal_pixels(cam) == doctest::Approx(1406.25).epsilon(1e-12));

  Points axis_point(1, 3);
  axis_point << 2, 0, 0;  // on the optical axis
  Keypoints2D kp = perspective_project(cam, axis_point);
  CHECK((Vec2(kp.points.row(0)) - Vec2(125, 125)).norm() < 1e-9);

  Points behind(1, 3);
  behind << 8, 0, 0;
  CHECK_FALSE(perspective_project(cam, behind).visibility(0));

  Points at_center(1, 3);
  at_center << 6, 0, 0;
  CHECK_THROWS_AS(perspective_project(cam, at_center), DegeneracyError);
}

TEST_CASE("telephoto: doubling distance halves projected height") {
  Points segment(2, 3);
  segment << 0, 0, -0.5, 0, 0, 0.5;
  PerspectiveCamera near_cam;
  near_cam.position = Vec3(6, 0, 0);
  near_cam.look_at = Vec3::Zero();
  PerspectiveCamera far_cam = near_cam;
  far_cam.position = Vec3(12, 0, 0);
  Scalar h_near = std::abs(perspective_project(near_cam, segment).points(0, 1) -
                           perspective_project(near_cam, segment).points(1, 1));
  Scalar h_far = std::abs(perspective_project(far_cam, segment).points(0, 1) -
                          perspective_project(far_cam, segment).points(1, 1));
  CHECK(std::abs(h_near / h_far - 2.0) < 0.01 * 2.0);
}

TEST_CASE("generate_sequence static scene emits identical frames") {
  BodyTemplate tmpl = procedural_template();
  SceneConfig cfg;
  cfg.resolution = 64;
  cfg.camera_distance = 12;
  cfg.viewpoints = {Viewpoint::East, Viewpoint::South};
  cfg.write_previews = false;
  GeneratedSequence seq = generate_sequence(static_tpose(10), tmpl, nullptr, cfg);
  REQUIRE(seq.views.size() == 2);
  for (const SequenceAnnotation& ann : seq.views) {
    REQUIRE(ann.frames.size() == 10);
    for (const AnnotatedFrame& f : ann.frames) {
      CHECK((f.theta.array() == ann.frames.front().theta.array()).all());
      CHECK((f.joints3d.array() == ann.frames.front().joints3d.array()).all());
      CHECK((f.body_vertices.array() == ann.frames.front().body_vertices.array()).all());
      validate_frame_consistency(f);
    }
  }
}

TEST_CASE("generate_sequence propagates template/pose mismatch") {
  BodyTemplate tmpl = procedural_template();
  PoseSequence bad;
  bad.frames.push_back({BodyPose::rest(20), BodyShape::zero()});
  SceneConfig cfg;
  CHECK_THROWS_AS(generate_sequence(bad, tmpl, nullptr, cfg), DimensionError);
}

TEST_CASE("dataset export is deterministic and round trips") {
  BodyTemplate tmpl = procedural_template();
  SceneConfig cfg;
  cfg.resolution = 64;
  cfg.camera_distance = 12;
  cfg.viewpoints = {Viewpoint::East};
  cfg.seed = 42;
  cfg.write_previews = true;
  GeneratedSequence seq = generate_sequence(wiggle_sequence(6), tmpl, nullptr, cfg, {}, "seq0");

  fs::path dir_a = fs::temp_directory_path() / "meshforge_ds_a";
  fs::path dir_b = fs::temp_directory_path() / "meshforge_ds_b";
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  export_dataset({seq}, dir_a, cfg);
  export_dataset({seq}, dir_b, cfg);
  CHECK(same_tree_bytes(dir_a, dir_b));

  Dataset ds = import_dataset(dir_a);
  REQUIRE(ds.sequences.size() == 1);
  REQUIRE(ds.sequences[0].views.size() == 1);
  const SequenceAnnotation& ann = ds.sequences[0].views[0];
  REQUIRE(ann.frames.size() == 6);
  CHECK(ds.metric_joint_map == tmpl.metric_joint_map);
  for (std::size_t f = 0; f < 6; ++f) {
    const AnnotatedFrame& got = ann.frames[f];
    const AnnotatedFrame& want = seq.views[0].frames[f];
    CHECK((got.theta.array() == want.theta.array()).all());
    CHECK((got.beta.array() == want.beta.array()).all());
    CHECK((got.joints3d.array() == want.joints3d.array()).all());
    CHECK((got.keypoints2d.points.array() == want.keypoints2d.points.array()).all());
    CHECK((got.body_vertices.array() == want.body_vertices.array()).all());
    CHECK(got.cloth_vertices.has_value() == want.cloth_vertices.has_value());
    validate_frame_consistency(got);
  }
  CHECK(fs::exists(ds.preview_path("seq0", Viewpoint::East, 0)));

  // manifest frame count equals the sum of per-sequence lengths
  nlohmann::json manifest = nlohmann::json::parse(slurp(dir_a / "manifest.json"));
  CHECK(manifest["total_frames"].get<int>() == 6);

  // corrupted record line reports file and line
  fs::path annot = dir_a / "seq0" / "annot_E.jsonl";
  std::string text = slurp(annot);
  text.insert(text.find('\n') + 1, "{broken\n");
  std::ofstream(annot, std::ios::binary) << text;
  CHECK_THROWS_WITH_AS(import_dataset(dir_a), doctest::Contains("annot_E.jsonl:2"), IoError);

  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("seed changes lights but not geometry") {
  BodyTemplate tmpl = procedural_template();
  SceneConfig cfg;
  cfg.resolution = 64;
  cfg.camera_distance = 12;
  cfg.viewpoints = {Viewpoint::East};
  cfg.write_previews = false;
  GeneratedSequence a = generate_sequence(wiggle_sequence(4), tmpl, nullptr, cfg, {}, "s");
  cfg.seed = 993;
  GeneratedSequence b = generate_sequence(wiggle_sequence(4), tmpl, nullptr, cfg, {}, "s");
  CHECK((a.views[0].light_strengths - b.views[0].light_strengths).norm() > 0);
  for (std::size_t f = 0; f < 4; ++f) {
    CHECK((a.views[0].frames[f].joints3d.array() == b.views[0].frames[f].joints3d.array()).all());
    CHECK((a.views[0].frames[f].body_vertices.array() ==
           b.views[0].frames[f].body_vertices.array()).all());
  }
}

TEST_CASE("rasterize_preview silhouette and depth") {
  BodyTemplate tmpl = procedural_template();
  SceneConfig cfg;
  cfg.resolution = 64;
  cfg.camera_distance = 12;  // whole body inside the frustum
  cfg.viewpoints = {Viewpoint::East};
  cfg.write_previews = false;
  GeneratedSequence seq = generate_sequence(static_tpose(1), tmpl, nullptr, cfg);
  const AnnotatedFrame& frame = seq.views[0].frames[0];

  Image sil = rasterize_preview(frame, seq.body_faces, seq.cloth_faces, PreviewMode::Silhouette);
  CHECK(sil.pixels.sum() > 0);

  // bounding box of lit pixels contains every visible keypoint
  int x0 = sil.width, x1 = -1, y0 = sil.height, y1 = -1;
  for (int y = 0; y < sil.height; ++y)
    for (int x = 0; x < sil.width; ++x)
      if (sil.at(x, y) > 0.5) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
      }
  for (Eigen::Index q = 0; q < frame.keypoints2d.points.rows(); ++q) {
    if (!frame.keypoints2d.visibility(q)) continue;
    CHECK(frame.keypoints2d.points(q, 0) >= x0 - 1.0);
    CHECK(frame.keypoints2d.points(q, 0) <= x1 + 2.0);
    CHECK(frame.keypoints2d.points(q, 1) >= y0 - 1.0);
    CHECK(frame.keypoints2d.points(q, 1) <= y1 + 2.0);
  }

  Image depth = rasterize_preview(frame, seq.body_faces, seq.cloth_faces, PreviewMode::Depth);
  int px = static_cast<int>(frame.keypoints2d.points(0, 0));
  int py = static_cast<int>(frame.keypoints2d.points(0, 1));
  Scalar pelvis_depth = depth.at(px, py);
  Scalar expect = (frame.camera.position - frame.camera.look_at).norm();
  CHECK(std::isfinite(pelvis_depth));
  CHECK(std::abs(pelvis_depth - expect) / expect < 0.02);

  // empty mesh -> all background
  AnnotatedFrame empty = frame;
  empty.body_vertices.resize(0, 3);
  Image blank = rasterize_preview(empty, Faces(0, 3), Faces(0, 3), PreviewMode::Silhouette);
  CHECK(blank.pixels.maxCoeff() == 0.0);
}

TEST_CASE("pgm round trip") {
  Image img(8, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 8; ++x) img.at(x, y) = (x + y) % 2;
  fs::path p = fs::temp_directory_path() / "meshforge_test.pgm";
  save_pgm(img, p);
  Image back = load_pgm(p);
  CHECK(back.width == 8);
  CHECK(back.height == 4);
  CHECK((back.pixels - img.pixels).cwiseAbs().maxCoeff() < 1e-9);
  fs::remove(p);
}

TEST_CASE("garment decouples cloth from joints; transfer round-trips joints") {
  BodyTemplate tmpl = procedural_template();
  SceneConfig cfg;
  cfg.resolution = 64;
  cfg.camera_distance = 12;
  cfg.viewpoints = {Viewpoint::East};
  cfg.write_previews = false;
  PoseSequence poses = static_tpose(3);
  poses.fps = 30;

  GarmentFile garment = cape_garment();
  GeneratedSequence bare = generate_sequence(poses, tmpl, nullptr, cfg, {}, "bare");
  GeneratedSequence dressed = generate_sequence(poses, tmpl, &garment, cfg, {}, "dressed");
  REQUIRE(dressed.views[0].frames[0].cloth_vertices.has_value());
  for (std::size_t f = 0; f < 3; ++f)
    CHECK((bare.views[0].frames[f].joints3d.array() ==
           dressed.views[0].frames[f].joints3d.array()).all());

  // hand-built recovery vectors from the ground truth reproduce the joints
  std::vector<RecoveryVector> phis;
  for (const AnnotatedFrame& f : bare.views[0].frames) {
    RecoveryVector r;
    r.theta = f.theta;
    r.beta = f.beta;
    r.global_rotation = rotation_log(camera_rotation(f.camera));
    phis.push_back(r);
  }
  SceneConfig cfg2 = cfg;
  cfg2.viewpoints = {Viewpoint::North};  // new scene
  GeneratedSequence back = transfer(phis, tmpl, nullptr, cfg2);
  std::vector<Points> pred, gt;
  for (std::size_t f = 0; f < 3; ++f) {
    pred.push_back(back.views[0].frames[f].joints3d);
    gt.push_back(bare.views[0].frames[f].joints3d);
  }
  CHECK(pa_mpjpe(pred, gt) < 1e-6);
}

TEST_CASE("constant beta across generated frames") {
  BodyTemplate tmpl = procedural_template();
  SceneConfig cfg;
  cfg.resolution = 64;
  cfg.camera_distance = 12;
  cfg.viewpoints = {Viewpoint::East};
  cfg.write_previews = false;
  PoseSequence seq = wiggle_sequence(5);
  BodyShape shape;
  shape.beta(0) = 0.4;
  for (PoseFrame& f : seq.frames) f.shape = shape;
  GeneratedSequence out = generate_sequence(seq, tmpl, nullptr, cfg);
  for (const AnnotatedFrame& f : out.views[0].frames)
    CHECK((f.beta.array() == shape.beta.array()).all());
}
