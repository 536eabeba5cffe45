#include "meshforge/scene_gen.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "meshforge/error.hpp"
#include "meshforge/rng.hpp"
#include "json_helpers.hpp"

namespace meshforge {

using nlohmann::json;

char viewpoint_letter(Viewpoint v) {
  switch (v) {
    case Viewpoint::East: return 'E';
    case Viewpoint::West: return 'W';
    case Viewpoint::South: return 'S';
    default: return 'N';
  }
}

Viewpoint viewpoint_from_letter(char c) {
  switch (c) {
    case 'E': return Viewpoint::East;
    case 'W': return Viewpoint::West;
    case 'S': return Viewpoint::South;
    case 'N': return Viewpoint::North;
    default: throw ValidationError(std::string("unknown viewpoint '") + c + "', expected E/W/S/N");
  }
}

void SceneConfig::validate() const {
  if (viewpoints.empty()) throw ValidationError("scene config needs at least one viewpoint");
  if (resolution <= 0) throw ValidationError("scene resolution must be > 0");
  if (!(sensor_mm > 0) || !(focal_mm > 0)) throw ValidationError("camera optics must be > 0");
  if (!(camera_distance > 0)) throw ValidationError("camera distance must be > 0");
}

Scalar focal_pixels(const PerspectiveCamera& cam) {
  return cam.focal_mm / cam.sensor_mm * cam.resolution;
}

Mat3 camera_rotation(const PerspectiveCamera& cam) {
  Vec3 forward = cam.look_at - cam.position;
  Scalar len = forward.norm();
  if (len < 1e-12) throw DegeneracyError("camera position coincides with its look_at point");
  forward /= len;
  Vec3 up_world(0, 0, 1);
  Vec3 right = forward.cross(up_world);
  if (right.norm() < 1e-9) right = forward.cross(Vec3(1, 0, 0));  // looking straight up/down
  right.normalize();
  Vec3 down = forward.cross(right);
  Mat3 r;
  r.row(0) = right;
  r.row(1) = down;
  r.row(2) = forward;
  return r;
}

Points world_to_camera(const PerspectiveCamera& cam, const Points& world) {
  Mat3 r = camera_rotation(cam);
  Points out(world.rows(), 3);
  for (Eigen::Index i = 0; i < world.rows(); ++i)
    out.row(i) = r * (Vec3(world.row(i)) - cam.position);
  return out;
}

Keypoints2D project_camera_frame(const PerspectiveCamera& cam, const Points& cam_points) {
  const Scalar f_px = focal_pixels(cam);
  const Scalar center = cam.resolution / 2.0;
  Keypoints2D kp;
  kp.points.resize(cam_points.rows(), 2);
  kp.visibility.resize(cam_points.rows());
  for (Eigen::Index i = 0; i < cam_points.rows(); ++i) {
    Scalar x = cam_points(i, 0), y = cam_points(i, 1), z = cam_points(i, 2);
    if (x == 0 && y == 0 && z == 0)
      throw DegeneracyError("point " + std::to_string(i) + " lies at the camera optical center");
    if (z > 0) {
      Scalar u = f_px * x / z + center;
      Scalar v = f_px * y / z + center;
      kp.points.row(i) = Vec2(u, v);
      kp.visibility(i) =
          u >= 0 && u < cam.resolution && v >= 0 && v < cam.resolution;
    } else {
      kp.points.row(i) = Vec2(-1, -1);
      kp.visibility(i) = false;
    }
  }
  return kp;
}

Keypoints2D perspective_project(const PerspectiveCamera& cam, const Points& world) {
  return project_camera_frame(cam, world_to_camera(cam, world));
}

void validate_frame_consistency(const AnnotatedFrame& frame) {
  Keypoints2D expect = project_camera_frame(frame.camera, frame.joints3d);
  if (expect.points.rows() != frame.keypoints2d.points.rows())
    throw ValidationError("annotated frame keypoint count mismatch");
  for (Eigen::Index q = 0; q < expect.points.rows(); ++q) {
    if (expect.visibility(q) != frame.keypoints2d.visibility(q))
      throw ValidationError("annotated frame visibility flag disagrees with the in-image test at "
                            "joint " + std::to_string(q));
    if (frame.keypoints2d.visibility(q) &&
        (expect.points.row(q) - frame.keypoints2d.points.row(q)).norm() > 1e-6)
      throw ValidationError("annotated frame keypoints disagree with the joint projection at "
                            "joint " + std::to_string(q));
  }
}

std::vector<std::vector<PerspectiveCamera>> place_camera_rig(const Points& pelvis_track,
                                                             const SceneConfig& cfg) {
  cfg.validate();
  if (pelvis_track.rows() == 0) throw ValidationError("pelvis track is empty");
  auto direction = [](Viewpoint v) {
    switch (v) {
      case Viewpoint::East: return Vec3(1, 0, 0);
      case Viewpoint::West: return Vec3(-1, 0, 0);
      case Viewpoint::South: return Vec3(0, -1, 0);
      default: return Vec3(0, 1, 0);
    }
  };
  std::vector<std::vector<PerspectiveCamera>> rig(cfg.viewpoints.size());
  for (std::size_t v = 0; v < cfg.viewpoints.size(); ++v) {
    rig[v].resize(static_cast<std::size_t>(pelvis_track.rows()));
    for (Eigen::Index f = 0; f < pelvis_track.rows(); ++f) {
      PerspectiveCamera cam;
      cam.look_at = pelvis_track.row(f);
      cam.position = cam.look_at + cfg.camera_distance * direction(cfg.viewpoints[v]);
      cam.focal_mm = cfg.focal_mm;
      cam.sensor_mm = cfg.sensor_mm;
      cam.resolution = cfg.resolution;
      rig[v][static_cast<std::size_t>(f)] = cam;
    }
  }
  return rig;
}

GeneratedSequence generate_sequence(const PoseSequence& poses, const BodyTemplate& tmpl,
                                    const GarmentFile* garment, const SceneConfig& cfg,
                                    const SimConfig& sim, const std::string& id) {
  poses.validate();
  cfg.validate();
  if (poses.joint_count() != tmpl.joint_count())
    throw DimensionError("pose sequence joint count (" + std::to_string(poses.joint_count()) +
                         ") does not match the template (" + std::to_string(tmpl.joint_count()) +
                         ")");

  const int frame_count = static_cast<int>(poses.frames.size());
  const int substeps = std::max(1, static_cast<int>(std::lround(1.0 / (poses.fps * sim.timestep))));

  ClothState cloth;
  bool has_cloth = garment != nullptr;
  if (has_cloth) cloth = build_garment(garment->pattern, garment->material);

  // per-frame geometry, shared by every viewpoint
  std::vector<SkinnedMesh> meshes(static_cast<std::size_t>(frame_count));
  std::vector<Points> cloth_frames;
  std::vector<Joints3D> joints(static_cast<std::size_t>(frame_count));
  Points pelvis_track(frame_count, 3);
  for (int f = 0; f < frame_count; ++f) {
    const PoseFrame& pf = poses.frames[static_cast<std::size_t>(f)];
    meshes[static_cast<std::size_t>(f)] = skin(tmpl, pf.shape, pf.pose);
    joints[static_cast<std::size_t>(f)] = regress_joints(meshes[static_cast<std::size_t>(f)], tmpl);
    pelvis_track.row(f) = joints[static_cast<std::size_t>(f)].row(0);
    if (has_cloth) {
      CapsuleSet colliders = body_colliders(tmpl, pf.pose, pf.shape);
      // pins track their assigned body vertices
      for (PinConstraint& pin : cloth.pins) {
        if (pin.body_vertex < 0) continue;
        Vec3 target = meshes[static_cast<std::size_t>(f)].vertices.row(pin.body_vertex);
        pin.anchor_velocity = (target - pin.anchor) * poses.fps;
        pin.anchor = target;
      }
      for (int s = 0; s < substeps; ++s) cloth = step(cloth, colliders, sim);
      cloth_frames.push_back(cloth.positions);
    }
  }

  auto rig = place_camera_rig(pelvis_track, cfg);

  Rng rng(cfg.seed);
  Vec4 lights;
  for (int i = 0; i < 4; ++i) lights(i) = rng.uniform(0.3, 1.0);

  GeneratedSequence out;
  out.id = id;
  out.body_faces = tmpl.faces;
  if (has_cloth) out.cloth_faces = cloth.faces;
  out.metric_joint_map = tmpl.metric_joint_map;
  out.views.resize(cfg.viewpoints.size());
  const std::string config_hash = scene_config_hash(cfg);
  for (std::size_t v = 0; v < cfg.viewpoints.size(); ++v) {
    SequenceAnnotation& ann = out.views[v];
    ann.view = cfg.viewpoints[v];
    ann.fps = poses.fps;
    ann.provenance = {id, cfg.seed, config_hash};
    ann.light_strengths = lights;
    ann.frames.resize(static_cast<std::size_t>(frame_count));
    for (int f = 0; f < frame_count; ++f) {
      AnnotatedFrame& frame = ann.frames[static_cast<std::size_t>(f)];
      const PoseFrame& pf = poses.frames[static_cast<std::size_t>(f)];
      frame.theta = pf.pose.flatten();
      frame.beta = pf.shape.beta;
      frame.camera = rig[v][static_cast<std::size_t>(f)];
      frame.joints3d = world_to_camera(frame.camera, joints[static_cast<std::size_t>(f)]);
      frame.keypoints2d = project_camera_frame(frame.camera, frame.joints3d);
      frame.body_vertices = meshes[static_cast<std::size_t>(f)].vertices;
      if (has_cloth) frame.cloth_vertices = cloth_frames[static_cast<std::size_t>(f)];
      validate_frame_consistency(frame);
    }
  }
  return out;
}

GeneratedSequence transfer(const std::vector<RecoveryVector>& recovered, const BodyTemplate& tmpl,
                           const GarmentFile* garment, const SceneConfig& cfg,
                           const SimConfig& sim, const std::string& id) {
  if (recovered.empty()) throw ValidationError("transfer needs at least one recovery vector");
  Vec10 mean_beta = Vec10::Zero();
  for (const RecoveryVector& r : recovered) mean_beta += r.beta;
  mean_beta /= static_cast<Scalar>(recovered.size());

  PoseSequence seq;
  for (const RecoveryVector& r : recovered) {
    PoseFrame f;
    f.pose = BodyPose::from_flat(r.theta);
    f.shape.beta = mean_beta;
    seq.frames.push_back(std::move(f));
  }
  return generate_sequence(seq, tmpl, garment, cfg, sim, id);
}

// --- dataset I/O -------------------------------------------------------------

namespace {

json camera_to_json(const PerspectiveCamera& cam) {
  return json{{"position", detail::to_json_vec(cam.position)},
              {"look_at", detail::to_json_vec(cam.look_at)},
              {"focal_mm", cam.focal_mm},
              {"sensor_mm", cam.sensor_mm},
              {"resolution", cam.resolution}};
}

PerspectiveCamera camera_from_json(const json& j) {
  PerspectiveCamera cam;
  cam.position = Vec3(detail::vec_from_json(j.at("position"), "camera.position"));
  cam.look_at = Vec3(detail::vec_from_json(j.at("look_at"), "camera.look_at"));
  cam.focal_mm = j.at("focal_mm").get<Scalar>();
  cam.sensor_mm = j.at("sensor_mm").get<Scalar>();
  cam.resolution = j.at("resolution").get<int>();
  return cam;
}

json frame_to_json(const AnnotatedFrame& f) {
  json j;
  j["theta"] = detail::to_json_vec(f.theta);
  j["beta"] = detail::to_json_vec(f.beta);
  j["joints3d"] = detail::to_json_points(f.joints3d);
  j["keypoints"] = detail::to_json_points(f.keypoints2d.points);
  json vis = json::array();
  for (Eigen::Index q = 0; q < f.keypoints2d.visibility.size(); ++q)
    vis.push_back(static_cast<bool>(f.keypoints2d.visibility(q)));
  j["visibility"] = std::move(vis);
  j["body_vertices"] = detail::to_json_points(f.body_vertices);
  j["cloth_vertices"] = f.cloth_vertices ? detail::to_json_points(*f.cloth_vertices) : json();
  j["camera"] = camera_to_json(f.camera);
  return j;
}

AnnotatedFrame frame_from_json(const json& j, const std::string& origin) {
  AnnotatedFrame f;
  f.theta = detail::vec_from_json(j.at("theta"), "theta");
  VecX beta = detail::vec_from_json(j.at("beta"), "beta");
  if (beta.size() != 10) throw IoError(origin + ": beta must have 10 entries");
  f.beta = beta;
  f.joints3d = detail::matrix_from_json<Points>(j.at("joints3d"), 3, "joints3d");
  f.keypoints2d.points = detail::matrix_from_json<Points2>(j.at("keypoints"), 2, "keypoints");
  const json& vis = j.at("visibility");
  f.keypoints2d.visibility.resize(static_cast<Eigen::Index>(vis.size()));
  for (std::size_t q = 0; q < vis.size(); ++q)
    f.keypoints2d.visibility(static_cast<Eigen::Index>(q)) = vis[q].get<bool>();
  f.body_vertices = detail::matrix_from_json<Points>(j.at("body_vertices"), 3, "body_vertices");
  if (j.contains("cloth_vertices") && !j["cloth_vertices"].is_null())
    f.cloth_vertices = detail::matrix_from_json<Points>(j["cloth_vertices"], 3, "cloth_vertices");
  f.camera = camera_from_json(j.at("camera"));
  return f;
}

}  // namespace

std::string scene_config_json(const SceneConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  std::string views;
  for (Viewpoint v : cfg.viewpoints) views.push_back(viewpoint_letter(v));
  j["viewpoints"] = views;
  j["resolution"] = cfg.resolution;
  j["sensor_mm"] = cfg.sensor_mm;
  j["focal_mm"] = cfg.focal_mm;
  j["camera_distance"] = cfg.camera_distance;
  j["write_previews"] = cfg.write_previews;
  j["cloth_obj_every"] = cfg.cloth_obj_every;
  return j.dump();
}

std::string scene_config_hash(const SceneConfig& cfg) {
  std::string text = scene_config_json(cfg);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  std::ostringstream out;
  out << std::hex << h;
  return out.str();
}

void export_dataset(const std::vector<GeneratedSequence>& sequences,
                    const std::filesystem::path& dir, const SceneConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  json manifest;
  manifest["schema_version"] = 1;
  if (!sequences.empty()) manifest["metric_joint_map"] = sequences.front().metric_joint_map;
  json seq_list = json::array();
  int total_frames = 0;

  for (const GeneratedSequence& seq : sequences) {
    fs::create_directories(dir / seq.id);
    json entry;
    entry["id"] = seq.id;
    entry["frame_count"] = seq.views.empty() ? 0 : static_cast<int>(seq.views.front().frames.size());
    entry["fps"] = seq.views.empty() ? 30.0 : seq.views.front().fps;
    entry["seed"] = seq.views.empty() ? 0 : seq.views.front().provenance.seed;
    entry["config_hash"] = seq.views.empty() ? "" : seq.views.front().provenance.config_hash;
    if (!seq.views.empty())
      entry["light_strengths"] = detail::to_json_vec(seq.views.front().light_strengths);
    std::string views;
    for (const SequenceAnnotation& ann : seq.views) views.push_back(viewpoint_letter(ann.view));
    entry["views"] = views;
    total_frames += entry["frame_count"].get<int>() * static_cast<int>(seq.views.size());
    seq_list.push_back(entry);

    for (const SequenceAnnotation& ann : seq.views) {
      const char letter = viewpoint_letter(ann.view);
      std::ostringstream body;
      for (const AnnotatedFrame& f : ann.frames) body << frame_to_json(f).dump() << '\n';
      detail::write_file(dir / seq.id / (std::string("annot_") + letter + ".jsonl"), body.str());

      if (cfg.write_previews) {
        fs::path pdir = dir / seq.id / (std::string("preview_") + letter);
        fs::create_directories(pdir);
        for (std::size_t f = 0; f < ann.frames.size(); ++f) {
          Image img = rasterize_preview(ann.frames[f], seq.body_faces, seq.cloth_faces,
                                        PreviewMode::Silhouette);
          char name[16];
          std::snprintf(name, sizeof(name), "%05zu.pgm", f);
          save_pgm(img, pdir / name);
        }
      }
      if (cfg.cloth_obj_every > 0 && seq.cloth_faces.rows() > 0) {
        for (std::size_t f = 0; f < ann.frames.size();
             f += static_cast<std::size_t>(cfg.cloth_obj_every)) {
          if (!ann.frames[f].cloth_vertices) continue;
          char name[32];
          std::snprintf(name, sizeof(name), "cloth_%c_%05zu.obj", letter, f);
          save_obj(*ann.frames[f].cloth_vertices, seq.cloth_faces, dir / seq.id / name);
        }
      }
    }
  }
  manifest["sequences"] = std::move(seq_list);
  manifest["total_frames"] = total_frames;
  detail::write_file(dir / "manifest.json", manifest.dump(2));
}

std::filesystem::path Dataset::preview_path(const std::string& id, Viewpoint view,
                                            int frame) const {
  char name[16];
  std::snprintf(name, sizeof(name), "%05d.pgm", frame);
  return root / id / (std::string("preview_") + viewpoint_letter(view)) / name;
}

Dataset import_dataset(const std::filesystem::path& dir) {
  json manifest = detail::parse_file(dir / "manifest.json");
  Dataset ds;
  ds.root = dir;
  ds.schema_version = manifest.at("schema_version").get<int>();
  if (ds.schema_version != 1)
    throw IoError("unsupported dataset schema_version " + std::to_string(ds.schema_version));
  if (manifest.contains("metric_joint_map"))
    ds.metric_joint_map = manifest["metric_joint_map"].get<std::vector<int>>();

  for (const json& entry : manifest.at("sequences")) {
    DatasetSequence seq;
    seq.id = entry.at("id").get<std::string>();
    const std::string views = entry.at("views").get<std::string>();
    const int expect_frames = entry.at("frame_count").get<int>();
    for (char letter : views) {
      SequenceAnnotation ann;
      ann.view = viewpoint_from_letter(letter);
      ann.fps = entry.at("fps").get<Scalar>();
      ann.provenance.source_id = seq.id;
      ann.provenance.seed = entry.at("seed").get<std::uint64_t>();
      ann.provenance.config_hash = entry.at("config_hash").get<std::string>();
      if (entry.contains("light_strengths"))
        ann.light_strengths = Vec4(detail::vec_from_json(entry["light_strengths"], "lights"));
      std::filesystem::path file = dir / seq.id / (std::string("annot_") + letter + ".jsonl");
      std::ifstream in(file);
      if (!in) throw IoError("cannot open " + file.string());
      std::string line;
      int lineno = 0;
      while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::string origin = file.string() + ":" + std::to_string(lineno);
        ann.frames.push_back(frame_from_json(detail::parse_string(line, origin), origin));
      }
      if (static_cast<int>(ann.frames.size()) != expect_frames)
        throw IoError(file.string() + ": expected " + std::to_string(expect_frames) +
                      " frames, found " + std::to_string(ann.frames.size()));
      seq.views.push_back(std::move(ann));
    }
    ds.sequences.push_back(std::move(seq));
  }
  return ds;
}

}  // namespace meshforge
