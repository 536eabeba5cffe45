#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "meshforge/body_model.hpp"
#include "meshforge/cloth_sim.hpp"
#include "meshforge/image.hpp"
#include "meshforge/pose_sequence.hpp"
#include "meshforge/recovery_vector.hpp"
#include "meshforge/types.hpp"

namespace meshforge {

enum class Viewpoint { East, West, South, North };

char viewpoint_letter(Viewpoint v);
Viewpoint viewpoint_from_letter(char c);

struct SceneConfig {
  std::uint64_t seed = 0;
  std::vector<Viewpoint> viewpoints = {Viewpoint::East, Viewpoint::West, Viewpoint::South,
                                       Viewpoint::North};
  int resolution = 250;           // square output, pixels
  Scalar sensor_mm = 32.0;
  Scalar focal_mm = 180.0;
  Scalar camera_distance = 6.0;   // meters from the tracked pelvis
  bool write_previews = true;     // silhouette PGMs during export
  int cloth_obj_every = 0;        // OBJ snapshot period in frames, 0 = off

  void validate() const;
};

struct PerspectiveCamera {
  Vec3 position = Vec3::Zero();
  Vec3 look_at = Vec3(1, 0, 0);
  Scalar focal_mm = 180.0;
  Scalar sensor_mm = 32.0;
  int resolution = 250;
};

// Pinhole focal length in pixels: focal_mm / sensor_mm * resolution.
Scalar focal_pixels(const PerspectiveCamera& cam);

// World -> camera axes (rows: right, down, forward).
Mat3 camera_rotation(const PerspectiveCamera& cam);

Points world_to_camera(const PerspectiveCamera& cam, const Points& world);

// Projects camera-frame points; visibility = in front and inside the image.
Keypoints2D project_camera_frame(const PerspectiveCamera& cam, const Points& cam_points);

// Pinhole projection of world points (principal point at the image center,
// points behind the camera invisible). Throws DegeneracyError for a point at
// the camera position.
Keypoints2D perspective_project(const PerspectiveCamera& cam, const Points& world);

struct AnnotatedFrame {
  VecX theta;                 // 3K+3 axis-angle coordinates
  Vec10 beta = Vec10::Zero();
  Points joints3d;            // Q x 3, camera frame, meters
  Keypoints2D keypoints2d;    // Q pixels + visibility
  Points body_vertices;       // N x 3, world frame
  std::optional<Points> cloth_vertices;  // world frame
  PerspectiveCamera camera;
};

// keypoints2d must equal the projection of joints3d within 1e-6 px and the
// visibility flags must match the in-image test. Throws ValidationError.
void validate_frame_consistency(const AnnotatedFrame& frame);

struct Provenance {
  std::string source_id;
  std::uint64_t seed = 0;
  std::string config_hash;
};

struct SequenceAnnotation {
  Viewpoint view = Viewpoint::East;
  std::vector<AnnotatedFrame> frames;
  Scalar fps = 30.0;
  Provenance provenance;
  Vec4 light_strengths = Vec4::Zero();  // recorded scene variation, unused by previews
};

// Cameras for every requested viewpoint: camera_distance from the pelvis
// along the +-x / +-y world axes at pelvis height, looking at the pelvis.
// Result is indexed [viewpoint][frame].
std::vector<std::vector<PerspectiveCamera>> place_camera_rig(const Points& pelvis_track,
                                                             const SceneConfig& cfg);

struct GeneratedSequence {
  std::string id;
  std::vector<SequenceAnnotation> views;  // ordered like cfg.viewpoints
  Faces body_faces;
  Faces cloth_faces;
  std::vector<int> metric_joint_map;
};

// Full synthesis pass: skin per frame, advance cloth in substeps against
// capsule colliders rebuilt per frame, place cameras, project joints.
// Deterministic for fixed inputs and seed.
GeneratedSequence generate_sequence(const PoseSequence& poses, const BodyTemplate& tmpl,
                                    const GarmentFile* garment, const SceneConfig& cfg,
                                    const SimConfig& sim = {}, const std::string& id = "seq");

enum class PreviewMode { Silhouette, Depth };

// Software rasterization of the body (+cloth) triangles as seen by the
// frame's camera. Silhouette = binary coverage; depth = nearest camera-space
// depth with +inf background.
Image rasterize_preview(const AnnotatedFrame& frame, const Faces& body_faces,
                        const Faces& cloth_faces, PreviewMode mode);

void export_dataset(const std::vector<GeneratedSequence>& sequences,
                    const std::filesystem::path& dir, const SceneConfig& cfg);

struct DatasetSequence {
  std::string id;
  std::vector<SequenceAnnotation> views;
};

struct Dataset {
  int schema_version = 1;
  std::vector<int> metric_joint_map;
  std::vector<DatasetSequence> sequences;
  std::filesystem::path root;

  // preview image path for a given sequence/view/frame (may not exist)
  std::filesystem::path preview_path(const std::string& id, Viewpoint view, int frame) const;
};

Dataset import_dataset(const std::filesystem::path& dir);

// Re-animates recovered vectors on a fresh avatar/garment/scene: theta from
// the recovery vectors, beta from their mean.
GeneratedSequence transfer(const std::vector<RecoveryVector>& recovered, const BodyTemplate& tmpl,
                           const GarmentFile* garment, const SceneConfig& cfg,
                           const SimConfig& sim = {}, const std::string& id = "transfer");

// Canonical JSON of a scene config (also used for config hashing).
std::string scene_config_json(const SceneConfig& cfg);
std::string scene_config_hash(const SceneConfig& cfg);

}  // namespace meshforge
