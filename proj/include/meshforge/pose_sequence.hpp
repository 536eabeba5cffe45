#pragma once

#include <filesystem>
#include <tuple>
#include <vector>

#include "meshforge/body_model.hpp"
#include "meshforge/types.hpp"

namespace meshforge {

struct PoseFrame {
  BodyPose pose;
  BodyShape shape;
};

struct PoseSequence {
  std::vector<PoseFrame> frames;
  Scalar fps = 30.0;

  int joint_count() const { return frames.empty() ? 0 : frames.front().pose.joint_count(); }
  void validate() const;  // non-empty, consistent joint count, fps > 0
};

// m x n matrix of pairwise pose distances.
struct DistanceMatrix {
  MatX values;
};

struct ContrastPair {
  int i = 0;
  int j = 0;
  Scalar distance = 0;
};

struct InterpolationConfig {
  Scalar radians_per_frame = 0.05;
  int min_frames = 10;
  int max_frames = 300;
};

// L2 distance between flattened axis-angle vectors. Root rotation included
// unless include_root is false.
Scalar pose_distance(const BodyPose& a, const BodyPose& b, bool include_root = true);

DistanceMatrix distance_matrix(const PoseSequence& x, const PoseSequence& y,
                               bool include_root = true);

// Argmax entry; ties break toward the smallest i, then smallest j.
ContrastPair select_contrast_pair(const DistanceMatrix& d);

// clamp(ceil(dist / radians_per_frame), min_frames, max_frames)
int frames_for_distance(Scalar dist, const InterpolationConfig& cfg = {});

// k frames linear in axis-angle coordinates; frames 0 and k-1 are bit-exact
// copies of a and b. Shape is held constant at `shape` for every frame.
PoseSequence interpolate(const BodyPose& a, const BodyPose& b, int k,
                         const BodyShape& shape = {}, Scalar fps = 30.0);

// interpolate(start -> seq.frames[0].pose, n) followed by seq, without
// duplicating the first frame of seq. n <= 1 returns seq unchanged.
PoseSequence prepend_leadin(const PoseSequence& seq, const BodyPose& start, int n);

PoseSequence load_pose_sequence(const std::filesystem::path& path);
void save_pose_sequence(const PoseSequence& seq, const std::filesystem::path& path);

}  // namespace meshforge
