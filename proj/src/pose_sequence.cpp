#include "meshforge/pose_sequence.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "meshforge/error.hpp"
#include "json_helpers.hpp"

namespace meshforge {

void PoseSequence::validate() const {
  if (frames.empty()) throw ValidationError("pose sequence is empty");
  if (!(fps > 0)) throw ValidationError("pose sequence fps must be > 0");
  int joints = frames.front().pose.joint_count();
  for (std::size_t i = 1; i < frames.size(); ++i)
    if (frames[i].pose.joint_count() != joints)
      throw ValidationError("pose sequence joint count changes at frame " + std::to_string(i));
}

Scalar pose_distance(const BodyPose& a, const BodyPose& b, bool include_root) {
  if (a.joint_count() != b.joint_count())
    throw DimensionError("pose joint counts differ: " + std::to_string(a.joint_count()) + " vs " +
                         std::to_string(b.joint_count()));
  if (include_root) return (a.flatten() - b.flatten()).norm();
  return (a.joint_rotations - b.joint_rotations).norm();
}

DistanceMatrix distance_matrix(const PoseSequence& x, const PoseSequence& y, bool include_root) {
  x.validate();
  y.validate();
  DistanceMatrix d;
  d.values.resize(static_cast<Eigen::Index>(x.frames.size()),
                  static_cast<Eigen::Index>(y.frames.size()));
  for (Eigen::Index i = 0; i < d.values.rows(); ++i)
    for (Eigen::Index j = 0; j < d.values.cols(); ++j)
      d.values(i, j) = pose_distance(x.frames[static_cast<std::size_t>(i)].pose,
                                     y.frames[static_cast<std::size_t>(j)].pose, include_root);
  return d;
}

ContrastPair select_contrast_pair(const DistanceMatrix& d) {
  if (d.values.size() == 0) throw ValidationError("distance matrix is empty");
  ContrastPair best{0, 0, d.values(0, 0)};
  for (Eigen::Index i = 0; i < d.values.rows(); ++i)
    for (Eigen::Index j = 0; j < d.values.cols(); ++j)
      if (d.values(i, j) > best.distance) best = {static_cast<int>(i), static_cast<int>(j),
                                                  d.values(i, j)};
  return best;
}

int frames_for_distance(Scalar dist, const InterpolationConfig& cfg) {
  if (dist < 0) throw ValidationError("pose distance must be nonnegative");
  Scalar k = std::ceil(dist / cfg.radians_per_frame);
  k = std::max<Scalar>(k, cfg.min_frames);
  k = std::min<Scalar>(k, cfg.max_frames);
  return static_cast<int>(k);
}

PoseSequence interpolate(const BodyPose& a, const BodyPose& b, int k, const BodyShape& shape,
                         Scalar fps) {
  if (k < 2) throw ValidationError("interpolation needs k >= 2 frames, got " + std::to_string(k));
  if (a.joint_count() != b.joint_count())
    throw DimensionError("interpolation endpoints have different joint counts");
  VecX fa = a.flatten(), fb = b.flatten();
  PoseSequence out;
  out.fps = fps;
  out.frames.reserve(static_cast<std::size_t>(k));
  out.frames.push_back({a, shape});
  for (int i = 1; i + 1 < k; ++i) {
    Scalar t = static_cast<Scalar>(i) / static_cast<Scalar>(k - 1);
    VecX theta = (1.0 - t) * fa + t * fb;
    // endpoints are in the [0, pi] ball, which is convex, so no rewrap occurs
    out.frames.push_back({BodyPose::from_flat(theta), shape});
  }
  out.frames.push_back({b, shape});
  return out;
}

PoseSequence prepend_leadin(const PoseSequence& seq, const BodyPose& start, int n) {
  seq.validate();
  if (n < 0) throw ValidationError("lead-in frame count must be >= 0");
  if (n <= 1) return seq;
  PoseSequence lead = interpolate(start, seq.frames.front().pose, n, seq.frames.front().shape,
                                  seq.fps);
  PoseSequence out;
  out.fps = seq.fps;
  out.frames.assign(lead.frames.begin(), lead.frames.end() - 1);
  out.frames.insert(out.frames.end(), seq.frames.begin(), seq.frames.end());
  return out;
}

// File format: first line is a JSON header {"schema_version":1,"fps":...},
// then one JSON object per line with fields "theta" (3K+3) and "beta" (10).
void save_pose_sequence(const PoseSequence& seq, const std::filesystem::path& path) {
  seq.validate();
  std::ostringstream out;
  nlohmann::json header{{"schema_version", 1}, {"fps", seq.fps}};
  out << header.dump() << '\n';
  for (const PoseFrame& f : seq.frames) {
    nlohmann::json line;
    line["theta"] = detail::to_json_vec(f.pose.flatten());
    line["beta"] = detail::to_json_vec(f.shape.beta);
    out << line.dump() << '\n';
  }
  detail::write_file(path, out.str());
}

PoseSequence load_pose_sequence(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError("pose sequence file " + path.string() + " is empty");
  nlohmann::json header = detail::parse_string(line, path.string() + ":1");
  if (!header.contains("fps")) throw IoError("pose sequence header lacks fps");
  PoseSequence seq;
  seq.fps = header["fps"].get<Scalar>();
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec = detail::parse_string(line, path.string() + ":" + std::to_string(lineno));
    if (!rec.contains("theta") || !rec.contains("beta"))
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": frame needs theta and beta");
    PoseFrame f;
    f.pose = BodyPose::from_flat(detail::vec_from_json(rec["theta"], "theta"));
    VecX beta = detail::vec_from_json(rec["beta"], "beta");
    if (beta.size() != 10)
      throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                            ": beta must have exactly 10 entries");
    f.shape.beta = beta;
    seq.frames.push_back(std::move(f));
  }
  seq.validate();
  return seq;
}

}  // namespace meshforge
