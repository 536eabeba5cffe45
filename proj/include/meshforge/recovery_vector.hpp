#pragma once

#include <cmath>

#include "meshforge/types.hpp"

namespace meshforge {

// Per-frame recovery target phi = [theta, beta, global rotation, image
// translation, scale], flattened in that order (88 reals for 24 joints).
// The scale slot stores the raw regressed coordinate; scale() applies the
// positivity map.
struct RecoveryVector {
  VecX theta = VecX::Zero(72);  // axis-angle per joint, root first
  Vec10 beta = Vec10::Zero();
  Vec3 global_rotation = Vec3::Zero();
  Vec2 translation = Vec2::Zero();
  Scalar scale_raw = 0.0;

  static constexpr int kThetaSize = 72;
  static constexpr int kSize = kThetaSize + 10 + 3 + 2 + 1;

  Scalar scale() const { return std::exp(scale_raw); }

  VecX flatten() const {
    VecX out(kSize);
    out.head<kThetaSize>() = theta;
    out.segment<10>(kThetaSize) = beta;
    out.segment<3>(kThetaSize + 10) = global_rotation;
    out.segment<2>(kThetaSize + 13) = translation;
    out(kThetaSize + 15) = scale_raw;
    return out;
  }

  static RecoveryVector from_flat(const VecX& v) {
    RecoveryVector r;
    r.theta = v.head<kThetaSize>();
    r.beta = v.segment<10>(kThetaSize);
    r.global_rotation = v.segment<3>(kThetaSize + 10);
    r.translation = v.segment<2>(kThetaSize + 13);
    r.scale_raw = v(kThetaSize + 15);
    return r;
  }
};

}  // namespace meshforge
