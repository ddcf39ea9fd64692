#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "pillarmatch/error.hpp"

namespace pillarmatch {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

// Homogeneous 4x4 rigid transform. Column-vector convention: p' = R p + t.
class RigidTransform {
 public:
  RigidTransform() : m_(Mat4::Identity()) {}
  explicit RigidTransform(const Mat4& m) : m_(m) {}
  RigidTransform(const Mat3& rotation, const Vec3& translation) : m_(Mat4::Identity()) {
    m_.topLeftCorner<3, 3>() = rotation;
    m_.topRightCorner<3, 1>() = translation;
  }

  static RigidTransform identity() { return {}; }
  static RigidTransform translation(const Vec3& t) { return {Mat3::Identity(), t}; }
  static RigidTransform rotation(const Vec3& axis, double angle) {
    return {Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix(), Vec3::Zero()};
  }

  const Mat4& matrix() const { return m_; }
  Mat3 rotation() const { return m_.topLeftCorner<3, 3>(); }
  Vec3 translation() const { return m_.topRightCorner<3, 1>(); }

  Vec3 apply(const Vec3& p) const { return rotation() * p + translation(); }

  RigidTransform inverse() const {
    const Mat3 rt = rotation().transpose();
    return {rt, -rt * translation()};
  }

  RigidTransform operator*(const RigidTransform& rhs) const { return RigidTransform(Mat4(m_ * rhs.m_)); }

  // Rotation angle in [0, pi].
  // Equals arccos(clamp((trace R - 1) / 2)) on rotations; the atan2 form keeps
  // full precision near 0 and pi, where arccos loses half the digits.
  double angle() const {
    const Mat3 r = rotation();
    const Vec3 w(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
    return std::atan2(w.norm(), r.trace() - 1.0);
  }

  // Orthonormal rotation block with det +1 and bottom row (0,0,0,1), within tol.
  bool is_valid(double tol = 1e-9) const {
    if (!m_.allFinite()) return false;
    const Mat3 r = rotation();
    if (((r.transpose() * r) - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
    if (std::abs(r.determinant() - 1.0) > tol) return false;
    const Eigen::RowVector4d bottom = m_.row(3);
    return (bottom - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() <= tol;
  }

 private:
  Mat4 m_;
};

// Tolerance used when validating externally supplied transforms (pose files are
// printed with ~7 significant digits).
inline constexpr double kInputTransformTolerance = 1e-5;

inline void require_rigid(const RigidTransform& t, const char* what, double tol = kInputTransformTolerance) {
  require(t.is_valid(tol), ErrorKind::argument, std::string(what) + ": not a valid rigid transform");
}

}  // namespace pillarmatch
