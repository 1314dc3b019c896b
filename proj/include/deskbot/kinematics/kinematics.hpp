#pragma once

#include <filesystem>
#include <numbers>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "deskbot/common/config.hpp"
#include "deskbot/common/error.hpp"

namespace deskbot::kin {

using Vec3 = Eigen::Vector3d;
using Transform4 = Eigen::Matrix4d;
using JointVector = Eigen::VectorXd;
using Jacobian = Eigen::Matrix<double, 6, Eigen::Dynamic>;

// One row of a modified (Craig) DH table. Angles in radians, lengths in meters.
struct DHLink {
  double alpha = 0.0;       // twist about x_{i-1}
  double a = 0.0;           // length along x_{i-1}
  double d = 0.0;           // offset along z_i
  double theta_home = 0.0;  // fixed offset added to the joint variable
  double theta_min = -std::numbers::pi;
  double theta_max = std::numbers::pi;

  void Validate() const;
};

// Throws if `m` is not a rigid homogeneous transform within `tol`.
void CheckRigid(const Transform4& m, double tol = 1e-9);
bool IsRigid(const Transform4& m, double tol = 1e-9);

Transform4 MakeTransform(const Eigen::Matrix3d& rotation, const Vec3& translation);
Transform4 InverseRigid(const Transform4& m);
// Roll-pitch-yaw in radians, composed as Rz(yaw) * Ry(pitch) * Rx(roll).
Eigen::Matrix3d RotationFromRpy(double roll, double pitch, double yaw);

class DHChain {
 public:
  DHChain(std::vector<DHLink> links, Transform4 mount = Transform4::Identity(),
          std::optional<JointVector> home = std::nullopt);

  const std::vector<DHLink>& links() const { return links_; }
  // End-effector to camera transform.
  const Transform4& mount() const { return mount_; }
  int dof() const { return static_cast<int>(links_.size()); }
  // Upper bound on distance from the base origin to the end-effector.
  double Reach() const;

  // Rest posture; the centre of every joint range unless configured.
  const JointVector& Home() const { return home_; }
  bool WithinLimits(const JointVector& q, double tol = 0.0) const;

  // Loads the JSON chain schema (angles in degrees).
  static DHChain FromJson(const Json& j);
  static DHChain Load(const std::filesystem::path& path);
  Json ToJson() const;

 private:
  std::vector<DHLink> links_;
  Transform4 mount_;
  JointVector home_;
};

struct Pose {
  Vec3 position = Vec3::Zero();
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();

  static Pose FromTransform(const Transform4& m);
  Transform4 ToTransform() const;
};

// Angle of the relative rotation between two orientations, in [0, pi].
double OrientationError(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b);

// A_i for joint variable `theta` (theta_home is added, limits are not enforced).
Transform4 DhLinkTransform(const DHLink& link, double theta);

// A_1 A_2 ... A_n; the camera mount is not applied.
Transform4 ForwardKinematics(const DHChain& chain, const JointVector& q);

// k-th entry is A_1 ... A_{k+1}.
std::vector<Transform4> ForwardFrames(const DHChain& chain, const JointVector& q);

// Geometric Jacobian of the end-effector: rows 0-2 linear, 3-5 angular,
// expressed in the base frame.
Jacobian ComputeJacobian(const DHChain& chain, const JointVector& q);

struct IKOptions {
  double pos_tol = 1e-3;
  double rot_tol = 1e-2;
  int max_iters = 200;
  double damping = 0.05;
  double max_step = 0.2;
  // 0 solves for position only.
  double orientation_weight = 1.0;
  // Extra descents from fixed quasi-random seeds when the one from q0 fails.
  int restarts = 16;
};

struct IKResult {
  JointVector q;
  int iterations = 0;
  double position_error = 0.0;
  double orientation_error = 0.0;
};

// Raised when the solver exhausts its iteration budget or the target is out
// of the workspace; carries the best configuration seen.
class UnreachableError : public Error {
 public:
  UnreachableError(const std::string& message, IKResult best, bool workspace)
      : Error(ErrorCode::kUnreachable, message),
        best_(std::move(best)),
        workspace_(workspace) {}

  const IKResult& best() const { return best_; }
  bool outside_workspace() const { return workspace_; }

 private:
  IKResult best_;
  bool workspace_;
};

// Damped least squares with per-iteration joint-limit projection.
IKResult InverseKinematics(const DHChain& chain, const Pose& target,
                           const JointVector& q0, const IKOptions& opts = {});

struct ClampResult {
  JointVector q;
  bool clamped = false;
};

ClampResult ClampJoints(const DHChain& chain, const JointVector& q);

void CheckJointCount(const DHChain& chain, const JointVector& q);

inline double DegToRad(double deg) { return deg * std::numbers::pi / 180.0; }
inline double RadToDeg(double rad) { return rad * 180.0 / std::numbers::pi; }

}  // namespace deskbot::kin
