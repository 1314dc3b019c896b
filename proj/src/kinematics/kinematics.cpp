#include "deskbot/kinematics/kinematics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace deskbot::kin {

namespace {

bool Finite(double v) { return std::isfinite(v); }

Vec3 RotationVector(const Eigen::Matrix3d& r) {
  Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

const Json& Require(const Json& j, const char* key) {
  if (!j.contains(key)) {
    throw Error(ErrorCode::kConfig, std::string("chain config: missing '") + key + "'");
  }
  return j.at(key);
}

DHLink LinkFromJson(const Json& j) {
  DHLink link;
  link.alpha = DegToRad(Require(j, "alpha_deg").get<double>());
  link.a = Require(j, "a").get<double>();
  link.d = Require(j, "d").get<double>();
  link.theta_home = DegToRad(j.value("theta_home_deg", 0.0));
  link.theta_min = DegToRad(Require(j, "theta_min_deg").get<double>());
  link.theta_max = DegToRad(Require(j, "theta_max_deg").get<double>());
  return link;
}

}  // namespace

void DHLink::Validate() const {
  for (double v : {alpha, a, d, theta_home, theta_min, theta_max}) {
    if (!Finite(v)) throw Error(ErrorCode::kInvalidArgument, "DH link has a non-finite value");
  }
  if (!(theta_min < theta_max)) {
    throw Error(ErrorCode::kInvalidArgument, "DH link requires theta_min < theta_max");
  }
  if (!(alpha > -std::numbers::pi - 1e-12 && alpha <= std::numbers::pi)) {
    throw Error(ErrorCode::kInvalidArgument, "DH link twist must lie in (-pi, pi]");
  }
}

bool IsRigid(const Transform4& m, double tol) {
  if (!m.allFinite()) return false;
  if (m(3, 0) != 0.0 || m(3, 1) != 0.0 || m(3, 2) != 0.0 || m(3, 3) != 1.0) return false;
  const Eigen::Matrix3d r = m.topLeftCorner<3, 3>();
  const double ortho = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

void CheckRigid(const Transform4& m, double tol) {
  if (!IsRigid(m, tol)) throw Error(ErrorCode::kInvalidArgument, "transform is not rigid");
}

Transform4 MakeTransform(const Eigen::Matrix3d& rotation, const Vec3& translation) {
  Transform4 m = Transform4::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

Transform4 InverseRigid(const Transform4& m) {
  const Eigen::Matrix3d rt = m.topLeftCorner<3, 3>().transpose();
  return MakeTransform(rt, -rt * m.topRightCorner<3, 1>());
}

Eigen::Matrix3d RotationFromRpy(double roll, double pitch, double yaw) {
  return (Eigen::AngleAxisd(yaw, Vec3::UnitZ()) * Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
          Eigen::AngleAxisd(roll, Vec3::UnitX()))
      .toRotationMatrix();
}

DHChain::DHChain(std::vector<DHLink> links, Transform4 mount, std::optional<JointVector> home)
    : links_(std::move(links)), mount_(std::move(mount)) {
  if (links_.empty()) throw Error(ErrorCode::kInvalidArgument, "DH chain needs at least one link");
  for (const auto& link : links_) link.Validate();
  CheckRigid(mount_);
  if (home) {
    if (home->size() != dof()) throw Error(ErrorCode::kDimension, "home posture size mismatch");
    if (!WithinLimits(*home)) throw Error(ErrorCode::kInvalidArgument, "home posture violates limits");
    home_ = *home;
  } else {
    home_.resize(dof());
    for (int i = 0; i < dof(); ++i) home_[i] = 0.5 * (links_[i].theta_min + links_[i].theta_max);
  }
}

double DHChain::Reach() const {
  double reach = 0.0;
  for (const auto& link : links_) reach += std::abs(link.a) + std::abs(link.d);
  return reach;
}

bool DHChain::WithinLimits(const JointVector& q, double tol) const {
  if (q.size() != dof()) return false;
  for (int i = 0; i < dof(); ++i) {
    if (q[i] < links_[i].theta_min - tol || q[i] > links_[i].theta_max + tol) return false;
  }
  return true;
}

DHChain DHChain::FromJson(const Json& j) {
  std::vector<DHLink> links;
  for (const auto& lj : Require(j, "links")) links.push_back(LinkFromJson(lj));
  if (j.contains("wrist_roll") && j["wrist_roll"].value("enabled", false)) {
    links.push_back(LinkFromJson(j["wrist_roll"]));
  }
  Transform4 mount = Transform4::Identity();
  if (j.contains("mount")) {
    const auto& mj = j["mount"];
    const auto t = mj.value("translation", std::vector<double>{0.0, 0.0, 0.0});
    const auto rpy = mj.value("rpy_deg", std::vector<double>{0.0, 0.0, 0.0});
    if (t.size() != 3 || rpy.size() != 3) {
      throw Error(ErrorCode::kConfig, "chain config: mount vectors need 3 entries");
    }
    mount = MakeTransform(RotationFromRpy(DegToRad(rpy[0]), DegToRad(rpy[1]), DegToRad(rpy[2])),
                          Vec3(t[0], t[1], t[2]));
  }
  std::optional<JointVector> home;
  if (j.contains("home_deg")) {
    const auto deg = j["home_deg"].get<std::vector<double>>();
    // A home listed without the optional wrist roll gets its midpoint appended.
    JointVector h(static_cast<int>(links.size()));
    for (int i = 0; i < h.size(); ++i) {
      h[i] = i < static_cast<int>(deg.size())
                 ? DegToRad(deg[i])
                 : 0.5 * (links[i].theta_min + links[i].theta_max);
    }
    home = h;
  }
  try {
    return DHChain(std::move(links), mount, home);
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfig, std::string("chain config: ") + e.what());
  }
}

DHChain DHChain::Load(const std::filesystem::path& path) { return FromJson(LoadJsonFile(path)); }

Json DHChain::ToJson() const {
  Json links = Json::array();
  for (const auto& l : links_) {
    links.push_back({{"alpha_deg", RadToDeg(l.alpha)},
                     {"a", l.a},
                     {"d", l.d},
                     {"theta_home_deg", RadToDeg(l.theta_home)},
                     {"theta_min_deg", RadToDeg(l.theta_min)},
                     {"theta_max_deg", RadToDeg(l.theta_max)}});
  }
  const Eigen::Matrix3d r = mount_.topLeftCorner<3, 3>();
  const Vec3 ypr = r.eulerAngles(2, 1, 0);
  std::vector<double> home_deg;
  for (int i = 0; i < dof(); ++i) home_deg.push_back(RadToDeg(home_[i]));
  return {{"links", links},
          {"home_deg", home_deg},
          {"mount",
           {{"translation", {mount_(0, 3), mount_(1, 3), mount_(2, 3)}},
            {"rpy_deg", {RadToDeg(ypr[2]), RadToDeg(ypr[1]), RadToDeg(ypr[0])}}}}};
}

Pose Pose::FromTransform(const Transform4& m) {
  Pose p;
  p.position = m.topRightCorner<3, 1>();
  p.orientation = Eigen::Quaterniond(Eigen::Matrix3d(m.topLeftCorner<3, 3>())).normalized();
  return p;
}

Transform4 Pose::ToTransform() const {
  return MakeTransform(orientation.normalized().toRotationMatrix(), position);
}

double OrientationError(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b) {
  const Eigen::Quaterniond rel = a.normalized() * b.normalized().conjugate();
  return 2.0 * std::atan2(rel.vec().norm(), std::abs(rel.w()));
}

Transform4 DhLinkTransform(const DHLink& link, double theta) {
  if (!Finite(theta) || !Finite(link.alpha) || !Finite(link.a) || !Finite(link.d) ||
      !Finite(link.theta_home)) {
    throw Error(ErrorCode::kInvalidArgument, "DH transform needs finite inputs");
  }
  const double th = link.theta_home + theta;
  const double ct = std::cos(th), st = std::sin(th);
  const double ca = std::cos(link.alpha), sa = std::sin(link.alpha);
  Transform4 m;
  m << ct, -st, 0.0, link.a,
       st * ca, ct * ca, -sa, -sa * link.d,
       st * sa, ct * sa, ca, ca * link.d,
       0.0, 0.0, 0.0, 1.0;
  return m;
}

void CheckJointCount(const DHChain& chain, const JointVector& q) {
  if (q.size() != chain.dof()) {
    std::ostringstream ss;
    ss << "joint vector has " << q.size() << " entries, chain has " << chain.dof();
    throw Error(ErrorCode::kDimension, ss.str());
  }
}

Transform4 ForwardKinematics(const DHChain& chain, const JointVector& q) {
  CheckJointCount(chain, q);
  Transform4 t = Transform4::Identity();
  for (int i = 0; i < chain.dof(); ++i) t = t * DhLinkTransform(chain.links()[i], q[i]);
  return t;
}

std::vector<Transform4> ForwardFrames(const DHChain& chain, const JointVector& q) {
  CheckJointCount(chain, q);
  std::vector<Transform4> frames;
  frames.reserve(chain.dof());
  Transform4 t = Transform4::Identity();
  for (int i = 0; i < chain.dof(); ++i) {
    t = t * DhLinkTransform(chain.links()[i], q[i]);
    frames.push_back(t);
  }
  return frames;
}

Jacobian ComputeJacobian(const DHChain& chain, const JointVector& q) {
  const auto frames = ForwardFrames(chain, q);
  const Vec3 p_end = frames.back().topRightCorner<3, 1>();
  Jacobian jac(6, chain.dof());
  // With modified DH, joint i rotates about z of frame i.
  for (int i = 0; i < chain.dof(); ++i) {
    const Vec3 z = frames[i].block<3, 1>(0, 2);
    const Vec3 p = frames[i].topRightCorner<3, 1>();
    jac.block<3, 1>(0, i) = z.cross(p_end - p);
    jac.block<3, 1>(3, i) = z;
  }
  return jac;
}

ClampResult ClampJoints(const DHChain& chain, const JointVector& q) {
  CheckJointCount(chain, q);
  ClampResult out{q, false};
  for (int i = 0; i < chain.dof(); ++i) {
    const auto& l = chain.links()[i];
    const double c = std::clamp(q[i], l.theta_min, l.theta_max);
    if (c != q[i]) {
      out.q[i] = c;
      out.clamped = true;
    }
  }
  return out;
}

namespace {

double Cost(const IKResult& r, const IKOptions& opts) {
  return r.position_error / opts.pos_tol +
         (opts.orientation_weight > 0.0 ? r.orientation_error / opts.rot_tol : 0.0);
}

// Radical inverse in the given prime base.
double Halton(int index, int base) {
  double f = 1.0, r = 0.0;
  for (int i = index; i > 0; i /= base) {
    f /= base;
    r += f * (i % base);
  }
  return r;
}

constexpr int kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37};

// One damped-least-squares descent from `start`. Returns true on convergence;
// `best` always holds the lowest-cost iterate.
bool SolveFrom(const DHChain& chain, const Pose& target, const JointVector& start,
               const IKOptions& opts, IKResult& best) {
  const bool use_rotation = opts.orientation_weight > 0.0;
  const Eigen::Matrix3d r_target = target.orientation.normalized().toRotationMatrix();
  JointVector q = ClampJoints(chain, start).q;
  double best_cost = std::numeric_limits<double>::infinity();
  const int rows = use_rotation ? 6 : 3;
  const double lambda2 = opts.damping * opts.damping;

  for (int iter = 0;; ++iter) {
    const Transform4 t = ForwardKinematics(chain, q);
    const Vec3 e_pos = target.position - t.topRightCorner<3, 1>();
    const Eigen::Matrix3d r = t.topLeftCorner<3, 3>();
    const Vec3 e_rot = RotationVector(r_target * r.transpose());
    const double pos_err = e_pos.norm();
    const double rot_err = e_rot.norm();

    const IKResult current{q, iter, pos_err, rot_err};
    if (const double cost = Cost(current, opts); cost < best_cost) {
      best_cost = cost;
      best = current;
    }
    if (pos_err <= opts.pos_tol && (!use_rotation || rot_err <= opts.rot_tol)) return true;
    if (iter >= opts.max_iters) return false;

    const Jacobian jac = ComputeJacobian(chain, q);
    Eigen::VectorXd err(rows);
    Eigen::MatrixXd j_used(rows, chain.dof());
    err.head<3>() = e_pos;
    j_used.topRows<3>() = jac.topRows<3>();
    if (use_rotation) {
      err.tail<3>() = opts.orientation_weight * e_rot;
      j_used.bottomRows<3>() = opts.orientation_weight * jac.bottomRows<3>();
    }
    // Joints resting on a limit that the step would push further out are
    // frozen and the remaining joints re-solved.
    std::vector<bool> frozen(chain.dof(), false);
    JointVector dq;
    for (int pass = 0; pass <= chain.dof(); ++pass) {
      Eigen::MatrixXd j_free = j_used;
      for (int i = 0; i < chain.dof(); ++i) {
        if (frozen[i]) j_free.col(i).setZero();
      }
      const Eigen::MatrixXd jjt =
          j_free * j_free.transpose() + lambda2 * Eigen::MatrixXd::Identity(rows, rows);
      dq = j_free.transpose() * jjt.ldlt().solve(err);
      bool changed = false;
      for (int i = 0; i < chain.dof(); ++i) {
        const auto& l = chain.links()[i];
        if (frozen[i]) continue;
        if ((q[i] >= l.theta_max && dq[i] > 0) || (q[i] <= l.theta_min && dq[i] < 0)) {
          frozen[i] = true;
          changed = true;
        }
      }
      if (!changed) break;
    }
    const double step = dq.cwiseAbs().maxCoeff();
    if (step > opts.max_step) dq *= opts.max_step / step;
    q = ClampJoints(chain, q + dq).q;
  }
}

}  // namespace

IKResult InverseKinematics(const DHChain& chain, const Pose& target, const JointVector& q0,
                           const IKOptions& opts) {
  CheckJointCount(chain, q0);
  if (!target.position.allFinite() || !target.orientation.coeffs().allFinite()) {
    throw Error(ErrorCode::kInvalidArgument, "IK target must be finite");
  }
  IKResult best;
  best.q = ClampJoints(chain, q0).q;
  best.position_error = best.orientation_error = std::numeric_limits<double>::infinity();
  if (target.position.norm() > chain.Reach() + opts.pos_tol) {
    throw UnreachableError("IK target lies outside the workspace", best, true);
  }

  // q0 first, then a fixed Halton sequence over the joint box.
  for (int attempt = 0; attempt <= opts.restarts; ++attempt) {
    JointVector start = q0;
    if (attempt > 0) {
      for (int i = 0; i < chain.dof(); ++i) {
        const auto& l = chain.links()[i];
        const double u = Halton(attempt, kPrimes[i % std::size(kPrimes)]);
        start[i] = l.theta_min + u * (l.theta_max - l.theta_min);
      }
    }
    IKResult local;
    const bool converged = SolveFrom(chain, target, start, opts, local);
    if (converged) return local;
    if (Cost(local, opts) < Cost(best, opts)) best = local;
  }

  std::ostringstream ss;
  ss << "IK did not converge in " << opts.max_iters << " iterations (position residual "
     << best.position_error << " m, orientation residual " << best.orientation_error << " rad)";
  throw UnreachableError(ss.str(), best, false);
}

}  // namespace deskbot::kin
