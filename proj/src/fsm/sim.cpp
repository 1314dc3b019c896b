#include "deskbot/fsm/sim.hpp"

#include <algorithm>
#include <cmath>

namespace deskbot::fsm {

namespace {

bool IsSwitch(const std::string& label) { return label == "light_switch" || label == "door_switch"; }

}  // namespace

WorldConfig WorldConfig::FromJson(const Json& j, int dof) {
  WorldConfig c;
  c.desk_z = j.value("desk_z", c.desk_z);
  c.servo_sigma = j.value("servo_sigma", c.servo_sigma);
  c.max_joint_step = j.value("max_joint_step", c.max_joint_step);
  c.stuck_threshold = j.value("stuck_threshold", c.stuck_threshold);
  c.stuck_ticks = j.value("stuck_ticks", c.stuck_ticks);
  c.touch_tolerance = j.value("touch_tolerance", c.touch_tolerance);
  c.press_depth = j.value("press_depth", c.press_depth);
  c.press_deadband = j.value("press_deadband", c.press_deadband);
  c.upright_drop = j.value("upright_drop", c.upright_drop);
  if (j.contains("observe_pose_deg")) {
    const auto deg = j.at("observe_pose_deg").get<std::vector<double>>();
    if (static_cast<int>(deg.size()) != dof) {
      throw Error(ErrorCode::kConfig, "observe_pose_deg needs one angle per joint");
    }
    c.observe_pose = JointVector(dof);
    for (int i = 0; i < dof; ++i) c.observe_pose[i] = kin::DegToRad(deg[static_cast<size_t>(i)]);
  }
  if (c.max_joint_step <= 0 || c.stuck_ticks < 1 || c.touch_tolerance <= 0 || c.servo_sigma < 0) {
    throw Error(ErrorCode::kConfig, "invalid world configuration");
  }
  return c;
}

Json WorldConfig::ToJson() const {
  std::vector<double> deg;
  for (Eigen::Index i = 0; i < observe_pose.size(); ++i) deg.push_back(kin::RadToDeg(observe_pose[i]));
  return {{"desk_z", desk_z},
          {"servo_sigma", servo_sigma},
          {"max_joint_step", max_joint_step},
          {"stuck_threshold", stuck_threshold},
          {"stuck_ticks", stuck_ticks},
          {"touch_tolerance", touch_tolerance},
          {"press_depth", press_depth},
          {"press_deadband", press_deadband},
          {"upright_drop", upright_drop},
          {"observe_pose_deg", deg}};
}

SimWorld::SimWorld(kin::DHChain chain, perception::Scene scene, perception::CameraModel camera,
                   perception::DetectorProfile detector, WorldConfig config, uint64_t seed)
    : chain_(std::move(chain)),
      scene_(std::move(scene)),
      camera_(camera),
      detector_(detector),
      config_(std::move(config)),
      seed_(seed),
      servo_rng_(DeriveSeed(seed, HashTag("servo"))) {
  scene_.Validate();
  camera_.Validate();
  if (config_.observe_pose.size() == 0) {
    config_.observe_pose = JointVector::Zero(chain_.dof());
    if (chain_.dof() == 5) {
      config_.observe_pose << 0.0, kin::DegToRad(-90), kin::DegToRad(90), 0.0, 0.0;
    }
  }
  kin::CheckJointCount(chain_, config_.observe_pose);
  commanded_ = chain_.Home();
  actual_ = commanded_;
  servo_error_ = JointVector::Zero(chain_.dof());
}

Vec3 SimWorld::EndEffector() const {
  return kin::ForwardKinematics(chain_, actual_).block<3, 1>(0, 3);
}

kin::Pose SimWorld::EndEffectorPose() const {
  return kin::Pose::FromTransform(kin::ForwardKinematics(chain_, actual_));
}

void SimWorld::SampleServoError() {
  for (Eigen::Index i = 0; i < servo_error_.size(); ++i) {
    servo_error_[i] = servo_rng_.Normal(0.0, config_.servo_sigma);
  }
}

void SimWorld::MoveTo(const JointVector& q) {
  kin::CheckJointCount(chain_, q);
  goal_ = q;
  SampleServoError();
}

void SimWorld::Halt() {
  goal_.reset();
  commanded_ = actual_;
  servo_error_.setZero();
}

void SimWorld::Step() {
  ++tick_;
  if (goal_) {
    const JointVector delta = *goal_ - commanded_;
    const double ratio = delta.cwiseAbs().maxCoeff() / config_.max_joint_step;
    if (ratio <= 1.0) {
      commanded_ = *goal_;
      goal_.reset();
    } else {
      commanded_ += delta / ratio;
    }
  }
  const JointVector previous = actual_;
  actual_ = commanded_ + servo_error_;
  for (const auto& d : disturbances_) {
    if (tick_ >= d.start_tick && tick_ < d.start_tick + d.duration && d.joint >= 0 &&
        d.joint < actual_.size()) {
      actual_[d.joint] = previous[d.joint];
    }
  }

  const double divergence = (commanded_ - actual_).cwiseAbs().maxCoeff();
  divergence_ticks_ = divergence > config_.stuck_threshold ? divergence_ticks_ + 1 : 0;
  stuck_ = divergence_ticks_ >= config_.stuck_ticks;

  if (held_) {
    for (auto& o : scene_.objects) {
      if (o.id == *held_) o.center_world = EndEffector() + grasp_offset_;
    }
  }
  UpdateContacts();
}

void SimWorld::UpdateContacts() {
  const Vec3 ee = EndEffector();
  for (const auto& o : scene_.objects) {
    if (!IsSwitch(o.class_label)) continue;
    const Vec3 d = ee - o.center_world;
    const double top = o.center_world.z() + o.half_extents.z();
    const bool over = std::abs(d.x()) <= o.half_extents.x() && std::abs(d.y()) <= o.half_extents.y();
    bool& touching = in_contact_[o.id];
    if (!over || ee.z() > top) {
      touching = false;
      continue;
    }
    if (touching || ee.z() > top - config_.press_depth) continue;
    touching = true;
    Eigen::Vector2d radial = o.center_world.head<2>();
    if (radial.norm() == 0.0) radial = Eigen::Vector2d::UnitX();
    const double s = d.head<2>().dot(radial.normalized());
    if (std::abs(s) <= config_.press_deadband) continue;
    const bool near = s < 0.0;
    presses_.push_back({tick_, o.id, near ? "near" : "far"});
    if (o.class_label == "light_switch") light_on_ = near;
    if (o.class_label == "door_switch" && !near) door_unlocked_ = true;
  }
}

perception::LocateResult SimWorld::Locate(const std::vector<std::string>& classes) {
  perception::Scene visible = scene_;
  if (held_) {
    std::erase_if(visible.objects, [&](const auto& o) { return o.id == *held_; });
  }
  const uint64_t seed = DeriveSeed(DeriveSeed(seed_, HashTag("locate")), locate_count_++);
  perception::LocateResult best;
  for (const auto& label : classes) {
    auto r = perception::Locate(visible, camera_, chain_, actual_, label, seed, detector_);
    if (r.found) {
      if (!best.found || r.found->confidence > best.found->confidence) best = std::move(r);
    } else if (!best.found && best.reason.empty()) {
      best.reason = r.reason;
    }
  }
  if (classes.empty()) best.reason = "no-detection";
  return best;
}

std::optional<Vec3> SimWorld::TopCenter(int object_id) const {
  const auto* o = scene_.Find(object_id);
  if (!o) return std::nullopt;
  return Vec3(o->center_world + Vec3(0, 0, o->half_extents.z()));
}

std::optional<int> SimWorld::Grasp() {
  if (held_) return std::nullopt;
  const Vec3 ee = EndEffector();
  for (const auto& o : scene_.objects) {
    if (!o.graspable) continue;
    const Vec3 top = o.center_world + Vec3(0, 0, o.half_extents.z());
    if ((top - ee).norm() <= config_.touch_tolerance) {
      held_ = o.id;
      grasp_offset_ = o.center_world - ee;
      return held_;
    }
  }
  return std::nullopt;
}

double SimWorld::HeldDepth() const {
  if (!held_) return 0.0;
  return scene_.Find(*held_)->half_extents.z() - grasp_offset_.z();
}

void SimWorld::Release() {
  if (!held_) return;
  const int id = *held_;
  held_.reset();
  auto it = std::find_if(scene_.objects.begin(), scene_.objects.end(),
                         [&](const auto& o) { return o.id == id; });
  perception::SceneObject& obj = *it;
  const double bottom = obj.center_world.z() - obj.half_extents.z();
  double support = config_.desk_z;
  for (const auto& o : scene_.objects) {
    if (o.id == id) continue;
    const Vec3 d = (obj.center_world - o.center_world).cwiseAbs();
    const double top = o.center_world.z() + o.half_extents.z();
    if (d.x() <= o.half_extents.x() && d.y() <= o.half_extents.y() && top <= bottom + 1e-9) {
      support = std::max(support, top);
    }
  }
  const double drop = bottom - support;
  if (drop > config_.upright_drop) upright_[id] = false;
  obj.center_world.z() = support + obj.half_extents.z();
}

bool SimWorld::upright(int object_id) const {
  const auto it = upright_.find(object_id);
  return it == upright_.end() || it->second;
}

}  // namespace deskbot::fsm
