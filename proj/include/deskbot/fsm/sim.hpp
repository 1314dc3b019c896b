#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "deskbot/common/rng.hpp"
#include "deskbot/kinematics/kinematics.hpp"
#include "deskbot/perception/perception.hpp"

namespace deskbot::fsm {

using kin::JointVector;
using kin::Vec3;

struct WorldConfig {
  double desk_z = -0.05;
  double servo_sigma = 0.012;      // rad, per joint, resampled on every new move
  double max_joint_step = 0.04;    // rad per tick
  double stuck_threshold = 0.1;    // rad
  int stuck_ticks = 5;
  double touch_tolerance = 0.005;  // m
  double press_depth = 0.002;      // m below the face that registers a press
  double press_deadband = 0.003;   // m either side of the rocker pivot
  double upright_drop = 0.02;      // m; longer falls tip the object over
  JointVector observe_pose;        // rad; look-down pose used for searching

  static WorldConfig FromJson(const Json& j, int dof);
  Json ToJson() const;
};

// Blocks one joint for a while: its measured angle stops following the
// command.
struct Disturbance {
  int joint = 0;
  int start_tick = 0;
  int duration = 0;
};

struct PressEvent {
  int tick = 0;
  int object_id = 0;
  std::string end;  // "near" or "far"
};

class SimWorld {
 public:
  SimWorld(kin::DHChain chain, perception::Scene scene, perception::CameraModel camera,
           perception::DetectorProfile detector, WorldConfig config, uint64_t seed);

  const kin::DHChain& chain() const { return chain_; }
  const perception::Scene& scene() const { return scene_; }
  const WorldConfig& config() const { return config_; }
  int tick() const { return tick_; }

  const JointVector& commanded() const { return commanded_; }
  const JointVector& actual() const { return actual_; }
  Vec3 EndEffector() const;
  kin::Pose EndEffectorPose() const;

  // Starts a joint-space move; the trajectory advances in Step().
  void MoveTo(const JointVector& q);
  bool Settled() const { return !goal_; }
  // Stops where the arm actually is.
  void Halt();

  void Step();

  bool stuck() const { return stuck_; }
  bool collision() const { return collision_; }
  void ClearCollision() { collision_ = false; }
  // There is no contact model; collisions only come from here.
  void InjectCollision() { collision_ = true; }
  void AddDisturbance(const Disturbance& d) { disturbances_.push_back(d); }

  // Looks for any of `classes` from the current (actual) camera pose.
  perception::LocateResult Locate(const std::vector<std::string>& classes);

  // Top-face center of an object.
  std::optional<Vec3> TopCenter(int object_id) const;
  double DistanceTo(const Vec3& p) const { return (EndEffector() - p).norm(); }

  // Picks up the graspable object whose top center is within the touch
  // tolerance of the end effector.
  std::optional<int> Grasp();
  std::optional<int> held() const { return held_; }
  // Vertical distance from the end effector to the bottom of the held object.
  double HeldDepth() const;
  void Release();

  bool light_on() const { return light_on_; }
  void set_light_on(bool on) { light_on_ = on; }
  bool door_unlocked() const { return door_unlocked_; }
  bool upright(int object_id) const;
  const std::vector<PressEvent>& presses() const { return presses_; }

 private:
  void UpdateContacts();
  void SampleServoError();

  kin::DHChain chain_;
  perception::Scene scene_;
  perception::CameraModel camera_;
  perception::DetectorProfile detector_;
  WorldConfig config_;
  uint64_t seed_;
  Rng servo_rng_;
  uint64_t locate_count_ = 0;

  int tick_ = 0;
  JointVector commanded_;
  JointVector actual_;
  JointVector servo_error_;
  std::optional<JointVector> goal_;
  std::vector<Disturbance> disturbances_;
  int divergence_ticks_ = 0;
  bool stuck_ = false;
  bool collision_ = false;

  std::optional<int> held_;
  Vec3 grasp_offset_ = Vec3::Zero();
  std::map<int, bool> upright_;
  std::map<int, bool> in_contact_;
  std::vector<PressEvent> presses_;
  bool light_on_ = false;
  bool door_unlocked_ = false;
};

}  // namespace deskbot::fsm
