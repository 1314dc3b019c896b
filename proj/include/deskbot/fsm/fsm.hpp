#pragma once

#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "deskbot/fsm/sim.hpp"
#include "deskbot/nlu/nlu.hpp"

namespace deskbot::fsm {

// Source of transitions evaluated in every state.
inline constexpr std::string_view kAnyState = "*";

struct StateSpec {
  std::string name;
  std::string action;
};

struct TransitionSpec {
  std::string from;
  std::string to;
  std::string guard;
  int priority = 0;      // higher wins among transitions from the same source
  std::string reason;    // recorded, and becomes fault_reason when entering Fault
};

struct MachineConfig {
  int max_search_attempts = 3;
  int max_approach_attempts = 4;
  int max_collisions = 3;
  int special_timeout_ticks = 50;
  double approach_height = 0.02;
  double press_offset = 0.01;
  double press_travel = 0.005;
  double lift_height = 0.03;
  double place_clearance = 0.005;

  static MachineConfig FromJson(const Json& j);
  Json ToJson() const;
};

struct MachineSpec {
  std::string name;
  std::string initial = "Idle";
  std::vector<StateSpec> states;
  std::vector<TransitionSpec> transitions;
  MachineConfig config;

  const StateSpec* FindState(std::string_view name) const;

  static MachineSpec FromJson(const Json& j);
  static MachineSpec Load(const std::filesystem::path& path);
  Json ToJson() const;
};

struct ValidationIssue {
  std::string code;
  std::string message;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<ValidationIssue> issues);
  const std::vector<ValidationIssue>& issues() const { return issues_; }

 private:
  std::vector<ValidationIssue> issues_;
};

const std::vector<std::string>& KnownGuards();
const std::vector<std::string>& KnownActions();

// Every problem found, empty when the spec is usable.
std::vector<ValidationIssue> Validate(const MachineSpec& spec);

// Non-Fault states from which no path of transitions leads to Reset.
std::vector<std::string> StatesWithoutReset(const MachineSpec& spec);

struct GlobalStore {
  std::string target_name;
  std::optional<Vec3> end_position;
  std::optional<Vec3> destination_position;
  std::string fault_reason;

  nlu::Command command;
  std::string phase;  // "press", "fetch", "place" or empty
  std::string destination_name;
  std::optional<int> goal_object;
  int search_attempts = 0;
  int approach_attempts = 0;
  int collisions = 0;
  bool located = false;
  bool move_failed = false;
  bool missing_end_position = false;
  bool grab_failed = false;

  void ClearTask();
  Json ToJson() const;
};

struct TransitionRecord {
  int tick = 0;
  std::string from;
  std::string to;
  std::string guard;
  std::string reason;

  Json ToJson() const;
  bool operator==(const TransitionRecord&) const = default;
};

class Machine;

// One multi-tick behavior bound to a state.
class Action {
 public:
  virtual ~Action() = default;
  // Returns true once the action has finished.
  virtual bool Step(Machine& m) = 0;
};

class Machine {
 public:
  // Throws ValidationError when the spec is unusable.
  Machine(MachineSpec spec, SimWorld& world);

  const std::string& state() const { return state_; }
  int tick() const { return tick_; }
  const GlobalStore& globals() const { return store_; }
  GlobalStore& mutable_globals() { return store_; }
  SimWorld& world() { return world_; }
  const SimWorld& world() const { return world_; }
  const MachineConfig& config() const { return spec_.config; }
  const std::vector<TransitionRecord>& log() const { return log_; }
  int ticks_in_state() const { return ticks_in_state_; }
  bool action_done() const { return action_done_; }

  // Requests are applied at the start of the next tick, in arrival order.
  void Dispatch(const nlu::Command& command);
  void SetVar(const std::string& name, const Json& value);
  void EmergencyStop();
  bool HasPendingRequests() const { return !pending_.empty(); }

  // Test hook: pins a guard to a value until cleared with nullopt.
  void ForceGuard(const std::string& guard, std::optional<bool> value);

  std::optional<TransitionRecord> Tick();

  std::vector<Json> TakeAlerts();
  Json Telemetry() const;
  std::string LogJsonLines() const;

  // Ground-truth point the current goal refers to, if any.
  std::optional<Vec3> GoalTruth() const;
  bool Touching() const;

 private:
  struct DispatchRequest {
    nlu::Command command;
  };
  struct SetVarRequest {
    std::string name;
    Json value;
  };
  struct StopRequest {};
  using Request = std::variant<DispatchRequest, SetVarRequest, StopRequest>;

  bool EvaluateGuard(const std::string& guard);
  std::optional<TransitionRecord> Evaluate(bool any_state);
  TransitionRecord Enter(const std::string& to, const std::string& guard, const std::string& reason);
  void Alert(const std::string& kind, const std::string& detail);

  MachineSpec spec_;
  SimWorld& world_;
  GlobalStore store_;
  std::string state_;
  int tick_ = 0;
  int ticks_in_state_ = 0;
  std::unique_ptr<Action> action_;
  bool action_done_ = false;
  // Priority of the wildcard transition whose target is the current state and
  // whose guard holds this tick.
  std::optional<int> hold_priority_;
  std::deque<Request> pending_;
  std::map<std::string, bool> forced_;
  std::vector<TransitionRecord> log_;
  std::vector<Json> alerts_;
};

class ScenarioTimeout : public Error {
 public:
  ScenarioTimeout(int ticks, std::vector<TransitionRecord> trace);
  const std::vector<TransitionRecord>& trace() const { return trace_; }

 private:
  std::vector<TransitionRecord> trace_;
};

// Dispatches `command` and ticks until the machine is back in Idle or lands
// in Fault. Throws ScenarioTimeout after `max_ticks`.
std::vector<TransitionRecord> RunScenario(Machine& machine, const nlu::Command& command,
                                          int max_ticks = 5000);

}  // namespace deskbot::fsm
