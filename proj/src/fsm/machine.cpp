#include <algorithm>
#include <functional>
#include <set>
#include <sstream>

#include "deskbot/fsm/fsm.hpp"

namespace deskbot::fsm {

namespace {

Json VecJson(const std::optional<Vec3>& v) {
  if (!v) return nullptr;
  return Json::array({v->x(), v->y(), v->z()});
}

Json JointsJson(const JointVector& q) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < q.size(); ++i) a.push_back(q[i]);
  return a;
}

// Look-alike classes a search also accepts when the request was ambiguous.
std::vector<std::string> SearchClasses(const GlobalStore& s) {
  std::vector<std::string> classes{s.target_name};
  if (s.phase == "fetch" && s.command.ambiguous && s.target_name == "paper_cup") {
    classes.emplace_back("water_bottle");
  }
  return classes;
}

Vec3 RadialOffset(const Vec3& at, double offset, nlu::PressEnd end) {
  Eigen::Vector2d radial = at.head<2>();
  if (radial.norm() == 0.0) radial = Eigen::Vector2d::UnitX();
  radial.normalize();
  const double sign = end == nlu::PressEnd::kNear ? -1.0 : 1.0;
  return {sign * offset * radial.x(), sign * offset * radial.y(), 0.0};
}

std::optional<JointVector> Solve(const SimWorld& w, const Vec3& target) {
  kin::IKOptions opts;
  opts.orientation_weight = 0.0;
  kin::Pose pose;
  pose.position = target;
  try {
    return kin::InverseKinematics(w.chain(), pose, w.commanded(), opts).q;
  } catch (const kin::UnreachableError&) {
    return std::nullopt;
  }
}

// Executes a list of Cartesian waypoints, one settled move after another.
class WaypointRunner {
 public:
  // Returns nullopt while moving, false if a waypoint is unreachable.
  std::optional<bool> Step(SimWorld& w, const std::vector<Vec3>& points) {
    if (moving_) {
      if (!w.Settled()) return std::nullopt;
      moving_ = false;
      ++next_;
    }
    if (next_ >= points.size()) return true;
    const auto q = Solve(w, points[next_]);
    if (!q) return false;
    w.MoveTo(*q);
    moving_ = true;
    return std::nullopt;
  }

 private:
  size_t next_ = 0;
  bool moving_ = false;
};

class InstantAction : public Action {
 public:
  bool Step(Machine&) override { return true; }
};

class HaltAction : public Action {
 public:
  bool Step(Machine& m) override {
    m.world().Halt();
    m.world().ClearCollision();
    return true;
  }
};

class SearchAction : public Action {
 public:
  bool Step(Machine& m) override {
    SimWorld& w = m.world();
    GlobalStore& s = m.mutable_globals();
    if (!started_) {
      started_ = true;
      s.located = false;
      w.MoveTo(w.config().observe_pose);
      return false;
    }
    if (!w.Settled()) return false;
    const auto r = w.Locate(SearchClasses(s));
    if (!r.found) {
      ++s.search_attempts;
      return true;
    }
    const MachineConfig& c = m.config();
    const Vec3 p = r.found->position_world;
    s.located = true;
    s.goal_object = r.found->source_id;
    if (s.phase == "press") {
      s.end_position = p + RadialOffset(p, c.press_offset, s.command.press_end);
    } else if (s.phase == "place") {
      s.end_position = p + Vec3(0, 0, w.HeldDepth() + c.place_clearance);
      s.destination_position = p;
    } else {
      s.end_position = p;
    }
    return true;
  }

 private:
  bool started_ = false;
};

class MoveAction : public Action {
 public:
  bool Step(Machine& m) override {
    GlobalStore& s = m.mutable_globals();
    if (!s.end_position) {
      s.missing_end_position = true;
      return true;
    }
    if (points_.empty()) {
      s.move_failed = false;
      const Vec3 end = *s.end_position;
      points_ = {end + Vec3(0, 0, m.config().approach_height), end};
    }
    const auto r = runner_.Step(m.world(), points_);
    if (!r) return false;
    if (!*r) s.move_failed = true;
    ++s.approach_attempts;
    return true;
  }

 private:
  std::vector<Vec3> points_;
  WaypointRunner runner_;
};

class PressAction : public Action {
 public:
  bool Step(Machine& m) override {
    if (points_.empty()) {
      const Vec3 end = m.globals().end_position.value_or(m.world().EndEffector());
      points_ = {end - Vec3(0, 0, m.config().press_travel), end + Vec3(0, 0, m.config().approach_height)};
    }
    return runner_.Step(m.world(), points_).has_value();
  }

 private:
  std::vector<Vec3> points_;
  WaypointRunner runner_;
};

class GrabAction : public Action {
 public:
  bool Step(Machine& m) override {
    GlobalStore& s = m.mutable_globals();
    if (points_.empty()) {
      if (!m.world().Grasp()) {
        s.grab_failed = true;
        return true;
      }
      points_ = {m.world().EndEffector() + Vec3(0, 0, m.config().lift_height)};
    }
    if (!runner_.Step(m.world(), points_)) return false;
    s.phase = "place";
    s.target_name = s.destination_name;
    s.end_position.reset();
    s.goal_object.reset();
    s.search_attempts = 0;
    s.approach_attempts = 0;
    return true;
  }

 private:
  std::vector<Vec3> points_;
  WaypointRunner runner_;
};

class PlaceAction : public Action {
 public:
  bool Step(Machine& m) override {
    if (points_.empty()) {
      m.world().Release();
      points_ = {m.world().EndEffector() + Vec3(0, 0, m.config().lift_height)};
    }
    return runner_.Step(m.world(), points_).has_value();
  }

 private:
  std::vector<Vec3> points_;
  WaypointRunner runner_;
};

class ResetAction : public Action {
 public:
  bool Step(Machine& m) override {
    SimWorld& w = m.world();
    if (!started_) {
      started_ = true;
      w.Release();
      w.MoveTo(w.chain().Home());
      return false;
    }
    if (!w.Settled()) return false;
    const int collisions = m.globals().collisions;
    m.mutable_globals().ClearTask();
    m.mutable_globals().collisions = collisions;
    return true;
  }

 private:
  bool started_ = false;
};

using ActionFactory = std::function<std::unique_ptr<Action>()>;

const std::map<std::string, ActionFactory>& ActionRegistry() {
  static const std::map<std::string, ActionFactory> r{
      {"idle", [] { return std::make_unique<InstantAction>(); }},
      {"accept_command", [] { return std::make_unique<InstantAction>(); }},
      {"search", [] { return std::make_unique<SearchAction>(); }},
      {"move", [] { return std::make_unique<MoveAction>(); }},
      {"press", [] { return std::make_unique<PressAction>(); }},
      {"grab", [] { return std::make_unique<GrabAction>(); }},
      {"place", [] { return std::make_unique<PlaceAction>(); }},
      {"reset", [] { return std::make_unique<ResetAction>(); }},
      {"halt", [] { return std::make_unique<HaltAction>(); }},
  };
  return r;
}

using GuardFn = std::function<bool(const Machine&)>;

const std::map<std::string, GuardFn>& GuardRegistry() {
  static const std::map<std::string, GuardFn> r{
      {"always", [](const Machine&) { return true; }},
      {"fault_requested", [](const Machine& m) { return !m.globals().fault_reason.empty(); }},
      {"collision_detected", [](const Machine& m) { return m.world().collision(); }},
      {"stuck_detected", [](const Machine& m) { return m.world().stuck(); }},
      {"has_target",
       [](const Machine& m) { return m.globals().command.function != nlu::Function::kNoop; }},
      {"noop_command",
       [](const Machine& m) { return m.globals().command.function == nlu::Function::kNoop; }},
      {"located", [](const Machine& m) { return m.globals().located; }},
      {"not_located",
       [](const Machine& m) {
         return !m.globals().located && m.globals().search_attempts < m.config().max_search_attempts;
       }},
      {"search_exhausted",
       [](const Machine& m) {
         return !m.globals().located && m.globals().search_attempts >= m.config().max_search_attempts;
       }},
      {"missing_end_position", [](const Machine& m) { return m.globals().missing_end_position; }},
      {"move_failed", [](const Machine& m) { return m.globals().move_failed; }},
      {"touching_press_target",
       [](const Machine& m) { return m.globals().phase == "press" && m.Touching(); }},
      {"touching_grasp_target",
       [](const Machine& m) { return m.globals().phase == "fetch" && m.Touching(); }},
      {"touching_place_target",
       [](const Machine& m) { return m.globals().phase == "place" && m.Touching(); }},
      {"not_touching",
       [](const Machine& m) {
         return !m.Touching() && m.globals().approach_attempts < m.config().max_approach_attempts;
       }},
      {"approach_exhausted",
       [](const Machine& m) {
         return !m.Touching() && m.globals().approach_attempts >= m.config().max_approach_attempts;
       }},
      {"holding", [](const Machine& m) { return m.world().held().has_value(); }},
      {"grab_failed", [](const Machine& m) { return m.globals().grab_failed; }},
      {"stuck_cleared", [](const Machine& m) { return !m.world().stuck(); }},
      {"collision_cleared", [](const Machine& m) { return !m.world().collision(); }},
      {"collision_repeated",
       [](const Machine& m) { return m.globals().collisions >= m.config().max_collisions; }},
      {"special_timeout",
       [](const Machine& m) { return m.ticks_in_state() > m.config().special_timeout_ticks; }},
      {"fault_cleared", [](const Machine& m) { return m.globals().fault_reason.empty(); }},
  };
  return r;
}

template <typename Map>
std::vector<std::string> Keys(const Map& m) {
  std::vector<std::string> out;
  for (const auto& [k, v] : m) out.push_back(k);
  return out;
}

std::string JoinIssues(const std::vector<ValidationIssue>& issues) {
  std::ostringstream os;
  os << "invalid machine spec:";
  for (const auto& i : issues) os << " [" << i.code << "] " << i.message << ';';
  return os.str();
}

std::optional<Vec3> ParseVec(const Json& v) {
  if (v.is_null()) return std::nullopt;
  if (!v.is_array() || v.size() != 3) throw Error(ErrorCode::kInvalidArgument, "expected [x, y, z] or null");
  for (const auto& e : v) {
    if (!e.is_number()) throw Error(ErrorCode::kInvalidArgument, "expected [x, y, z] or null");
  }
  return Vec3(v[0].get<double>(), v[1].get<double>(), v[2].get<double>());
}

}  // namespace

MachineConfig MachineConfig::FromJson(const Json& j) {
  MachineConfig c;
  c.max_search_attempts = j.value("max_search_attempts", c.max_search_attempts);
  c.max_approach_attempts = j.value("max_approach_attempts", c.max_approach_attempts);
  c.max_collisions = j.value("max_collisions", c.max_collisions);
  c.special_timeout_ticks = j.value("special_timeout_ticks", c.special_timeout_ticks);
  c.approach_height = j.value("approach_height", c.approach_height);
  c.press_offset = j.value("press_offset", c.press_offset);
  c.press_travel = j.value("press_travel", c.press_travel);
  c.lift_height = j.value("lift_height", c.lift_height);
  c.place_clearance = j.value("place_clearance", c.place_clearance);
  if (c.max_search_attempts < 1 || c.max_approach_attempts < 1 || c.special_timeout_ticks < 1) {
    throw Error(ErrorCode::kConfig, "attempt limits and timeouts must be positive");
  }
  return c;
}

Json MachineConfig::ToJson() const {
  return {{"max_search_attempts", max_search_attempts},
          {"max_approach_attempts", max_approach_attempts},
          {"max_collisions", max_collisions},
          {"special_timeout_ticks", special_timeout_ticks},
          {"approach_height", approach_height},
          {"press_offset", press_offset},
          {"press_travel", press_travel},
          {"lift_height", lift_height},
          {"place_clearance", place_clearance}};
}

const StateSpec* MachineSpec::FindState(std::string_view name) const {
  for (const auto& s : states) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

MachineSpec MachineSpec::FromJson(const Json& j) {
  MachineSpec spec;
  spec.name = j.value("name", "");
  spec.initial = j.value("initial", "Idle");
  for (const auto& s : j.at("states")) {
    spec.states.push_back({s.at("name").get<std::string>(), s.at("action").get<std::string>()});
  }
  for (const auto& t : j.at("transitions")) {
    spec.transitions.push_back({t.at("from").get<std::string>(), t.at("to").get<std::string>(),
                                t.at("guard").get<std::string>(), t.at("priority").get<int>(),
                                t.value("reason", "")});
  }
  if (j.contains("config")) spec.config = MachineConfig::FromJson(j.at("config"));
  return spec;
}

MachineSpec MachineSpec::Load(const std::filesystem::path& path) { return FromJson(LoadJsonFile(path)); }

Json MachineSpec::ToJson() const {
  Json states_json = Json::array(), transitions_json = Json::array();
  for (const auto& s : states) states_json.push_back({{"name", s.name}, {"action", s.action}});
  for (const auto& t : transitions) {
    Json e{{"from", t.from}, {"to", t.to}, {"guard", t.guard}, {"priority", t.priority}};
    if (!t.reason.empty()) e["reason"] = t.reason;
    transitions_json.push_back(e);
  }
  return {{"name", name},
          {"initial", initial},
          {"states", states_json},
          {"transitions", transitions_json},
          {"config", config.ToJson()}};
}

ValidationError::ValidationError(std::vector<ValidationIssue> issues)
    : Error(ErrorCode::kValidation, JoinIssues(issues)), issues_(std::move(issues)) {}

const std::vector<std::string>& KnownGuards() {
  static const auto keys = Keys(GuardRegistry());
  return keys;
}

const std::vector<std::string>& KnownActions() {
  static const auto keys = Keys(ActionRegistry());
  return keys;
}

std::vector<std::string> StatesWithoutReset(const MachineSpec& spec) {
  std::map<std::string, std::set<std::string>> edges;
  std::set<std::string> from_anywhere;
  for (const auto& t : spec.transitions) {
    if (t.from == kAnyState) {
      from_anywhere.insert(t.to);
    } else {
      edges[t.from].insert(t.to);
    }
  }
  std::vector<std::string> out;
  for (const auto& s : spec.states) {
    if (s.name == "Fault" || s.name == "Reset") continue;
    std::set<std::string> seen{s.name};
    std::vector<std::string> stack{s.name};
    bool found = false;
    while (!stack.empty() && !found) {
      const std::string at = stack.back();
      stack.pop_back();
      std::set<std::string> next = edges[at];
      next.insert(from_anywhere.begin(), from_anywhere.end());
      for (const auto& n : next) {
        if (n == "Reset") found = true;
        if (n != "Fault" && seen.insert(n).second) stack.push_back(n);
      }
    }
    if (!found) out.push_back(s.name);
  }
  return out;
}

std::vector<ValidationIssue> Validate(const MachineSpec& spec) {
  std::vector<ValidationIssue> issues;
  auto add = [&](std::string code, std::string message) {
    issues.push_back({std::move(code), std::move(message)});
  };
  std::set<std::string> names;
  for (const auto& s : spec.states) {
    if (!names.insert(s.name).second) add("duplicate-state", s.name);
    if (!ActionRegistry().contains(s.action)) add("unknown-action", s.name + ": " + s.action);
  }
  if (!names.contains("Idle")) add("missing-state", "Idle");
  for (const auto& t : spec.transitions) {
    if (t.reason.empty() || t.to == "Fault") continue;
    add("stray-reason", t.from + " -> " + t.to + ": only transitions into Fault carry a reason");
  }
  if (spec.initial != "Idle") add("bad-initial", "initial state must be Idle, got " + spec.initial);

  std::set<std::pair<std::string, int>> priorities;
  std::set<std::string> has_exit;
  for (const auto& t : spec.transitions) {
    const std::string label = t.from + " -> " + t.to;
    if (t.from != kAnyState && !names.contains(t.from)) add("unknown-state", label + ": source " + t.from);
    if (!names.contains(t.to)) add("unknown-state", label + ": target " + t.to);
    if (!GuardRegistry().contains(t.guard)) add("unknown-guard", label + ": " + t.guard);
    if (!priorities.insert({t.from, t.priority}).second) {
      add("ambiguous-priority", t.from + " has two transitions at priority " + std::to_string(t.priority));
    }
    has_exit.insert(t.from);
  }
  for (const auto& s : spec.states) {
    if (s.name != "Idle" && !has_exit.contains(s.name)) add("dead-end", s.name + " has no way out");
  }

  // Reachability from Idle; dispatch always leads to UserInput.
  std::set<std::string> reach{"Idle"};
  if (names.contains("UserInput")) reach.insert("UserInput");
  bool grew = true;
  while (grew) {
    grew = false;
    for (const auto& t : spec.transitions) {
      if ((t.from == kAnyState || reach.contains(t.from)) && names.contains(t.to) && reach.insert(t.to).second) {
        grew = true;
      }
    }
  }
  for (const auto& s : spec.states) {
    if (!reach.contains(s.name)) add("unreachable", s.name);
  }
  if (names.contains("Reset")) {
    for (const auto& s : StatesWithoutReset(spec)) add("reset-unreachable", s);
  }
  return issues;
}

void GlobalStore::ClearTask() {
  target_name.clear();
  end_position.reset();
  destination_position.reset();
  command = {};
  phase.clear();
  destination_name.clear();
  goal_object.reset();
  search_attempts = 0;
  approach_attempts = 0;
  collisions = 0;
  located = false;
  move_failed = false;
  missing_end_position = false;
  grab_failed = false;
}

Json GlobalStore::ToJson() const {
  return {{"target_name", target_name},
          {"end_position", VecJson(end_position)},
          {"destination_position", VecJson(destination_position)},
          {"fault_reason", fault_reason},
          {"phase", phase},
          {"search_attempts", search_attempts},
          {"approach_attempts", approach_attempts}};
}

Json TransitionRecord::ToJson() const {
  return {{"tick", tick}, {"from", from}, {"to", to}, {"guard", guard}, {"reason", reason}};
}

Machine::Machine(MachineSpec spec, SimWorld& world) : spec_(std::move(spec)), world_(world) {
  if (auto issues = Validate(spec_); !issues.empty()) throw ValidationError(std::move(issues));
  state_ = spec_.initial;
  action_ = ActionRegistry().at(spec_.FindState(state_)->action)();
}

void Machine::Dispatch(const nlu::Command& command) {
  if (!spec_.FindState("UserInput")) throw Error(ErrorCode::kRejected, "machine has no UserInput state");
  if (state_ == "Fault") {
    throw Error(ErrorCode::kRejected, "machine is in Fault: " + store_.fault_reason);
  }
  pending_.push_back(DispatchRequest{command});
}

void Machine::SetVar(const std::string& name, const Json& value) {
  if (name == "target_name" || name == "fault_reason") {
    if (!value.is_string()) throw Error(ErrorCode::kInvalidArgument, name + " must be a string");
  } else if (name == "end_position" || name == "destination_position") {
    ParseVec(value);
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown variable " + name);
  }
  pending_.push_back(SetVarRequest{name, value});
}

void Machine::EmergencyStop() { pending_.push_back(StopRequest{}); }

void Machine::ForceGuard(const std::string& guard, std::optional<bool> value) {
  if (!GuardRegistry().contains(guard)) throw Error(ErrorCode::kInvalidArgument, "unknown guard " + guard);
  if (value) {
    forced_[guard] = *value;
  } else {
    forced_.erase(guard);
  }
}

std::optional<Vec3> Machine::GoalTruth() const {
  if (!store_.goal_object) return std::nullopt;
  const auto top = world_.TopCenter(*store_.goal_object);
  if (!top) return std::nullopt;
  if (store_.phase == "press") {
    const auto* o = world_.scene().Find(*store_.goal_object);
    return Vec3(*top + RadialOffset(o->center_world, config().press_offset, store_.command.press_end));
  }
  if (store_.phase == "place") return Vec3(*top + Vec3(0, 0, world_.HeldDepth() + config().place_clearance));
  return top;
}

bool Machine::Touching() const {
  const auto truth = GoalTruth();
  return truth && world_.DistanceTo(*truth) <= world_.config().touch_tolerance;
}

bool Machine::EvaluateGuard(const std::string& guard) {
  if (const auto it = forced_.find(guard); it != forced_.end()) return it->second;
  return GuardRegistry().at(guard)(*this);
}

void Machine::Alert(const std::string& kind, const std::string& detail) {
  alerts_.push_back({{"tick", tick_}, {"kind", kind}, {"detail", detail}});
}

TransitionRecord Machine::Enter(const std::string& to, const std::string& guard, const std::string& reason) {
  TransitionRecord rec{tick_, state_, to, guard, reason};
  if (to == "Fault") {
    if (store_.fault_reason.empty()) store_.fault_reason = reason.empty() ? guard : reason;
    Alert("fault", store_.fault_reason);
  }
  if (to == "Collision") ++store_.collisions;
  if (to == "Fault" || to == "Stuck" || to == "Collision") world_.Halt();
  state_ = to;
  ticks_in_state_ = 0;
  action_ = ActionRegistry().at(spec_.FindState(to)->action)();
  action_done_ = false;
  log_.push_back(rec);
  return rec;
}

std::optional<TransitionRecord> Machine::Evaluate(bool any_state) {
  std::vector<const TransitionSpec*> candidates;
  for (const auto& t : spec_.transitions) {
    if (any_state ? t.from == kAnyState : t.from == state_) candidates.push_back(&t);
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const auto* a, const auto* b) { return a->priority > b->priority; });
  for (const auto* t : candidates) {
    // While a safety condition holds, only a more severe one may take over.
    if (!any_state && hold_priority_) {
      const bool escalates = std::any_of(spec_.transitions.begin(), spec_.transitions.end(), [&](const auto& w) {
        return w.from == kAnyState && w.to == t->to && w.priority > *hold_priority_;
      });
      if (!escalates) continue;
    }
    bool open = false;
    try {
      open = EvaluateGuard(t->guard);
    } catch (const std::exception&) {
      if (state_ == "Fault" || !spec_.FindState("Fault")) throw;
      if (store_.fault_reason.empty()) store_.fault_reason = "guard-error: " + t->guard;
      return Enter("Fault", t->guard, store_.fault_reason);
    }
    if (!open) continue;
    if (any_state && t->to == state_) {
      hold_priority_ = t->priority;
      return std::nullopt;
    }
    return Enter(t->to, t->guard, t->reason);
  }
  return std::nullopt;
}

std::optional<TransitionRecord> Machine::Tick() {
  ++tick_;
  ++ticks_in_state_;
  std::optional<TransitionRecord> fired;

  // Variable writes and stops first, so the safety check below sees them.
  std::optional<nlu::Command> command;
  for (auto it = pending_.begin(); it != pending_.end();) {
    if (const auto* d = std::get_if<DispatchRequest>(&*it)) {
      if (!command) {
        command = d->command;
        it = pending_.erase(it);
      } else {
        ++it;
      }
      continue;
    }
    if (const auto* sv = std::get_if<SetVarRequest>(&*it)) {
      if (sv->name == "target_name") store_.target_name = sv->value.get<std::string>();
      if (sv->name == "fault_reason") store_.fault_reason = sv->value.get<std::string>();
      if (sv->name == "end_position") store_.end_position = ParseVec(sv->value);
      if (sv->name == "destination_position") store_.destination_position = ParseVec(sv->value);
    } else {
      store_.fault_reason = "estop";
    }
    it = pending_.erase(it);
  }

  hold_priority_.reset();
  fired = Evaluate(true);
  if (command && state_ == "Fault") {
    Alert("rejected", "command ignored while in Fault");
  } else if (command && (fired || hold_priority_)) {
    pending_.push_front(DispatchRequest{*command});  // retried next tick
  } else if (command) {
    world_.Release();
    world_.Halt();
    store_.ClearTask();
    store_.command = *command;
    store_.target_name = command->target_class;
    store_.destination_name = command->destination_class;
    store_.phase = command->function == nlu::Function::kPressTarget     ? "press"
                   : command->function == nlu::Function::kFetchToTarget ? "fetch"
                                                                        : "";
    fired = Enter("UserInput", "command", "");
  }
  if (!fired && !action_done_) action_done_ = action_->Step(*this);
  world_.Step();
  if (!fired && action_done_) fired = Evaluate(false);
  return fired;
}

std::vector<Json> Machine::TakeAlerts() { return std::exchange(alerts_, {}); }

Json Machine::Telemetry() const {
  const kin::Pose ee = world_.EndEffectorPose();
  const auto& r = ee.orientation;
  Json held = nullptr;
  if (world_.held()) held = *world_.held();
  return {{"tick", tick_},
          {"state", state_},
          {"joints", JointsJson(world_.actual())},
          {"commanded", JointsJson(world_.commanded())},
          {"end_effector",
           {{"position", {ee.position.x(), ee.position.y(), ee.position.z()}},
            {"orientation", {r.w(), r.x(), r.y(), r.z()}}}},
          {"last_transition", log_.empty() ? Json(nullptr) : log_.back().ToJson()},
          {"globals", store_.ToJson()},
          {"light_on", world_.light_on()},
          {"door_unlocked", world_.door_unlocked()},
          {"held", held}};
}

std::string Machine::LogJsonLines() const {
  std::string out;
  for (const auto& r : log_) out += r.ToJson().dump() + '\n';
  return out;
}

ScenarioTimeout::ScenarioTimeout(int ticks, std::vector<TransitionRecord> trace)
    : Error(ErrorCode::kTimeout, "scenario did not finish within " + std::to_string(ticks) + " ticks"),
      trace_(std::move(trace)) {}

std::vector<TransitionRecord> RunScenario(Machine& machine, const nlu::Command& command, int max_ticks) {
  const size_t first = machine.log().size();
  machine.Dispatch(command);
  for (int i = 0; i < max_ticks; ++i) {
    machine.Tick();
    const bool started = machine.log().size() > first;
    if (started && !machine.HasPendingRequests() &&
        ((machine.state() == "Idle" && machine.action_done()) || machine.state() == "Fault")) {
      return {machine.log().begin() + static_cast<std::ptrdiff_t>(first), machine.log().end()};
    }
  }
  throw ScenarioTimeout(max_ticks, {machine.log().begin() + static_cast<std::ptrdiff_t>(first),
                                    machine.log().end()});
}

}  // namespace deskbot::fsm
