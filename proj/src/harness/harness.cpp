#include "deskbot/harness/harness.hpp"

#include <algorithm>

#include "deskbot/common/rng.hpp"
#include "deskbot/hub/hub.hpp"

namespace deskbot::harness {

namespace {

// Interprets text with a shared, read-only pipeline.
class SharedPipeline final : public hub::IntentService {
 public:
  explicit SharedPipeline(const nlu::Pipeline& p) : pipeline_(p) {}
  nlu::IntentResult Interpret(const std::string& text) override {
    return pipeline_.Run(nlu::MakeUtterance(text, nlu::Source::kTranscribed));
  }

 private:
  const nlu::Pipeline& pipeline_;
};

nlu::MLPModel LoadOrTrain(const Rig::Names& n) {
  if (!n.model.empty()) return nlu::MLPModel::Load(ResolveConfig(n.model, "models", ".json"));
  nlu::TrainOptions o;
  o.epochs = n.epochs;
  return nlu::Train(nlu::LoadCorpus(ResolveConfig(n.corpus, "corpus", ".tsv")), nlu::HashedNgramFeaturizer(),
                    o);
}

std::string PathOf(const std::vector<fsm::TransitionRecord>& log) {
  std::string out = log.empty() ? "" : log.front().from;
  for (const auto& r : log) out += ">" + r.to;
  return out;
}

}  // namespace

std::string_view TaskName(Task t) {
  switch (t) {
    case Task::kDoor: return "door";
    case Task::kSwitch: return "switch";
    case Task::kCup: return "cup";
  }
  return "door";
}

Task ParseTask(std::string_view name) {
  if (name == "door") return Task::kDoor;
  if (name == "switch") return Task::kSwitch;
  if (name == "cup") return Task::kCup;
  throw Error(ErrorCode::kConfig, "unknown task '" + std::string(name) + "' (door, switch, cup)");
}

std::string DefaultIntent(Task t) {
  switch (t) {
    case Task::kDoor: return "open_door";
    case Task::kSwitch: return "light_on";
    case Task::kCup: return "fetch_object";
  }
  return "";
}

std::string TrialSpec::Intent() const { return expected_intent.empty() ? DefaultIntent(task) : expected_intent; }

void TrialSpec::Validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kConfig, "trial spec: " + what); };
  if (trials < 1) fail("trials must be at least 1");
  if (!(clutter_fraction >= 0.0 && clutter_fraction <= 1.0)) fail("clutter_fraction must be in [0, 1]");
  if (!(wer >= 0.0 && wer <= 1.0)) fail("wer must be in [0, 1]");
  if (max_ticks < 1) fail("max_ticks must be positive");
  if (command_text.empty()) fail("command text is empty");
  const auto& labels = nlu::DefaultLabels();
  if (std::find(labels.begin(), labels.end(), Intent()) == labels.end()) fail("unknown intent " + Intent());
  if (task == Task::kSwitch && Intent() != "light_on" && Intent() != "light_off") {
    fail("switch trials expect light_on or light_off");
  }
}

int TrialTable::csr() const {
  return static_cast<int>(std::count_if(records.begin(), records.end(), [](const auto& r) { return r.intent_correct; }));
}

int TrialTable::cp() const {
  return static_cast<int>(std::count_if(records.begin(), records.end(), [](const auto& r) { return r.task_outcome; }));
}

Rig Rig::Load(const Names& n) {
  Rig rig{kin::DHChain::Load(ResolveConfig(n.arm, "arms", ".json")),
          perception::Scene::Load(ResolveConfig(n.scene, "scenes", ".json")),
          {},
          {{"default", {}}},
          fsm::MachineSpec::Load(ResolveConfig(n.machine, "machines", ".json")),
          {},
          nlu::Pipeline(LoadOrTrain(n), n.threshold)};
  if (auto issues = fsm::Validate(rig.machine); !issues.empty()) throw fsm::ValidationError(std::move(issues));
  return rig;
}

bool GoalSatisfied(const TrialSpec& spec, const fsm::SimWorld& world) {
  switch (spec.task) {
    case Task::kDoor: return world.door_unlocked();
    case Task::kSwitch: return world.light_on() == (spec.Intent() == "light_on");
    case Task::kCup: {
      const auto* cup = world.scene().FindClass("paper_cup");
      const auto* hand = world.scene().FindClass("hand");
      if (!cup || !hand || world.held()) return false;
      return (cup->center_world - hand->center_world).head<2>().norm() <= 0.03 && world.upright(cup->id);
    }
  }
  return false;
}

TrialRecord RunTrial(const Rig& rig, const TrialSpec& spec, int index) {
  TrialRecord rec;
  rec.index = index;
  rec.seed = DeriveSeed(spec.seed, static_cast<uint64_t>(index));

  rec.transcript =
      nlu::Transcribe({spec.command_text, spec.wer, DeriveSeed(rec.seed, HashTag("speech"))}).text;

  perception::Scene scene = rig.scene;
  scene.lighting = spec.lighting;
  scene.clutter_fraction = spec.clutter_fraction;
  const auto detector = rig.detectors.find(spec.detector);
  if (detector == rig.detectors.end()) throw Error(ErrorCode::kConfig, "unknown detector profile " + spec.detector);
  fsm::SimWorld world(rig.chain, std::move(scene), rig.camera, detector->second, rig.world,
                      DeriveSeed(rec.seed, HashTag("world")));
  if (spec.task == Task::kSwitch) world.set_light_on(spec.Intent() != "light_on");

  fsm::Machine machine(rig.machine, world);
  SharedPipeline intents(rig.pipeline);
  hub::HubCore core(machine, intents);
  hub::Session session;
  core.Handle(session, {"HELLO", "hello", {{"protocol_version", hub::kProtocolVersion}}});
  const auto replies = core.Handle(session, {"INTENT_TEXT", "say", {{"text", rec.transcript}}});
  const hub::Message& ack = replies.front();
  bool dispatched = false;
  if (ack.type == "ACK") {
    const auto result = hub::IntentResultFromJson(ack.body.at("result"));
    rec.intent = result.intent;
    dispatched = ack.body.at("dispatched").get<bool>();
  }
  rec.intent_correct = rec.intent == spec.Intent();

  if (dispatched) {
    for (int i = 0; i < spec.max_ticks; ++i) {
      core.Tick();
      const bool started = !machine.log().empty();
      if (started && !machine.HasPendingRequests() &&
          ((machine.state() == "Idle" && machine.action_done()) || machine.state() == "Fault")) {
        break;
      }
    }
  }
  rec.ticks = machine.tick();
  rec.end_state = machine.state();
  rec.path = PathOf(machine.log());
  const auto& log = machine.log();
  const bool returned = !log.empty() && log.back().to == "Idle" && log.back().from == "Reset";
  rec.task_outcome = dispatched && returned && rec.end_state == "Idle" && GoalSatisfied(spec, world);
  return rec;
}

TrialTable RunTrials(const Rig& rig, const TrialSpec& spec) {
  spec.Validate();
  TrialTable t{spec, {}};
  t.records.reserve(static_cast<size_t>(spec.trials));
  for (int i = 0; i < spec.trials; ++i) t.records.push_back(RunTrial(rig, spec, i));
  return t;
}

ExecutionRate::ExecutionRate(int64_t c, int64_t t) : correct(c), total(t) {
  if (t <= 0) throw Error(ErrorCode::kInvalidArgument, "execution rate needs a positive total");
  if (c < 0 || c > t) throw Error(ErrorCode::kInvalidArgument, "correct count must lie in [0, total]");
}

int64_t ExecutionRate::permille() const { return (2000 * correct + total) / (2 * total); }

std::string ExecutionRate::Percent() const {
  const int64_t p = permille();
  return std::to_string(p / 10) + "." + std::to_string(p % 10) + "%";
}

std::vector<PublishedMismatch> CheckPublished(const std::vector<PublishedRow>& rows) {
  std::vector<PublishedMismatch> out;
  for (const auto& r : rows) {
    const std::string mine = ExecutionRate(r.correct, r.total).Percent();
    if (mine != r.reported) out.push_back({r.label, r.reported, mine});
  }
  return out;
}

}  // namespace deskbot::harness
