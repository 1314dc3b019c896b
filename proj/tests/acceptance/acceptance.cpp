#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <regex>
#include <sstream>
#include <thread>
#include <tuple>

#include "deskbot/common/rng.hpp"
#include "deskbot/fsm/fsm.hpp"
#include "deskbot/harness/harness.hpp"
#include "deskbot/hub/hub.hpp"
#include "deskbot/hub/server.hpp"
#include "deskbot/kinematics/kinematics.hpp"
#include "deskbot/nlu/nlu.hpp"
#include "deskbot/perception/perception.hpp"
#include "deskbot/pruning/pruning.hpp"
#include "support/live_hub.hpp"

using namespace deskbot;
using namespace deskbot::testing;

namespace {

// Pinned tolerances.
constexpr double kErBudgetSec = 1.0;
constexpr double kFkTol = 1e-12;
constexpr double kJacobianRelTol = 1e-4;
constexpr double kIkPosTol = 1e-3;
constexpr double kIkRotTol = 1e-2;
constexpr double kIkMinSuccess = 0.95;
constexpr int kIkTargets = 200;
constexpr double kKinBudgetSec = 10.0;
constexpr double kLoopExactTol = 1e-9;
constexpr double kLoopNoisyTol = 5e-3;
constexpr int kPlacements = 100;
constexpr double kPerceptionBudgetSec = 30.0;
constexpr double kGradientTol = 1e-4;
constexpr int kSelectionCases = 1000;
constexpr int kLightOnSeeds = 60;
constexpr double kLightOnMinComplete = 0.9;
constexpr int kCodecMessages = 10000;
constexpr size_t kFuzzBytes = size_t{1} << 20;
constexpr int kEstopClients = 8;
constexpr double kQuantAgreement = 0.98;
constexpr double kHalfPruneMaxDrop = 0.05;
constexpr double kCsrSpreadPoints = 2.0;
constexpr double kHarnessBudgetSec = 300.0;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void Require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

class Stopwatch {
 public:
  double Seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

kin::DHChain DeskArm() { return kin::DHChain::Load(ResolveConfig("arm_table1", "arms", ".json")); }

kin::JointVector RandomInLimits(const kin::DHChain& chain, Rng& rng) {
  kin::JointVector q(chain.dof());
  for (int i = 0; i < chain.dof(); ++i) q[i] = rng.Uniform(chain.links()[i].theta_min, chain.links()[i].theta_max);
  return q;
}

kin::Transform4 ElementaryDh(double alpha, double a, double d, double theta) {
  kin::Transform4 rx = kin::Transform4::Identity(), tx = rx, rz = rx, tz = rx;
  rx.topLeftCorner<3, 3>() = Eigen::AngleAxisd(alpha, kin::Vec3::UnitX()).toRotationMatrix();
  tx(0, 3) = a;
  rz.topLeftCorner<3, 3>() = Eigen::AngleAxisd(theta, kin::Vec3::UnitZ()).toRotationMatrix();
  tz(2, 3) = d;
  return rx * tx * rz * tz;
}

kin::Vec3 RotVec(const Eigen::Matrix3d& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

nlu::MLPModel DeskModel() {
  nlu::TrainOptions o;
  o.epochs = 1000;
  return nlu::Train(nlu::LoadCorpus(ResolveConfig("desk_corpus", "corpus", ".tsv")), nlu::HashedNgramFeaturizer(),
                    o);
}

nlu::Dataset DeskData() {
  return nlu::BuildDataset(nlu::LoadCorpus(ResolveConfig("desk_corpus", "corpus", ".tsv")),
                           nlu::HashedNgramFeaturizer(), nlu::DefaultLabels());
}

Outcome ExecutionRates() {
  Outcome o;
  Stopwatch sw;
  const auto t2 = harness::ExecutionRate(466 + 460 + 463, 1500).Percent();
  const auto c1 = harness::ExecutionRate(477, 500).Percent();
  const double sec = sw.Seconds();
  o.detail << "(466+460+463)/1500=" << t2 << " 477/500=" << c1 << " " << sec << "s";
  o.Require(t2 == "92.6%", "92.6%");
  o.Require(c1 == "95.4%", "95.4%");
  o.Require(sec < kErBudgetSec, "runtime");
  return o;
}

Outcome Kinematics() {
  Outcome o;
  Stopwatch sw;
  const auto chain = DeskArm();

  const bool identity = kin::DhLinkTransform(kin::DHLink{}, 0.0) == kin::Transform4::Identity();
  const auto zero = kin::ForwardKinematics(chain, kin::JointVector::Zero(chain.dof()));
  const double reach = chain.links()[2].a + chain.links()[3].a;
  const bool endpoint = std::abs(zero(0, 3) - reach) <= kFkTol && std::abs(zero(1, 3)) <= kFkTol &&
                        std::abs(zero(2, 3)) <= kFkTol;
  o.Require(identity, "zero link is identity");
  o.Require(endpoint, "q=0 endpoint");

  Rng rng(7);
  double fk_worst = 0.0;
  for (int n = 0; n < 200; ++n) {
    const auto q = RandomInLimits(chain, rng);
    kin::Transform4 fold = kin::Transform4::Identity();
    for (int i = 0; i < chain.dof(); ++i) {
      const auto& l = chain.links()[static_cast<size_t>(i)];
      fold = fold * ElementaryDh(l.alpha, l.a, l.d, q[i] + l.theta_home);
    }
    fk_worst = std::max(fk_worst, (kin::ForwardKinematics(chain, q) - fold).cwiseAbs().maxCoeff());
  }
  o.Require(fk_worst <= kFkTol, "FK vs fold");

  double jac_worst = 0.0;
  const double h = 1e-6;
  for (int n = 0; n < 100; ++n) {
    const auto q = RandomInLimits(chain, rng);
    const auto jac = kin::ComputeJacobian(chain, q);
    for (int i = 0; i < chain.dof(); ++i) {
      kin::JointVector qp = q, qm = q;
      qp[i] += h;
      qm[i] -= h;
      const auto tp = kin::ForwardKinematics(chain, qp), tm = kin::ForwardKinematics(chain, qm);
      Eigen::Matrix<double, 6, 1> fd;
      fd.head<3>() = (tp.topRightCorner<3, 1>() - tm.topRightCorner<3, 1>()) / (2 * h);
      const Eigen::Matrix3d rp = tp.topLeftCorner<3, 3>(), rm = tm.topLeftCorner<3, 3>();
      fd.tail<3>() = RotVec(rp * rm.transpose()) / (2 * h);
      jac_worst = std::max(jac_worst, (jac.col(i) - fd).norm() / std::max(jac.col(i).norm(), 1e-3));
    }
  }
  o.Require(jac_worst <= kJacobianRelTol, "Jacobian vs finite differences");

  int ok = 0;
  Rng ik_rng(2024);
  for (int t = 0; t < kIkTargets; ++t) {
    const auto target = kin::Pose::FromTransform(kin::ForwardKinematics(chain, RandomInLimits(chain, ik_rng)));
    try {
      const auto res = kin::InverseKinematics(chain, target, chain.Home());
      const auto got = kin::Pose::FromTransform(kin::ForwardKinematics(chain, res.q));
      if ((got.position - target.position).norm() <= kIkPosTol &&
          kin::OrientationError(got.orientation, target.orientation) <= kIkRotTol && chain.WithinLimits(res.q)) {
        ++ok;
      }
    } catch (const kin::UnreachableError&) {
    }
  }
  const double rate = static_cast<double>(ok) / kIkTargets;
  o.Require(rate >= kIkMinSuccess, "IK round trip rate");

  const double sec = sw.Seconds();
  o.Require(sec < kKinBudgetSec, "runtime");
  o.detail << "fk_err=" << fk_worst << " jac_rel=" << jac_worst << " ik=" << ok << "/" << kIkTargets << " " << sec
           << "s";
  return o;
}

// First surface point of `obj` along the optical ray through its center.
kin::Vec3 SurfaceTruth(const perception::SceneObject& obj, const kin::Transform4& cam) {
  const Eigen::Matrix3d r = cam.topLeftCorner<3, 3>();
  const kin::Vec3 p = cam.block<3, 1>(0, 3);
  const kin::Vec3 local = r.transpose() * (obj.center_world - p);
  const kin::Vec3 origin = p + r * kin::Vec3(local.x(), local.y(), 0.0);
  const kin::Vec3 dir = r.col(2);
  double enter = -1e300;
  for (int k = 0; k < 3; ++k) {
    if (dir[k] == 0.0) continue;
    const double lo = obj.center_world[k] - obj.half_extents[k], hi = obj.center_world[k] + obj.half_extents[k];
    enter = std::max(enter, std::min((lo - origin[k]) / dir[k], (hi - origin[k]) / dir[k]));
  }
  return origin + enter * dir;
}

Outcome PerceptionLoop() {
  Outcome o;
  Stopwatch sw;
  const auto chain = DeskArm();
  const perception::CameraModel cam;
  auto deg = [](double a, double b, double c, double d, double e) {
    kin::JointVector q(5);
    q << kin::DegToRad(a), kin::DegToRad(b), kin::DegToRad(c), kin::DegToRad(d), kin::DegToRad(e);
    return q;
  };

  perception::DetectorProfile noiseless;
  noiseless.noise_sigma = 0;
  noiseless.jitter_px = 0;
  double exact_worst = 0.0;
  int exact_missing = 0;
  Rng rng(99);
  for (int n = 0; n < kPlacements; ++n) {
    kin::JointVector q = deg(rng.Uniform(-120, 120), rng.Uniform(-120, -60), 90, 0, 0);
    q[3] = -(q[1] + q[2]);
    const auto pose = perception::CameraPose(chain, q);
    const kin::Vec3 local(rng.Uniform(-0.15, 0.15), rng.Uniform(-0.1, 0.1), rng.Uniform(0.05, 0.3));
    perception::Scene s;
    s.objects.push_back({0, "paper_cup", (pose * local.homogeneous()).head<3>(),
                         {rng.Uniform(0.005, 0.04), rng.Uniform(0.005, 0.04), rng.Uniform(0.005, 0.04)}, false});
    const auto r = perception::Locate(s, cam, chain, q, "paper_cup", 5, noiseless);
    if (!r.found) {
      ++exact_missing;
      continue;
    }
    exact_worst = std::max(exact_worst, (r.found->position_world - SurfaceTruth(s.objects[0], pose)).norm());
  }
  o.Require(exact_missing == 0 && exact_worst <= kLoopExactTol, "noiseless closure");

  perception::DetectorProfile jitter;
  jitter.noise_sigma = 0;
  double noisy_worst = 0.0;
  int noisy_missing = 0;
  Rng rng2(7);
  for (int n = 0; n < kPlacements; ++n) {
    const auto q = deg(rng2.Uniform(-120, 120), -90, 90, 0, 0);
    const auto pose = perception::CameraPose(chain, q);
    const kin::Vec3 local(rng2.Uniform(-0.15, 0.15), rng2.Uniform(-0.1, 0.1), rng2.Uniform(0.1, 0.3));
    perception::Scene s;
    s.objects.push_back({0, "light_switch", (pose * local.homogeneous()).head<3>(),
                         {rng2.Uniform(0.01, 0.03), rng2.Uniform(0.01, 0.03), 0.01}, false});
    const auto r = perception::Locate(s, cam, chain, q, "light_switch", 1000 + static_cast<uint64_t>(n), jitter);
    if (!r.found) {
      ++noisy_missing;
      continue;
    }
    noisy_worst = std::max(noisy_worst, (r.found->position_world - SurfaceTruth(s.objects[0], pose)).norm());
  }
  o.Require(noisy_missing == 0 && noisy_worst <= kLoopNoisyTol, "jittered closure");

  const double sec = sw.Seconds();
  o.Require(sec < kPerceptionBudgetSec, "runtime");
  o.detail << "exact_err=" << exact_worst << "m jitter_err=" << noisy_worst << "m over " << kPlacements
           << " placements " << sec << "s";
  return o;
}

Outcome Nlu() {
  Outcome o;
  Rng rng(8);
  const auto data = DeskData();
  nlu::HashedNgramFeaturizer small(32);
  const auto small_data = nlu::BuildDataset(nlu::LoadCorpus(ResolveConfig("desk_corpus", "corpus", ".tsv")), small,
                                            nlu::DefaultLabels());
  nlu::MLPModel m(32, 6, nlu::DefaultLabels());
  for (auto* w : {&m.w1, &m.w2}) {
    for (Eigen::Index i = 0; i < w->size(); ++i) w->data()[i] = rng.Uniform(-1, 1);
  }
  for (auto* b : {&m.b1, &m.b2}) {
    for (Eigen::Index i = 0; i < b->size(); ++i) (*b)[i] = rng.Uniform(-0.3, 0.3);
  }
  m.w1 *= 0.5;
  const auto g = nlu::LossGradient(m, small_data);
  const double h = 1e-5;
  double worst = 0.0;
  auto probe = [&](double& param, double analytic) {
    const double keep = param;
    param = keep + h;
    const double up = nlu::Loss(m, small_data);
    param = keep - h;
    const double down = nlu::Loss(m, small_data);
    param = keep;
    const double numeric = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(numeric - analytic) / std::max(1e-6, std::abs(numeric) + std::abs(analytic)));
  };
  for (Eigen::Index i = 0; i < m.w1.size(); ++i) probe(m.w1.data()[i], g.w1.data()[i]);
  for (Eigen::Index i = 0; i < m.b1.size(); ++i) probe(m.b1[i], g.b1[i]);
  for (Eigen::Index i = 0; i < m.w2.size(); ++i) probe(m.w2.data()[i], g.w2.data()[i]);
  for (Eigen::Index i = 0; i < m.b2.size(); ++i) probe(m.b2[i], g.b2[i]);
  o.Require(worst <= kGradientTol, "gradient check");

  const double accuracy = pruning::Evaluate(DeskModel(), data);
  o.Require(accuracy == 1.0, "training accuracy");

  int violations = 0;
  Rng sel(17);
  for (int n = 0; n < kSelectionCases; ++n) {
    nlu::Vector z(4);
    for (int k = 0; k < 4; ++k) z[k] = sel.Uniform(-3, 3);
    const auto base = nlu::SelectIntent({nlu::DefaultLabels(), nlu::Softmax(z)}, 0.0);
    const double c = sel.Uniform(0.1, 10);
    if (nlu::SelectIntent({nlu::DefaultLabels(), nlu::Softmax(c * z)}, 0.0).label != base.label) ++violations;
    const double t1 = sel.Uniform(0, 1), t2 = sel.Uniform(t1, 1);
    const auto lo = nlu::SelectIntent({nlu::DefaultLabels(), nlu::Softmax(z)}, t1);
    const auto hi = nlu::SelectIntent({nlu::DefaultLabels(), nlu::Softmax(z)}, t2);
    if (hi.label && lo.label != hi.label) ++violations;
  }
  o.Require(violations == 0, "selection properties");
  o.detail << "grad_rel=" << worst << " train_acc=" << accuracy << " selection_violations=" << violations << "/"
           << kSelectionCases;
  return o;
}

std::string PathOf(const std::vector<fsm::TransitionRecord>& log) {
  std::string out = log.empty() ? "" : log.front().from;
  for (const auto& r : log) out += ">" + r.to;
  return out;
}

Outcome Fsm() {
  Outcome o;
  const auto chain = DeskArm();
  const auto scene = perception::Scene::Load(ResolveConfig("office", "scenes", ".json"));
  const auto spec = fsm::MachineSpec::Load(ResolveConfig("desk_tasks", "machines", ".json"));
  nlu::Command light_on;
  light_on.function = nlu::Function::kPressTarget;
  light_on.target_class = "light_switch";
  light_on.press_end = nlu::PressEnd::kNear;

  const std::regex trace_shape("Idle>UserInput>Search>Move(>Search>Move)*>Press>Reset>Idle");
  int complete = 0, mismatched = 0, loops = 0, bad_guards = 0, lit = 0;
  for (uint64_t seed = 0; seed < kLightOnSeeds; ++seed) {
    fsm::SimWorld w(chain, scene, {}, {}, {}, seed);
    w.set_light_on(false);
    fsm::Machine m(spec, w);
    const auto trace = fsm::RunScenario(m, light_on);
    if (m.state() == "Fault") continue;
    ++complete;
    mismatched += !std::regex_match(PathOf(trace), trace_shape);
    lit += w.light_on();
    for (const auto& r : trace) {
      if (r.from == "Move" && r.to == "Search") {
        ++loops;
        bad_guards += r.guard != "not_touching";
      }
    }
  }
  o.Require(mismatched == 0 && bad_guards == 0, "light-on trace");
  o.Require(complete >= kLightOnMinComplete * kLightOnSeeds, "light-on completion");

  const std::vector<std::pair<std::string, std::string>> safety{
      {"fault_requested", "Fault"}, {"collision_detected", "Collision"}, {"stuck_detected", "Stuck"}};
  nlu::Command fetch;
  fetch.function = nlu::Function::kFetchToTarget;
  fetch.target_class = "paper_cup";
  fetch.destination_class = "hand";
  const std::vector<nlu::Command> commands{light_on, fetch};
  int injected = 0, bypassed = 0;
  for (uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng(seed);
    fsm::SimWorld w(chain, scene, {}, {}, {}, seed);
    fsm::Machine m(spec, w);
    std::vector<bool> on(3, false);
    for (int t = 0; t < 400; ++t) {
      if (rng.Bernoulli(0.05) && m.state() != "Fault") m.Dispatch(commands[rng.Below(2)]);
      if (rng.Bernoulli(0.03)) m.SetVar("fault_reason", "");
      for (size_t g = 0; g < 3; ++g) {
        if (rng.Bernoulli(0.04)) on[g] = !on[g];
        m.ForceGuard(safety[g].first, on[g]);
      }
      const std::string before = m.state();
      const auto rec = m.Tick();
      for (size_t g = 0; g < 3; ++g) {
        if (!on[g]) continue;
        if (before != safety[g].second) {
          ++injected;
          if (!rec || rec->to != safety[g].second) ++bypassed;
        } else if (rec) {
          const auto more_severe = safety.begin() + static_cast<std::ptrdiff_t>(g);
          if (std::none_of(safety.begin(), more_severe, [&](const auto& s) { return s.second == rec->to; })) {
            ++bypassed;
          }
        }
        break;
      }
    }
  }
  o.Require(bypassed == 0 && injected > 0, "safety dominance");
  o.detail << "light_on complete=" << complete << "/" << kLightOnSeeds << " matched=" << complete - mismatched << " loops=" << loops << " light_on=" << lit
           << " safety_injections=" << injected << " bypassed=" << bypassed;
  return o;
}

Outcome Hub() {
  Outcome o;
  Rng rng(2024);
  std::string stream;
  std::vector<Message> sent;
  for (int i = 0; i < kCodecMessages; ++i) {
    Message m;
    m.type = rng.Bernoulli(0.8) ? "COMMAND" : "X" + std::to_string(rng.Below(100));
    if (rng.Bernoulli(0.7)) m.id = std::to_string(rng.NextU64());
    for (uint64_t k = 0, n = rng.Below(5); k < n; ++k) m.body["k" + std::to_string(k)] = RandomJson(rng, 3);
    stream += hub::EncodeFrame(m);
    sent.push_back(std::move(m));
  }
  FrameDecoder d;
  std::vector<Message> got;
  for (size_t at = 0; at < stream.size();) {
    const size_t n = std::min<size_t>(1 + rng.Below(300), stream.size() - at);
    d.Feed(std::string_view(stream).substr(at, n));
    at += n;
    while (auto m = d.Next()) got.push_back(std::move(*m));
  }
  o.Require(got == sent, "codec round trip");

  const auto model = DeskModel();
  const auto chain = DeskArm();
  fsm::SimWorld world(chain, perception::Scene::Load(ResolveConfig("office", "scenes", ".json")), {}, {}, {}, 1);
  fsm::Machine machine(fsm::MachineSpec::Load(ResolveConfig("desk_tasks", "machines", ".json")), world);
  hub::LocalIntentService intents{nlu::Pipeline(model)};
  hub::HubCore core(machine, intents);
  std::atomic<int> stop_tick{-1}, missing{0};
  bool alive_after_fuzz = false;
  {
    LiveServer live(core, Ephemeral());
    {
      Client garbage(live.tcp());
      Rng noise_rng(7);
      std::string noise(kFuzzBytes, '\0');
      for (auto& c : noise) c = static_cast<char>(noise_rng.Below(256));
      try {
        garbage.SendRaw(noise);
      } catch (const std::exception&) {
        // The server may drop the connection mid-stream.
      }
    }
    Client probe(live.tcp());
    probe.Send(Hello("alive"));
    alive_after_fuzz = probe.Reply("alive").has_value();

    std::vector<std::thread> clients;
    for (int c = 0; c < kEstopClients; ++c) {
      clients.emplace_back([&, c] {
        Client cl(live.tcp());
        cl.Send(Hello());
        if (!cl.Reply("h")) ++missing;
        for (int i = 0; i < 40; ++i) {
          const std::string id = std::to_string(c) + ":" + std::to_string(i);
          if (c == 0 && i == 20) {
            cl.Send(Req("ESTOP", id));
            const auto ack = cl.Reply(id);
            if (!ack) ++missing;
            else stop_tick = ack->body["tick"].get<int>();
            continue;
          }
          cl.Send(i % 3 == 0 ? Req("SET_VAR", id, {{"name", "target_name"}, {"value", "cup"}}) : Req("GET_STATE", id));
          if (!cl.Reply(id)) ++missing;
        }
      });
    }
    for (auto& t : clients) t.join();
    std::this_thread::sleep_for(100ms);
  }
  o.Require(alive_after_fuzz, "service alive after fuzz");
  const auto& log = machine.log();
  const auto fault = std::find_if(log.begin(), log.end(), [](const auto& t) { return t.to == "Fault"; });
  const int fault_tick = fault == log.end() ? -1 : fault->tick;
  o.Require(missing == 0, "all client replies");
  o.Require(stop_tick >= 0 && fault_tick >= 0 && fault_tick <= stop_tick + 1, "estop within one tick");
  o.detail << "round_trip=" << got.size() << "/" << kCodecMessages << " fuzz=" << kFuzzBytes
           << "B alive=" << alive_after_fuzz << " estop_tick=" << stop_tick << " fault_tick=" << fault_tick
           << " clients=" << kEstopClients;
  return o;
}

Outcome Pruning() {
  Outcome o;
  const double worked = pruning::MeanDecrease(0.9, {0.6, 0.5, 0.7});
  o.Require(std::abs(worked - 0.3) <= 1e-12, "worked example");

  nlu::MLPModel toy(4, 2, {"a", "b"});
  toy.w1(0, 0) = 1.0;
  toy.w1(1, 0) = -1.0;
  toy.w2(0, 1) = 1.0;
  toy.w2(1, 0) = 1.0;
  nlu::Dataset toy_data{nlu::Matrix(4, 6), {0, 1, 0, 1, 0, 1}};
  Rng rng(1);
  for (int n = 0; n < 6; ++n) {
    toy_data.x(0, n) = toy_data.y[static_cast<size_t>(n)] ? 1.0 : -1.0;
    for (int j = 1; j < 4; ++j) toy_data.x(j, n) = rng.Uniform(-1, 1);
  }
  const auto toy_rep = pruning::PermutationImportance(toy, toy_data, 5, 11);
  o.Require(toy_rep.importance[1] == 0.0 && toy_rep.importance[2] == 0.0 && toy_rep.importance[3] == 0.0,
            "dead features exactly zero");

  const auto model = DeskModel();
  const auto data = DeskData();
  const auto stub = pruning::PermutationImportance(model, data, 1, 0, pruning::Target::kInputFeatures,
                                                   pruning::IdentityPermuter());
  o.Require(std::all_of(stub.importance.begin(), stub.importance.end(), [](double v) { return v == 0.0; }),
            "identity permutation");

  const double agreement = pruning::ArgmaxAgreement(model, pruning::Quantize(model, 8).Dequantized(), data);
  o.Require(agreement >= kQuantAgreement, "8-bit agreement");

  const auto rep = pruning::PermutationImportance(model, data, 3, 9);
  const double base = pruning::Evaluate(model, data);
  // Dead inputs: columns that are zero on every row. Their importance is zero
  // by construction, so masking all of them together must be exact.
  pruning::ImportanceReport dead = rep;
  int dead_count = 0;
  for (Eigen::Index j = 0; j < data.x.rows(); ++j) {
    const bool is_dead = (data.x.row(j).array() == 0.0).all();
    o.Require(!is_dead || rep.importance[static_cast<size_t>(j)] == 0.0, "dead feature importance");
    dead.importance[static_cast<size_t>(j)] = is_dead ? 0.0 : 1.0;
    dead_count += is_dead;
  }
  const double dead_fraction = static_cast<double>(dead_count) / static_cast<double>(rep.importance.size());
  const auto dead_pruned = pruning::Prune(model, dead, dead_fraction);
  o.Require(pruning::Evaluate(dead_pruned, data) == base && nlu::Loss(dead_pruned, data) == nlu::Loss(model, data),
            "zero-importance pruning exact");

  const auto cli = pruning::PermutationImportance(model, data, 5, 7);
  const auto cli_removed = pruning::LeastImportant(cli, 0.3);
  const bool cli_zero = std::all_of(cli_removed.begin(), cli_removed.end(),
                                    [&](int j) { return cli.importance[static_cast<size_t>(j)] == 0.0; });
  o.Require(cli_zero && pruning::Evaluate(pruning::Prune(model, cli, 0.3), data) == base,
            "default-fraction pruning exact");

  // Individually zero scores are not jointly removable; reported, not gated.
  int zero_count = 0;
  for (double v : rep.importance) zero_count += v == 0.0;
  const double all_zero = pruning::Evaluate(
      pruning::Prune(model, rep, static_cast<double>(zero_count) / static_cast<double>(rep.importance.size())), data);

  const double half = pruning::Evaluate(pruning::Prune(model, rep, 0.5), data);
  o.Require(base - half <= kHalfPruneMaxDrop, "p=0.5 accuracy drop");
  o.detail << "worked=" << worked << " agreement8=" << agreement << " dead_pruned=" << dead_count << " p0.3_pruned=" << cli_removed.size() << " acc=" << base
           << " p0.5_acc=" << half << " all_zero_scored(" << zero_count << ")_acc=" << all_zero;
  return o;
}

Outcome HarnessTrends() {
  Outcome o;
  Stopwatch sw;
  const auto campaign = harness::Campaign::Load(ResolveConfig("paper_tasks", "campaigns", ".campaign"));
  const auto first = harness::RunCampaign(campaign);
  const auto second = harness::RunCampaign(campaign);
  o.Require(first.files == second.files, "byte-identical rerun");

  // Clutter sweeps, one series per (table, label, lighting, wer, detector).
  using SeriesKey = std::tuple<std::string, std::string, int, double, std::string>;
  std::map<SeriesKey, std::map<double, const harness::TrialTable*>> series;
  // Lighting pairs, one per (table, label, clutter, wer, detector).
  using PairKey = std::tuple<std::string, std::string, double, double, std::string>;
  std::map<PairKey, std::map<int, const harness::TrialTable*>> lighting;
  int undersized = 0;
  for (const auto& table : first.tables) {
    const auto& cols = table.extra_columns;
    const bool has_clutter = std::find(cols.begin(), cols.end(), "clutter") != cols.end();
    const bool has_lighting = std::find(cols.begin(), cols.end(), "lighting") != cols.end();
    for (const auto& row : table.rows) {
      const auto& s = row.spec;
      undersized += row.n() < 500;
      const int light = s.lighting == perception::Lighting::kDim ? 1 : 0;
      if (has_clutter) series[{table.title, s.label, light, s.wer, s.detector}][s.clutter_fraction] = &row;
      if (has_lighting) lighting[{table.title, s.label, s.clutter_fraction, s.wer, s.detector}][light] = &row;
    }
  }
  o.Require(undersized == 0, "N=500 per cell");

  int sweeps = 0, increases = 0;
  double csr_spread = 0.0;
  for (const auto& [key, points] : series) {
    if (points.size() < 4) continue;
    ++sweeps;
    double prev_cp = 2.0, lo_csr = 2.0, hi_csr = -1.0;
    std::ostringstream cps;
    for (const auto& [clutter, row] : points) {
      const double cp = harness::ExecutionRate(row->cp(), row->n()).value();
      const double csr = harness::ExecutionRate(row->csr(), row->n()).value();
      increases += cp > prev_cp;
      prev_cp = cp;
      lo_csr = std::min(lo_csr, csr);
      hi_csr = std::max(hi_csr, csr);
      cps << (cps.tellp() > 0 ? "/" : "") << harness::ExecutionRate(row->cp(), row->n()).Percent();
    }
    csr_spread = std::max(csr_spread, 100.0 * (hi_csr - lo_csr));
    o.detail << (std::get<2>(key) ? "dim" : "bright") << "_cp=" << cps.str() << " ";
  }
  o.Require(sweeps > 0, "clutter sweep present");
  o.Require(increases == 0, "CP non-increasing over clutter");
  o.Require(csr_spread <= kCsrSpreadPoints, "CSR spread");

  int pairs = 0, inversions = 0;
  for (const auto& [key, arms] : lighting) {
    if (arms.size() != 2) continue;
    ++pairs;
    inversions += arms.at(1)->cp() > arms.at(0)->cp();
  }
  o.Require(pairs > 0 && inversions == 0, "CP(Dim) <= CP(Bright)");

  const double sec = sw.Seconds();
  o.Require(sec < kHarnessBudgetSec, "runtime");
  o.detail << "csr_spread=" << csr_spread << "pt dim_vs_bright_pairs=" << pairs << " inversions=" << inversions
           << " files=" << first.files.size() << " " << sec << "s (two runs)";
  return o;
}

}  // namespace

int main() {
  setenv("DESKBOT_LOG", "error", 0);
  hub::InitLogging();
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"execution-rate arithmetic", ExecutionRates},
      {"kinematics suite", Kinematics},
      {"perception loop closure", PerceptionLoop},
      {"nlu gradient, fit and selection", Nlu},
      {"fsm trace and safety dominance", Fsm},
      {"hub codec, fuzz and estop", Hub},
      {"pruning and quantization", Pruning},
      {"harness trends and determinism", HarnessTrends},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome out;
    try {
      out = run();
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail << " [exception: " << e.what() << "]";
    }
    failed += !out.pass;
    std::printf("%s  %-34s %s\n", out.pass ? "PASS" : "FAIL", name.c_str(), out.detail.str().c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
