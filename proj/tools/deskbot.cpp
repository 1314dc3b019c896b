#include <csignal>
#include <iostream>
#include <memory>
#include <optional>

#include <boost/asio/io_context.hpp>
#include <boost/asio/signal_set.hpp>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "deskbot/fsm/fsm.hpp"
#include "deskbot/harness/harness.hpp"
#include "deskbot/hub/hub.hpp"
#include "deskbot/hub/server.hpp"
#include "deskbot/kinematics/kinematics.hpp"
#include "deskbot/nlu/nlu.hpp"
#include "deskbot/perception/perception.hpp"
#include "deskbot/pruning/pruning.hpp"

using namespace deskbot;

namespace {

struct ModelSource {
  std::string model;
  std::string corpus = "desk_corpus";
  int epochs = 1000;

  void Register(CLI::App* cmd) {
    cmd->add_option("--model", model, "model file written by `deskbot train`");
    cmd->add_option("--corpus", corpus, "corpus to train on when no model is given")->capture_default_str();
    cmd->add_option("--epochs", epochs, "training epochs when training from the corpus")->capture_default_str();
  }

  nlu::MLPModel Get() const {
    if (!model.empty()) return nlu::MLPModel::Load(ResolveConfig(model, "models", ".json"));
    nlu::TrainOptions o;
    o.epochs = epochs;
    return nlu::Train(nlu::LoadCorpus(ResolveConfig(corpus, "corpus", ".tsv")), nlu::HashedNgramFeaturizer(), o);
  }
};

kin::JointVector DegreesToJoints(const kin::DHChain& chain, const std::vector<double>& deg) {
  kin::JointVector q(static_cast<Eigen::Index>(deg.size()));
  for (size_t i = 0; i < deg.size(); ++i) q[static_cast<Eigen::Index>(i)] = kin::DegToRad(deg[i]);
  kin::CheckJointCount(chain, q);
  return q;
}

Json PoseJson(const kin::Pose& p) {
  const auto& r = p.orientation;
  return {{"position", {p.position.x(), p.position.y(), p.position.z()}}, {"orientation", {r.w(), r.x(), r.y(), r.z()}}};
}

Json JointsDegJson(const kin::JointVector& q) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < q.size(); ++i) a.push_back(kin::RadToDeg(q[i]));
  return a;
}

std::pair<std::string, uint16_t> HostPort(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) throw Error(ErrorCode::kConfig, "expected host:port, got " + s);
  return {s.substr(0, colon), static_cast<uint16_t>(std::stoi(s.substr(colon + 1)))};
}

// Runs the io_context until SIGINT or SIGTERM.
void RunUntilSignal(boost::asio::io_context& io, hub::Server& server) {
  boost::asio::signal_set signals(io, SIGINT, SIGTERM);
  signals.async_wait([&](const boost::system::error_code&, int) {
    spdlog::warn("shutting down");
    server.Stop();
  });
  server.Start();
  io.run();
}

nlu::Command ParseCommandArg(const std::string& text) {
  const Json j = Json::parse(text);
  return nlu::Command::FromJson(j);
}

}  // namespace

int main(int argc, char** argv) {
  hub::InitLogging();
  CLI::App app{"deskbot: desk-scale voice-driven robot arm runtime and experiment harness"};
  app.require_subcommand(1);

  // serve
  auto* serve = app.add_subcommand("serve", "run the hub: machine, simulated arm and scene, TCP + WebSocket");
  std::string arm = "arm_table1", scene_name = "office", machine_name = "desk_tasks", address = "127.0.0.1";
  std::string remote_nlu;
  uint16_t tcp_port = 7462, ws_port = 7463;
  bool no_ws = false;
  double telemetry_hz = 20.0;
  int tick_ms = 20;
  uint64_t seed = 1;
  ModelSource serve_model;
  serve->add_option("--arm", arm, "arm chain file")->capture_default_str();
  serve->add_option("--scene", scene_name, "scene file")->capture_default_str();
  serve->add_option("--machine", machine_name, "state machine file")->capture_default_str();
  serve->add_option("--address", address, "listen address")->capture_default_str();
  serve->add_option("--tcp", tcp_port, "framed TCP port (0 picks one)")->capture_default_str();
  serve->add_option("--ws", ws_port, "WebSocket port, path /ws")->capture_default_str();
  serve->add_flag("--no-ws", no_ws, "disable the WebSocket gateway");
  serve->add_option("--telemetry-hz", telemetry_hz, "telemetry broadcast rate")->capture_default_str();
  serve->add_option("--tick-ms", tick_ms, "machine tick period")->capture_default_str();
  serve->add_option("--seed", seed, "simulation seed")->capture_default_str();
  serve->add_option("--nlu", remote_nlu, "host:port of a `deskbot nlu-serve` process; local model otherwise");
  serve_model.Register(serve);

  // nlu-serve
  auto* nlu_serve = app.add_subcommand("nlu-serve", "run the remote intent service (HELLO and INTENT_TEXT only)");
  uint16_t nlu_port = 7464;
  std::string nlu_address = "127.0.0.1";
  ModelSource nlu_model;
  nlu_serve->add_option("--address", nlu_address, "listen address")->capture_default_str();
  nlu_serve->add_option("--port", nlu_port, "framed TCP port")->capture_default_str();
  nlu_model.Register(nlu_serve);

  // train
  auto* train = app.add_subcommand("train", "train the intent model on a corpus");
  std::string train_corpus = "desk_corpus", train_out;
  nlu::TrainOptions train_opts;
  train_opts.epochs = 1000;
  train->add_option("--corpus", train_corpus, "text<TAB>intent corpus")->capture_default_str();
  train->add_option("--epochs", train_opts.epochs)->capture_default_str();
  train->add_option("--hidden", train_opts.hidden)->capture_default_str();
  train->add_option("--lr", train_opts.learning_rate)->capture_default_str();
  train->add_option("--seed", train_opts.seed)->capture_default_str();
  train->add_option("--out", train_out, "model file")->required();

  // classify
  auto* classify = app.add_subcommand("classify", "interpret text; prints one JSON result per line");
  std::vector<std::string> texts;
  double threshold = 0.6, classify_wer = 0.0;
  uint64_t classify_seed = 0;
  ModelSource classify_model;
  classify->add_option("text", texts, "utterances")->required();
  classify->add_option("--threshold", threshold)->capture_default_str();
  classify->add_option("--wer", classify_wer, "pass the text through the mock speech channel first")
      ->capture_default_str();
  classify->add_option("--seed", classify_seed)->capture_default_str();
  classify_model.Register(classify);

  // prune
  auto* prune = app.add_subcommand("prune", "permutation importance, pruning and weight quantization");
  std::string prune_model, prune_data = "desk_corpus", prune_report, prune_out, quant_out;
  int prune_k = 5, prune_bits = 8;
  double prune_fraction = 0.3;
  uint64_t prune_seed = 7;
  bool prune_hidden = false;
  prune->add_option("--model", prune_model, "model file; trains on --data when omitted");
  prune->add_option("--data", prune_data, "evaluation corpus")->capture_default_str();
  prune->add_option("--k", prune_k, "permutation repeats")->capture_default_str();
  prune->add_option("--fraction", prune_fraction, "share of columns to prune")->capture_default_str();
  prune->add_option("--bits", prune_bits, "weight quantization bits")->capture_default_str();
  prune->add_option("--seed", prune_seed)->capture_default_str();
  prune->add_flag("--hidden", prune_hidden, "score hidden units instead of input features");
  prune->add_option("--report", prune_report, "report JSON path")->required();
  prune->add_option("--out", prune_out, "write the pruned model");
  prune->add_option("--quantized-out", quant_out, "write the quantized pruned model");

  // run-task
  auto* run_task = app.add_subcommand("run-task", "run N seeded trials of one task and command");
  std::string task_name, command_text, intent, lighting = "bright", task_out;
  harness::TrialSpec task_spec;
  task_spec.seed = 42;
  run_task->add_option("task", task_name, "door, switch or cup")->required();
  run_task->add_option("--command", command_text, "spoken command")->required();
  run_task->add_option("--intent", intent, "expected intent (switch: light_on or light_off)");
  run_task->add_option("--trials", task_spec.trials)->capture_default_str();
  run_task->add_option("--wer", task_spec.wer)->capture_default_str();
  run_task->add_option("--lighting", lighting)->capture_default_str();
  run_task->add_option("--clutter", task_spec.clutter_fraction)->capture_default_str();
  run_task->add_option("--seed", task_spec.seed)->capture_default_str();
  run_task->add_option("--max-ticks", task_spec.max_ticks)->capture_default_str();
  run_task->add_option("--out", task_out, "report path; .md renders markdown, anything else CSV");

  // campaign
  auto* campaign = app.add_subcommand("campaign", "run a campaign file and write its report bundle");
  std::string campaign_file, campaign_out = "out";
  std::optional<int> campaign_trials;
  std::optional<uint64_t> campaign_seed;
  campaign->add_option("file", campaign_file, "campaign file or shipped name (e.g. paper_tasks)")->required();
  campaign->add_option("--out", campaign_out, "output directory")->capture_default_str();
  campaign->add_option("--trials", campaign_trials, "override trials per cell");
  campaign->add_option("--seed", campaign_seed, "override the master seed");

  // scenario
  auto* scenario = app.add_subcommand("scenario", "run one command through the machine and print the transition log");
  std::string scenario_command, scenario_log;
  uint64_t scenario_seed = 1;
  scenario->add_option("command", scenario_command, R"(command JSON, e.g. {"function":"PressTarget","target_class":"light_switch","press_end":"near"})")
      ->required();
  scenario->add_option("--scene", scene_name)->capture_default_str();
  scenario->add_option("--machine", machine_name)->capture_default_str();
  scenario->add_option("--seed", scenario_seed)->capture_default_str();
  scenario->add_option("--log", scenario_log, "write the log as JSON lines");

  // fk / ik
  auto* fk = app.add_subcommand("fk", "forward kinematics of joint angles in degrees");
  std::vector<double> fk_deg;
  fk->add_option("--arm", arm)->capture_default_str();
  fk->add_option("deg", fk_deg, "joint angles, degrees")->required();

  auto* ik = app.add_subcommand("ik", "inverse kinematics to a position (and optional roll/pitch/yaw)");
  std::vector<double> ik_pos, ik_rpy;
  ik->add_option("--arm", arm)->capture_default_str();
  ik->add_option("--position", ik_pos, "x y z in metres")->expected(3)->required();
  ik->add_option("--rpy", ik_rpy, "roll pitch yaw in degrees; position only when omitted")->expected(3);

  // render
  auto* render = app.add_subcommand("render", "render the depth camera view to a 16-bit PGM");
  std::vector<double> render_deg;
  std::string render_out;
  render->add_option("--arm", arm)->capture_default_str();
  render->add_option("--scene", scene_name)->capture_default_str();
  render->add_option("--deg", render_deg, "joint angles, degrees; look-down pose when omitted");
  render->add_option("--out", render_out, "PGM path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve) {
      const auto chain = kin::DHChain::Load(ResolveConfig(arm, "arms", ".json"));
      fsm::SimWorld world(chain, perception::Scene::Load(ResolveConfig(scene_name, "scenes", ".json")), {}, {}, {},
                          seed);
      fsm::Machine machine(fsm::MachineSpec::Load(ResolveConfig(machine_name, "machines", ".json")), world);
      std::unique_ptr<hub::IntentService> intents;
      if (!remote_nlu.empty()) {
        const auto [host, port] = HostPort(remote_nlu);
        intents = std::make_unique<hub::RemoteIntentService>(host, port);
      } else {
        intents = std::make_unique<hub::LocalIntentService>(nlu::Pipeline(serve_model.Get()));
      }
      hub::HubCore core(machine, *intents);
      boost::asio::io_context io;
      hub::ServerConfig cfg;
      cfg.address = address;
      cfg.tcp_port = tcp_port;
      cfg.ws_port = ws_port;
      cfg.websocket = !no_ws;
      cfg.telemetry_hz = telemetry_hz;
      cfg.tick_ms = tick_ms;
      hub::Server server(io, core, cfg);
      std::cout << "deskbot hub on " << address << ":" << server.tcp_port();
      if (!no_ws) std::cout << ", ws://" << address << ":" << server.ws_port() << "/ws";
      std::cout << std::endl;
      RunUntilSignal(io, server);
    } else if (*nlu_serve) {
      hub::LocalIntentService intents{nlu::Pipeline(nlu_model.Get())};
      hub::NluService service(intents);
      boost::asio::io_context io;
      hub::ServerConfig cfg;
      cfg.address = nlu_address;
      cfg.tcp_port = nlu_port;
      cfg.websocket = false;
      cfg.telemetry_hz = 0;
      cfg.tick_ms = 0;
      hub::Server server(io, service, cfg);
      std::cout << "deskbot nlu service on " << nlu_address << ":" << server.tcp_port() << std::endl;
      RunUntilSignal(io, server);
    } else if (*train) {
      nlu::TrainReport report;
      const auto model = nlu::Train(nlu::LoadCorpus(ResolveConfig(train_corpus, "corpus", ".tsv")),
                                    nlu::HashedNgramFeaturizer(), train_opts, &report);
      model.Save(train_out);
      std::cout << Json{{"accuracy", report.accuracy}, {"loss", report.loss}, {"out", train_out}}.dump() << "\n";
    } else if (*classify) {
      const nlu::Pipeline pipeline(classify_model.Get(), threshold);
      for (size_t i = 0; i < texts.size(); ++i) {
        const auto u = classify_wer > 0
                           ? nlu::Transcribe({texts[i], classify_wer, DeriveSeed(classify_seed, i)})
                           : nlu::MakeUtterance(texts[i]);
        Json out = pipeline.Run(u).ToJson();
        out["text"] = u.text;
        std::cout << out.dump() << "\n";
      }
    } else if (*prune) {
      const auto examples = nlu::LoadCorpus(ResolveConfig(prune_data, "corpus", ".tsv"));
      nlu::MLPModel model = prune_model.empty() ? ModelSource{"", prune_data}.Get()
                                                : nlu::MLPModel::Load(ResolveConfig(prune_model, "models", ".json"));
      const auto featurizer = nlu::MakeFeaturizer(model.featurizer);
      const auto data = nlu::BuildDataset(examples, *featurizer, model.labels());
      const auto target = prune_hidden ? pruning::Target::kHiddenUnits : pruning::Target::kInputFeatures;
      const auto report = pruning::PermutationImportance(model, data, prune_k, prune_seed, target);
      const auto pruned = pruning::Prune(model, report, prune_fraction);
      const auto quantized = pruning::Quantize(pruned, prune_bits);
      const auto restored = quantized.Dequantized();
      Json out = {{"importance", report.ToJson()},
                  {"fraction", prune_fraction},
                  {"pruned", pruning::LeastImportant(report, prune_fraction)},
                  {"accuracy", {{"original", pruning::Evaluate(model, data)},
                                {"pruned", pruning::Evaluate(pruned, data)},
                                {"quantized", pruning::Evaluate(restored, data)}}},
                  {"bits", prune_bits},
                  {"argmax_agreement", {{"pruned", pruning::ArgmaxAgreement(model, pruned, data)},
                                        {"quantized", pruning::ArgmaxAgreement(pruned, restored, data)}}}};
      WriteTextFile(prune_report, out.dump(2) + "\n");
      if (!prune_out.empty()) pruned.Save(prune_out);
      if (!quant_out.empty()) WriteTextFile(quant_out, quantized.ToJson().dump() + "\n");
      std::cout << out["accuracy"].dump() << "\n";
    } else if (*run_task) {
      const auto rig = harness::Rig::Load();
      task_spec.task = harness::ParseTask(task_name);
      task_spec.label = task_name;
      task_spec.command_text = command_text;
      task_spec.expected_intent = intent;
      task_spec.lighting = perception::ParseLighting(lighting);
      harness::ReportTable table;
      table.title = task_name + ": " + command_text;
      table.rows.push_back(harness::RunTrials(rig, task_spec));
      const bool md = task_out.size() > 3 && task_out.ends_with(".md");
      const std::string doc = md ? harness::RenderMarkdown(table) : harness::RenderCsv(table);
      if (task_out.empty()) {
        std::cout << doc;
      } else {
        std::filesystem::create_directories(std::filesystem::absolute(task_out).parent_path());
        WriteTextFile(task_out, doc);
        std::cout << harness::RenderMarkdown(table);
      }
    } else if (*campaign) {
      auto c = harness::Campaign::Load(ResolveConfig(campaign_file, "campaigns", ".campaign"));
      if (campaign_trials) c.trials = *campaign_trials;
      if (campaign_seed) c.master_seed = *campaign_seed;
      const auto bundle = harness::RunCampaign(c);
      harness::WriteBundle(bundle, campaign_out);
      std::cout << bundle.files.at("summary.md");
    } else if (*scenario) {
      const auto chain = kin::DHChain::Load(ResolveConfig(arm, "arms", ".json"));
      fsm::SimWorld world(chain, perception::Scene::Load(ResolveConfig(scene_name, "scenes", ".json")), {}, {}, {},
                          scenario_seed);
      fsm::Machine machine(fsm::MachineSpec::Load(ResolveConfig(machine_name, "machines", ".json")), world);
      try {
        fsm::RunScenario(machine, ParseCommandArg(scenario_command));
      } catch (const fsm::ScenarioTimeout& e) {
        std::cerr << e.what() << "\n";
      }
      const std::string log = machine.LogJsonLines();
      if (!scenario_log.empty()) WriteTextFile(scenario_log, log);
      std::cout << log;
    } else if (*fk) {
      const auto chain = kin::DHChain::Load(ResolveConfig(arm, "arms", ".json"));
      const auto q = DegreesToJoints(chain, fk_deg);
      Json out = PoseJson(kin::Pose::FromTransform(kin::ForwardKinematics(chain, q)));
      out["within_limits"] = chain.WithinLimits(q);
      std::cout << out.dump() << "\n";
    } else if (*ik) {
      const auto chain = kin::DHChain::Load(ResolveConfig(arm, "arms", ".json"));
      kin::Pose target;
      target.position = {ik_pos[0], ik_pos[1], ik_pos[2]};
      kin::IKOptions opts;
      if (ik_rpy.empty()) {
        opts.orientation_weight = 0.0;
      } else {
        target.orientation = Eigen::Quaterniond(
            kin::RotationFromRpy(kin::DegToRad(ik_rpy[0]), kin::DegToRad(ik_rpy[1]), kin::DegToRad(ik_rpy[2])));
      }
      const auto r = kin::InverseKinematics(chain, target, chain.Home(), opts);
      std::cout << Json{{"joints_deg", JointsDegJson(r.q)},
                        {"iterations", r.iterations},
                        {"position_error", r.position_error},
                        {"orientation_error", r.orientation_error}}
                       .dump()
                << "\n";
    } else if (*render) {
      const auto chain = kin::DHChain::Load(ResolveConfig(arm, "arms", ".json"));
      const auto scene = perception::Scene::Load(ResolveConfig(scene_name, "scenes", ".json"));
      const kin::JointVector q = render_deg.empty() ? fsm::SimWorld(chain, scene, {}, {}, {}, 0).config().observe_pose
                                                    : DegreesToJoints(chain, render_deg);
      const perception::CameraModel camera;
      const auto r = perception::Render(scene, camera, perception::CameraPose(chain, q));
      r.depth.WritePgm(render_out);
      Json boxes = Json::array();
      for (const auto& d : r.ground_truth) {
        boxes.push_back({{"class", d.class_label}, {"bbox", {d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h}}});
      }
      std::cout << Json{{"out", render_out}, {"boxes", boxes}}.dump() << "\n";
    }
  } catch (const kin::UnreachableError& e) {
    std::cerr << "unreachable: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error (" << ErrorCodeName(e.code()) << "): " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
