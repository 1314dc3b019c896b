#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "deskbot/fsm/fsm.hpp"
#include "deskbot/nlu/nlu.hpp"
#include "deskbot/perception/perception.hpp"

namespace deskbot::harness {

enum class Task { kDoor, kSwitch, kCup };

std::string_view TaskName(Task t);
Task ParseTask(std::string_view name);

// Intent a command for the task should be recognised as. Switch commands
// need the direction, so the intent is part of the trial spec.
std::string DefaultIntent(Task t);

struct TrialSpec {
  Task task = Task::kDoor;
  std::string label;
  std::string command_text;
  std::string expected_intent;  // empty means DefaultIntent(task)
  perception::Lighting lighting = perception::Lighting::kBright;
  double clutter_fraction = 0.0;
  double wer = 0.0;
  int trials = 500;
  uint64_t seed = 0;
  std::string detector = "default";
  int max_ticks = 5000;

  std::string Intent() const;
  void Validate() const;
};

struct TrialRecord {
  int index = 0;
  uint64_t seed = 0;
  std::string transcript;
  std::optional<std::string> intent;
  bool intent_correct = false;  // CSR event
  bool task_outcome = false;    // CP event
  std::string end_state;
  std::string path;  // state sequence, e.g. Idle>UserInput>...>Idle
  int ticks = 0;
};

struct TrialTable {
  TrialSpec spec;
  std::vector<TrialRecord> records;

  int csr() const;
  int cp() const;
  int n() const { return static_cast<int>(records.size()); }
};

// Everything a trial needs besides its spec; loaded once, shared read-only.
struct Rig {
  kin::DHChain chain;
  perception::Scene scene;
  perception::CameraModel camera;
  std::map<std::string, perception::DetectorProfile> detectors{{"default", {}}};
  fsm::MachineSpec machine;
  fsm::WorldConfig world;
  nlu::Pipeline pipeline;

  // Loads the named arm, scene and machine from the data directory and trains
  // the intent model on `corpus` (or loads `model` when given).
  struct Names {
    std::string arm = "arm_table1";
    std::string scene = "office";
    std::string machine = "desk_tasks";
    std::string corpus = "desk_corpus";
    std::string model;
    int epochs = 1000;
    double threshold = 0.6;
  };
  static Rig Load(const Names& names);
  static Rig Load() { return Load(Names{}); }
};

// One trial: speech channel, hub intent request, machine run, goal check.
TrialRecord RunTrial(const Rig& rig, const TrialSpec& spec, int index);
TrialTable RunTrials(const Rig& rig, const TrialSpec& spec);

// Whether the world satisfies the task's goal. The machine must also have
// returned to Idle through Reset.
bool GoalSatisfied(const TrialSpec& spec, const fsm::SimWorld& world);

// Exact ratio, shown as a percentage with one decimal, halves rounded up.
struct ExecutionRate {
  int64_t correct = 0;
  int64_t total = 0;

  ExecutionRate(int64_t correct, int64_t total);
  int64_t permille() const;
  double value() const { return static_cast<double>(correct) / static_cast<double>(total); }
  std::string Percent() const;  // "92.6%"
};

// A report document: a caption, a list of rows with stable columns.
struct ReportTable {
  std::string title;
  std::vector<std::string> extra_columns;  // e.g. "LC", "B.N."
  std::vector<TrialTable> rows;
  bool total_row = true;
};

std::vector<std::string> ReportHeader(const ReportTable& t);
std::vector<std::vector<std::string>> ReportRows(const ReportTable& t);
std::string RenderCsv(const ReportTable& t);
// Quotes a field when it holds a comma, quote or newline.
std::string CsvField(const std::string& s);
std::string RenderMarkdown(const ReportTable& t);

// Published counts alongside the rates printed next to them.
struct PublishedRow {
  std::string label;
  int64_t correct = 0;
  int64_t total = 0;
  std::string reported;  // e.g. "84.3%"
};

struct PublishedMismatch {
  std::string label;
  std::string reported;
  std::string recomputed;
};

std::vector<PublishedMismatch> CheckPublished(const std::vector<PublishedRow>& rows);

struct Campaign {
  struct Cell {
    std::string label;
    std::string command;
    std::string intent;
    std::map<std::string, Json> overrides;  // lighting, clutter, wer, trials, detector
  };
  struct Group {
    std::string name;  // file stem
    std::string title;
    Task task = Task::kDoor;
    std::vector<std::string> columns;  // parameters shown as extra columns
    std::map<std::string, std::vector<Json>> sweep;
    std::vector<Cell> cells;
  };

  std::string name;
  uint64_t master_seed = 1;
  int trials = 500;
  double wer = 0.05;
  int max_ticks = 5000;
  std::string lighting = "bright";
  Rig::Names rig;
  std::map<std::string, perception::DetectorProfile> detectors{{"default", {}}};
  std::map<std::string, std::vector<Json>> axes;  // cross product over the whole campaign
  std::vector<Group> groups;

  static Campaign FromJson(const Json& j);
  static Campaign Load(const std::filesystem::path& path);
};

struct Bundle {
  // file name -> contents, e.g. "task1_door.csv".
  std::map<std::string, std::string> files;
  std::vector<ReportTable> tables;
};

// Expands axes and sweeps into trial specs; seeds depend on the master seed,
// group and cell label only, so sweep points share their trial seeds.
std::vector<ReportTable> PlanCampaign(const Campaign& c);
Bundle RunCampaign(const Campaign& c, const Rig& rig);
Bundle RunCampaign(const Campaign& c);
void WriteBundle(const Bundle& b, const std::filesystem::path& dir);

}  // namespace deskbot::harness
