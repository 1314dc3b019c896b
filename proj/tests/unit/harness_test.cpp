#include <regex>

#include "doctest.h"
#include "deskbot/common/rng.hpp"
#include "deskbot/harness/harness.hpp"
#include "deskbot/hub/hub.hpp"

using namespace deskbot;
using namespace deskbot::harness;

namespace {

const Rig& TheRig() {
  static const Rig rig = [] {
    hub::InitLogging();
    return Rig::Load();
  }();
  return rig;
}

TrialSpec Spec(Task task, std::string command, int trials, uint64_t seed = 7) {
  TrialSpec s;
  s.task = task;
  s.label = "X";
  s.command_text = std::move(command);
  s.trials = trials;
  s.seed = seed;
  return s;
}

TrialTable Fake(const std::string& label, int n, int csr, int cp) {
  TrialTable t;
  t.spec.label = label;
  for (int i = 0; i < n; ++i) {
    TrialRecord r;
    r.index = i;
    r.intent_correct = i < csr;
    r.task_outcome = i < cp;
    t.records.push_back(r);
  }
  return t;
}

const char* kMiniCampaign = R"({
  "name": "mini",
  "master_seed": 5,
  "trials": 3,
  "detectors": {"default": {}, "blurry": {"jitter_px": 6.0}},
  "axes": {"detector": ["default", "blurry"], "lighting": ["bright", "dim"]},
  "groups": [
    {"name": "door", "task": "door", "cells": [{"label": "A", "command": "Open the door"}]}
  ]
})";

}  // namespace

TEST_CASE("execution rate: published rows and the empty case") {
  CHECK(ExecutionRate(466 + 460 + 463, 1500).Percent() == "92.6%");
  CHECK(ExecutionRate(477, 500).Percent() == "95.4%");
  CHECK(ExecutionRate(0, 200).Percent() == "0.0%");
  CHECK(ExecutionRate(200, 200).Percent() == "100.0%");
  CHECK(ExecutionRate(1, 8).Percent() == "12.5%");
  CHECK(ExecutionRate(1, 16).Percent() == "6.3%");  // 6.25 rounds up
  CHECK_THROWS_AS(ExecutionRate(0, 0), Error);
  CHECK_THROWS_AS(ExecutionRate(3, 2), Error);
  CHECK_THROWS_AS(ExecutionRate(-1, 2), Error);
}

TEST_CASE("execution rate: rounding bracket holds for random counts") {
  Rng rng(11);
  for (int i = 0; i < 20000; ++i) {
    const int64_t t = 1 + static_cast<int64_t>(rng.Below(5000));
    const int64_t c = static_cast<int64_t>(rng.Below(static_cast<uint64_t>(t) + 1));
    const int64_t p = ExecutionRate(c, t).permille();
    // (p - 1/2) / 1000 <= c / t < (p + 1/2) / 1000, in integers.
    REQUIRE((2 * p - 1) * t <= 2000 * c);
    REQUIRE(2000 * c < (2 * p + 1) * t);
  }
}

TEST_CASE("published rates are recomputed and mismatches flagged") {
  const auto mismatches = CheckPublished({
      {"CSR", 466 + 460 + 463, 1500, "92.6%"},
      {"CP", 428 + 421 + 422, 1500, "84.3%"},
      {"C1 CP", 406, 500, "81.2%"},
  });
  REQUIRE(mismatches.size() == 1);
  CHECK(mismatches[0].label == "CP");
  CHECK(mismatches[0].recomputed == "84.7%");
}

TEST_CASE("reports: column order, totals, empty tables, stable bytes") {
  ReportTable empty;
  CHECK(RenderCsv(empty) == "Label,N,CSR,CP,CSR-ER,CP-ER\n");
  CHECK(ReportRows(empty).empty());

  ReportTable t;
  t.title = "Door";
  t.rows = {Fake("A", 200, 190, 180), Fake("B", 200, 200, 100)};
  CHECK(RenderCsv(t) ==
        "Label,N,CSR,CP,CSR-ER,CP-ER\n"
        "A,200,190,180,95.0%,90.0%\n"
        "B,200,200,100,100.0%,50.0%\n"
        "ER,400,390,280,97.5%,70.0%\n");
  CHECK(RenderCsv(t) == RenderCsv(t));
  CHECK(RenderMarkdown(t) ==
        "### Door\n\n"
        "| Label | N | CSR | CP | CSR-ER | CP-ER |\n"
        "| --- | ---: | ---: | ---: | ---: | ---: |\n"
        "| A | 200 | 190 | 180 | 95.0% | 90.0% |\n"
        "| B | 200 | 200 | 100 | 100.0% | 50.0% |\n"
        "| ER | 400 | 390 | 280 | 97.5% | 70.0% |\n");

  ReportTable lc;
  lc.extra_columns = {"lighting", "clutter"};
  lc.rows = {Fake("A1", 10, 10, 9)};
  lc.rows[0].spec.lighting = perception::Lighting::kDim;
  lc.rows[0].spec.clutter_fraction = 0.25;
  lc.total_row = false;
  CHECK(RenderCsv(lc) == "Label,LC,B.N.,N,CSR,CP,CSR-ER,CP-ER\nA1,Dim,25%,10,10,9,100.0%,90.0%\n");

  CHECK(CsvField("a,b") == "\"a,b\"");
  CHECK(CsvField("say \"hi\"") == "\"say \"\"hi\"\"\"");
  lc.extra_columns = {"colour"};
  CHECK_THROWS_AS(RenderCsv(lc), Error);
}

TEST_CASE("trial specs are validated before any trial runs") {
  auto bad = Spec(Task::kDoor, "Open the door", 0);
  CHECK_THROWS_AS(RunTrials(TheRig(), bad), Error);
  bad = Spec(Task::kDoor, "Open the door", 1);
  bad.clutter_fraction = 1.5;
  CHECK_THROWS_AS(RunTrials(TheRig(), bad), Error);
  bad = Spec(Task::kSwitch, "Open the door", 1);
  bad.expected_intent = "open_door";
  CHECK_THROWS_AS(RunTrials(TheRig(), bad), Error);
  bad = Spec(Task::kDoor, "Open the door", 1);
  bad.detector = "nope";
  CHECK_THROWS_AS(RunTrials(TheRig(), bad), Error);
  CHECK_THROWS_AS(ParseTask("juggle"), Error);
}

TEST_CASE("noiseless channel and world: every door trial succeeds") {
  Rig rig = Rig::Load();
  rig.world.servo_sigma = 0.0;
  rig.detectors["default"].noise_sigma = 0.0;
  rig.detectors["default"].jitter_px = 0.0;
  const auto t = RunTrials(rig, Spec(Task::kDoor, "Open the door", 20));
  CHECK(t.csr() == 20);
  CHECK(t.cp() == 20);
  for (const auto& r : t.records) CHECK(r.path == "Idle>UserInput>Search>Move>Press>Reset>Idle");
}

TEST_CASE("trials are deterministic and every success replays to a goal trace") {
  auto spec = Spec(Task::kSwitch, "Switch off the light", 40);
  spec.expected_intent = "light_off";
  spec.wer = 0.1;
  const auto a = RunTrials(TheRig(), spec);
  const auto b = RunTrials(TheRig(), spec);
  REQUIRE(a.n() == 40);
  const std::regex goal("Idle>UserInput>Search>Move(>Search>Move)*>Press>Reset>Idle");
  int successes = 0;
  for (int i = 0; i < a.n(); ++i) {
    const auto& r = a.records[static_cast<size_t>(i)];
    CHECK(r.path == b.records[static_cast<size_t>(i)].path);
    CHECK(r.transcript == b.records[static_cast<size_t>(i)].transcript);
    CHECK(r.task_outcome == b.records[static_cast<size_t>(i)].task_outcome);
    if (r.task_outcome) {
      ++successes;
      const auto again = RunTrial(TheRig(), spec, i);
      CHECK(again.task_outcome);
      CHECK(std::regex_match(again.path, goal));
    }
  }
  CHECK(successes > 20);
  CHECK(a.cp() <= a.n());
  CHECK(a.csr() <= a.n());
}

TEST_CASE("a vague water request fails more often than a precise one") {
  const auto c1 = RunTrials(TheRig(), Spec(Task::kCup, "Please hand me the water cup", 150));
  const auto c4 = RunTrials(TheRig(), Spec(Task::kCup, "I'm thirsty. I need some water", 150));
  CHECK(c4.csr() == 150);
  CHECK(c4.cp() < c4.csr());
  CHECK(c4.cp() < c1.cp());
}

TEST_CASE("detector degradation lowers task success but leaves speech untouched") {
  auto spec = Spec(Task::kCup, "Please hand me the water cup", 100);
  using perception::Lighting;
  // Ordered by decreasing expected confidence: 0.95, 0.76, 0.57, 0.475.
  const std::vector<std::pair<Lighting, double>> chain{
      {Lighting::kBright, 0.0}, {Lighting::kDim, 0.0}, {Lighting::kDim, 0.5}, {Lighting::kDim, 0.75}};
  std::vector<TrialTable> runs;
  for (const auto& [lighting, clutter] : chain) {
    spec.lighting = lighting;
    spec.clutter_fraction = clutter;
    runs.push_back(RunTrials(TheRig(), spec));
  }
  for (size_t k = 1; k < runs.size(); ++k) {
    CHECK(runs[k].csr() == runs[0].csr());
    for (size_t i = 0; i < runs[k].records.size(); ++i) {
      CHECK(runs[k].records[i].transcript == runs[0].records[i].transcript);
    }
    CHECK(runs[k].cp() <= runs[k - 1].cp());
  }
  CHECK(runs.back().cp() < runs.front().cp() / 2);
}

TEST_CASE("campaign: cross product, shared seeds across sweep points, schema") {
  const auto c = Campaign::FromJson(Json::parse(kMiniCampaign));
  const auto plan = PlanCampaign(c);
  REQUIRE(plan.size() == 4);
  CHECK(plan[0].title == "door (detector=default, lighting=bright)");
  CHECK(plan[1].title == "door (detector=blurry, lighting=bright)");
  CHECK(plan[0].rows[0].spec.seed == plan[3].rows[0].spec.seed);
  CHECK(plan[3].rows[0].spec.lighting == perception::Lighting::kDim);
  CHECK(plan[3].rows[0].spec.detector == "blurry");

  Json other = Json::parse(kMiniCampaign);
  other["master_seed"] = 6;
  const auto plan2 = PlanCampaign(Campaign::FromJson(other));
  CHECK(plan2[0].rows[0].spec.seed != plan[0].rows[0].spec.seed);
  CHECK(ReportHeader(plan2[0]) == ReportHeader(plan[0]));

  const auto shipped = Campaign::Load(ResolveConfig("paper_tasks", "campaigns", ".campaign"));
  const auto paper = PlanCampaign(shipped);
  std::map<std::string, size_t> rows;
  for (const auto& t : paper) rows[t.title] = t.rows.size();
  CHECK(rows["Task 1 Door"] == 3);
  CHECK(rows["Task 2 Switch"] == 8);
  CHECK(rows["Task 3 Group Order"] == 4);
  CHECK(rows["Task 3 Group Background Noise"] == 8);
  for (const auto& t : paper) {
    for (const auto& r : t.rows) CHECK(r.spec.trials == 500);
  }
}

TEST_CASE("campaign: bad files are config errors") {
  auto broken = [](auto edit) {
    Json j = Json::parse(kMiniCampaign);
    edit(j);
    return j;
  };
  CHECK_THROWS_AS(Campaign::FromJson(broken([](Json& j) { j["colour"] = 1; })), Error);
  CHECK_THROWS_AS(Campaign::FromJson(broken([](Json& j) { j["groups"][0]["task"] = "juggle"; })), Error);
  CHECK_THROWS_AS(Campaign::FromJson(broken([](Json& j) { j["groups"].push_back(j["groups"][0]); })), Error);
  CHECK_THROWS_AS(Campaign::FromJson(broken([](Json& j) { j["axes"]["speed"] = {1}; })), Error);
  CHECK_THROWS_AS(Campaign::FromJson(broken([](Json& j) { j["axes"]["wer"] = Json::array(); })), Error);
  CHECK_THROWS_AS(PlanCampaign(Campaign::FromJson(broken([](Json& j) { j["axes"]["detector"] = {"ghost"}; }))),
                  Error);
  CHECK_THROWS_AS(PlanCampaign(Campaign::FromJson(broken([](Json& j) { j["axes"]["wer"] = {2.0}; }))), Error);
}

TEST_CASE("campaign run: files per table plus summary, identical on rerun") {
  const auto c = Campaign::FromJson(Json::parse(kMiniCampaign));
  Rig rig = Rig::Load(c.rig);
  rig.detectors = c.detectors;
  const auto a = RunCampaign(c, rig);
  const auto b = RunCampaign(c, rig);
  CHECK(a.files == b.files);
  CHECK(a.files.size() == 4 * 2 + 2);
  CHECK(a.files.contains("door__detector-blurry__lighting-dim.csv"));
  CHECK(a.files.contains("summary.csv"));
  const std::string& summary = a.files.at("summary.csv");
  CHECK(std::count(summary.begin(), summary.end(), '\n') == 5);
}
