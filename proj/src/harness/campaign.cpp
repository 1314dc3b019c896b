#include <algorithm>
#include <set>

#include "deskbot/common/rng.hpp"
#include "deskbot/harness/harness.hpp"

namespace deskbot::harness {

namespace {

const std::set<std::string>& Parameters() {
  static const std::set<std::string> p{"lighting", "clutter", "wer", "detector", "trials"};
  return p;
}

void CheckKeys(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::kConfig, where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key)) throw Error(ErrorCode::kConfig, "unknown key '" + key + "' in " + where);
  }
}

std::map<std::string, std::vector<Json>> ParseAxes(const Json& j, const std::string& where) {
  std::map<std::string, std::vector<Json>> out;
  if (j.is_null()) return out;
  if (!j.is_object()) throw Error(ErrorCode::kConfig, where + " must be an object");
  for (const auto& [key, values] : j.items()) {
    if (!Parameters().contains(key)) throw Error(ErrorCode::kConfig, "cannot vary '" + key + "' in " + where);
    if (!values.is_array() || values.empty()) {
      throw Error(ErrorCode::kConfig, where + "." + key + " must be a non-empty list");
    }
    out[key] = values.get<std::vector<Json>>();
  }
  return out;
}

void Apply(TrialSpec& s, const std::string& key, const Json& v) {
  if (key == "lighting") {
    s.lighting = perception::ParseLighting(v.get<std::string>());
  } else if (key == "clutter") {
    s.clutter_fraction = v.get<double>();
  } else if (key == "wer") {
    s.wer = v.get<double>();
  } else if (key == "detector") {
    s.detector = v.get<std::string>();
  } else if (key == "trials") {
    s.trials = v.get<int>();
  } else {
    throw Error(ErrorCode::kConfig, "unknown parameter " + key);
  }
}

// Every combination of the listed values; the first key (in name order)
// varies fastest.
std::vector<std::vector<std::pair<std::string, Json>>> Combinations(
    const std::map<std::string, std::vector<Json>>& axes) {
  std::vector<std::vector<std::pair<std::string, Json>>> out{{}};
  for (auto it = axes.rbegin(); it != axes.rend(); ++it) {
    std::vector<std::vector<std::pair<std::string, Json>>> next;
    for (const auto& prefix : out) {
      for (const auto& v : it->second) {
        auto combo = prefix;
        combo.emplace_back(it->first, v);
        next.push_back(std::move(combo));
      }
    }
    out = std::move(next);
  }
  for (auto& combo : out) std::reverse(combo.begin(), combo.end());
  return out;
}

std::string ValueText(const Json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

std::string SummaryCsv(const std::vector<ReportTable>& tables) {
  std::string out = "table,task,label,command,intent,lighting,clutter,wer,detector,seed,N,CSR,CP,CSR-ER,CP-ER\n";
  for (const auto& t : tables) {
    for (const auto& row : t.rows) {
      const auto& s = row.spec;
      const std::vector<std::string> fields{t.title,
                                            std::string(TaskName(s.task)),
                                            s.label,
                                            s.command_text,
                                            s.Intent(),
                                            std::string(perception::LightingName(s.lighting)),
                                            Json(s.clutter_fraction).dump(),
                                            Json(s.wer).dump(),
                                            s.detector,
                                            std::to_string(s.seed),
                                            std::to_string(row.n()),
                                            std::to_string(row.csr()),
                                            std::to_string(row.cp()),
                                            ExecutionRate(row.csr(), row.n()).Percent(),
                                            ExecutionRate(row.cp(), row.n()).Percent()};
      for (size_t i = 0; i < fields.size(); ++i) out += (i ? "," : "") + CsvField(fields[i]);
      out += '\n';
    }
  }
  return out;
}

}  // namespace

Campaign Campaign::FromJson(const Json& j) {
  CheckKeys(j, {"name", "master_seed", "trials", "wer", "max_ticks", "lighting", "rig", "detectors", "axes", "groups"},
            "campaign");
  Campaign c;
  c.name = j.value("name", "campaign");
  c.master_seed = j.value("master_seed", c.master_seed);
  c.trials = j.value("trials", c.trials);
  c.wer = j.value("wer", c.wer);
  c.max_ticks = j.value("max_ticks", c.max_ticks);
  c.lighting = j.value("lighting", c.lighting);
  perception::ParseLighting(c.lighting);
  if (j.contains("rig")) {
    const Json& r = j.at("rig");
    CheckKeys(r, {"arm", "scene", "machine", "corpus", "model", "epochs", "threshold"}, "rig");
    c.rig.arm = r.value("arm", c.rig.arm);
    c.rig.scene = r.value("scene", c.rig.scene);
    c.rig.machine = r.value("machine", c.rig.machine);
    c.rig.corpus = r.value("corpus", c.rig.corpus);
    c.rig.model = r.value("model", c.rig.model);
    c.rig.epochs = r.value("epochs", c.rig.epochs);
    c.rig.threshold = r.value("threshold", c.rig.threshold);
  }
  if (j.contains("detectors")) {
    for (const auto& [name, profile] : j.at("detectors").items()) {
      c.detectors[name] = perception::DetectorProfile::FromJson(profile);
    }
  }
  c.axes = ParseAxes(j.value("axes", Json()), "axes");
  if (!j.contains("groups") || !j.at("groups").is_array()) throw Error(ErrorCode::kConfig, "campaign needs groups");
  std::set<std::string> names;
  for (const auto& g : j.at("groups")) {
    CheckKeys(g, {"name", "title", "task", "columns", "sweep", "cells"}, "group");
    Group group;
    group.name = g.at("name").get<std::string>();
    if (!names.insert(group.name).second) throw Error(ErrorCode::kConfig, "duplicate group " + group.name);
    group.title = g.value("title", group.name);
    group.task = ParseTask(g.at("task").get<std::string>());
    group.columns = g.value("columns", std::vector<std::string>{});
    group.sweep = ParseAxes(g.value("sweep", Json()), "group " + group.name + " sweep");
    std::set<std::string> labels;
    for (const auto& cell : g.at("cells")) {
      std::set<std::string> keys{"label", "command", "intent"};
      keys.insert(Parameters().begin(), Parameters().end());
      CheckKeys(cell, keys, "cell");
      Cell k;
      k.label = cell.at("label").get<std::string>();
      if (!labels.insert(k.label).second) throw Error(ErrorCode::kConfig, "duplicate cell " + k.label);
      k.command = cell.at("command").get<std::string>();
      k.intent = cell.value("intent", "");
      for (const auto& key : Parameters()) {
        if (cell.contains(key)) k.overrides[key] = cell.at(key);
      }
      group.cells.push_back(std::move(k));
    }
    c.groups.push_back(std::move(group));
  }
  return c;
}

Campaign Campaign::Load(const std::filesystem::path& path) {
  try {
    return FromJson(LoadJsonFile(path));
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kConfig, path.string() + ": " + e.what());
  }
}

std::vector<ReportTable> PlanCampaign(const Campaign& c) {
  std::vector<ReportTable> out;
  for (const auto& combo : Combinations(c.axes)) {
    std::string suffix;
    for (const auto& [key, v] : combo) suffix += (suffix.empty() ? "" : ", ") + key + "=" + ValueText(v);
    for (const auto& g : c.groups) {
      ReportTable table;
      table.title = suffix.empty() ? g.title : g.title + " (" + suffix + ")";
      table.extra_columns = g.columns;
      for (const auto& cell : g.cells) {
        for (const auto& point : Combinations(g.sweep)) {
          TrialSpec s;
          s.task = g.task;
          s.label = cell.label;
          s.command_text = cell.command;
          s.expected_intent = cell.intent;
          s.lighting = perception::ParseLighting(c.lighting);
          s.wer = c.wer;
          s.trials = c.trials;
          s.max_ticks = c.max_ticks;
          s.seed = DeriveSeed(c.master_seed, HashTag(g.name + "/" + cell.label));
          for (const auto& [key, v] : combo) Apply(s, key, v);
          for (const auto& [key, v] : cell.overrides) Apply(s, key, v);
          for (const auto& [key, v] : point) Apply(s, key, v);
          if (!c.detectors.contains(s.detector)) throw Error(ErrorCode::kConfig, "unknown detector " + s.detector);
          s.Validate();
          table.rows.push_back({s, {}});
        }
      }
      out.push_back(std::move(table));
    }
  }
  return out;
}

Bundle RunCampaign(const Campaign& c, const Rig& rig) {
  Bundle b;
  b.tables = PlanCampaign(c);
  const auto combos = Combinations(c.axes);
  size_t k = 0;
  std::string summary_md = "# " + c.name + "\n\nmaster seed " + std::to_string(c.master_seed) + "\n\n";
  for (size_t a = 0; a < combos.size(); ++a) {
    std::string stem_suffix;
    for (const auto& [key, v] : combos[a]) stem_suffix += "__" + key + "-" + ValueText(v);
    for (const auto& g : c.groups) {
      ReportTable& t = b.tables[k++];
      for (auto& row : t.rows) row = RunTrials(rig, row.spec);
      b.files[g.name + stem_suffix + ".csv"] = RenderCsv(t);
      b.files[g.name + stem_suffix + ".md"] = RenderMarkdown(t);
      summary_md += RenderMarkdown(t) + "\n";
    }
  }
  b.files["summary.md"] = summary_md;
  b.files["summary.csv"] = SummaryCsv(b.tables);
  return b;
}

Bundle RunCampaign(const Campaign& c) {
  Rig rig = Rig::Load(c.rig);
  rig.detectors = c.detectors;
  return RunCampaign(c, rig);
}

void WriteBundle(const Bundle& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, text] : b.files) WriteTextFile(dir / name, text);
}

}  // namespace deskbot::harness
