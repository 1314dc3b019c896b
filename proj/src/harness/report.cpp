#include <cmath>
#include <cstdio>

#include "deskbot/harness/harness.hpp"

namespace deskbot::harness {

namespace {

std::string Percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g%%", std::round(fraction * 1000.0) / 10.0);
  return buf;
}

const std::map<std::string, std::string>& ColumnTitles() {
  static const std::map<std::string, std::string> titles{
      {"lighting", "LC"}, {"clutter", "B.N."}, {"wer", "WER"}, {"detector", "Detector"}};
  return titles;
}

std::string ColumnValue(const std::string& column, const TrialSpec& s) {
  if (column == "lighting") return s.lighting == perception::Lighting::kDim ? "Dim" : "Bright";
  if (column == "clutter") return Percent(s.clutter_fraction);
  if (column == "wer") return Percent(s.wer);
  if (column == "detector") return s.detector;
  throw Error(ErrorCode::kConfig, "unknown report column " + column);
}

}  // namespace

std::string CsvField(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> ReportHeader(const ReportTable& t) {
  std::vector<std::string> h{"Label"};
  for (const auto& c : t.extra_columns) {
    const auto it = ColumnTitles().find(c);
    if (it == ColumnTitles().end()) throw Error(ErrorCode::kConfig, "unknown report column " + c);
    h.push_back(it->second);
  }
  for (const char* c : {"N", "CSR", "CP", "CSR-ER", "CP-ER"}) h.emplace_back(c);
  return h;
}

std::vector<std::vector<std::string>> ReportRows(const ReportTable& t) {
  std::vector<std::vector<std::string>> rows;
  int64_t n = 0, csr = 0, cp = 0;
  for (const auto& table : t.rows) {
    std::vector<std::string> row{table.spec.label};
    for (const auto& c : t.extra_columns) row.push_back(ColumnValue(c, table.spec));
    row.push_back(std::to_string(table.n()));
    row.push_back(std::to_string(table.csr()));
    row.push_back(std::to_string(table.cp()));
    row.push_back(ExecutionRate(table.csr(), table.n()).Percent());
    row.push_back(ExecutionRate(table.cp(), table.n()).Percent());
    rows.push_back(std::move(row));
    n += table.n();
    csr += table.csr();
    cp += table.cp();
  }
  if (t.total_row && n > 0) {
    std::vector<std::string> row{"ER"};
    row.resize(1 + t.extra_columns.size());
    row.push_back(std::to_string(n));
    row.push_back(std::to_string(csr));
    row.push_back(std::to_string(cp));
    row.push_back(ExecutionRate(csr, n).Percent());
    row.push_back(ExecutionRate(cp, n).Percent());
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string RenderCsv(const ReportTable& t) {
  std::string out;
  auto line = [&out](const std::vector<std::string>& fields) {
    for (size_t i = 0; i < fields.size(); ++i) out += (i ? "," : "") + CsvField(fields[i]);
    out += '\n';
  };
  line(ReportHeader(t));
  for (const auto& r : ReportRows(t)) line(r);
  return out;
}

std::string RenderMarkdown(const ReportTable& t) {
  std::string out;
  if (!t.title.empty()) out += "### " + t.title + "\n\n";
  auto line = [&out](const std::vector<std::string>& fields) {
    out += "|";
    for (const auto& f : fields) out += " " + f + " |";
    out += '\n';
  };
  const auto header = ReportHeader(t);
  line(header);
  out += "|";
  for (size_t i = 0; i < header.size(); ++i) out += i == 0 ? " --- |" : " ---: |";
  out += '\n';
  for (const auto& r : ReportRows(t)) line(r);
  return out;
}

}  // namespace deskbot::harness
