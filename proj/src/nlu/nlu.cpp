#include "deskbot/nlu/nlu.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "deskbot/common/rng.hpp"

namespace deskbot::nlu {

namespace {

struct GazetteerEntry {
  std::vector<std::string> words;
  std::string slot;
  std::string value;
  bool ambiguous = false;
};

const std::vector<GazetteerEntry>& Gazetteer() {
  static const std::vector<GazetteerEntry> entries = {
      {{"paper", "cup"}, "target", "paper_cup"},
      {{"water", "cup"}, "target", "paper_cup"},
      {{"cup", "of", "water"}, "target", "paper_cup"},
      {{"glass", "of", "water"}, "target", "paper_cup"},
      {{"cup"}, "target", "paper_cup"},
      {{"water"}, "target", "paper_cup", true},
      {{"light", "switch"}, "target", "light_switch"},
      {{"light"}, "target", "light_switch"},
      {{"lights"}, "target", "light_switch"},
      {{"lamp"}, "target", "light_switch"},
      {{"brightness"}, "target", "light_switch"},
      {{"door", "switch"}, "target", "door_switch"},
      {{"door"}, "target", "door_switch"},
      {{"switch"}, "target", "light_switch"},
      {{"hand"}, "destination", "hand"},
      {{"me"}, "destination", "hand"},
  };
  return entries;
}

bool MatchesAt(const std::vector<std::string>& tokens, size_t pos,
               const std::vector<std::string>& words) {
  if (pos + words.size() > tokens.size()) return false;
  return std::equal(words.begin(), words.end(), tokens.begin() + static_cast<long>(pos));
}

std::string Lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

Json MatrixToJson(const Matrix& m) {
  Json flat = Json::array();
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) flat.push_back(m(r, c));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", flat}};
}

Matrix MatrixFromJson(const Json& j) {
  const int rows = j.at("rows").get<int>();
  const int cols = j.at("cols").get<int>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || data.size() != static_cast<size_t>(rows) * cols) {
    throw Error(ErrorCode::kShape, "tensor data does not match its declared shape");
  }
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = data[static_cast<size_t>(r) * cols + c].get<double>();
  }
  return m;
}

}  // namespace

Utterance MakeUtterance(std::string text, Source source) {
  const bool blank = std::all_of(text.begin(), text.end(),
                                 [](unsigned char c) { return std::isspace(c); });
  if (blank) throw Error(ErrorCode::kEmptyUtterance, "utterance is empty");
  return {std::move(text), source};
}

std::vector<std::string> Tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

const std::map<std::string, std::string>& ConfusionList() {
  static const std::map<std::string, std::string> list = {
      {"light", "right"}, {"lights", "rights"}, {"door", "drawer"}, {"cup", "cap"},
      {"water", "waiter"}, {"open", "often"},  {"off", "of"},      {"on", "an"},
      {"switch", "which"}, {"hand", "and"},    {"paper", "pepper"}, {"sleep", "slip"},
      {"dark", "duck"},    {"pass", "past"},   {"turn", "torn"},
  };
  return list;
}

Utterance Transcribe(const TranscriptRequest& req) {
  if (!(req.wer >= 0.0 && req.wer <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "wer must lie in [0, 1]");
  }
  std::vector<std::string> words;
  std::istringstream in(req.true_text);
  for (std::string w; in >> w;) words.push_back(w);
  if (words.empty()) throw Error(ErrorCode::kEmptyUtterance, "nothing to transcribe");

  Rng rng(DeriveSeed(req.seed, HashTag("transcribe")));
  std::vector<std::string> kept;
  for (const auto& w : words) {
    if (!rng.Bernoulli(req.wer)) {
      kept.push_back(w);
      continue;
    }
    if (req.drop_only) continue;
    // Keep surrounding punctuation, swap the word itself.
    const auto first = std::find_if(w.begin(), w.end(), [](unsigned char c) { return std::isalnum(c); });
    const auto last = std::find_if(w.rbegin(), w.rend(), [](unsigned char c) { return std::isalnum(c); }).base();
    if (first >= last) continue;
    const auto hit = ConfusionList().find(Lower(std::string(first, last)));
    if (hit == ConfusionList().end()) continue;
    kept.push_back(std::string(w.begin(), first) + hit->second + std::string(last, w.end()));
  }
  if (kept.empty()) kept.push_back(words.front());

  std::string text;
  for (const auto& w : kept) {
    if (!text.empty()) text.push_back(' ');
    text += w;
  }
  return {text, Source::kTranscribed};
}

HashedNgramFeaturizer::HashedNgramFeaturizer(int dim) : dim_(dim) {
  if (dim <= 0) throw Error(ErrorCode::kInvalidArgument, "feature dimension must be positive");
}

Vector HashedNgramFeaturizer::Featurize(const Utterance& u) const {
  const auto tokens = Tokenize(u.text);
  if (tokens.empty()) throw Error(ErrorCode::kEmptyUtterance, "utterance has no tokens");
  Vector v = Vector::Zero(dim_);
  auto add = [&](const std::string& gram) {
    const uint64_t h = HashTag(gram);
    v[static_cast<Eigen::Index>(h % static_cast<uint64_t>(dim_))] += (h >> 63) ? -1.0 : 1.0;
  };
  for (size_t i = 0; i < tokens.size(); ++i) {
    add(tokens[i]);
    if (i + 1 < tokens.size()) add(tokens[i] + " " + tokens[i + 1]);
  }
  const double n = v.norm();
  if (n > 0) v /= n;
  return v;
}

std::unique_ptr<Featurizer> MakeFeaturizer(const Json& j) {
  const auto kind = j.value("kind", std::string("hashed-ngram"));
  if (kind != "hashed-ngram") throw Error(ErrorCode::kConfig, "unknown featurizer '" + kind + "'");
  return std::make_unique<HashedNgramFeaturizer>(j.value("dim", 256));
}

const std::vector<std::string>& DefaultLabels() {
  static const std::vector<std::string> labels = {"fetch_object", "light_off", "light_on",
                                                  "open_door"};
  return labels;
}

double IntentDistribution::Prob(std::string_view label) const {
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) return probs[static_cast<Eigen::Index>(i)];
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown label '" + std::string(label) + "'");
}

Vector Softmax(const Vector& logits) {
  const Vector e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

MLPModel::MLPModel(int input_dim, int hidden, std::vector<std::string> labels)
    : w1(Matrix::Zero(hidden, input_dim)),
      b1(Vector::Zero(hidden)),
      w2(Matrix::Zero(static_cast<Eigen::Index>(labels.size()), hidden)),
      b2(Vector::Zero(static_cast<Eigen::Index>(labels.size()))),
      labels_(std::move(labels)) {
  featurizer["dim"] = input_dim;
  Validate();
}

void MLPModel::Validate() const {
  if (labels_.size() < 2) throw Error(ErrorCode::kShape, "model needs at least two classes");
  if (w1.rows() < 1 || w1.cols() < 1 || b1.size() != w1.rows() || w2.cols() != w1.rows() ||
      w2.rows() != static_cast<Eigen::Index>(labels_.size()) || b2.size() != w2.rows()) {
    throw Error(ErrorCode::kShape, "inconsistent layer shapes");
  }
  if (!std::is_sorted(labels_.begin(), labels_.end()) ||
      std::adjacent_find(labels_.begin(), labels_.end()) != labels_.end()) {
    throw Error(ErrorCode::kShape, "labels must be unique and sorted");
  }
  if (!w1.allFinite() || !b1.allFinite() || !w2.allFinite() || !b2.allFinite()) {
    throw Error(ErrorCode::kShape, "non-finite weights");
  }
}

Vector MLPModel::Hidden(const Vector& f) const {
  if (f.size() != w1.cols()) {
    throw Error(ErrorCode::kShape, "feature vector has " + std::to_string(f.size()) +
                                       " entries, model expects " + std::to_string(w1.cols()));
  }
  return (w1 * f + b1).cwiseMax(0.0);
}

Vector MLPModel::LogitsFromHidden(const Vector& h) const {
  if (h.size() != w2.cols()) throw Error(ErrorCode::kShape, "hidden vector size mismatch");
  return w2 * h + b2;
}

Vector MLPModel::Logits(const Vector& f) const { return LogitsFromHidden(Hidden(f)); }

Json MLPModel::ToJson() const {
  return {{"format", "deskbot-mlp"}, {"version", 1},       {"featurizer", featurizer},
          {"labels", labels_},       {"w1", MatrixToJson(w1)}, {"b1", MatrixToJson(b1)},
          {"w2", MatrixToJson(w2)},  {"b2", MatrixToJson(b2)}};
}

MLPModel MLPModel::FromJson(const Json& j) {
  if (j.value("format", "") != "deskbot-mlp" || j.value("version", 0) != 1) {
    throw Error(ErrorCode::kConfig, "not a version 1 deskbot-mlp model");
  }
  const Matrix w1 = MatrixFromJson(j.at("w1"));
  MLPModel m(static_cast<int>(w1.cols()), static_cast<int>(w1.rows()),
             j.at("labels").get<std::vector<std::string>>());
  m.w1 = w1;
  m.b1 = MatrixFromJson(j.at("b1"));
  m.w2 = MatrixFromJson(j.at("w2"));
  m.b2 = MatrixFromJson(j.at("b2"));
  m.featurizer = j.at("featurizer");
  m.Validate();
  if (m.featurizer.value("dim", 0) != m.input_dim()) {
    throw Error(ErrorCode::kShape, "featurizer dimension does not match the first layer");
  }
  return m;
}

void MLPModel::Save(const std::filesystem::path& path) const {
  WriteTextFile(path, ToJson().dump(1) + "\n");
}

MLPModel MLPModel::Load(const std::filesystem::path& path) {
  return FromJson(LoadJsonFile(path));
}

IntentDistribution Classify(const MLPModel& model, const Vector& f) {
  return {model.labels(), Softmax(model.Logits(f))};
}

Selection SelectIntent(const IntentDistribution& dist, double threshold) {
  if (dist.probs.size() == 0 || dist.probs.size() != static_cast<Eigen::Index>(dist.labels.size())) {
    throw Error(ErrorCode::kShape, "distribution is empty or mislabelled");
  }
  size_t best = 0;
  for (size_t i = 1; i < dist.labels.size(); ++i) {
    const double p = dist.probs[static_cast<Eigen::Index>(i)];
    const double q = dist.probs[static_cast<Eigen::Index>(best)];
    if (p > q || (p == q && dist.labels[i] < dist.labels[best])) best = i;
  }
  const double conf = dist.probs[static_cast<Eigen::Index>(best)];
  if (conf < threshold) return {std::nullopt, conf};
  return {dist.labels[best], conf};
}

Slots FillSlots(const Utterance& u, std::string_view intent) {
  const auto tokens = Tokenize(u.text);
  Slots slots;
  size_t pos = 0;
  while (pos < tokens.size()) {
    const GazetteerEntry* best = nullptr;
    for (const auto& e : Gazetteer()) {
      if (MatchesAt(tokens, pos, e.words) && (!best || e.words.size() > best->words.size())) {
        best = &e;
      }
    }
    if (!best) {
      ++pos;
      continue;
    }
    if (!slots.count(best->slot)) {
      std::string value = best->value;
      if (value == "light_switch" && best->words == std::vector<std::string>{"switch"} &&
          intent == "open_door") {
        value = "door_switch";
      }
      slots[best->slot] = value;
      if (best->ambiguous && intent == "fetch_object") slots["ambiguous"] = "true";
    }
    pos += best->words.size();
  }
  return slots;
}

std::string_view FunctionName(Function f) {
  switch (f) {
    case Function::kPressTarget: return "PressTarget";
    case Function::kFetchToTarget: return "FetchToTarget";
    case Function::kNoop: return "Noop";
  }
  return "Noop";
}

std::string_view PressEndName(PressEnd e) { return e == PressEnd::kFar ? "far" : "near"; }

Json Command::ToJson() const {
  Json j = {{"function", FunctionName(function)}};
  if (function == Function::kPressTarget) {
    j["target_class"] = target_class;
    j["press_end"] = PressEndName(press_end);
  } else if (function == Function::kFetchToTarget) {
    j["target_class"] = target_class;
    j["destination_class"] = destination_class;
    j["ambiguous"] = ambiguous;
  }
  return j;
}

Command Command::FromJson(const Json& j) {
  Command c;
  const auto fn = j.at("function").get<std::string>();
  if (fn == "PressTarget") {
    c.function = Function::kPressTarget;
    c.target_class = j.at("target_class").get<std::string>();
    const auto end = j.value("press_end", std::string("near"));
    if (end != "near" && end != "far") throw Error(ErrorCode::kInvalidArgument, "bad press_end");
    c.press_end = end == "far" ? PressEnd::kFar : PressEnd::kNear;
  } else if (fn == "FetchToTarget") {
    c.function = Function::kFetchToTarget;
    c.target_class = j.at("target_class").get<std::string>();
    c.destination_class = j.value("destination_class", std::string("hand"));
    c.ambiguous = j.value("ambiguous", false);
  } else if (fn != "Noop") {
    throw Error(ErrorCode::kInvalidArgument, "unknown function '" + fn + "'");
  }
  if (c.function != Function::kNoop && c.target_class.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "command without a target");
  }
  return c;
}

Command Bind(std::string_view intent, const Slots& slots) {
  Command c;
  if (intent == "light_on" || intent == "light_off" || intent == "open_door") {
    c.function = Function::kPressTarget;
    c.target_class = intent == "open_door" ? "door_switch" : "light_switch";
    c.press_end = intent == "light_on" ? PressEnd::kNear : PressEnd::kFar;
    return c;
  }
  if (intent == "fetch_object") {
    const auto t = slots.find("target");
    if (t == slots.end() || t->second != "paper_cup") {
      throw UnbindableError(std::string(intent), "no fetchable object named in the command");
    }
    c.function = Function::kFetchToTarget;
    c.target_class = t->second;
    const auto d = slots.find("destination");
    c.destination_class = d == slots.end() ? "hand" : d->second;
    c.ambiguous = slots.count("ambiguous") > 0;
    return c;
  }
  throw UnbindableError(std::string(intent), "no binding for intent '" + std::string(intent) + "'");
}

std::vector<Example> ParseCorpus(std::string_view tsv) {
  std::vector<Example> out;
  std::istringstream in{std::string(tsv)};
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size()) {
      throw Error(ErrorCode::kConfig, "corpus line " + std::to_string(line_no) + " is not text<TAB>intent");
    }
    out.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return out;
}

std::vector<Example> LoadCorpus(const std::filesystem::path& path) {
  return ParseCorpus(ReadTextFile(path));
}

Dataset BuildDataset(const std::vector<Example>& examples, const Featurizer& featurizer,
                     const std::vector<std::string>& labels) {
  Dataset d{Matrix(featurizer.dim(), static_cast<Eigen::Index>(examples.size())), {}};
  for (size_t n = 0; n < examples.size(); ++n) {
    const auto it = std::find(labels.begin(), labels.end(), examples[n].label);
    if (it == labels.end()) {
      throw Error(ErrorCode::kDegenerateCorpus, "unknown intent label '" + examples[n].label + "'");
    }
    d.x.col(static_cast<Eigen::Index>(n)) = featurizer.Featurize(MakeUtterance(examples[n].text));
    d.y.push_back(static_cast<int>(it - labels.begin()));
  }
  return d;
}

namespace {

struct ForwardPass {
  Matrix pre;     // H x N
  Matrix hidden;  // H x N
  Matrix probs;   // K x N
};

ForwardPass Forward(const MLPModel& m, const Matrix& x) {
  ForwardPass f;
  f.pre = (m.w1 * x).colwise() + m.b1;
  f.hidden = f.pre.cwiseMax(0.0);
  Matrix z = (m.w2 * f.hidden).colwise() + m.b2;
  f.probs.resize(z.rows(), z.cols());
  for (Eigen::Index n = 0; n < z.cols(); ++n) f.probs.col(n) = Softmax(z.col(n));
  return f;
}

void CheckData(const MLPModel& m, const Dataset& d) {
  if (d.rows() == 0) throw Error(ErrorCode::kEmptyDataset, "dataset is empty");
  if (d.x.rows() != m.input_dim() || d.x.cols() != d.rows()) {
    throw Error(ErrorCode::kShape, "dataset does not match the model input");
  }
}

}  // namespace

double Loss(const MLPModel& model, const Dataset& data) {
  CheckData(model, data);
  const auto f = Forward(model, data.x);
  double loss = 0.0;
  for (int n = 0; n < data.rows(); ++n) loss -= std::log(std::max(f.probs(data.y[n], n), 1e-300));
  return loss / data.rows();
}

Gradients LossGradient(const MLPModel& model, const Dataset& data) {
  CheckData(model, data);
  const auto f = Forward(model, data.x);
  Matrix dz = f.probs;
  for (int n = 0; n < data.rows(); ++n) dz(data.y[n], n) -= 1.0;
  dz /= data.rows();
  Gradients g;
  g.w2 = dz * f.hidden.transpose();
  g.b2 = dz.rowwise().sum();
  Matrix dh = model.w2.transpose() * dz;
  dh = dh.array() * (f.pre.array() > 0.0).cast<double>();
  g.w1 = dh * data.x.transpose();
  g.b1 = dh.rowwise().sum();
  return g;
}

double Accuracy(const MLPModel& model, const Dataset& data) {
  CheckData(model, data);
  int correct = 0;
  for (int n = 0; n < data.rows(); ++n) {
    const auto sel = SelectIntent(Classify(model, data.x.col(n)), 0.0);
    if (sel.label == model.labels()[static_cast<size_t>(data.y[n])]) ++correct;
  }
  return static_cast<double>(correct) / data.rows();
}

MLPModel Train(const std::vector<Example>& corpus, const Featurizer& featurizer,
               const TrainOptions& opts, TrainReport* report) {
  std::vector<std::string> labels;
  for (const auto& e : corpus) labels.push_back(e.label);
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  if (labels.size() < 2) throw Error(ErrorCode::kDegenerateCorpus, "corpus needs at least two intents");
  if (opts.hidden < 1 || opts.epochs < 0 || !(opts.learning_rate > 0)) {
    throw Error(ErrorCode::kInvalidArgument, "bad training hyper-parameters");
  }

  const Dataset data = BuildDataset(corpus, featurizer, labels);
  MLPModel m(featurizer.dim(), opts.hidden, labels);
  m.featurizer = {{"kind", featurizer.name()}, {"dim", featurizer.dim()}};
  Rng rng(DeriveSeed(opts.seed, HashTag("train.init")));
  auto xavier = [&](Matrix& w) {
    const double lim = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.Uniform(-lim, lim);
    }
  };
  xavier(m.w1);
  xavier(m.w2);

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    const Gradients g = LossGradient(m, data);
    m.w1 -= opts.learning_rate * g.w1;
    m.b1 -= opts.learning_rate * g.b1;
    m.w2 -= opts.learning_rate * g.w2;
    m.b2 -= opts.learning_rate * g.b2;
  }
  if (report) {
    report->accuracy = Accuracy(m, data);
    report->loss = Loss(m, data);
  }
  return m;
}

Json IntentResult::ToJson() const {
  Json j = {{"intent", intent ? Json(*intent) : Json(nullptr)},
            {"confidence", confidence},
            {"slots", slots},
            {"command", command.ToJson()}};
  if (!error.empty()) j["error"] = error;
  return j;
}

Pipeline::Pipeline(MLPModel model, double threshold)
    : model_(std::move(model)), featurizer_(MakeFeaturizer(model_.featurizer)), threshold_(threshold) {
  if (featurizer_->dim() != model_.input_dim()) {
    throw Error(ErrorCode::kShape, "featurizer and model disagree on dimension");
  }
}

IntentResult Pipeline::Run(const Utterance& u) const {
  IntentResult r;
  Vector f;
  try {
    f = featurizer_->Featurize(u);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kEmptyUtterance) throw;
    r.error = "empty-utterance";
    return r;
  }
  const auto sel = SelectIntent(Classify(model_, f), threshold_);
  r.intent = sel.label;
  r.confidence = sel.confidence;
  if (!sel.label) {
    r.error = "unknown-intent";
    return r;
  }
  r.slots = FillSlots(u, *sel.label);
  try {
    r.command = Bind(*sel.label, r.slots);
  } catch (const UnbindableError&) {
    r.error = "unbindable";
  }
  return r;
}

}  // namespace deskbot::nlu
