#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "deskbot/common/config.hpp"
#include "deskbot/common/error.hpp"

namespace deskbot::nlu {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class Source { kTyped, kTranscribed };

struct Utterance {
  std::string text;
  Source source = Source::kTyped;
};

// Rejects text that is empty after trimming.
Utterance MakeUtterance(std::string text, Source source = Source::kTyped);

// Lowercased alphanumeric runs.
std::vector<std::string> Tokenize(std::string_view text);

struct TranscriptRequest {
  std::string true_text;
  double wer = 0.0;
  uint64_t seed = 0;
  bool drop_only = false;
};

// Mock speech channel: every word is independently corrupted with
// probability `wer`. A corrupted word is swapped for its entry in the
// confusion list when it has one, otherwise dropped. At least one word
// always survives.
Utterance Transcribe(const TranscriptRequest& req);

const std::map<std::string, std::string>& ConfusionList();

class Featurizer {
 public:
  virtual ~Featurizer() = default;
  virtual int dim() const = 0;
  virtual std::string name() const = 0;
  virtual Vector Featurize(const Utterance& u) const = 0;
};

// Signed feature hashing of unigrams and bigrams, L2-normalized.
class HashedNgramFeaturizer final : public Featurizer {
 public:
  explicit HashedNgramFeaturizer(int dim = 256);
  int dim() const override { return dim_; }
  std::string name() const override { return "hashed-ngram"; }
  Vector Featurize(const Utterance& u) const override;

 private:
  int dim_;
};

std::unique_ptr<Featurizer> MakeFeaturizer(const Json& j);

// Intent labels in their fixed (alphabetical) order.
const std::vector<std::string>& DefaultLabels();

struct IntentDistribution {
  std::vector<std::string> labels;
  Vector probs;

  double Prob(std::string_view label) const;
};

Vector Softmax(const Vector& logits);

// D -> H (ReLU) -> K (softmax).
class MLPModel {
 public:
  MLPModel(int input_dim, int hidden, std::vector<std::string> labels);

  int input_dim() const { return static_cast<int>(w1.cols()); }
  int hidden() const { return static_cast<int>(w1.rows()); }
  int classes() const { return static_cast<int>(w2.rows()); }
  const std::vector<std::string>& labels() const { return labels_; }

  void Validate() const;
  Vector Hidden(const Vector& f) const;
  Vector LogitsFromHidden(const Vector& h) const;
  Vector Logits(const Vector& f) const;

  Json ToJson() const;
  static MLPModel FromJson(const Json& j);
  void Save(const std::filesystem::path& path) const;
  static MLPModel Load(const std::filesystem::path& path);

  Matrix w1;  // H x D
  Vector b1;
  Matrix w2;  // K x H
  Vector b2;
  Json featurizer = {{"kind", "hashed-ngram"}, {"dim", 256}};

 private:
  std::vector<std::string> labels_;
};

IntentDistribution Classify(const MLPModel& model, const Vector& f);

struct Selection {
  std::optional<std::string> label;  // empty means Unknown
  double confidence = 0.0;
};

// Argmax with ties going to the earlier label in alphabetical order; Unknown
// when the winning probability is below `threshold`.
Selection SelectIntent(const IntentDistribution& dist, double threshold = 0.6);

using Slots = std::map<std::string, std::string>;

Slots FillSlots(const Utterance& u, std::string_view intent);

enum class Function { kPressTarget, kFetchToTarget, kNoop };
enum class PressEnd { kNear, kFar };

std::string_view FunctionName(Function f);
std::string_view PressEndName(PressEnd e);

struct Command {
  Function function = Function::kNoop;
  std::string target_class;
  std::string destination_class;
  PressEnd press_end = PressEnd::kNear;
  bool ambiguous = false;

  Json ToJson() const;
  static Command FromJson(const Json& j);
  bool operator==(const Command&) const = default;
};

class UnbindableError : public Error {
 public:
  UnbindableError(std::string intent, const std::string& message)
      : Error(ErrorCode::kUnbindable, message), intent_(std::move(intent)) {}
  const std::string& intent() const { return intent_; }

 private:
  std::string intent_;
};

Command Bind(std::string_view intent, const Slots& slots);

struct Example {
  std::string text;
  std::string label;
};

std::vector<Example> LoadCorpus(const std::filesystem::path& path);
std::vector<Example> ParseCorpus(std::string_view tsv);

struct TrainOptions {
  int hidden = 32;
  double learning_rate = 0.1;
  int epochs = 300;
  uint64_t seed = 1;
};

struct TrainReport {
  double accuracy = 0.0;
  double loss = 0.0;
};

// Design matrix (D x N) and class indices in model label order.
struct Dataset {
  Matrix x;
  std::vector<int> y;
  int rows() const { return static_cast<int>(y.size()); }
};

Dataset BuildDataset(const std::vector<Example>& examples, const Featurizer& featurizer,
                     const std::vector<std::string>& labels);

struct Gradients {
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;
};

// Mean softmax cross-entropy and its gradient.
double Loss(const MLPModel& model, const Dataset& data);
Gradients LossGradient(const MLPModel& model, const Dataset& data);

MLPModel Train(const std::vector<Example>& corpus, const Featurizer& featurizer,
               const TrainOptions& opts = {}, TrainReport* report = nullptr);

double Accuracy(const MLPModel& model, const Dataset& data);

struct IntentResult {
  std::optional<std::string> intent;
  double confidence = 0.0;
  Slots slots;
  Command command;
  std::string error;  // set when the intent could not be bound

  Json ToJson() const;
};

// Featurize, classify, threshold, fill slots, bind. Unknown intents and
// unbindable commands both produce a Noop command.
class Pipeline {
 public:
  Pipeline(MLPModel model, double threshold = 0.6);

  IntentResult Run(const Utterance& u) const;
  const MLPModel& model() const { return model_; }
  double threshold() const { return threshold_; }

 private:
  MLPModel model_;
  std::unique_ptr<Featurizer> featurizer_;
  double threshold_;
};

}  // namespace deskbot::nlu
