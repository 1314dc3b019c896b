#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "deskbot/nlu/nlu.hpp"

namespace deskbot::pruning {

using nlu::Dataset;
using nlu::Matrix;
using nlu::MLPModel;
using nlu::Vector;

// Classification accuracy, argmax without threshold.
double Evaluate(const MLPModel& model, const Dataset& data);

// Returns the row order used for column `column` on repetition `repeat`.
using Permuter = std::function<std::vector<int>(int rows, int column, int repeat)>;

Permuter SeededPermuter(uint64_t seed);
Permuter IdentityPermuter();

enum class Target { kInputFeatures, kHiddenUnits };

struct ImportanceReport {
  Target target = Target::kInputFeatures;
  double baseline = 0.0;
  int repeats = 1;
  uint64_t seed = 0;
  std::vector<double> importance;
  // scores[j][k]: score with column j permuted on repetition k.
  std::vector<std::vector<double>> scores;

  Json ToJson() const;
};

// Baseline minus the mean permuted score.
double MeanDecrease(double baseline, const std::vector<double>& permuted_scores);

ImportanceReport PermutationImportance(const MLPModel& model, const Dataset& data, int repeats,
                                       uint64_t seed, Target target = Target::kInputFeatures,
                                       const Permuter& permuter = {});

// Indices of the floor(p * count) least important columns, ties by index.
std::vector<int> LeastImportant(const ImportanceReport& report, double fraction);

// Zeroes the fan-out of the selected columns; shapes are kept.
MLPModel Prune(const MLPModel& model, const ImportanceReport& report, double fraction);

struct QuantizedTensor {
  int rows = 0;
  int cols = 0;
  double scale = 1.0;
  std::vector<int32_t> values;  // row-major

  Matrix Dequantize() const;
};

// Symmetric per-tensor: scale = max|w| / (2^(bits-1) - 1), round half away
// from zero. An all-zero tensor gets scale 1.
QuantizedTensor QuantizeTensor(const Matrix& w, int bits);

struct QuantizedModel {
  int bits = 8;
  QuantizedTensor w1, b1, w2, b2;
  std::vector<std::string> labels;
  Json featurizer;

  MLPModel Dequantized() const;
  Json ToJson() const;
};

QuantizedModel Quantize(const MLPModel& model, int bits);
nlu::IntentDistribution DequantizeInfer(const QuantizedModel& qm, const Vector& f);

// Share of rows where both models pick the same label.
double ArgmaxAgreement(const MLPModel& a, const MLPModel& b, const Dataset& data);

}  // namespace deskbot::pruning
