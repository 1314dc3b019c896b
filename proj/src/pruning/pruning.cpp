#include "deskbot/pruning/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "deskbot/common/rng.hpp"

namespace deskbot::pruning {

namespace {

int ArgmaxLabel(const Vector& logits) {
  // Softmax is monotone, so the first maximal logit matches SelectIntent's
  // alphabetical tie-break for sorted labels.
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < logits.size(); ++k) {
    if (logits[k] > logits[best]) best = k;
  }
  return static_cast<int>(best);
}

double AccuracyFromHidden(const MLPModel& m, const Matrix& hidden, const std::vector<int>& y) {
  const Matrix z = (m.w2 * hidden).colwise() + m.b2;
  int correct = 0;
  for (Eigen::Index n = 0; n < z.cols(); ++n) correct += ArgmaxLabel(z.col(n)) == y[static_cast<size_t>(n)];
  return static_cast<double>(correct) / static_cast<double>(y.size());
}

Matrix HiddenOf(const MLPModel& m, const Matrix& x) {
  return ((m.w1 * x).colwise() + m.b1).cwiseMax(0.0);
}

const char* TargetName(Target t) { return t == Target::kHiddenUnits ? "hidden" : "input"; }

}  // namespace

double Evaluate(const MLPModel& model, const Dataset& data) {
  if (data.rows() == 0) throw Error(ErrorCode::kEmptyDataset, "cannot evaluate on an empty dataset");
  if (data.x.rows() != model.input_dim()) throw Error(ErrorCode::kShape, "dataset width mismatch");
  return AccuracyFromHidden(model, HiddenOf(model, data.x), data.y);
}

Permuter SeededPermuter(uint64_t seed) {
  return [seed](int rows, int column, int repeat) {
    Rng rng(DeriveSeed(DeriveSeed(seed, static_cast<uint64_t>(column)), static_cast<uint64_t>(repeat)));
    std::vector<int> order(static_cast<size_t>(rows));
    std::iota(order.begin(), order.end(), 0);
    for (int i = rows - 1; i > 0; --i) {
      std::swap(order[static_cast<size_t>(i)], order[rng.Below(static_cast<uint64_t>(i) + 1)]);
    }
    return order;
  };
}

Permuter IdentityPermuter() {
  return [](int rows, int, int) {
    std::vector<int> order(static_cast<size_t>(rows));
    std::iota(order.begin(), order.end(), 0);
    return order;
  };
}

double MeanDecrease(double baseline, const std::vector<double>& permuted_scores) {
  if (permuted_scores.empty()) throw Error(ErrorCode::kInvalidArgument, "need at least one repetition");
  // Summing differences keeps identical scores at exactly zero.
  double acc = 0.0;
  for (double s : permuted_scores) acc += baseline - s;
  return acc / static_cast<double>(permuted_scores.size());
}

ImportanceReport PermutationImportance(const MLPModel& model, const Dataset& data, int repeats,
                                       uint64_t seed, Target target, const Permuter& permuter) {
  if (repeats < 1) throw Error(ErrorCode::kInvalidArgument, "repetition count must be at least 1");
  if (data.rows() == 0) throw Error(ErrorCode::kEmptyDataset, "dataset is empty");
  if (data.rows() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "a single-row dataset only admits the identity permutation");
  }
  const Permuter permute = permuter ? permuter : SeededPermuter(seed);

  ImportanceReport rep;
  rep.target = target;
  rep.repeats = repeats;
  rep.seed = seed;
  rep.baseline = Evaluate(model, data);

  const Matrix base = target == Target::kInputFeatures ? data.x : HiddenOf(model, data.x);
  const int columns = static_cast<int>(base.rows());
  rep.importance.resize(static_cast<size_t>(columns));
  rep.scores.resize(static_cast<size_t>(columns));
  Matrix work = base;
  for (int j = 0; j < columns; ++j) {
    auto& scores = rep.scores[static_cast<size_t>(j)];
    for (int k = 0; k < repeats; ++k) {
      const auto order = permute(data.rows(), j, k);
      if (static_cast<int>(order.size()) != data.rows()) {
        throw Error(ErrorCode::kShape, "permuter returned the wrong length");
      }
      for (int n = 0; n < data.rows(); ++n) work(j, n) = base(j, order[static_cast<size_t>(n)]);
      const double s = target == Target::kInputFeatures
                           ? AccuracyFromHidden(model, HiddenOf(model, work), data.y)
                           : AccuracyFromHidden(model, work, data.y);
      scores.push_back(s);
    }
    work.row(j) = base.row(j);
    rep.importance[static_cast<size_t>(j)] = MeanDecrease(rep.baseline, scores);
  }
  return rep;
}

Json ImportanceReport::ToJson() const {
  return {{"target", TargetName(target)}, {"baseline", baseline}, {"repeats", repeats},
          {"seed", seed},                 {"importance", importance}};
}

std::vector<int> LeastImportant(const ImportanceReport& report, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "prune fraction must lie in [0, 1)");
  }
  const int count = static_cast<int>(report.importance.size());
  std::vector<int> order(static_cast<size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return report.importance[static_cast<size_t>(a)] < report.importance[static_cast<size_t>(b)];
  });
  order.resize(static_cast<size_t>(std::floor(fraction * count + 1e-9)));
  std::sort(order.begin(), order.end());
  return order;
}

MLPModel Prune(const MLPModel& model, const ImportanceReport& report, double fraction) {
  const int expected = report.target == Target::kInputFeatures ? model.input_dim() : model.hidden();
  if (static_cast<int>(report.importance.size()) != expected) {
    throw Error(ErrorCode::kShape, "report does not match the model");
  }
  MLPModel out = model;
  for (int j : LeastImportant(report, fraction)) {
    if (report.target == Target::kInputFeatures) {
      out.w1.col(j).setZero();
    } else {
      out.w2.col(j).setZero();
    }
  }
  return out;
}

Matrix QuantizedTensor::Dequantize() const {
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = scale * values[static_cast<size_t>(r) * cols + c];
  }
  return m;
}

QuantizedTensor QuantizeTensor(const Matrix& w, int bits) {
  if (bits != 4 && bits != 8 && bits != 16) {
    throw Error(ErrorCode::kInvalidArgument, "bit width must be 4, 8 or 16");
  }
  const double qmax = std::ldexp(1.0, bits - 1) - 1.0;
  const double peak = w.size() ? w.cwiseAbs().maxCoeff() : 0.0;
  QuantizedTensor q;
  q.rows = static_cast<int>(w.rows());
  q.cols = static_cast<int>(w.cols());
  q.scale = peak > 0.0 ? peak / qmax : 1.0;
  q.values.reserve(static_cast<size_t>(w.size()));
  for (int r = 0; r < q.rows; ++r) {
    for (int c = 0; c < q.cols; ++c) {
      // std::round rounds halfway cases away from zero.
      const double v = std::clamp(std::round(w(r, c) / q.scale), -qmax, qmax);
      q.values.push_back(static_cast<int32_t>(v));
    }
  }
  return q;
}

QuantizedModel Quantize(const MLPModel& model, int bits) {
  QuantizedModel qm;
  qm.bits = bits;
  qm.w1 = QuantizeTensor(model.w1, bits);
  qm.b1 = QuantizeTensor(model.b1, bits);
  qm.w2 = QuantizeTensor(model.w2, bits);
  qm.b2 = QuantizeTensor(model.b2, bits);
  qm.labels = model.labels();
  qm.featurizer = model.featurizer;
  return qm;
}

MLPModel QuantizedModel::Dequantized() const {
  MLPModel m(w1.cols, w1.rows, labels);
  m.w1 = w1.Dequantize();
  m.b1 = b1.Dequantize();
  m.w2 = w2.Dequantize();
  m.b2 = b2.Dequantize();
  m.featurizer = featurizer;
  m.Validate();
  return m;
}

Json QuantizedModel::ToJson() const {
  auto tensor = [](const QuantizedTensor& t) {
    return Json{{"rows", t.rows}, {"cols", t.cols}, {"scale", t.scale}, {"values", t.values}};
  };
  return {{"format", "deskbot-qmlp"}, {"version", 1},     {"bits", bits},
          {"labels", labels},         {"featurizer", featurizer},
          {"w1", tensor(w1)},         {"b1", tensor(b1)}, {"w2", tensor(w2)},
          {"b2", tensor(b2)}};
}

nlu::IntentDistribution DequantizeInfer(const QuantizedModel& qm, const Vector& f) {
  return nlu::Classify(qm.Dequantized(), f);
}

double ArgmaxAgreement(const MLPModel& a, const MLPModel& b, const Dataset& data) {
  if (data.rows() == 0) throw Error(ErrorCode::kEmptyDataset, "dataset is empty");
  const Matrix za = (a.w2 * HiddenOf(a, data.x)).colwise() + a.b2;
  const Matrix zb = (b.w2 * HiddenOf(b, data.x)).colwise() + b.b2;
  int same = 0;
  for (Eigen::Index n = 0; n < za.cols(); ++n) same += ArgmaxLabel(za.col(n)) == ArgmaxLabel(zb.col(n));
  return static_cast<double>(same) / data.rows();
}

}  // namespace deskbot::pruning
