#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dkcnet/matrix.hpp"

namespace dkcnet {

struct ClassCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;
  std::uint64_t total() const { return tp + fp + fn + tn; }
};

struct ConfusionCounts {
  std::vector<ClassCounts> per_class;
  std::size_t instances = 0;
};

/// Per-class counts from binary truth and decision matrices. Throws
/// ArgumentError on entries outside {0, 1}.
ConfusionCounts confusion(const Matrix& y_true, const Matrix& y_pred);

/// A ratio whose denominator may vanish; vanishing denominators yield 0 and set
/// `degenerate`.
struct Rate {
  double value = 0.0;
  bool degenerate = false;
};

struct ClassPrf {
  Rate precision;
  Rate recall;
  Rate f1;
};

struct PrfSummary {
  std::vector<ClassPrf> per_class;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
};

PrfSummary precision_recall_f1(const ConfusionCounts& counts);

enum class KappaMode {
  kFlatten,       // all (instance, class) slots pooled into one binary problem
  kPerClassMean,  // unweighted mean of per-class kappas
};

struct Kappa {
  double value = 0.0;
  double observed = 0.0;  // p_o
  double expected = 0.0;  // p_e
  bool degenerate = false;  // p_e == 1
};

Kappa cohen_kappa(const Matrix& y_true, const Matrix& y_pred, KappaMode mode = KappaMode::kFlatten);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // decisions are score >= threshold; +inf for the origin
};

struct RocCurve {
  std::vector<RocPoint> points;
};

struct RocResult {
  double auc = 0.0;
  RocCurve curve;
};

/// Threshold sweep with trapezoidal area. Tied scores form one diagonal step,
/// so the area equals P(s+ > s-) + P(s+ = s-)/2. Throws UndefinedMetricError
/// unless both classes are present.
RocResult roc_auc(std::span<const double> y_true, std::span<const double> scores);

struct ClassReport {
  ClassPrf prf;
  ClassCounts counts;
  std::optional<double> auc;  // empty when the class lacks positives or negatives
  RocCurve roc;
};

struct MetricsReport {
  std::vector<ClassReport> per_class;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double macro_auc = std::numeric_limits<double>::quiet_NaN();  // over defined classes
  std::size_t auc_defined_classes = 0;
  Kappa kappa;
  double threshold = 0.5;
  std::size_t instances = 0;
};

/// Binary decisions prob > threshold (strict).
Matrix threshold_decisions(const Matrix& probabilities, double threshold);

MetricsReport evaluate(const Matrix& y_true, const Matrix& probabilities, double threshold = 0.5,
                       KappaMode kappa_mode = KappaMode::kFlatten);

/// key=value lines; class keys use `class_names` when given.
std::string format_report(const MetricsReport& report,
                          std::span<const std::string> class_names = {});

/// "threshold,fpr,tpr" rows with a header line.
void write_roc_csv(const std::filesystem::path& path, const RocCurve& curve);

}  // namespace dkcnet
