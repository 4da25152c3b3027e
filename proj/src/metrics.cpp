#include "dkcnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace dkcnet {

namespace {

bool is_binary(double v) { return v == 0.0 || v == 1.0; }

void require_binary(const Matrix& m, const char* what) {
  for (double v : m.data) {
    if (!is_binary(v)) throw ArgumentError(std::string(what) + " must contain only 0/1 entries");
  }
}

Rate ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return {0.0, true};
  return {static_cast<double>(num) / static_cast<double>(den), false};
}

Kappa kappa_from(std::span<const double> truth, std::span<const double> pred) {
  Kappa k;
  const double m = static_cast<double>(truth.size());
  double agree = 0.0, t1 = 0.0, p1 = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    agree += truth[i] == pred[i] ? 1.0 : 0.0;
    t1 += truth[i];
    p1 += pred[i];
  }
  k.observed = agree / m;
  const double ft = t1 / m, fp = p1 / m;
  k.expected = ft * fp + (1.0 - ft) * (1.0 - fp);
  if (k.expected >= 1.0) {
    k.degenerate = true;
    k.value = 0.0;
  } else {
    k.value = (k.observed - k.expected) / (1.0 - k.expected);
  }
  return k;
}

}  // namespace

ConfusionCounts confusion(const Matrix& y_true, const Matrix& y_pred) {
  if (!y_true.same_shape(y_pred)) throw DimensionError("confusion: shape mismatch");
  require_binary(y_true, "confusion y_true");
  require_binary(y_pred, "confusion y_pred");
  ConfusionCounts out;
  out.instances = y_true.rows;
  out.per_class.resize(y_true.cols);
  for (std::size_t r = 0; r < y_true.rows; ++r) {
    for (std::size_t c = 0; c < y_true.cols; ++c) {
      const bool t = y_true(r, c) == 1.0;
      const bool p = y_pred(r, c) == 1.0;
      auto& k = out.per_class[c];
      if (t && p) ++k.tp;
      else if (!t && p) ++k.fp;
      else if (t && !p) ++k.fn;
      else ++k.tn;
    }
  }
  return out;
}

PrfSummary precision_recall_f1(const ConfusionCounts& counts) {
  PrfSummary s;
  for (const auto& k : counts.per_class) {
    ClassPrf c;
    c.precision = ratio(k.tp, k.tp + k.fp);
    c.recall = ratio(k.tp, k.tp + k.fn);
    const double den = c.precision.value + c.recall.value;
    if (den == 0.0) {
      c.f1 = {0.0, true};
    } else {
      c.f1 = {2.0 * c.precision.value * c.recall.value / den,
              c.precision.degenerate || c.recall.degenerate};
    }
    s.per_class.push_back(c);
  }
  if (!s.per_class.empty()) {
    const double n = static_cast<double>(s.per_class.size());
    for (const auto& c : s.per_class) {
      s.macro_precision += c.precision.value;
      s.macro_recall += c.recall.value;
      s.macro_f1 += c.f1.value;
    }
    s.macro_precision /= n;
    s.macro_recall /= n;
    s.macro_f1 /= n;
  }
  return s;
}

Kappa cohen_kappa(const Matrix& y_true, const Matrix& y_pred, KappaMode mode) {
  if (!y_true.same_shape(y_pred)) throw DimensionError("cohen_kappa: shape mismatch");
  if (y_true.data.empty()) throw ArgumentError("cohen_kappa: empty input");
  require_binary(y_true, "cohen_kappa y_true");
  require_binary(y_pred, "cohen_kappa y_pred");
  if (mode == KappaMode::kFlatten) return kappa_from(y_true.data, y_pred.data);

  Kappa mean;
  std::size_t used = 0;
  for (std::size_t c = 0; c < y_true.cols; ++c) {
    const auto t = y_true.column(c);
    const auto p = y_pred.column(c);
    const Kappa k = kappa_from(t, p);
    mean.observed += k.observed;
    mean.expected += k.expected;
    if (!k.degenerate) {
      mean.value += k.value;
      ++used;
    }
  }
  const double cols = static_cast<double>(y_true.cols);
  mean.observed /= cols;
  mean.expected /= cols;
  if (used == 0) {
    mean.degenerate = true;
    mean.value = 0.0;
  } else {
    mean.value /= static_cast<double>(used);
  }
  return mean;
}

RocResult roc_auc(std::span<const double> y_true, std::span<const double> scores) {
  if (y_true.size() != scores.size()) throw DimensionError("roc_auc: length mismatch");
  double pos = 0.0, neg = 0.0;
  for (double v : y_true) {
    if (!is_binary(v)) throw ArgumentError("roc_auc: labels must be 0/1");
    (v == 1.0 ? pos : neg) += 1.0;
  }
  if (pos == 0.0 || neg == 0.0) {
    throw UndefinedMetricError("roc_auc: needs at least one positive and one negative");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocResult r;
  r.curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  double tp = 0.0, fp = 0.0;
  double area2 = 0.0;  // twice the area in units of (pos * neg)
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    const double tp0 = tp, fp0 = fp;
    while (i < order.size() && scores[order[i]] == s) {
      (y_true[order[i]] == 1.0 ? tp : fp) += 1.0;
      ++i;
    }
    area2 += (fp - fp0) * (tp + tp0);
    r.curve.points.push_back({fp / neg, tp / pos, s});
  }
  r.auc = area2 / (2.0 * pos * neg);
  return r;
}

Matrix threshold_decisions(const Matrix& probabilities, double threshold) {
  Matrix d(probabilities.rows, probabilities.cols);
  for (std::size_t i = 0; i < d.data.size(); ++i)
    d.data[i] = probabilities.data[i] > threshold ? 1.0 : 0.0;
  return d;
}

MetricsReport evaluate(const Matrix& y_true, const Matrix& probabilities, double threshold,
                       KappaMode kappa_mode) {
  if (!y_true.same_shape(probabilities)) throw DimensionError("evaluate: shape mismatch");
  const Matrix decisions = threshold_decisions(probabilities, threshold);
  const ConfusionCounts counts = confusion(y_true, decisions);
  const PrfSummary prf = precision_recall_f1(counts);

  MetricsReport rep;
  rep.threshold = threshold;
  rep.instances = y_true.rows;
  rep.macro_precision = prf.macro_precision;
  rep.macro_recall = prf.macro_recall;
  rep.macro_f1 = prf.macro_f1;
  rep.kappa = cohen_kappa(y_true, decisions, kappa_mode);
  double auc_sum = 0.0;
  for (std::size_t c = 0; c < y_true.cols; ++c) {
    ClassReport cr;
    cr.prf = prf.per_class[c];
    cr.counts = counts.per_class[c];
    const auto t = y_true.column(c);
    const auto s = probabilities.column(c);
    try {
      RocResult roc = roc_auc(t, s);
      cr.auc = roc.auc;
      cr.roc = std::move(roc.curve);
      auc_sum += roc.auc;
      ++rep.auc_defined_classes;
    } catch (const UndefinedMetricError&) {
      cr.auc.reset();
    }
    rep.per_class.push_back(std::move(cr));
  }
  if (rep.auc_defined_classes > 0) rep.macro_auc = auc_sum / static_cast<double>(rep.auc_defined_classes);
  return rep;
}

std::string format_report(const MetricsReport& report, std::span<const std::string> class_names) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "instances=" << report.instances << "\n";
  os << "threshold=" << report.threshold << "\n";
  os << "macro_precision=" << report.macro_precision << "\n";
  os << "macro_recall=" << report.macro_recall << "\n";
  os << "macro_f1=" << report.macro_f1 << "\n";
  os << "macro_auc=" << report.macro_auc << "\n";
  os << "auc_defined_classes=" << report.auc_defined_classes << "\n";
  os << "kappa=" << report.kappa.value << "\n";
  os << "kappa_observed=" << report.kappa.observed << "\n";
  os << "kappa_expected=" << report.kappa.expected << "\n";
  os << "kappa_degenerate=" << (report.kappa.degenerate ? 1 : 0) << "\n";
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    const std::string key =
        "class." + (c < class_names.size() ? class_names[c] : std::to_string(c)) + ".";
    const auto& cr = report.per_class[c];
    os << key << "tp=" << cr.counts.tp << "\n";
    os << key << "fp=" << cr.counts.fp << "\n";
    os << key << "fn=" << cr.counts.fn << "\n";
    os << key << "tn=" << cr.counts.tn << "\n";
    os << key << "precision=" << cr.prf.precision.value << "\n";
    os << key << "recall=" << cr.prf.recall.value << "\n";
    os << key << "f1=" << cr.prf.f1.value << "\n";
    os << key << "degenerate="
       << (cr.prf.precision.degenerate || cr.prf.recall.degenerate || cr.prf.f1.degenerate ? 1 : 0)
       << "\n";
    if (cr.auc) {
      os << key << "auc=" << *cr.auc << "\n";
    } else {
      os << key << "auc=undefined\n";
    }
  }
  return os.str();
}

void write_roc_csv(const std::filesystem::path& path, const RocCurve& curve) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write ROC file: " + path.string());
  os << std::setprecision(17) << "threshold,fpr,tpr\n";
  for (const auto& p : curve.points) {
    if (std::isinf(p.threshold)) {
      os << "inf";
    } else {
      os << p.threshold;
    }
    os << "," << p.fpr << "," << p.tpr << "\n";
  }
}

}  // namespace dkcnet
