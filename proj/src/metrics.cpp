#include "hmogp/metrics.hpp"

#include <cmath>

#include "hmogp/errors.hpp"

namespace hmogp {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

}  // namespace

double nmse(const Vector& y_true, const Vector& y_pred) {
  if (y_true.size() != y_pred.size()) throw DimensionError("nmse: length mismatch");
  if (y_true.size() < 2) throw DimensionError("nmse: need at least two test points");
  const double denom = (y_true.array() - y_true.mean()).square().mean();
  if (!(denom > 0.0)) throw EvaluationError("", "nmse: constant targets leave the normalizer undefined");
  return (y_true - y_pred).squaredNorm() / static_cast<double>(y_true.size()) / denom;
}

double nlpd(const Vector& y_true, const Vector& mean, const Vector& variance) {
  if (y_true.size() != mean.size() || y_true.size() != variance.size()) {
    throw DimensionError("nlpd: length mismatch");
  }
  if (y_true.size() < 1) throw DimensionError("nlpd: no test points");
  if (!(variance.array() > 0.0).all()) throw EvaluationError("", "nlpd: variances must be positive");
  const auto r2 = (y_true - mean).array().square() / variance.array();
  return 0.5 * (r2 + variance.array().log() + kLog2Pi).mean();
}

EvalReport evaluate(const std::vector<Vector>& y_true, const std::vector<Vector>& mean,
                    const std::vector<Vector>& variance) {
  if (y_true.size() != mean.size() || y_true.size() != variance.size()) {
    throw DimensionError("evaluate: output count mismatch");
  }
  EvalReport report;
  Index total = 0;
  for (const auto& y : y_true) total += y.size();
  Vector all_y(total), all_m(total), all_v(total);
  Index at = 0;
  for (std::size_t d = 0; d < y_true.size(); ++d) {
    const Index n = y_true[d].size();
    if (mean[d].size() != n || variance[d].size() != n) {
      throw DimensionError("evaluate: output " + std::to_string(d) + " has mismatched lengths");
    }
    all_y.segment(at, n) = y_true[d];
    all_m.segment(at, n) = mean[d];
    all_v.segment(at, n) = variance[d];
    at += n;
    if (n == 0) continue;
    OutputScore s;
    s.output = static_cast<Index>(d);
    s.n_test = n;
    s.nlpd = nlpd(y_true[d], mean[d], variance[d]);
    if (n >= 2 && (y_true[d].array() != y_true[d](0)).any()) s.nmse = nmse(y_true[d], mean[d]);
    report.per_output.push_back(s);
  }
  report.n_test = total;
  report.nmse = nmse(all_y, all_m);
  report.nlpd = nlpd(all_y, all_m, all_v);
  return report;
}

}  // namespace hmogp
