#include <cmath>

#include "condssl/error.hpp"
#include "condssl/survival.hpp"

namespace condssl {

double c_index(std::span<const SurvivalRecord> records, std::span<const double> risks) {
  if (records.size() != risks.size()) throw InvalidArgument("c_index: one risk per record required");
  double concordant = 0.0;
  std::size_t comparable = 0;
  const std::size_t n = records.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      std::size_t first = i, second = j;
      if (records[j].time < records[i].time) std::swap(first, second);
      if (records[first].time == records[second].time || !records[first].event) continue;
      ++comparable;
      if (risks[first] > risks[second]) {
        concordant += 1.0;
      } else if (risks[first] == risks[second]) {
        concordant += 0.5;
      }
    }
  }
  if (comparable == 0) throw InvalidArgument("c_index: no comparable pairs");
  return concordant / static_cast<double>(comparable);
}

double brier_score(std::span<const SurvivalRecord> records, std::span<const double> survival_at_t, double t) {
  if (records.size() != survival_at_t.size()) {
    throw InvalidArgument("brier_score: one prediction per record required");
  }
  if (records.empty()) throw InvalidArgument("brier_score: no records");
  if (!(t >= 0.0)) throw InvalidArgument("brier_score: horizon must be non-negative");
  const KmCurve g = censoring_km(records);
  double total = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const SurvivalRecord& r = records[i];
    const double s = survival_at_t[i];
    if (r.time <= t && r.event) {
      const double w = g.left_limit(r.time);
      if (!(w > 0.0)) {
        throw NumericalError("brier_score: censoring survival is zero just before time " + std::to_string(r.time));
      }
      total += s * s / w;
    } else if (r.time > t) {
      const double w = g.at(t);
      if (!(w > 0.0)) throw NumericalError("brier_score: censoring survival is zero at horizon " + std::to_string(t));
      total += (1.0 - s) * (1.0 - s) / w;
    }
  }
  return total / static_cast<double>(records.size());
}

}  // namespace condssl
