#include <algorithm>
#include <numeric>

#include "condssl/error.hpp"
#include "condssl/survival.hpp"

namespace condssl {
namespace {

KmCurve product_limit(std::span<const SurvivalRecord> records, bool reverse) {
  if (records.empty()) throw InvalidArgument("Kaplan-Meier needs at least one record");
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (const SurvivalRecord& r : records) {
    if (r.time < 0) throw InvalidArgument("negative survival time for unit " + std::to_string(r.unit_id));
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return records[a].time < records[b].time; });

  KmCurve curve;
  std::size_t at_risk = records.size();
  double s = 1.0;
  for (std::size_t i = 0; i < order.size();) {
    const int t = records[order[i]].time;
    std::size_t d = 0, c = 0;
    for (; i < order.size() && records[order[i]].time == t; ++i) {
      const bool is_event = records[order[i]].event != reverse;
      is_event ? ++d : ++c;
    }
    s *= 1.0 - static_cast<double>(d) / static_cast<double>(at_risk);
    curve.times.push_back(t);
    curve.at_risk.push_back(at_risk);
    curve.events.push_back(d);
    curve.censored.push_back(c);
    curve.survival.push_back(s);
    at_risk -= d + c;
  }
  return curve;
}

}  // namespace

double KmCurve::at(double t) const {
  const auto it = std::upper_bound(times.begin(), times.end(), t,
                                   [](double value, int time) { return value < time; });
  if (it == times.begin()) return 1.0;
  return survival[static_cast<std::size_t>(it - times.begin()) - 1];
}

double KmCurve::left_limit(double t) const {
  const auto it = std::lower_bound(times.begin(), times.end(), t,
                                   [](int time, double value) { return time < value; });
  if (it == times.begin()) return 1.0;
  return survival[static_cast<std::size_t>(it - times.begin()) - 1];
}

KmCurve km_fit(std::span<const SurvivalRecord> records) { return product_limit(records, false); }

KmCurve censoring_km(std::span<const SurvivalRecord> records) { return product_limit(records, true); }

}  // namespace condssl
