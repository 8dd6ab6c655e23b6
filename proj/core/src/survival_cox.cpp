#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "condssl/error.hpp"
#include "condssl/survival.hpp"

namespace condssl {
namespace {

// Record indices sorted by time, latest first.
std::vector<std::size_t> descending_time_order(std::span<const SurvivalRecord> records) {
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return records[a].time > records[b].time; });
  return order;
}

std::size_t covariate_dim(std::span<const SurvivalRecord> records) {
  if (records.empty()) throw InvalidArgument("no survival records");
  const std::size_t p = records.front().covariates.size();
  for (const SurvivalRecord& r : records) {
    if (r.covariates.size() != p) throw InvalidArgument("inconsistent covariate dimension");
    if (r.time < 0) throw InvalidArgument("negative survival time for unit " + std::to_string(r.unit_id));
  }
  return p;
}

std::vector<double> linear_predictors(std::span<const SurvivalRecord> records, std::span<const double> beta) {
  std::vector<double> eta(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].covariates.size() != beta.size()) throw InvalidArgument("covariate/coefficient size mismatch");
    eta[i] = dot(records[i].covariates, beta);
  }
  return eta;
}

std::size_t count_events(std::span<const SurvivalRecord> records) {
  std::size_t n = 0;
  for (const SurvivalRecord& r : records) n += r.event ? 1 : 0;
  return n;
}

}  // namespace

double BaselineHazard::at(double t) const {
  const auto it = std::upper_bound(times.begin(), times.end(), t,
                                   [](double value, int time) { return value < time; });
  if (it == times.begin()) return 0.0;
  return cumulative[static_cast<std::size_t>(it - times.begin()) - 1];
}

double partial_log_likelihood(std::span<const SurvivalRecord> records, std::span<const double> eta,
                              std::vector<double>* grad_eta) {
  if (eta.size() != records.size()) throw InvalidArgument("one linear predictor per record required");
  const std::size_t n = records.size();
  double eta_max = -INFINITY;
  for (double e : eta) eta_max = std::max(eta_max, e);
  if (!std::isfinite(eta_max)) throw NumericalError("non-finite linear predictor");

  const std::vector<std::size_t> order = descending_time_order(records);
  // Distinct event times ascending with d / S0 (shifted), for the gradient.
  std::vector<int> event_times;
  std::vector<double> increments;
  double s0 = 0.0, ll = 0.0;
  for (std::size_t i = 0; i < n;) {
    const int t = records[order[i]].time;
    std::size_t j = i;
    double event_eta = 0.0;
    std::size_t d = 0;
    for (; j < n && records[order[j]].time == t; ++j) {
      const std::size_t r = order[j];
      s0 += std::exp(eta[r] - eta_max);
      if (records[r].event) {
        event_eta += eta[r];
        ++d;
      }
    }
    if (d > 0) {
      ll += event_eta - static_cast<double>(d) * (std::log(s0) + eta_max);
      event_times.push_back(t);
      increments.push_back(static_cast<double>(d) / s0);
    }
    i = j;
  }
  if (grad_eta) {
    std::reverse(event_times.begin(), event_times.end());
    std::reverse(increments.begin(), increments.end());
    std::vector<double> cumulative(increments.size());
    std::partial_sum(increments.begin(), increments.end(), cumulative.begin());
    grad_eta->assign(n, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      const auto it = std::upper_bound(event_times.begin(), event_times.end(), records[r].time);
      const double h = it == event_times.begin() ? 0.0 : cumulative[static_cast<std::size_t>(it - event_times.begin()) - 1];
      (*grad_eta)[r] = (records[r].event ? 1.0 : 0.0) - std::exp(eta[r] - eta_max) * h;
    }
  }
  return ll;
}

CoxDerivatives cox_derivatives(std::span<const SurvivalRecord> records, std::span<const double> beta,
                               double alpha, bool with_hessian) {
  const std::size_t p = covariate_dim(records);
  if (beta.size() != p) throw InvalidArgument("coefficient vector has wrong size");
  const std::size_t n = records.size();
  const std::vector<double> eta = linear_predictors(records, beta);
  double eta_max = -INFINITY;
  for (double e : eta) eta_max = std::max(eta_max, e);

  CoxDerivatives out;
  out.gradient.assign(p, 0.0);
  if (with_hessian) out.hessian = Matrix(p, p);
  std::vector<double> s1(p, 0.0);
  Matrix s2 = with_hessian ? Matrix(p, p) : Matrix();
  double s0 = 0.0, ll = 0.0;

  const std::vector<std::size_t> order = descending_time_order(records);
  for (std::size_t i = 0; i < n;) {
    const int t = records[order[i]].time;
    std::size_t j = i;
    std::size_t d = 0;
    for (; j < n && records[order[j]].time == t; ++j) {
      const std::size_t r = order[j];
      const auto& v = records[r].covariates;
      const double w = std::exp(eta[r] - eta_max);
      s0 += w;
      for (std::size_t a = 0; a < p; ++a) {
        s1[a] += w * v[a];
        if (with_hessian) {
          for (std::size_t b = 0; b <= a; ++b) s2(a, b) += w * v[a] * v[b];
        }
      }
      if (records[r].event) {
        ++d;
        ll += eta[r];
        for (std::size_t a = 0; a < p; ++a) out.gradient[a] += v[a];
      }
    }
    if (d > 0) {
      const double dd = static_cast<double>(d);
      ll -= dd * (std::log(s0) + eta_max);
      for (std::size_t a = 0; a < p; ++a) {
        const double mean_a = s1[a] / s0;
        out.gradient[a] -= dd * mean_a;
        if (with_hessian) {
          for (std::size_t b = 0; b <= a; ++b) {
            out.hessian(a, b) -= dd * (s2(a, b) / s0 - mean_a * s1[b] / s0);
          }
        }
      }
    }
    i = j;
  }
  double sq = 0.0;
  for (std::size_t a = 0; a < p; ++a) {
    sq += beta[a] * beta[a];
    out.gradient[a] -= alpha * beta[a];
  }
  out.value = ll - 0.5 * alpha * sq;
  if (with_hessian) {
    for (std::size_t a = 0; a < p; ++a) {
      out.hessian(a, a) -= alpha;
      for (std::size_t b = 0; b < a; ++b) out.hessian(b, a) = out.hessian(a, b);
    }
  }
  return out;
}

double cox_penalized_log_likelihood(std::span<const SurvivalRecord> records, std::span<const double> beta,
                                    double alpha) {
  const std::vector<double> eta = linear_predictors(records, beta);
  return partial_log_likelihood(records, eta) - 0.5 * alpha * dot(beta, beta);
}

BaselineHazard breslow_baseline_eta(std::span<const SurvivalRecord> records, std::span<const double> eta) {
  if (eta.size() != records.size()) throw InvalidArgument("one linear predictor per record required");
  if (count_events(records) == 0) throw InvalidArgument("Breslow baseline needs at least one event");
  double eta_max = -INFINITY;
  for (double e : eta) eta_max = std::max(eta_max, e);
  const std::vector<std::size_t> order = descending_time_order(records);
  std::vector<int> times;
  std::vector<double> jumps;
  double s0 = 0.0;
  for (std::size_t i = 0; i < records.size();) {
    const int t = records[order[i]].time;
    std::size_t j = i, d = 0;
    for (; j < records.size() && records[order[j]].time == t; ++j) {
      s0 += std::exp(eta[order[j]] - eta_max);
      d += records[order[j]].event ? 1 : 0;
    }
    if (d > 0) {
      if (!(s0 > 0.0)) throw NumericalError("empty risk set at event time " + std::to_string(t));
      times.push_back(t);
      jumps.push_back(static_cast<double>(d) * std::exp(-eta_max) / s0);
    }
    i = j;
  }
  BaselineHazard h;
  h.times.assign(times.rbegin(), times.rend());
  h.cumulative.resize(jumps.size());
  std::partial_sum(jumps.rbegin(), jumps.rend(), h.cumulative.begin());
  return h;
}

BaselineHazard breslow_baseline(std::span<const SurvivalRecord> records, std::span<const double> beta) {
  covariate_dim(records);
  return breslow_baseline_eta(records, linear_predictors(records, beta));
}

CoxModel cox_fit(std::span<const SurvivalRecord> records, double alpha, const CoxOptions& options) {
  const std::size_t p = covariate_dim(records);
  if (p == 0) throw InvalidArgument("Cox regression needs at least one covariate");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw InvalidArgument("L2 weight must be finite and >= 0");
  if (count_events(records) == 0) throw InvalidArgument("Cox regression needs at least one event");

  CoxModel model;
  model.alpha = alpha;
  model.beta.assign(p, 0.0);
  CoxReport& report = model.report;

  CoxDerivatives cur = cox_derivatives(records, model.beta, alpha);
  report.objective_trace.push_back(cur.value);
  for (std::size_t it = 0;; ++it) {
    report.gradient_norm = norm2(cur.gradient);
    report.objective = cur.value;
    if (report.gradient_norm < options.gradient_tolerance) {
      report.converged = true;
      break;
    }
    if (it >= options.max_iter) break;

    Eigen::Map<const Eigen::VectorXd> g(cur.gradient.data(), static_cast<Eigen::Index>(p));
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> h(
        cur.hessian.data.data(), static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    Eigen::LLT<Eigen::MatrixXd> llt(-h);
    Eigen::VectorXd step;
    if (llt.info() == Eigen::Success) {
      step = llt.solve(g);
    } else {
      step = g;  // gradient ascent fallback
    }

    double scale = 1.0;
    bool accepted = false;
    std::vector<double> trial(p);
    double trial_value = 0.0;
    for (int halving = 0; halving < 60; ++halving, scale *= 0.5) {
      for (std::size_t a = 0; a < p; ++a) trial[a] = model.beta[a] + scale * step[static_cast<Eigen::Index>(a)];
      trial_value = cox_penalized_log_likelihood(records, trial, alpha);
      if (std::isfinite(trial_value) && trial_value >= cur.value - 1e-12 * (1.0 + std::abs(cur.value))) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    model.beta = trial;
    cur = cox_derivatives(records, model.beta, alpha);
    report.objective_trace.push_back(cur.value);
    report.iterations = it + 1;
  }
  if (!report.converged) {
    std::ostringstream msg;
    msg << "Cox regression did not converge after " << report.iterations << " iterations (gradient norm "
        << report.gradient_norm << "); objective trace:";
    for (double v : report.objective_trace) msg << ' ' << v;
    throw NumericalError(msg.str());
  }
  model.baseline = breslow_baseline(records, model.beta);
  return model;
}

CoxModel cox_null_model(std::span<const SurvivalRecord> records, std::size_t dim, double alpha) {
  CoxModel model;
  model.alpha = alpha;
  model.beta.assign(dim, 0.0);
  model.baseline = breslow_baseline_eta(records, std::vector<double>(records.size(), 0.0));
  return model;
}

double cox_predict_risk(const CoxModel& model, std::span<const double> v) {
  if (v.size() != model.beta.size()) throw InvalidArgument("covariate dimension does not match the Cox model");
  return std::exp(dot(model.beta, v));
}

double cox_predict_survival(const CoxModel& model, std::span<const double> v, double t) {
  return std::exp(-model.baseline.at(t) * cox_predict_risk(model, v));
}

std::vector<std::pair<std::size_t, double>> hazard_ratios(const CoxModel& model) {
  std::vector<std::pair<std::size_t, double>> out;
  for (std::size_t i = 0; i < model.beta.size(); ++i) out.emplace_back(i, std::exp(model.beta[i]));
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

void save_cox(const CoxModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  char buf[40];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out << "condssl-cox 1\n";
  out << "alpha " << fmt(model.alpha) << '\n';
  out << "beta " << model.beta.size();
  for (double b : model.beta) out << ' ' << fmt(b);
  out << "\nbaseline " << model.baseline.times.size() << '\n';
  for (std::size_t i = 0; i < model.baseline.times.size(); ++i) {
    out << model.baseline.times[i] << ' ' << fmt(model.baseline.cumulative[i]) << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace condssl
