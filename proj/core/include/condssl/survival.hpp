#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "condssl/linalg.hpp"
#include "condssl/mlp.hpp"

namespace condssl {

// One unit (patient) for survival modelling. time is in 6-month units.
struct SurvivalRecord {
  std::int64_t unit_id = 0;
  std::vector<double> covariates;
  bool event = false;
  int time = 0;
};

// ---------------------------------------------------------------------------
// Kaplan-Meier

struct KmCurve {
  std::vector<int> times;  // distinct observed times, ascending
  std::vector<std::size_t> at_risk;
  std::vector<std::size_t> events;
  std::vector<std::size_t> censored;
  std::vector<double> survival;  // S(t) just after each time

  // Right-continuous step function, S = 1 before the first time.
  double at(double t) const;
  // S(t-), the value just before t.
  double left_limit(double t) const;
};

// Product-limit estimate. Events at a time are removed before censorings at it.
KmCurve km_fit(std::span<const SurvivalRecord> records);

// Kaplan-Meier of the censoring distribution (event indicators reversed).
KmCurve censoring_km(std::span<const SurvivalRecord> records);

// ---------------------------------------------------------------------------
// Cox proportional hazards, Breslow ties, penalty alpha/2 * |beta|^2.

struct BaselineHazard {
  std::vector<int> times;          // distinct event times, ascending
  std::vector<double> cumulative;  // Lambda0 at each time

  double at(double t) const;  // 0 before the first event time
};

struct CoxReport {
  std::size_t iterations = 0;
  double gradient_norm = 0.0;
  double objective = 0.0;
  bool converged = false;
  std::vector<double> objective_trace;
};

struct CoxModel {
  std::vector<double> beta;
  double alpha = 0.0;
  BaselineHazard baseline;
  CoxReport report;
};

struct CoxOptions {
  std::size_t max_iter = 100;
  double gradient_tolerance = 1e-8;
};

// Penalized partial log-likelihood and its derivatives at beta.
struct CoxDerivatives {
  double value = 0.0;
  std::vector<double> gradient;
  Matrix hessian;
};

CoxDerivatives cox_derivatives(std::span<const SurvivalRecord> records, std::span<const double> beta,
                               double alpha, bool with_hessian = true);

double cox_penalized_log_likelihood(std::span<const SurvivalRecord> records, std::span<const double> beta,
                                    double alpha);

// Breslow partial log-likelihood in terms of linear predictors eta. When
// grad_eta is non-null it receives d loglik / d eta.
double partial_log_likelihood(std::span<const SurvivalRecord> records, std::span<const double> eta,
                              std::vector<double>* grad_eta = nullptr);

// Newton-Raphson from beta = 0 with step halving; a non-positive-definite
// Hessian falls back to a gradient step. Throws on no events or non-convergence.
CoxModel cox_fit(std::span<const SurvivalRecord> records, double alpha, const CoxOptions& options = {});

// beta = 0 with its Breslow baseline; used where fitting is disabled.
CoxModel cox_null_model(std::span<const SurvivalRecord> records, std::size_t dim, double alpha);

BaselineHazard breslow_baseline(std::span<const SurvivalRecord> records, std::span<const double> beta);
BaselineHazard breslow_baseline_eta(std::span<const SurvivalRecord> records, std::span<const double> eta);

double cox_predict_risk(const CoxModel& model, std::span<const double> v);
double cox_predict_survival(const CoxModel& model, std::span<const double> v, double t);

// (covariate index, exp(beta_i)) sorted by ratio, largest first.
std::vector<std::pair<std::size_t, double>> hazard_ratios(const CoxModel& model);

void save_cox(const CoxModel& model, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Neural survival heads

struct NetConfig {
  std::vector<std::size_t> hidden;  // empty: linear head
  std::size_t epochs = 300;         // full-batch Adam iterations
  double learning_rate = 0.01;
  double l2 = 0.1;                  // penalty l2/2 * |params|^2
  std::uint64_t seed = 3;
};

// DeepSurv: lambda(t|x) = lambda0(t) exp(f(x)) with an MLP f trained on the
// penalized Breslow partial likelihood; lambda0 by Breslow's estimator.
struct DeepSurvModel {
  Mlp net;
  BaselineHazard baseline;
  std::vector<double> loss_trace;
};

// Negative penalized partial log-likelihood of net; gradient w.r.t. net params.
double deepsurv_objective(const Mlp& net, std::span<const SurvivalRecord> records, double l2,
                          std::vector<double>* gradient = nullptr);

DeepSurvModel deepsurv_fit(std::span<const SurvivalRecord> records, const NetConfig& config);
double deepsurv_score(const DeepSurvModel& model, std::span<const double> v);
double deepsurv_survival(const DeepSurvModel& model, std::span<const double> v, double t);

// NN-Surv: T sigmoid outputs, output i = P(survive interval i | alive at its start).
// Interval i is [boundaries[i], boundaries[i+1]); an integer time label t falls
// in the interval containing t.
struct DiscreteHazardModel {
  std::vector<int> boundaries;  // T + 1 strictly increasing values
  Mlp net;
  std::vector<double> loss_trace;

  std::size_t intervals() const { return boundaries.size() - 1; }
};

// 0, 1, ..., max_time + 1: one interval per 6-month unit.
std::vector<int> unit_boundaries(std::span<const SurvivalRecord> records);

// Index of the interval containing t; times past the last boundary are clamped
// to the last interval with a warning.
std::size_t interval_index(std::span<const int> boundaries, int t);

// Negative penalized discrete-time censored log-likelihood: an event in interval j
// contributes sum_{i<j} log s_i + log(1 - s_j); a censoring in j contributes sum_{i<j} log s_i.
double nnsurv_objective(const Mlp& net, std::span<const SurvivalRecord> records,
                        std::span<const int> boundaries, double l2, std::vector<double>* gradient = nullptr);

DiscreteHazardModel nnsurv_fit(std::span<const SurvivalRecord> records, std::vector<int> boundaries,
                               const NetConfig& config);
std::vector<double> nnsurv_conditional(const DiscreteHazardModel& model, std::span<const double> v);
// Survival at the end of the interval containing t: product of the first
// interval_index(t) + 1 conditional outputs.
double nnsurv_survival(const DiscreteHazardModel& model, std::span<const double> v, int t);
// Scalar risk for ranking: minus the expected number of intervals survived.
double nnsurv_risk(const DiscreteHazardModel& model, std::span<const double> v);
// Product of the first j conditional outputs (survival to boundary j).
double survival_from_conditionals(std::span<const double> conditionals, std::size_t j);

// ---------------------------------------------------------------------------
// Attention MIL pooling: a = softmax_k(w . tanh(V h_k)), z = sum_k a_k h_k.

struct AttentionParams {
  Matrix v;               // L x D
  std::vector<double> w;  // L

  static AttentionParams create(std::size_t input_dim, std::size_t attention_dim, std::uint64_t seed);
  std::size_t num_params() const { return v.data.size() + w.size(); }
};

struct AttentionPoolResult {
  std::vector<double> representation;
  std::vector<double> weights;
};

AttentionPoolResult mil_attention_pool(const Matrix& tiles, const AttentionParams& params);

enum class HeadKind { DeepSurv, NnSurv };

struct MilModel {
  AttentionParams attention;
  HeadKind head = HeadKind::DeepSurv;
  Mlp net;
  BaselineHazard baseline;     // DeepSurv head
  std::vector<int> boundaries; // NN-Surv head
  std::vector<double> loss_trace;
};

struct MilConfig {
  NetConfig net;
  std::size_t attention_dim = 16;
};

// Objective of the attention + head model over bags (one bag per record).
// Parameters are packed attention V, attention w, then head params.
double mil_objective(const MilModel& model, std::span<const Matrix> bags,
                     std::span<const SurvivalRecord> records, double l2,
                     std::vector<double>* gradient = nullptr);
std::vector<double> mil_pack(const MilModel& model);
void mil_unpack(MilModel& model, std::span<const double> params);

MilModel mil_fit(std::span<const Matrix> bags, std::span<const SurvivalRecord> records, HeadKind head,
                 const MilConfig& config);
double mil_risk(const MilModel& model, const Matrix& bag);
double mil_survival(const MilModel& model, const Matrix& bag, int t);

// ---------------------------------------------------------------------------
// Metrics

// (concordant + 0.5 * risk-tied) / comparable over all pairs; a pair is
// comparable when the shorter time is an event and the times differ.
double c_index(std::span<const SurvivalRecord> records, std::span<const double> risks);

// Inverse-probability-of-censoring weighted Brier score at horizon t, with the
// censoring survival G estimated by Kaplan-Meier:
//   event at T_i <= t:  (0 - S_i)^2 / G(T_i-)
//   T_i > t:            (1 - S_i)^2 / G(t)
//   censored at <= t:   0
double brier_score(std::span<const SurvivalRecord> records, std::span<const double> survival_at_t, double t);

}  // namespace condssl
