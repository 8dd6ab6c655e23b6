#include <algorithm>
#include <cmath>
#include <numbers>

#include "condssl/error.hpp"
#include "condssl/log.hpp"
#include "condssl/rng.hpp"
#include "condssl/survival.hpp"

namespace condssl {
namespace {

// Full-batch Adam with cosine-decayed step size. Returns the loss per iteration.
template <typename Objective>
std::vector<double> adam_minimize(std::span<double> params, Objective&& objective, const NetConfig& config) {
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<double> m1(params.size(), 0.0), m2(params.size(), 0.0), grad;
  std::vector<double> trace;
  trace.reserve(config.epochs);
  for (std::size_t it = 1; it <= config.epochs; ++it) {
    const double loss = objective(params, grad);
    if (!std::isfinite(loss)) throw NumericalError("non-finite survival loss at iteration " + std::to_string(it));
    trace.push_back(loss);
    const double progress = static_cast<double>(it - 1) / static_cast<double>(config.epochs);
    const double lr = config.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(it));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(it));
    for (std::size_t p = 0; p < params.size(); ++p) {
      m1[p] = beta1 * m1[p] + (1.0 - beta1) * grad[p];
      m2[p] = beta2 * m2[p] + (1.0 - beta2) * grad[p] * grad[p];
      params[p] -= lr * (m1[p] / c1) / (std::sqrt(m2[p] / c2) + eps);
    }
  }
  return trace;
}

double log_sigmoid(double a) { return a >= 0.0 ? -std::log1p(std::exp(-a)) : a - std::log1p(std::exp(a)); }
double sigmoid(double a) {
  return a >= 0.0 ? 1.0 / (1.0 + std::exp(-a)) : std::exp(a) / (1.0 + std::exp(a));
}

void check_records(std::span<const SurvivalRecord> records, std::size_t dim) {
  if (records.empty()) throw InvalidArgument("no survival records");
  bool any_event = false;
  for (const SurvivalRecord& r : records) {
    if (r.covariates.size() != dim) throw InvalidArgument("covariate dimension does not match the network input");
    if (r.time < 0) throw InvalidArgument("negative survival time");
    any_event = any_event || r.event;
  }
  if (!any_event) throw InvalidArgument("survival model needs at least one event");
}

double add_penalty(std::span<const double> params, double l2, std::vector<double>* gradient) {
  double sq = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    sq += params[p] * params[p];
    if (gradient) (*gradient)[p] += l2 * params[p];
  }
  return 0.5 * l2 * sq;
}

// Per-record negative log-likelihood of the discrete-time model and its
// gradient w.r.t. the T logits.
double nnsurv_record_loss(std::span<const double> logits, std::size_t interval, bool event,
                          std::span<double> grad_logits) {
  double ll = 0.0;
  std::fill(grad_logits.begin(), grad_logits.end(), 0.0);
  for (std::size_t i = 0; i < interval; ++i) {
    ll += log_sigmoid(logits[i]);
    grad_logits[i] = -sigmoid(-logits[i]);
  }
  if (event) {
    ll += log_sigmoid(-logits[interval]);
    grad_logits[interval] = sigmoid(logits[interval]);
  }
  return -ll;
}

std::vector<double> conditionals_from_logits(std::span<const double> logits) {
  std::vector<double> s(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) s[i] = sigmoid(logits[i]);
  return s;
}

// Negative restricted mean survival over the interval grid; larger means riskier.
double risk_from_conditionals(std::span<const double> conditionals) {
  double s = 1.0, area = 0.0;
  for (double c : conditionals) {
    s *= c;
    area += s;
  }
  return -area;
}

}  // namespace

// ---------------------------------------------------------------------------
// DeepSurv

double deepsurv_objective(const Mlp& net, std::span<const SurvivalRecord> records, double l2,
                          std::vector<double>* gradient) {
  check_records(records, net.input_dim());
  if (net.output_dim() != 1) throw InvalidArgument("DeepSurv network must have a single output");
  const std::size_t n = records.size();
  std::vector<Mlp::Workspace> ws(n);
  std::vector<double> eta(n);
  for (std::size_t i = 0; i < n; ++i) eta[i] = net.forward(records[i].covariates, ws[i])[0];
  std::vector<double> grad_eta;
  const double ll = partial_log_likelihood(records, eta, gradient ? &grad_eta : nullptr);
  if (gradient) {
    gradient->assign(net.num_params(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double g = -grad_eta[i];
      net.backward(ws[i], std::span<const double>(&g, 1), *gradient);
    }
  }
  return -ll + add_penalty(net.params(), l2, gradient);
}

DeepSurvModel deepsurv_fit(std::span<const SurvivalRecord> records, const NetConfig& config) {
  if (records.empty()) throw InvalidArgument("no survival records");
  const std::size_t dim = records.front().covariates.size();
  check_records(records, dim);
  std::vector<std::size_t> sizes{dim};
  sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
  sizes.push_back(1);
  DeepSurvModel model;
  model.net = Mlp(sizes);
  Rng rng = make_rng(config.seed, {0xDEE9});
  model.net.init_random(rng);
  Mlp work = model.net;
  model.loss_trace = adam_minimize(
      model.net.params(),
      [&](std::span<const double> params, std::vector<double>& grad) {
        std::copy(params.begin(), params.end(), work.params().begin());
        return deepsurv_objective(work, records, config.l2, &grad);
      },
      config);
  std::vector<double> eta(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) eta[i] = model.net.forward(records[i].covariates)[0];
  model.baseline = breslow_baseline_eta(records, eta);
  return model;
}

double deepsurv_score(const DeepSurvModel& model, std::span<const double> v) {
  return model.net.forward(v)[0];
}

double deepsurv_survival(const DeepSurvModel& model, std::span<const double> v, double t) {
  return std::exp(-model.baseline.at(t) * std::exp(deepsurv_score(model, v)));
}

// ---------------------------------------------------------------------------
// NN-Surv

std::vector<int> unit_boundaries(std::span<const SurvivalRecord> records) {
  int max_time = 0;
  for (const SurvivalRecord& r : records) max_time = std::max(max_time, r.time);
  std::vector<int> b(static_cast<std::size_t>(max_time) + 2);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = static_cast<int>(i);
  return b;
}

std::size_t interval_index(std::span<const int> boundaries, int t) {
  if (boundaries.size() < 2) throw InvalidArgument("need at least two interval boundaries");
  if (t < boundaries.front()) {
    log_warning("time " + std::to_string(t) + " before the first interval boundary; clamped");
    return 0;
  }
  if (t >= boundaries.back()) {
    log_warning("time " + std::to_string(t) + " beyond the last interval boundary; clamped");
    return boundaries.size() - 2;
  }
  const auto it = std::upper_bound(boundaries.begin(), boundaries.end(), t);
  return static_cast<std::size_t>(it - boundaries.begin()) - 1;
}

double survival_from_conditionals(std::span<const double> conditionals, std::size_t j) {
  double s = 1.0;
  for (std::size_t i = 0; i < j && i < conditionals.size(); ++i) s *= conditionals[i];
  return s;
}

namespace {

void check_boundaries(std::span<const int> boundaries) {
  if (boundaries.size() < 2) throw InvalidArgument("need at least two interval boundaries");
  if (boundaries.front() < 0) throw InvalidArgument("interval boundaries must be non-negative");
  for (std::size_t i = 1; i < boundaries.size(); ++i) {
    if (boundaries[i] <= boundaries[i - 1]) throw InvalidArgument("interval boundaries must be strictly increasing");
  }
}

}  // namespace

double nnsurv_objective(const Mlp& net, std::span<const SurvivalRecord> records, std::span<const int> boundaries,
                        double l2, std::vector<double>* gradient) {
  check_records(records, net.input_dim());
  check_boundaries(boundaries);
  const std::size_t intervals = boundaries.size() - 1;
  if (net.output_dim() != intervals) throw InvalidArgument("NN-Surv network needs one output per interval");
  if (gradient) gradient->assign(net.num_params(), 0.0);
  Mlp::Workspace ws;
  std::vector<double> grad_logits(intervals);
  double loss = 0.0;
  for (const SurvivalRecord& r : records) {
    const auto logits = net.forward(r.covariates, ws);
    loss += nnsurv_record_loss(logits, interval_index(boundaries, r.time), r.event, grad_logits);
    if (gradient) net.backward(ws, grad_logits, *gradient);
  }
  return loss + add_penalty(net.params(), l2, gradient);
}

DiscreteHazardModel nnsurv_fit(std::span<const SurvivalRecord> records, std::vector<int> boundaries,
                               const NetConfig& config) {
  if (records.empty()) throw InvalidArgument("no survival records");
  check_boundaries(boundaries);
  const std::size_t dim = records.front().covariates.size();
  check_records(records, dim);
  std::vector<std::size_t> sizes{dim};
  sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
  sizes.push_back(boundaries.size() - 1);
  DiscreteHazardModel model;
  model.boundaries = std::move(boundaries);
  model.net = Mlp(sizes);
  Rng rng = make_rng(config.seed, {0x995});
  model.net.init_random(rng);
  Mlp work = model.net;
  model.loss_trace = adam_minimize(
      model.net.params(),
      [&](std::span<const double> params, std::vector<double>& grad) {
        std::copy(params.begin(), params.end(), work.params().begin());
        return nnsurv_objective(work, records, model.boundaries, config.l2, &grad);
      },
      config);
  return model;
}

std::vector<double> nnsurv_conditional(const DiscreteHazardModel& model, std::span<const double> v) {
  return conditionals_from_logits(model.net.forward(v));
}

double nnsurv_survival(const DiscreteHazardModel& model, std::span<const double> v, int t) {
  const auto s = nnsurv_conditional(model, v);
  return survival_from_conditionals(s, interval_index(model.boundaries, t) + 1);
}

double nnsurv_risk(const DiscreteHazardModel& model, std::span<const double> v) {
  return risk_from_conditionals(nnsurv_conditional(model, v));
}

// ---------------------------------------------------------------------------
// Attention MIL

AttentionParams AttentionParams::create(std::size_t input_dim, std::size_t attention_dim, std::uint64_t seed) {
  AttentionParams p;
  p.v = Matrix(attention_dim, input_dim);
  p.w.assign(attention_dim, 0.0);
  Rng rng = make_rng(seed, {0xA77});
  const double limit_v = std::sqrt(6.0 / static_cast<double>(input_dim + attention_dim));
  const double limit_w = std::sqrt(6.0 / static_cast<double>(attention_dim + 1));
  std::uniform_real_distribution<double> dv(-limit_v, limit_v), dw(-limit_w, limit_w);
  for (double& x : p.v.data) x = dv(rng);
  for (double& x : p.w) x = dw(rng);
  return p;
}

namespace {

struct AttentionCache {
  Matrix hidden;               // tanh(V h_k), k x L
  std::vector<double> weights;  // softmax attention
  std::vector<double> z;
};

AttentionCache attend(const Matrix& tiles, const AttentionParams& params) {
  if (tiles.rows == 0) throw InvalidArgument("attention pooling over an empty bag");
  if (tiles.cols != params.v.cols) throw InvalidArgument("bag dimension does not match attention parameters");
  const std::size_t k = tiles.rows, d = tiles.cols, l = params.w.size();
  AttentionCache c;
  c.hidden = Matrix(k, l);
  std::vector<double> scores(k);
  for (std::size_t t = 0; t < k; ++t) {
    const auto h = tiles.row(t);
    double s = 0.0;
    for (std::size_t a = 0; a < l; ++a) {
      const double u = std::tanh(dot(params.v.row(a), h));
      c.hidden(t, a) = u;
      s += params.w[a] * u;
    }
    scores[t] = s;
  }
  const double lse = log_sum_exp(scores);
  c.weights.resize(k);
  double total = 0.0;
  for (std::size_t t = 0; t < k; ++t) {
    c.weights[t] = std::exp(scores[t] - lse);
    total += c.weights[t];
  }
  for (double& w : c.weights) w /= total;
  c.z.assign(d, 0.0);
  for (std::size_t t = 0; t < k; ++t) {
    const auto h = tiles.row(t);
    for (std::size_t j = 0; j < d; ++j) c.z[j] += c.weights[t] * h[j];
  }
  return c;
}

// Accumulates d loss / d (V, w) given g = d loss / d z.
void attend_backward(const Matrix& tiles, const AttentionParams& params, const AttentionCache& c,
                     std::span<const double> g, std::span<double> grad_v, std::span<double> grad_w) {
  const std::size_t k = tiles.rows, d = tiles.cols, l = params.w.size();
  const double gz = dot(g, c.z);
  for (std::size_t t = 0; t < k; ++t) {
    const auto h = tiles.row(t);
    const double ds = c.weights[t] * (dot(g, h) - gz);
    if (ds == 0.0) continue;
    for (std::size_t a = 0; a < l; ++a) {
      const double u = c.hidden(t, a);
      grad_w[a] += ds * u;
      const double dpre = ds * params.w[a] * (1.0 - u * u);
      double* gv = grad_v.data() + a * d;
      for (std::size_t j = 0; j < d; ++j) gv[j] += dpre * h[j];
    }
  }
}

}  // namespace

AttentionPoolResult mil_attention_pool(const Matrix& tiles, const AttentionParams& params) {
  AttentionCache c = attend(tiles, params);
  return {std::move(c.z), std::move(c.weights)};
}

std::vector<double> mil_pack(const MilModel& model) {
  std::vector<double> p(model.attention.v.data);
  p.insert(p.end(), model.attention.w.begin(), model.attention.w.end());
  p.insert(p.end(), model.net.params().begin(), model.net.params().end());
  return p;
}

void mil_unpack(MilModel& model, std::span<const double> params) {
  const std::size_t nv = model.attention.v.data.size(), nw = model.attention.w.size();
  if (params.size() != nv + nw + model.net.num_params()) throw InvalidArgument("MIL parameter vector has wrong size");
  std::copy(params.begin(), params.begin() + nv, model.attention.v.data.begin());
  std::copy(params.begin() + nv, params.begin() + nv + nw, model.attention.w.begin());
  std::copy(params.begin() + nv + nw, params.end(), model.net.params().begin());
}

double mil_objective(const MilModel& model, std::span<const Matrix> bags, std::span<const SurvivalRecord> records,
                     double l2, std::vector<double>* gradient) {
  if (bags.size() != records.size()) throw InvalidArgument("one bag per survival record required");
  const std::size_t n = bags.size();
  const std::size_t nv = model.attention.v.data.size(), nw = model.attention.w.size();
  const std::size_t n_params = nv + nw + model.net.num_params();
  if (gradient) gradient->assign(n_params, 0.0);
  std::span<double> grad_v, grad_w, grad_net;
  if (gradient) {
    grad_v = std::span<double>(gradient->data(), nv);
    grad_w = std::span<double>(gradient->data() + nv, nw);
    grad_net = std::span<double>(gradient->data() + nv + nw, model.net.num_params());
  }
  std::vector<AttentionCache> caches;
  caches.reserve(n);
  std::vector<Mlp::Workspace> ws(n);
  std::vector<double> grad_z(model.attention.v.cols);
  double loss = 0.0;

  if (model.head == HeadKind::DeepSurv) {
    std::vector<double> eta(n);
    for (std::size_t i = 0; i < n; ++i) {
      caches.push_back(attend(bags[i], model.attention));
      eta[i] = model.net.forward(caches[i].z, ws[i])[0];
    }
    std::vector<double> grad_eta;
    loss = -partial_log_likelihood(records, eta, gradient ? &grad_eta : nullptr);
    if (gradient) {
      for (std::size_t i = 0; i < n; ++i) {
        const double g = -grad_eta[i];
        model.net.backward(ws[i], std::span<const double>(&g, 1), grad_net, grad_z);
        attend_backward(bags[i], model.attention, caches[i], grad_z, grad_v, grad_w);
      }
    }
  } else {
    const std::size_t intervals = model.boundaries.size() - 1;
    std::vector<double> grad_logits(intervals);
    for (std::size_t i = 0; i < n; ++i) {
      AttentionCache c = attend(bags[i], model.attention);
      const auto logits = model.net.forward(c.z, ws[i]);
      loss += nnsurv_record_loss(logits, interval_index(model.boundaries, records[i].time), records[i].event,
                                 grad_logits);
      if (gradient) {
        model.net.backward(ws[i], grad_logits, grad_net, grad_z);
        attend_backward(bags[i], model.attention, c, grad_z, grad_v, grad_w);
      }
    }
  }
  const std::vector<double> packed = mil_pack(model);
  return loss + add_penalty(packed, l2, gradient);
}

MilModel mil_fit(std::span<const Matrix> bags, std::span<const SurvivalRecord> records, HeadKind head,
                 const MilConfig& config) {
  if (bags.empty() || bags.size() != records.size()) throw InvalidArgument("one bag per survival record required");
  const std::size_t dim = bags.front().cols;
  bool any_event = false;
  for (const SurvivalRecord& r : records) any_event = any_event || r.event;
  if (!any_event) throw InvalidArgument("MIL survival model needs at least one event");

  MilModel model;
  model.head = head;
  model.attention = AttentionParams::create(dim, config.attention_dim, config.net.seed);
  std::vector<std::size_t> sizes{dim};
  sizes.insert(sizes.end(), config.net.hidden.begin(), config.net.hidden.end());
  if (head == HeadKind::NnSurv) {
    model.boundaries = unit_boundaries(records);
    sizes.push_back(model.boundaries.size() - 1);
  } else {
    sizes.push_back(1);
  }
  model.net = Mlp(sizes);
  Rng rng = make_rng(config.net.seed, {0x111});
  model.net.init_random(rng);

  std::vector<double> params = mil_pack(model);
  MilModel work = model;
  model.loss_trace = adam_minimize(
      params,
      [&](std::span<const double> p, std::vector<double>& grad) {
        mil_unpack(work, p);
        return mil_objective(work, bags, records, config.net.l2, &grad);
      },
      config.net);
  mil_unpack(model, params);
  if (head == HeadKind::DeepSurv) {
    std::vector<double> eta(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      eta[i] = model.net.forward(mil_attention_pool(bags[i], model.attention).representation)[0];
    }
    model.baseline = breslow_baseline_eta(records, eta);
  }
  return model;
}

double mil_risk(const MilModel& model, const Matrix& bag) {
  const auto z = mil_attention_pool(bag, model.attention).representation;
  const auto out = model.net.forward(z);
  if (model.head == HeadKind::DeepSurv) return out[0];
  return risk_from_conditionals(conditionals_from_logits(out));
}

double mil_survival(const MilModel& model, const Matrix& bag, int t) {
  const auto z = mil_attention_pool(bag, model.attention).representation;
  const auto out = model.net.forward(z);
  if (model.head == HeadKind::DeepSurv) return std::exp(-model.baseline.at(t) * std::exp(out[0]));
  return survival_from_conditionals(conditionals_from_logits(out), interval_index(model.boundaries, t) + 1);
}

}  // namespace condssl
