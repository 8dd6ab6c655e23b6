// Acceptance checks, one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset; exit status is non-zero when any check fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/binomial.hpp>

#include "condssl/clustering.hpp"
#include "condssl/contrastive.hpp"
#include "condssl/log.hpp"
#include "condssl/pipeline.hpp"
#include "condssl/survival.hpp"
#include "support/oracles.hpp"

using namespace condssl;

namespace {

// Pinned tolerances and budgets.
constexpr double kMetricTol = 1e-12;
constexpr double kKmTol = 1e-12;
constexpr double kBreslowTol = 1e-10;
constexpr double kCoxGridTol = 1e-3;
constexpr double kDeepSurvTol = 1e-3;
constexpr double kGradTol = 1e-4;
constexpr double kEmSlack = 1e-9;
constexpr double kAriFloor = 0.9;
constexpr double kInfoNceTol = 1e-9;
constexpr double kSignTestAlpha = 0.05;
constexpr double kNullSe = 3.0;
constexpr double kBudget1 = 10.0, kBudget3 = 60.0, kBudget6 = 20.0 * 60.0;
constexpr int kSeeds = 5;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (pass) detail << "first failure: " << what << "; ";
      pass = false;
    }
  }
};

SurvivalRecord rec(int time, bool event, std::vector<double> x = {}) {
  static std::int64_t next = 0;
  return {next++, std::move(x), event, time};
}

std::vector<oracle::Obs> obs_of(const std::vector<SurvivalRecord>& r) {
  std::vector<oracle::Obs> o;
  for (const auto& x : r) o.push_back({x.time, x.event});
  return o;
}

std::vector<SurvivalRecord> random_cox_data(std::size_t n, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  std::exponential_distribution<double> e(1.0);
  std::bernoulli_distribution censor(0.3);
  std::vector<SurvivalRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> x(dim);
    for (double& v : x) v = z(rng);
    const double rate = 0.3 * std::exp(0.8 * x[0] - 0.4 * (dim > 1 ? x[1] : 0.0));
    out.push_back(rec(static_cast<int>(std::floor(e(rng) / rate)), !censor(rng), x));
  }
  out.front().event = true;
  return out;
}

ExperimentConfig desk_config() {
  return load_config(std::filesystem::path(CONDSSL_SOURCE_DIR) / "configs/desk.conf");
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

const AggregateRow* find_row(const ExperimentReport& r, const std::string& method) {
  for (const AggregateRow& a : r.aggregates) {
    if (a.method == method) return &a;
  }
  return nullptr;
}

// ---------------------------------------------------------------------------

void criterion1(Outcome& out) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> size(2, 200), time(0, 15), level(0, 12);
  std::bernoulli_distribution event(0.6);
  std::uniform_real_distribution<double> u;
  int c_exact = 0, mse_ok = 0, ipcw_ok = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<SurvivalRecord> r;
    std::vector<double> risk;
    const int n = size(rng);
    for (int i = 0; i < n; ++i) {
      r.push_back(rec(time(rng), event(rng)));
      risk.push_back(level(rng) * 0.25);
    }
    r[0] = rec(0, true);
    r[1].time = std::max(r[1].time, 1);
    c_exact += c_index(r, risk) == oracle::c_index(obs_of(r), risk);

    std::vector<SurvivalRecord> full;
    std::vector<double> s;
    double mse = 0;
    for (int i = 0; i < n; ++i) {
      full.push_back(rec(time(rng), true));
      s.push_back(u(rng));
      const double y = full.back().time > 4 ? 1.0 : 0.0;
      mse += (y - s.back()) * (y - s.back());
    }
    mse_ok += std::abs(brier_score(full, s, 4.0) - mse / n) <= kMetricTol;

    std::vector<double> pred(r.size());
    for (double& p : pred) p = u(rng);
    r[1].time = 15;  // someone followed past the horizon
    ipcw_ok += std::abs(brier_score(r, pred, 4.0) - oracle::brier(obs_of(r), pred, 4.0)) <= kMetricTol;
  }
  const double secs = seconds_since(t0);
  out.require(c_exact == 100, "C-index exact match");
  out.require(mse_ok == 100, "uncensored Brier equals MSE");
  out.require(ipcw_ok == 100, "IPCW Brier equals direct summation");
  out.require(secs < kBudget1, "runtime budget");
  out.detail << "c-index exact " << c_exact << "/100, mse " << mse_ok << "/100, ipcw " << ipcw_ok << "/100, " << secs
             << " s";
}

void criterion2(Outcome& out) {
  // Kaplan-Meier: five constructed datasets with hand product-limit values.
  struct KmCase {
    std::vector<SurvivalRecord> records;
    std::vector<std::pair<double, double>> expected;  // (t, S(t))
  };
  const std::vector<KmCase> km_cases{
      {{rec(2, true)}, {{0, 1.0}, {1.5, 1.0}, {2, 0.0}}},
      {{rec(1, true), rec(2, false), rec(3, true), rec(4, false)}, {{1, 0.75}, {2, 0.75}, {3, 0.375}, {4, 0.375}}},
      {{rec(2, true), rec(2, true), rec(2, false), rec(4, true), rec(5, false), rec(6, true)},
       {{2, 4.0 / 6.0}, {4, 4.0 / 9.0}, {5, 4.0 / 9.0}, {6, 0.0}}},
      {{rec(1, true), rec(2, true), rec(3, true), rec(4, true)}, {{1, 0.75}, {2, 0.5}, {3, 0.25}, {4, 0.0}}},
      {{rec(1, false), rec(3, false), rec(3, false)}, {{0, 1.0}, {3, 1.0}, {9, 1.0}}},
  };
  double km_err = 0;
  for (const KmCase& c : km_cases) {
    const KmCurve km = km_fit(c.records);
    for (const auto& [t, s] : c.expected) km_err = std::max(km_err, std::abs(km.at(t) - s));
  }
  out.require(km_err <= kKmTol, "Kaplan-Meier hand values");

  // Breslow: three constructed datasets with hand sums.
  double breslow_err = 0;
  {
    const std::vector<SurvivalRecord> r{rec(5, true, {0.3})};
    breslow_err = std::max(breslow_err, std::abs(breslow_baseline(r, std::vector<double>{0.0}).at(5) - 1.0));
  }
  {
    std::vector<SurvivalRecord> r;
    for (int t = 1; t <= 6; ++t) r.push_back(rec(t, true, {1.0 * t}));
    const BaselineHazard h = breslow_baseline(r, std::vector<double>{0.0});
    double expected = 0;
    for (int t = 1; t <= 6; ++t) {
      expected += 1.0 / (7 - t);
      breslow_err = std::max(breslow_err, std::abs(h.at(t) - expected));
    }
  }
  {
    const std::vector<SurvivalRecord> r{rec(1, true, {0.0}), rec(1, true, {1.0}), rec(2, false, {2.0}),
                                        rec(3, true, {1.0})};
    const BaselineHazard h = breslow_baseline(r, std::vector<double>{0.5});
    const double s0 = 1.0 + 2.0 * std::exp(0.5) + std::exp(1.0);
    breslow_err = std::max(breslow_err, std::abs(h.at(1) - 2.0 / s0));
    breslow_err = std::max(breslow_err, std::abs(h.at(3) - (2.0 / s0 + std::exp(-0.5))));
  }
  out.require(breslow_err <= kBreslowTol, "Breslow hand sums");

  // Cox against a grid + refinement maximizer on 2-D problems.
  std::mt19937_64 rng(202);
  double cox_err = 0;
  for (double alpha : {0.0, 0.1, 1.0, 10.0}) {
    const auto r = random_cox_data(30, 2, rng);
    const CoxModel m = cox_fit(r, alpha);
    std::vector<std::vector<double>> x;
    for (const auto& s : r) x.push_back(s.covariates);
    const auto obs = obs_of(r);
    const auto best = oracle::grid_maximize_2d(
        [&](const std::vector<double>& b) { return oracle::cox_objective(x, obs, b, alpha); }, 4.0, 0.05);
    cox_err = std::max({cox_err, std::abs(m.beta[0] - best[0]), std::abs(m.beta[1] - best[1])});
  }
  out.require(cox_err <= kCoxGridTol, "Cox grid maximizer");

  // DeepSurv with a linear head reduces to penalized Cox.
  double ds_err = 0;
  for (double alpha : {0.1, 0.5}) {
    const auto r = random_cox_data(60, 2, rng);
    const CoxModel cox = cox_fit(r, alpha);
    NetConfig cfg;
    cfg.hidden = {};
    cfg.epochs = 4000;
    cfg.learning_rate = 0.05;
    cfg.l2 = alpha;
    const DeepSurvModel ds = deepsurv_fit(r, cfg);
    ds_err = std::max({ds_err, std::abs(ds.net.params()[0] - cox.beta[0]), std::abs(ds.net.params()[1] - cox.beta[1])});
  }
  out.require(ds_err <= kDeepSurvTol, "DeepSurv linear head equals Cox");
  out.detail << "KM max err " << km_err << ", Breslow " << breslow_err << ", Cox vs grid " << cox_err
             << ", DeepSurv vs Cox " << ds_err;
}

void criterion3(Outcome& out) {
  const auto t0 = Clock::now();
  auto check = [](const std::vector<double>& analytic, const std::function<double(const std::vector<double>&)>& f,
                  const std::vector<double>& theta) {
    return oracle::max_relative_error(analytic, oracle::central_difference(f, theta, 1e-5));
  };
  std::normal_distribution<double> z;

  double worst_nce = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(3000 + trial);
    EncoderState state = EncoderState::create(6, 8, 4, 16, 0.07 + 0.1 * (trial % 4), 0.999, rng);
    for (double& v : state.key.params()) v += 0.1 * z(rng);
    for (int j = 0; j < trial % 20; ++j) {
      std::vector<double> k(4);
      for (double& v : k) v = z(rng);
      const double n = norm2(k);
      for (double& v : k) v /= n;
      state.queue.push(k);
    }
    BatchViews views{Matrix(8, 6), Matrix(8, 6)};
    for (double& v : views.query_views.data) v = z(rng);
    for (double& v : views.key_views.data) v = z(rng);
    const LossGradient lg = loss_and_gradient(state, views);
    const std::vector<double> theta(state.query.params().begin(), state.query.params().end());
    worst_nce = std::max(worst_nce, check(lg.gradient,
                                          [&](const std::vector<double>& p) {
                                            EncoderState probe = state;
                                            std::copy(p.begin(), p.end(), probe.query.params().begin());
                                            return loss_and_gradient(probe, views).loss;
                                          },
                                          theta));
  }

  std::mt19937_64 data_rng(303);
  double worst_nn = 0, worst_ds = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t dim = 1 + trial % 4;
    const auto r = random_cox_data(10 + trial % 15, dim, data_rng);
    Rng init(4000 + trial);

    const auto bounds = unit_boundaries(r);
    Mlp nn({dim, 4, bounds.size() - 1});
    nn.init_random(init);
    std::vector<double> g;
    nnsurv_objective(nn, r, bounds, 0.05, &g);
    worst_nn = std::max(worst_nn, check(g,
                                        [&](const std::vector<double>& p) {
                                          Mlp probe = nn;
                                          std::copy(p.begin(), p.end(), probe.params().begin());
                                          return nnsurv_objective(probe, r, bounds, 0.05);
                                        },
                                        {nn.params().begin(), nn.params().end()}));

    Mlp ds({dim, 3 + static_cast<std::size_t>(trial % 3), 1});
    ds.init_random(init);
    deepsurv_objective(ds, r, 0.1, &g);
    worst_ds = std::max(worst_ds, check(g,
                                        [&](const std::vector<double>& p) {
                                          Mlp probe = ds;
                                          std::copy(p.begin(), p.end(), probe.params().begin());
                                          return deepsurv_objective(probe, r, 0.1);
                                        },
                                        {ds.params().begin(), ds.params().end()}));
  }
  const double secs = seconds_since(t0);
  out.require(worst_nce < kGradTol, "contrastive gradient");
  out.require(worst_nn < kGradTol, "NN-Surv gradient");
  out.require(worst_ds < kGradTol, "DeepSurv gradient");
  out.require(secs < kBudget3, "runtime budget");
  out.detail << "max rel err: InfoNCE " << worst_nce << ", NN-Surv " << worst_nn << ", DeepSurv " << worst_ds
             << " (100 configs each), " << secs << " s";
}

void criterion4(Outcome& out) {
  Rng rng(404);
  std::normal_distribution<double> z(0.0, 1.0);
  const std::vector<std::vector<double>> centers{{0, 0, 0}, {2.5, 0, 1}, {0, 3, -1}, {4, 4, 4}};
  Matrix x(centers.size() * 60, 3);
  for (std::size_t c = 0; c < centers.size(); ++c) {
    for (std::size_t i = 0; i < 60; ++i) {
      for (std::size_t j = 0; j < 3; ++j) x(c * 60 + i, j) = centers[c][j] + z(rng);
    }
  }
  int monotone = 0;
  double worst_drop = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    GmmOptions opt;
    opt.k = 2 + seed % 5;
    opt.tolerance = 0.0;
    opt.max_iter = 50;
    opt.seed = seed;
    const GmmModel m = fit_gmm(x, opt);
    bool ok = true;
    for (std::size_t i = 1; i < m.log_likelihood_trace.size(); ++i) {
      const double drop = m.log_likelihood_trace[i - 1] - m.log_likelihood_trace[i];
      worst_drop = std::max(worst_drop, drop);
      ok = ok && drop <= kEmSlack;
    }
    monotone += ok;
  }
  out.require(monotone == 50, "EM monotone on every initialization");

  std::normal_distribution<double> tight(0.0, 0.7);
  const std::size_t k = 5, per = 80;
  Matrix sep(k * per, 4);
  std::vector<int> truth;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < per; ++i) {
      for (std::size_t j = 0; j < 4; ++j) sep(c * per + i, j) = (c > 0 && j == c - 1 ? 4.0 : 0.0) + tight(rng);
      truth.push_back(static_cast<int>(c));
    }
  }
  double worst_ari = 1.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    GmmOptions opt;
    opt.k = k;
    opt.seed = seed;
    const GmmModel m = fit_gmm(sep, opt);
    worst_ari = std::min(worst_ari, adjusted_rand_index(hard_assignments(m, sep), truth));
  }
  out.require(worst_ari > kAriFloor, "cluster recovery ARI");
  out.detail << "monotone " << monotone << "/50 (largest drop " << worst_drop << "), worst ARI over 10 seeds "
             << worst_ari;
}

void criterion5(Outcome& out) {
  double worst_uniform = 0, worst_sep = 0;
  for (std::size_t k : {1u, 8u, 128u, 1024u}) {
    const std::vector<double> q{1.0, 0.0}, pos{0.0, 1.0}, same{1.0, 0.0};
    Matrix orthogonal(k, 2), opposite(k, 2);
    for (std::size_t j = 0; j < k; ++j) {
      orthogonal(j, 1) = j % 2 ? -1.0 : 1.0;
      opposite(j, 0) = -1.0;
    }
    worst_uniform = std::max(worst_uniform, std::abs(info_nce_loss(q, pos, orthogonal, 0.07) - std::log1p(k)));
    worst_sep = std::max(worst_sep, info_nce_loss(q, same, opposite, 0.07));
  }
  out.require(worst_uniform <= kInfoNceTol, "uniform similarity equals ln(1+K)");
  out.require(worst_sep < kInfoNceTol, "perfect separation near zero");
  out.detail << "max |loss - ln(1+K)| " << worst_uniform << ", max separated loss " << worst_sep;
}

// One-sided sign test: P(X >= wins) for X ~ Binomial(n, 1/2).
double sign_test_p(int wins, int n) {
  if (wins == 0) return 1.0;
  const boost::math::binomial b(n, 0.5);
  return boost::math::cdf(boost::math::complement(b, wins - 1));
}

void criterion6(Outcome& out) {
  const auto t0 = Clock::now();
  int probe_wins = 0, c_wins = 0;
  std::ostringstream rows;
  for (int s = 1; s <= kSeeds; ++s) {
    ExperimentConfig c = desk_config();
    c.seed = s;
    c.cohort.seed = s;
    out.require(c.cohort.batch_effect_scale >= 2.0 * c.cohort.cluster_separation, "batch effect regime");
    const ExperimentReport r = run_ablation(c, {"cond:4", "random"});
    out.require(r.errors.empty(), "ablation ran without fold errors");
    std::vector<double> probe_cond, probe_rand;
    for (const ProbeRow& p : r.probes) {
      (p.method == "SSL-Cox[n=4]" ? probe_cond : probe_rand).push_back(p.result.accuracy);
    }
    const AggregateRow* cond = find_row(r, "SSL-Cox[n=4]");
    const AggregateRow* rand = find_row(r, "SSL-Cox[random]");
    if (!cond || !rand || probe_cond.empty() || probe_rand.empty()) {
      out.require(false, "ablation rows present");
      continue;
    }
    const double pc = mean_of(probe_cond), pr = mean_of(probe_rand);
    probe_wins += pc < pr;
    c_wins += cond->c_index_mean >= rand->c_index_mean;
    rows << " [seed " << s << ": probe " << pc << " vs " << pr << ", C " << cond->c_index_mean << " vs "
         << rand->c_index_mean << "]";
  }
  const double p = sign_test_p(probe_wins, kSeeds);
  const double secs = seconds_since(t0);
  out.require(p < kSignTestAlpha, "probe sign test");
  out.require(2 * c_wins > kSeeds, "C-index majority");
  out.require(secs < kBudget6, "runtime budget");
  out.detail << "cond:4 probe lower in " << probe_wins << "/" << kSeeds << " seeds (sign test p = " << p
             << "), C-index cond:4 >= random in " << c_wins << "/" << kSeeds << ", " << secs << " s;" << rows.str();
}

void criterion7(Outcome& out) {
  int ordered = 0;
  std::ostringstream rows;
  for (int s = 1; s <= kSeeds; ++s) {
    ExperimentConfig c = desk_config();
    c.seed = s;
    c.cohort.seed = s;
    const ExperimentReport r = run_baselines(c);
    out.require(r.errors.empty(), "baselines ran without fold errors");
    const AggregateRow* ssl = find_row(r, kSslCox);
    const AggregateRow* mil_ds = find_row(r, kMilDeepSurv);
    const AggregateRow* mil_nn = find_row(r, kMilNnSurv);
    const AggregateRow* e2e_ds = find_row(r, kE2eDeepSurv);
    const AggregateRow* e2e_nn = find_row(r, kE2eNnSurv);
    if (!ssl || !mil_ds || !mil_nn || !e2e_ds || !e2e_nn) {
      out.require(false, "method rows present");
      continue;
    }
    // SSL-Cox at least each MIL head; the MIL heads on average at least the E2E heads.
    const double mil = 0.5 * (mil_ds->c_index_mean + mil_nn->c_index_mean);
    const double e2e = 0.5 * (e2e_ds->c_index_mean + e2e_nn->c_index_mean);
    const bool ok = ssl->c_index_mean >= std::max(mil_ds->c_index_mean, mil_nn->c_index_mean) && mil >= e2e;
    ordered += ok;
    rows << " [seed " << s << ": SSL " << ssl->c_index_mean << ", MIL " << mil_ds->c_index_mean << "/"
         << mil_nn->c_index_mean << ", E2E " << e2e_ds->c_index_mean << "/" << e2e_nn->c_index_mean
         << (ok ? "" : " x") << "]";
  }
  out.require(2 * ordered > kSeeds, "ordering holds in a majority of seeds");
  out.detail << "ordering SSL-Cox >= MIL >= E2E in " << ordered << "/" << kSeeds << " seeds;" << rows.str();
}

std::map<std::string, std::string> read_tree(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    out[std::filesystem::relative(e.path(), dir).string()] = {std::istreambuf_iterator<char>(in), {}};
  }
  return out;
}

void criterion8(Outcome& out) {
  ExperimentConfig c = desk_config();
  c.folds = 2;
  const auto base = std::filesystem::temp_directory_path() / "condssl_acceptance_determinism";
  std::filesystem::remove_all(base);
  emit_report(run_baselines(c), base / "a");
  emit_report(run_baselines(c), base / "b");
  const auto a = read_tree(base / "a"), b = read_tree(base / "b");
  std::size_t differing = 0;
  for (const auto& [name, content] : a) differing += !b.count(name) || b.at(name) != content;
  differing += b.size() > a.size() ? b.size() - a.size() : 0;
  std::filesystem::remove_all(base);
  out.require(!a.empty() && differing == 0, "byte-identical report files");
  out.detail << a.size() << " files compared, " << differing << " differ";
}

void criterion9(Outcome& out) {
  ExperimentConfig c = desk_config();
  c.shuffle_outcomes = true;
  const ExperimentReport r = run_baselines(c);
  out.require(r.errors.empty(), "baselines ran without fold errors");
  out.require(r.aggregates.size() == 5, "every method reported");
  for (const AggregateRow& a : r.aggregates) {
    const double se = a.c_index_sd / std::sqrt(static_cast<double>(a.n_folds));
    const bool ok = std::abs(a.c_index_mean - 0.5) <= kNullSe * se;
    out.require(ok, a.method + " within 3 standard errors of 0.5");
    out.detail << a.method << " " << a.c_index_mean << " (se " << se << ")" << (ok ? "" : " x") << "; ";
  }
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<void(Outcome&)>>> criteria{
      {"metric oracles", criterion1},      {"estimator oracles", criterion2}, {"gradient checks", criterion3},
      {"EM correctness", criterion4},      {"InfoNCE closed forms", criterion5},
      {"batch-effect suppression", criterion6}, {"method ordering", criterion7}, {"determinism", criterion8},
      {"null safety", criterion9}};
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  set_log_sink([](LogLevel, const std::string&) {});
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(number)) continue;
    Outcome out;
    try {
      criteria[i].second(out);
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail << "exception: " << e.what();
    }
    failures += !out.pass;
    std::printf("criterion %d (%s): %s  %s\n", number, criteria[i].first, out.pass ? "PASS" : "FAIL",
                out.detail.str().c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
