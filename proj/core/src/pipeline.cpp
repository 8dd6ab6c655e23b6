#include "condssl/pipeline.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <thread>

#include "condssl/clustering.hpp"
#include "condssl/error.hpp"
#include "condssl/log.hpp"
#include "condssl/rng.hpp"

namespace condssl {
namespace {

constexpr std::uint64_t kSplitTag = 0x5B17;
constexpr std::uint64_t kShuffleTag = 0x5F1E;
constexpr std::uint64_t kTrainTag = 0x55A1;
constexpr std::uint64_t kGmmTag = 0x6A3;
constexpr std::uint64_t kNetTag = 0x4E7;
constexpr std::uint64_t kProbeTag = 0x9B0;
constexpr std::size_t kProjectionSlides = 8;

struct Data {
  Cohort cohort;
  Matrix raw;
  std::map<std::int64_t, PatientOutcome> outcome;
  // patient -> slide -> tile rows, both keys ascending
  std::map<std::int64_t, std::map<std::int64_t, std::vector<std::size_t>>> layout;
  std::vector<SplitPlan> plans;
};

Data prepare(const ExperimentConfig& config) {
  Data d;
  d.cohort = load_or_generate(config);
  if (d.cohort.tiles.empty()) throw InvalidArgument("cohort has no tiles");
  d.raw = feature_matrix(d.cohort.tiles);
  for (const PatientOutcome& o : d.cohort.outcomes) d.outcome[o.patient_id] = o;
  for (std::size_t i = 0; i < d.cohort.tiles.size(); ++i) {
    const TileRecord& t = d.cohort.tiles[i];
    if (!d.outcome.count(t.patient_id)) continue;
    d.layout[t.patient_id][t.slide_id].push_back(i);
  }
  d.plans = make_splits(d.cohort, config);
  return d;
}

std::vector<std::size_t> rows_of(const Data& d, std::span<const std::int64_t> patients) {
  std::vector<std::size_t> rows;
  for (std::int64_t p : patients) {
    const auto it = d.layout.find(p);
    if (it == d.layout.end()) continue;
    for (const auto& [slide, tiles] : it->second) rows.insert(rows.end(), tiles.begin(), tiles.end());
  }
  std::sort(rows.begin(), rows.end());
  return rows;
}

Matrix select_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols);
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(m.row(rows[i]).begin(), m.cols, out.row(i).begin());
  return out;
}

// Fitting rows and held-out rows must not share a tile.
void assert_disjoint(const Data& d, std::span<const std::size_t> fit_rows, std::span<const std::size_t> held_out,
                     const std::string& stage) {
  std::set<std::int64_t> ids;
  for (std::size_t r : fit_rows) ids.insert(d.cohort.tiles[r].tile_id);
  for (std::size_t r : held_out) {
    if (ids.count(d.cohort.tiles[r].tile_id)) {
      throw Error("leakage at " + stage + ": tile " + std::to_string(d.cohort.tiles[r].tile_id) +
                  " is in both the fitting and held-out sets");
    }
  }
}

std::vector<std::int64_t> concat(const std::vector<std::int64_t>& a, const std::vector<std::int64_t>& b) {
  std::vector<std::int64_t> out(a);
  out.insert(out.end(), b.begin(), b.end());
  std::sort(out.begin(), out.end());
  return out;
}

SurvivalRecord record_for(const Data& d, std::int64_t patient, std::vector<double> covariates) {
  const PatientOutcome& o = d.outcome.at(patient);
  return {patient, std::move(covariates), o.event, o.time};
}

// Mean over the patient's slides of the slide-level posterior means.
std::vector<double> patient_feature(const Data& d, const GmmModel& gmm, const Matrix& emb, std::int64_t patient) {
  std::vector<double> v(gmm.k(), 0.0);
  const auto& slides = d.layout.at(patient);
  for (const auto& [slide, tiles] : slides) {
    const SlideFeature f = pool_slide(gmm, slide, select_rows(emb, tiles));
    for (std::size_t z = 0; z < v.size(); ++z) v[z] += f.v[z];
  }
  for (double& x : v) x /= static_cast<double>(slides.size());
  return v;
}

double c_index_or_nan(std::span<const SurvivalRecord> records, std::span<const double> risks) {
  try {
    return c_index(records, risks);
  } catch (const InvalidArgument&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

struct FoldOutput {
  std::vector<MetricRow> metrics;
  std::vector<ProbeRow> probes;
  std::vector<SelectionRow> selections;
  std::vector<LossTrace> traces;
  std::vector<FoldError> errors;
  std::vector<std::pair<std::size_t, double>> hazard_ratios;
  std::vector<KmStratum> km_strata;
  std::vector<ProjectionPoint> projection;
};

template <typename Body>
void guarded(FoldOutput& out, const std::string& method, std::size_t fold, Body&& body) {
  std::string stage = "setup";
  try {
    body(stage);
  } catch (const std::exception& e) {
    log_warning(method + " fold " + std::to_string(fold) + " failed at " + stage + ": " + e.what());
    out.errors.push_back({method, fold, stage, e.what()});
  }
}

struct Scores {
  std::vector<SurvivalRecord> test;
  std::vector<double> risk;
  std::vector<double> survival;
};

MetricRow score(const std::string& method, std::size_t fold, const Scores& s, double horizon) {
  return {method, fold, c_index(s.test, s.risk), brier_score(s.test, s.survival, horizon)};
}

std::vector<KmStratum> km_strata(const Scores& s) {
  std::vector<std::size_t> order(s.test.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.risk[a] > s.risk[b]; });
  const std::size_t n_high = order.size() / 2;
  std::vector<SurvivalRecord> high, low;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_high ? high : low).push_back(s.test[order[i]]);
  std::vector<KmStratum> out;
  out.push_back({"high", high.size(), high.empty() ? KmCurve{} : km_fit(high)});
  out.push_back({"low", low.size(), low.empty() ? KmCurve{} : km_fit(low)});
  return out;
}

std::vector<ProjectionPoint> project(const Data& d, const Matrix& emb, const std::vector<std::int64_t>& patients) {
  std::vector<std::size_t> rows;
  std::size_t slides = 0;
  for (std::int64_t p : patients) {
    for (const auto& [slide, tiles] : d.layout.at(p)) {
      if (slides++ >= kProjectionSlides) break;
      rows.insert(rows.end(), tiles.begin(), tiles.end());
    }
    if (slides >= kProjectionSlides) break;
  }
  if (rows.size() < 3) return {};
  Eigen::MatrixXd x(rows.size(), emb.cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < emb.cols; ++j) x(i, j) = emb(rows[i], j);
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::MatrixXd cov = x.transpose() * x / static_cast<double>(rows.size() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::Index n = cov.rows();
  std::vector<ProjectionPoint> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ProjectionPoint pt;
    pt.slide_id = d.cohort.tiles[rows[i]].slide_id;
    pt.x = x.row(static_cast<Eigen::Index>(i)).dot(eig.eigenvectors().col(n - 1));
    pt.y = n > 1 ? x.row(static_cast<Eigen::Index>(i)).dot(eig.eigenvectors().col(n - 2)) : 0.0;
    out.push_back(pt);
  }
  return out;
}

struct CoxSelection {
  SelectionRow row;
  GmmModel gmm;
  CoxModel cox;
};

CoxSelection select_cox(const Data& d, const ExperimentConfig& config, const SplitPlan& plan, const Matrix& emb,
                        std::string& stage) {
  const auto train_rows = rows_of(d, plan.train);
  const auto held_rows = rows_of(d, concat(plan.validation, plan.test));
  stage = "gmm";
  assert_disjoint(d, train_rows, held_rows, stage);
  const Matrix train_emb = select_rows(emb, train_rows);

  CoxSelection best;
  bool have = false;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t k : config.k_grid) {
    stage = "gmm";
    GmmOptions opt;
    opt.k = k;
    opt.tolerance = config.gmm_tolerance;
    opt.max_iter = config.gmm_max_iter;
    opt.n_seedings = config.gmm_seedings;
    opt.seed = derive_seed(config.seed, {plan.fold, kGmmTag, k});
    GmmModel gmm;
    try {
      gmm = fit_gmm(train_emb, opt);
    } catch (const Error& e) {
      log_warning("GMM with k=" + std::to_string(k) + " skipped: " + e.what());
      continue;
    }
    stage = "cox";
    std::vector<SurvivalRecord> train, val;
    for (std::int64_t p : plan.train) train.push_back(record_for(d, p, patient_feature(d, gmm, emb, p)));
    for (std::int64_t p : plan.validation) val.push_back(record_for(d, p, patient_feature(d, gmm, emb, p)));
    for (double alpha : config.alpha_grid) {
      CoxModel cox;
      try {
        cox = config.cox_max_iter == 0 ? cox_null_model(train, k, alpha)
                                       : cox_fit(train, alpha, CoxOptions{config.cox_max_iter, 1e-8});
      } catch (const NumericalError& e) {
        log_warning("Cox fit with alpha=" + std::to_string(alpha) + " skipped: " + e.what());
        continue;
      }
      std::vector<double> risk;
      for (const SurvivalRecord& r : val) risk.push_back(cox_predict_risk(cox, r.covariates));
      const double score = val.empty() ? std::numeric_limits<double>::quiet_NaN() : c_index_or_nan(val, risk);
      // NaN never beats a number; the first fitted pair is kept when nothing scores.
      const bool better = !have || (std::isfinite(score) && (!std::isfinite(best_score) || score > best_score));
      if (better) {
        best = {{kSslCox, plan.fold, k, alpha, score}, gmm, std::move(cox)};
        best_score = std::isfinite(score) ? score : -std::numeric_limits<double>::infinity();
        have = true;
      }
    }
  }
  if (!have) throw NumericalError("no (k, alpha) combination could be fitted");
  return best;
}

void run_ssl_cox(const Data& d, const ExperimentConfig& config, const SplitPlan& plan, const Matrix& emb,
                 const std::string& method, FoldOutput& out) {
  guarded(out, method, plan.fold, [&](std::string& stage) {
    CoxSelection sel = select_cox(d, config, plan, emb, stage);
    stage = "evaluate";
    Scores s;
    for (std::int64_t p : plan.test) {
      s.test.push_back(record_for(d, p, patient_feature(d, sel.gmm, emb, p)));
      s.risk.push_back(cox_predict_risk(sel.cox, s.test.back().covariates));
      s.survival.push_back(cox_predict_survival(sel.cox, s.test.back().covariates, config.brier_horizon));
    }
    out.metrics.push_back(score(method, plan.fold, s, config.brier_horizon));
    sel.row.method = method;
    out.selections.push_back(sel.row);
    if (plan.fold == 0) {
      out.hazard_ratios = hazard_ratios(sel.cox);
      out.km_strata = km_strata(s);
    }
  });
}

int horizon_index(double horizon) { return static_cast<int>(std::floor(horizon)); }

void run_mil(const Data& d, const ExperimentConfig& config, const SplitPlan& plan, const Matrix& emb, HeadKind head,
             FoldOutput& out) {
  const std::string method = head == HeadKind::DeepSurv ? kMilDeepSurv : kMilNnSurv;
  guarded(out, method, plan.fold, [&](std::string& stage) {
    stage = "mil-fit";
    assert_disjoint(d, rows_of(d, plan.train), rows_of(d, plan.test), stage);
    auto bag = [&](std::int64_t p) { return select_rows(emb, rows_of(d, std::vector<std::int64_t>{p})); };
    std::vector<Matrix> bags;
    std::vector<SurvivalRecord> train;
    for (std::int64_t p : plan.train) {
      bags.push_back(bag(p));
      train.push_back(record_for(d, p, {}));
    }
    MilConfig mc{config.mil_net, config.mil_attention_dim};
    mc.net.seed = derive_seed(config.seed, {plan.fold, kNetTag, head == HeadKind::DeepSurv ? 1u : 2u});
    const MilModel model = mil_fit(bags, train, head, mc);
    out.traces.push_back({method, plan.fold, model.loss_trace});
    stage = "evaluate";
    Scores s;
    for (std::int64_t p : plan.test) {
      const Matrix b = bag(p);
      s.test.push_back(record_for(d, p, {}));
      s.risk.push_back(mil_risk(model, b));
      s.survival.push_back(mil_survival(model, b, horizon_index(config.brier_horizon)));
    }
    out.metrics.push_back(score(method, plan.fold, s, config.brier_horizon));
  });
}

// Tile-level heads on the input features; patient labels are broadcast to
// tiles and predictions averaged over the patient's tiles.
void run_e2e(const Data& d, const ExperimentConfig& config, const SplitPlan& plan, HeadKind head, FoldOutput& out) {
  const std::string method = head == HeadKind::DeepSurv ? kE2eDeepSurv : kE2eNnSurv;
  guarded(out, method, plan.fold, [&](std::string& stage) {
    stage = "e2e-fit";
    const auto train_rows = rows_of(d, plan.train);
    assert_disjoint(d, train_rows, rows_of(d, plan.test), stage);
    std::vector<SurvivalRecord> train;
    train.reserve(train_rows.size());
    for (std::size_t r : train_rows) {
      const TileRecord& t = d.cohort.tiles[r];
      const auto raw = d.raw.row(r);
      SurvivalRecord rec = record_for(d, t.patient_id, std::vector<double>(raw.begin(), raw.end()));
      rec.unit_id = t.tile_id;
      train.push_back(std::move(rec));
    }
    NetConfig net = config.e2e_net;
    net.seed = derive_seed(config.seed, {plan.fold, kNetTag, head == HeadKind::DeepSurv ? 3u : 4u});
    DeepSurvModel ds;
    DiscreteHazardModel nn;
    if (head == HeadKind::DeepSurv) {
      ds = deepsurv_fit(train, net);
      out.traces.push_back({method, plan.fold, ds.loss_trace});
    } else {
      nn = nnsurv_fit(train, unit_boundaries(train), net);
      out.traces.push_back({method, plan.fold, nn.loss_trace});
    }
    stage = "evaluate";
    Scores s;
    for (std::int64_t p : plan.test) {
      const auto rows = rows_of(d, std::vector<std::int64_t>{p});
      double risk = 0.0, surv = 0.0;
      for (std::size_t r : rows) {
        const auto x = d.raw.row(r);
        if (head == HeadKind::DeepSurv) {
          risk += deepsurv_score(ds, x);
          surv += deepsurv_survival(ds, x, config.brier_horizon);
        } else {
          risk += nnsurv_risk(nn, x);
          surv += nnsurv_survival(nn, x, horizon_index(config.brier_horizon));
        }
      }
      s.test.push_back(record_for(d, p, {}));
      s.risk.push_back(risk / static_cast<double>(rows.size()));
      s.survival.push_back(surv / static_cast<double>(rows.size()));
    }
    out.metrics.push_back(score(method, plan.fold, s, config.brier_horizon));
  });
}

void run_probe(const Data& d, const ExperimentConfig& config, const SplitPlan& plan, const Matrix& emb,
               const std::string& method, FoldOutput& out) {
  std::vector<std::size_t> rows;
  std::vector<std::int64_t> slide_ids;
  std::size_t slides = 0;
  for (std::int64_t p : plan.test) {
    for (const auto& [slide, tiles] : d.layout.at(p)) {
      if (slides >= config.probe_max_slides) break;
      ++slides;
      rows.insert(rows.end(), tiles.begin(), tiles.end());
      slide_ids.insert(slide_ids.end(), tiles.size(), slide);
    }
  }
  try {
    const ProbeResult r = slide_probe(select_rows(emb, rows), slide_ids, derive_seed(config.seed, {plan.fold, kProbeTag}));
    out.probes.push_back({method, plan.fold, r});
  } catch (const Error& e) {
    log_warning("slide probe skipped for fold " + std::to_string(plan.fold) + ": " + e.what());
  }
}

struct Methods {
  bool ssl_cox = true;
  bool mil = false;
  bool e2e = false;
};

FoldOutput run_fold(const Data& d, const ExperimentConfig& config, const SplitPlan& plan, const Methods& methods,
                    const std::string& suffix) {
  FoldOutput out;
  const std::string ssl_method = std::string(kSslCox) + suffix;
  Matrix emb;
  bool have_emb = false;
  {
    std::vector<std::string> dependents;
    if (methods.ssl_cox) dependents.push_back(ssl_method);
    if (methods.mil) {
      dependents.push_back(kMilDeepSurv);
      dependents.push_back(kMilNnSurv);
    }
    try {
      const auto fit_patients = concat(plan.train, plan.validation);
      const auto fit_rows = rows_of(d, fit_patients);
      assert_disjoint(d, fit_rows, rows_of(d, plan.test), "ssl-train");
      std::vector<TileRecord> tiles;
      tiles.reserve(fit_rows.size());
      for (std::size_t r : fit_rows) tiles.push_back(d.cohort.tiles[r]);
      TrainConfig tc = config.train;
      tc.seed = derive_seed(config.seed, {plan.fold, kTrainTag});
      const TrainResult trained = train(tiles, tc);
      out.traces.push_back({"ssl" + suffix, plan.fold, trained.loss_trace});
      emb = encode_all(trained.state.query, d.raw);
      have_emb = true;
    } catch (const std::exception& e) {
      log_warning("encoder training failed for fold " + std::to_string(plan.fold) + ": " + e.what());
      for (const std::string& m : dependents) out.errors.push_back({m, plan.fold, "ssl-train", e.what()});
    }
  }
  if (have_emb) {
    run_probe(d, config, plan, emb, ssl_method, out);
    if (plan.fold == 0) out.projection = project(d, emb, plan.test);
    if (methods.ssl_cox) run_ssl_cox(d, config, plan, emb, ssl_method, out);
    if (methods.mil) {
      run_mil(d, config, plan, emb, HeadKind::DeepSurv, out);
      run_mil(d, config, plan, emb, HeadKind::NnSurv, out);
    }
  }
  if (methods.e2e) {
    run_e2e(d, config, plan, HeadKind::DeepSurv, out);
    run_e2e(d, config, plan, HeadKind::NnSurv, out);
  }
  return out;
}

std::vector<FoldOutput> run_folds(const Data& d, const ExperimentConfig& config, const Methods& methods,
                                  const std::string& suffix) {
  std::vector<FoldOutput> outputs(d.plans.size());
  std::size_t workers = config.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : config.threads;
  workers = std::min(workers, d.plans.size());
  if (workers <= 1) {
    for (std::size_t f = 0; f < d.plans.size(); ++f) outputs[f] = run_fold(d, config, d.plans[f], methods, suffix);
    return outputs;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t f = next++; f < d.plans.size(); f = next++) {
        outputs[f] = run_fold(d, config, d.plans[f], methods, suffix);
      }
    });
  }
  pool.clear();
  return outputs;
}

void merge(ExperimentReport& report, std::vector<FoldOutput>&& outputs, bool take_extras) {
  for (FoldOutput& o : outputs) {
    std::move(o.metrics.begin(), o.metrics.end(), std::back_inserter(report.metrics));
    std::move(o.probes.begin(), o.probes.end(), std::back_inserter(report.probes));
    std::move(o.selections.begin(), o.selections.end(), std::back_inserter(report.selections));
    std::move(o.traces.begin(), o.traces.end(), std::back_inserter(report.loss_traces));
    std::move(o.errors.begin(), o.errors.end(), std::back_inserter(report.errors));
  }
  if (take_extras && !outputs.empty()) {
    report.hazard_ratios = std::move(outputs.front().hazard_ratios);
    report.km_strata = std::move(outputs.front().km_strata);
    report.projection = std::move(outputs.front().projection);
  }
}

void fill_provenance(ExperimentReport& report, const ExperimentConfig& config, std::size_t folds) {
  report.config_text = to_config_text(config);
  if (config.embeddings_csv) {
    report.inputs.push_back(config.embeddings_csv->string());
    report.inputs.push_back(config.outcomes_csv->string());
  } else {
    report.inputs.push_back("simulated cohort");
    report.seeds.push_back({"cohort.seed", config.cohort.seed});
  }
  report.seeds.push_back({"seed", config.seed});
  report.seeds.push_back({"split", derive_seed(config.seed, {kSplitTag})});
  for (std::size_t f = 0; f < folds; ++f) {
    report.seeds.push_back({"fold" + std::to_string(f) + ".train", derive_seed(config.seed, {f, kTrainTag})});
  }
}

ExperimentReport run_experiment(const ExperimentConfig& config, const Methods& methods, const std::string& kind) {
  config.validate();
  const Data d = prepare(config);
  ExperimentReport report;
  report.kind = kind;
  merge(report, run_folds(d, config, methods, ""), true);
  report.aggregates = aggregate(report.metrics);
  fill_provenance(report, config, d.plans.size());
  return report;
}

}  // namespace

Cohort load_or_generate(const ExperimentConfig& config) {
  Cohort cohort = config.embeddings_csv ? load_embeddings(*config.embeddings_csv, config.outcomes_csv)
                                        : generate_cohort(config.cohort);
  if (config.shuffle_outcomes) {
    std::vector<std::pair<bool, int>> labels;
    for (const PatientOutcome& o : cohort.outcomes) labels.push_back({o.event, o.time});
    Rng rng = make_rng(config.seed, {kShuffleTag});
    std::shuffle(labels.begin(), labels.end(), rng);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      cohort.outcomes[i].event = labels[i].first;
      cohort.outcomes[i].time = labels[i].second;
    }
  }
  return cohort;
}

std::vector<SplitPlan> make_splits(const Cohort& cohort, const ExperimentConfig& config) {
  std::vector<std::int64_t> ids;
  for (const PatientOutcome& o : cohort.outcomes) ids.push_back(o.patient_id);
  std::sort(ids.begin(), ids.end());
  return split_by_patient(ids, config.split_fractions, derive_seed(config.seed, {kSplitTag}), config.folds);
}

std::vector<AggregateRow> aggregate(const std::vector<MetricRow>& rows) {
  std::vector<AggregateRow> out;
  std::vector<std::string> order;
  for (const MetricRow& r : rows) {
    if (std::find(order.begin(), order.end(), r.method) == order.end()) order.push_back(r.method);
  }
  for (const std::string& method : order) {
    std::vector<double> c, b;
    for (const MetricRow& r : rows) {
      if (r.method == method) {
        c.push_back(r.c_index);
        b.push_back(r.brier);
      }
    }
    const double n = static_cast<double>(c.size());
    auto mean = [&](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / n; };
    auto sd = [&](const std::vector<double>& v, double m) {
      if (v.size() < 2) return std::numeric_limits<double>::quiet_NaN();
      double ss = 0.0;
      for (double x : v) ss += (x - m) * (x - m);
      return std::sqrt(ss / (n - 1.0));
    };
    AggregateRow a;
    a.method = method;
    a.n_folds = c.size();
    a.c_index_mean = mean(c);
    a.c_index_sd = sd(c, a.c_index_mean);
    a.c_index_ci95 = 1.96 * a.c_index_sd / std::sqrt(n);
    a.brier_mean = mean(b);
    a.brier_sd = sd(b, a.brier_mean);
    a.brier_ci95 = 1.96 * a.brier_sd / std::sqrt(n);
    out.push_back(a);
  }
  return out;
}

ExperimentReport run_pipeline(const ExperimentConfig& config) {
  return run_experiment(config, Methods{true, false, false}, "pipeline");
}

ExperimentReport run_baselines(const ExperimentConfig& config) {
  return run_experiment(config, Methods{true, true, true}, "baselines");
}

ExperimentReport run_ablation(const ExperimentConfig& config, const std::vector<std::string>& arms) {
  config.validate();
  if (arms.empty()) throw InvalidArgument("ablation needs at least one arm");
  std::vector<ExperimentConfig> arm_configs;
  for (const std::string& arm : arms) {
    ExperimentConfig c = config;
    const BatchSpec spec = BatchSpec::parse(arm, config.train.batch.batch_size);
    spec.validate();
    c.train.batch = spec;
    arm_configs.push_back(std::move(c));
  }
  const Data d = prepare(config);
  ExperimentReport report;
  report.kind = "ablation";
  // Plots and the hazard table follow the configured sampler when it is one of the arms.
  const std::string configured = config.train.batch.to_string();
  std::size_t extras_arm = 0;
  for (std::size_t a = 0; a < arms.size(); ++a) {
    if (arm_configs[a].train.batch.to_string() == configured) extras_arm = a;
  }
  for (std::size_t a = 0; a < arms.size(); ++a) {
    const BatchSpec& spec = arm_configs[a].train.batch;
    const std::string suffix =
        spec.mode == SamplerMode::Random ? "[random]" : "[n=" + std::to_string(spec.slides()) + "]";
    merge(report, run_folds(d, arm_configs[a], Methods{true, false, false}, suffix), a == extras_arm);
  }
  report.aggregates = aggregate(report.metrics);
  fill_provenance(report, config, d.plans.size());
  return report;
}

}  // namespace condssl
