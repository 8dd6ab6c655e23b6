// Command-line front end: one subcommand per pipeline stage plus the full
// evaluation, ablation and comparison runs.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "condssl/clustering.hpp"
#include "condssl/cohort.hpp"
#include "condssl/config.hpp"
#include "condssl/contrastive.hpp"
#include "condssl/error.hpp"
#include "condssl/pipeline.hpp"
#include "condssl/survival.hpp"

namespace fs = std::filesystem;
using namespace condssl;

namespace {

void report_error(const char* kind, const std::string& message) {
  nlohmann::json j{{"error", kind}, {"message", message}};
  std::cerr << j.dump() << "\n";
}

// Failed folds are reported one JSON line each; the run still emits its report.
int fold_status(const ExperimentReport& r) {
  for (const FoldError& e : r.errors) {
    nlohmann::json j{{"error", "fold_failed"}, {"method", e.method}, {"fold", e.fold}, {"stage", e.stage},
                     {"message", e.message}};
    std::cerr << j.dump() << "\n";
  }
  return r.errors.empty() ? 0 : 3;
}

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> cohort_seed;
  std::optional<std::string> out;
  std::optional<std::string> sampler;
  std::optional<std::size_t> folds;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "experiment config file (key = value lines)");
  cmd->add_option("--seed", o.seed, "experiment seed: splits, training, clustering, networks");
  cmd->add_option("--cohort-seed", o.cohort_seed, "simulator seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--sampler", o.sampler, "batch sampler: random or cond:N");
  cmd->add_option("--folds", o.folds, "number of outer folds");
}

ExperimentConfig resolve(const CommonOptions& o) {
  ExperimentConfig c = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.cohort_seed) c.cohort.seed = *o.cohort_seed;
  if (o.out) c.output_dir = *o.out;
  if (o.folds) c.folds = *o.folds;
  if (o.sampler) c.train.batch = BatchSpec::parse(*o.sampler, c.train.batch.batch_size);
  c.validate();
  std::error_code ec;
  fs::create_directories(c.output_dir, ec);
  if (ec) throw IoError("cannot create output directory " + c.output_dir.string() + ": " + ec.message());
  return c;
}

void write_text(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << content;
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_manifest(const ExperimentConfig& c, const std::vector<std::string>& inputs,
                    const std::vector<std::string>& files) {
  const std::string text = to_config_text(c);
  nlohmann::json m;
  m["inputs"] = inputs;
  m["config_sha256"] = sha256_hex(text);
  m["seeds"] = {{"seed", c.seed}, {"cohort.seed", c.cohort.seed}};
  m["files"] = files;
  write_text(c.output_dir / "config.txt", text);
  write_text(c.output_dir / "manifest.json", m.dump(2) + "\n");
}

std::vector<std::string> data_inputs(const ExperimentConfig& c) {
  if (c.embeddings_csv) return {c.embeddings_csv->string(), c.outcomes_csv->string()};
  return {"simulated cohort"};
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int cmd_generate(const CommonOptions& o) {
  ExperimentConfig c = resolve(o);
  const Cohort cohort = load_or_generate(c);
  save_embeddings(cohort, c.output_dir / "tiles.csv");
  save_outcomes(cohort.outcomes, c.output_dir / "outcomes.csv");
  write_manifest(c, data_inputs(c), {"tiles.csv", "outcomes.csv"});
  std::cout << "wrote " << cohort.tiles.size() << " tiles, " << cohort.outcomes.size() << " patients to "
            << c.output_dir.string() << "\n";
  return 0;
}

int cmd_train(const CommonOptions& o) {
  ExperimentConfig c = resolve(o);
  const Cohort cohort = load_or_generate(c);
  TrainConfig tc = c.train;
  tc.seed = c.seed;
  const TrainResult r = train(cohort.tiles, tc);
  save_checkpoint(r.state, c.output_dir / "encoder.ckpt");
  Cohort embedded = cohort;
  const Matrix emb = encode_all(r.state.query, feature_matrix(cohort.tiles));
  for (std::size_t i = 0; i < embedded.tiles.size(); ++i) {
    const auto row = emb.row(i);
    embedded.tiles[i].features.assign(row.begin(), row.end());
  }
  save_embeddings(embedded, c.output_dir / "embeddings.csv");
  std::string trace = "epoch,loss\n";
  for (std::size_t e = 0; e < r.loss_trace.size(); ++e) trace += std::to_string(e + 1) + "," + fmt(r.loss_trace[e]) + "\n";
  write_text(c.output_dir / "loss_ssl.csv", trace);
  write_manifest(c, data_inputs(c), {"encoder.ckpt", "embeddings.csv", "loss_ssl.csv"});
  std::cout << "trained " << r.steps << " steps over " << r.loss_trace.size() << " epochs\n";
  return 0;
}

int cmd_cluster(const CommonOptions& o, const std::string& embeddings, std::optional<std::size_t> k) {
  ExperimentConfig c = resolve(o);
  const Cohort cohort = load_embeddings(embeddings);
  const Matrix emb = feature_matrix(cohort.tiles);
  GmmOptions opt;
  opt.k = k.value_or(c.k_grid.front());
  opt.tolerance = c.gmm_tolerance;
  opt.max_iter = c.gmm_max_iter;
  opt.n_seedings = c.gmm_seedings;
  opt.seed = c.seed;
  const GmmModel gmm = fit_gmm(emb, opt);
  save_gmm(gmm, c.output_dir / "gmm.txt");

  std::map<std::int64_t, std::pair<std::int64_t, std::vector<std::size_t>>> slides;
  for (std::size_t i = 0; i < cohort.tiles.size(); ++i) {
    auto& entry = slides[cohort.tiles[i].slide_id];
    entry.first = cohort.tiles[i].patient_id;
    entry.second.push_back(i);
  }
  std::string csv = "slide_id";
  for (std::size_t z = 0; z < gmm.k(); ++z) csv += ",v" + std::to_string(z);
  csv += "\n";
  std::string owners = "slide_id,patient_id\n";
  for (const auto& [slide, entry] : slides) {
    Matrix rows(entry.second.size(), emb.cols);
    for (std::size_t i = 0; i < entry.second.size(); ++i) {
      const auto src = emb.row(entry.second[i]);
      std::copy(src.begin(), src.end(), rows.row(i).begin());
    }
    const SlideFeature f = pool_slide(gmm, slide, rows);
    csv += std::to_string(slide);
    for (double v : f.v) csv += "," + fmt(v);
    csv += "\n";
    owners += std::to_string(slide) + "," + std::to_string(entry.first) + "\n";
  }
  write_text(c.output_dir / "slide_patients.csv", owners);
  write_text(c.output_dir / "slide_features.csv", csv);
  write_manifest(c, {embeddings}, {"gmm.txt", "slide_features.csv", "slide_patients.csv"});
  std::cout << "fitted k=" << gmm.k() << " in " << gmm.iterations << " EM iterations\n";
  return 0;
}

std::vector<std::vector<std::string>> read_csv(const std::string& path, const std::string& header_prefix) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind(header_prefix, 0) != 0) {
    throw ParseError(path, 1, "expected header starting with " + header_prefix);
  }
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    rows.emplace_back();
    while (std::getline(ss, field, ',')) rows.back().push_back(field);
  }
  return rows;
}

// slide_id,v0,... plus slide_id,patient_id -> per-patient mean over slides.
std::map<std::int64_t, std::vector<double>> patient_features(const std::string& features_path,
                                                             const std::string& slides_path) {
  std::map<std::int64_t, std::int64_t> owner;
  std::size_t line_no = 1;
  for (const auto& row : read_csv(slides_path, "slide_id,patient_id")) {
    ++line_no;
    try {
      if (row.size() != 2) throw std::invalid_argument("field count");
      owner[std::stoll(row[0])] = std::stoll(row[1]);
    } catch (const std::logic_error&) {
      throw ParseError(slides_path, line_no, "expected slide_id,patient_id");
    }
  }
  std::map<std::int64_t, std::pair<std::vector<double>, std::size_t>> acc;
  line_no = 1;
  for (const auto& row : read_csv(features_path, "slide_id,v0")) {
    ++line_no;
    std::vector<double> v;
    std::int64_t slide = 0;
    try {
      slide = std::stoll(row.at(0));
      for (std::size_t i = 1; i < row.size(); ++i) v.push_back(std::stod(row[i]));
    } catch (const std::logic_error&) {
      throw ParseError(features_path, line_no, "malformed number");
    }
    const auto it = owner.find(slide);
    if (it == owner.end()) throw ParseError(features_path, line_no, "slide " + std::to_string(slide) + " has no patient");
    auto& [sum, count] = acc[it->second];
    if (sum.empty()) sum.assign(v.size(), 0.0);
    if (sum.size() != v.size()) throw ParseError(features_path, line_no, "inconsistent feature count");
    for (std::size_t i = 0; i < v.size(); ++i) sum[i] += v[i];
    ++count;
  }
  std::map<std::int64_t, std::vector<double>> out;
  for (auto& [patient, entry] : acc) {
    for (double& x : entry.first) x /= static_cast<double>(entry.second);
    out[patient] = std::move(entry.first);
  }
  return out;
}

int cmd_fit(const CommonOptions& o, const std::string& features, std::string slides, const std::string& outcomes,
            std::optional<double> alpha) {
  ExperimentConfig c = resolve(o);
  if (slides.empty()) slides = (fs::path(features).parent_path() / "slide_patients.csv").string();
  const auto feats = patient_features(features, slides);
  std::ifstream in(outcomes);
  if (!in) throw IoError("cannot open " + outcomes);
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || line != "patient_id,event,time_6mo") {
    throw ParseError(outcomes, 1, "expected header patient_id,event,time_6mo");
  }
  std::vector<SurvivalRecord> records;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    long long patient = 0;
    int event = 0, time = 0;
    char tail = 0;
    if (std::sscanf(line.c_str(), "%lld,%d,%d%c", &patient, &event, &time, &tail) != 3 || (event != 0 && event != 1) ||
        time < 0) {
      throw ParseError(outcomes, line_no, "expected patient_id,event(0/1),time_6mo(>=0)");
    }
    const auto it = feats.find(patient);
    if (it == feats.end()) continue;
    records.push_back({patient, it->second, event == 1, time});
  }
  if (records.empty()) throw InvalidArgument("no patient has both features and an outcome");
  const CoxModel model = cox_fit(records, alpha.value_or(c.alpha_grid.front()), CoxOptions{c.cox_max_iter, 1e-8});
  save_cox(model, c.output_dir / "cox.txt");
  std::string csv = "cluster,exp_beta\n";
  for (const auto& [cluster, hr] : hazard_ratios(model)) csv += std::to_string(cluster) + "," + fmt(hr) + "\n";
  write_text(c.output_dir / "hazard_ratios.csv", csv);
  write_manifest(c, {features, slides, outcomes}, {"cox.txt", "hazard_ratios.csv"});
  std::cout << "Cox fit on " << records.size() << " patients, " << model.report.iterations << " Newton steps\n";
  return 0;
}

int cmd_evaluate(const CommonOptions& o, bool baselines) {
  const ExperimentConfig c = resolve(o);
  const ExperimentReport r = baselines ? run_baselines(c) : run_pipeline(c);
  emit_report(r, c.output_dir);
  for (const AggregateRow& a : r.aggregates) {
    std::printf("%-14s folds=%zu c_index=%.4f +/- %.4f brier_2y=%.4f +/- %.4f\n", a.method.c_str(), a.n_folds,
                a.c_index_mean, a.c_index_ci95, a.brier_mean, a.brier_ci95);
  }
  return fold_status(r);
}

int cmd_ablate(const CommonOptions& o, const std::vector<std::string>& arms) {
  const ExperimentConfig c = resolve(o);
  const ExperimentReport r = arms.empty() ? run_ablation(c) : run_ablation(c, arms);
  emit_report(r, c.output_dir);
  for (const AggregateRow& a : r.aggregates) {
    std::printf("%-18s folds=%zu c_index=%.4f +/- %.4f brier_2y=%.4f +/- %.4f\n", a.method.c_str(), a.n_folds,
                a.c_index_mean, a.c_index_ci95, a.brier_mean, a.brier_ci95);
  }
  return fold_status(r);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional contrastive representation learning and survival analysis on tile embeddings"};
  app.require_subcommand(1);

  CommonOptions gen_o, train_o, cluster_o, fit_o, eval_o, ablate_o, report_o;
  auto* gen = app.add_subcommand("generate", "simulate a cohort and write tiles.csv / outcomes.csv");
  add_common(gen, gen_o);
  auto* trn = app.add_subcommand("train", "train the contrastive encoder on all tiles");
  add_common(trn, train_o);
  auto* clu = app.add_subcommand("cluster", "fit a GMM to tile embeddings and pool slide features");
  add_common(clu, cluster_o);
  std::string cluster_input;
  std::optional<std::size_t> cluster_k;
  clu->add_option("--embeddings", cluster_input, "embedding CSV")->required();
  clu->add_option("--k", cluster_k, "number of components (default: first cluster.k value)");
  auto* fit = app.add_subcommand("fit", "fit a penalized Cox model on slide features");
  add_common(fit, fit_o);
  std::string fit_features, fit_slides, fit_outcomes;
  std::optional<double> fit_alpha;
  fit->add_option("--features", fit_features, "slide_features.csv from cluster")->required();
  fit->add_option("--slides", fit_slides, "slide_id,patient_id map (default: slide_patients.csv next to --features)");
  fit->add_option("--outcomes", fit_outcomes, "outcomes CSV")->required();
  fit->add_option("--alpha", fit_alpha, "L2 weight (default: first survival.alpha value)");
  auto* eval = app.add_subcommand("evaluate", "nested cross-validation of SSL -> GMM -> Cox");
  add_common(eval, eval_o);
  auto* abl = app.add_subcommand("ablate", "sampler ablation over slides-per-batch arms");
  add_common(abl, ablate_o);
  std::vector<std::string> arms;
  abl->add_option("--arms", arms, "arms, e.g. cond:1 cond:4 random (default: 1, 4, 16, 32, random)");
  auto* rep = app.add_subcommand("report", "full method comparison: SSL-Cox, MIL and end-to-end heads");
  add_common(rep, report_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) return cmd_generate(gen_o);
    if (*trn) return cmd_train(train_o);
    if (*clu) return cmd_cluster(cluster_o, cluster_input, cluster_k);
    if (*fit) return cmd_fit(fit_o, fit_features, fit_slides, fit_outcomes, fit_alpha);
    if (*eval) return cmd_evaluate(eval_o, false);
    if (*abl) return cmd_ablate(ablate_o, arms);
    if (*rep) return cmd_evaluate(report_o, true);
  } catch (const ParseError& e) {
    report_error("parse_error", e.what());
    return 2;
  } catch (const InvalidArgument& e) {
    report_error("invalid_argument", e.what());
    return 2;
  } catch (const SamplingError& e) {
    report_error("sampling_error", e.what());
    return 3;
  } catch (const NumericalError& e) {
    report_error("numerical_error", e.what());
    return 3;
  } catch (const IoError& e) {
    report_error("io_error", e.what());
    return 4;
  } catch (const std::exception& e) {
    report_error("error", e.what());
    return 1;
  }
  return 0;
}
