#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "condssl/config.hpp"
#include "condssl/contrastive.hpp"
#include "condssl/survival.hpp"

namespace condssl {

inline constexpr const char* kSslCox = "SSL-Cox";
inline constexpr const char* kMilDeepSurv = "MIL-DeepSurv";
inline constexpr const char* kMilNnSurv = "MIL-NNSurv";
inline constexpr const char* kE2eDeepSurv = "E2E-DeepSurv";
inline constexpr const char* kE2eNnSurv = "E2E-NNSurv";

struct MetricRow {
  std::string method;
  std::size_t fold = 0;
  double c_index = 0.0;
  double brier = 0.0;  // at the configured horizon
};

// Mean and 0.95 interval half-width 1.96 * sd / sqrt(n) over successful folds.
struct AggregateRow {
  std::string method;
  std::size_t n_folds = 0;
  double c_index_mean = 0.0;
  double c_index_sd = 0.0;
  double c_index_ci95 = 0.0;
  double brier_mean = 0.0;
  double brier_sd = 0.0;
  double brier_ci95 = 0.0;
};

struct ProbeRow {
  std::string method;
  std::size_t fold = 0;
  ProbeResult result;
};

struct SelectionRow {
  std::string method;
  std::size_t fold = 0;
  std::size_t k = 0;
  double alpha = 0.0;
  double validation_c_index = 0.0;
};

struct LossTrace {
  std::string name;
  std::size_t fold = 0;
  std::vector<double> values;
};

struct FoldError {
  std::string method;
  std::size_t fold = 0;
  std::string stage;
  std::string message;
};

struct KmStratum {
  std::string label;  // "high" or "low"
  std::size_t n = 0;
  KmCurve curve;
};

// Two leading principal components of test-tile embeddings, by slide.
struct ProjectionPoint {
  std::int64_t slide_id = 0;
  double x = 0.0;
  double y = 0.0;
};

struct ExperimentReport {
  std::string kind;  // pipeline, ablation or baselines
  std::vector<MetricRow> metrics;
  std::vector<AggregateRow> aggregates;
  std::vector<std::pair<std::size_t, double>> hazard_ratios;  // fold 0 SSL-Cox, largest first
  std::vector<KmStratum> km_strata;                           // fold 0 SSL-Cox test patients
  std::vector<ProbeRow> probes;
  std::vector<SelectionRow> selections;
  std::vector<LossTrace> loss_traces;
  std::vector<ProjectionPoint> projection;
  std::vector<FoldError> errors;

  // Provenance for the manifest.
  std::string config_text;
  std::vector<std::string> inputs;
  std::vector<std::pair<std::string, std::uint64_t>> seeds;
};

// Per-method aggregate rows in order of first appearance.
std::vector<AggregateRow> aggregate(const std::vector<MetricRow>& rows);

// Nested cross-validation of the SSL -> GMM -> Cox method. Per fold: the encoder
// trains on train + validation tiles, each GMM and Cox model sees only the train
// patients, validation C-index selects (k, alpha), the test patients are scored once.
ExperimentReport run_pipeline(const ExperimentConfig& config);

// One pipeline per sampler arm with shared folds and seeds. Arms are "cond:N" or "random".
ExperimentReport run_ablation(const ExperimentConfig& config,
                              const std::vector<std::string>& arms = {"cond:1", "cond:4", "cond:16", "cond:32",
                                                                      "random"});

// SSL-Cox next to the MIL and end-to-end heads, same folds.
ExperimentReport run_baselines(const ExperimentConfig& config);

// Writes CSVs, SVG plots, report.json and manifest.json under `dir`. Every file is
// written to a temporary name and renamed into place.
void emit_report(const ExperimentReport& report, const std::filesystem::path& dir);

// Shared by the CLI's single-stage commands.
Cohort load_or_generate(const ExperimentConfig& config);
std::vector<SplitPlan> make_splits(const Cohort& cohort, const ExperimentConfig& config);

}  // namespace condssl
