#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "condssl/linalg.hpp"

namespace condssl {

// One tile: the atomic unit of self-supervised training.
struct TileRecord {
  std::int64_t tile_id = 0;
  std::int64_t slide_id = 0;
  std::int64_t patient_id = 0;
  std::vector<double> features;
  std::optional<int> true_cluster;  // simulator ground truth only

  friend bool operator==(const TileRecord&, const TileRecord&) = default;
};

// Recurrence outcome; time is in 6-month units (censored: follow-up length).
struct PatientOutcome {
  std::int64_t patient_id = 0;
  bool event = false;
  int time = 0;

  friend bool operator==(const PatientOutcome&, const PatientOutcome&) = default;
};

struct Cohort {
  std::vector<TileRecord> tiles;
  std::vector<PatientOutcome> outcomes;

  // Simulator-only: each patient's latent cluster proportions, indexed like outcomes.
  std::vector<std::vector<double>> true_proportions;

  std::size_t feature_dim() const { return tiles.empty() ? 0 : tiles.front().features.size(); }
};

struct CohortConfig {
  std::size_t n_patients = 300;
  std::size_t slides_per_patient = 1;
  std::size_t tiles_per_slide = 32;
  std::size_t feature_dim = 16;
  std::size_t n_true_clusters = 6;
  // Distance between any two cluster means (means sit on scaled coordinate axes).
  double cluster_separation = 1.0;
  // Per-coordinate standard deviation of the slide offset.
  double batch_effect_scale = 2.0;
  // Number of trailing coordinates the slide offset lives in; 0 means all coordinates.
  std::size_t batch_effect_dims = 10;
  double noise_scale = 0.125;
  std::vector<double> true_hazard_coefficients = {2.0, 1.0, 0.0, 0.0, -1.0, -2.0};
  // Event rate per 6-month unit for a patient with zero log-hazard.
  double baseline_rate = 0.25;
  double censoring_rate = 0.3;
  std::uint64_t seed = 1;

  // Throws InvalidArgument on a config that cannot be simulated.
  void validate() const;
};

// Draws a cohort from the latent-cluster model:
//   tile features = cluster mean + slide offset + isotropic noise,
//   event time ~ Exponential(baseline_rate * exp(beta . patient proportions)),
//   censoring ~ Uniform(0, T_max) with T_max set to hit censoring_rate in expectation.
// Features are rounded to single precision so the CSV encoding round-trips exactly.
Cohort generate_cohort(const CohortConfig& config);

// Reads the embedding CSV (tile_id,slide_id,patient_id,f0..) and, when given,
// the outcomes CSV (patient_id,event,time_6mo).
Cohort load_embeddings(const std::filesystem::path& tiles_csv,
                       const std::optional<std::filesystem::path>& outcomes_csv = std::nullopt);

void save_embeddings(const Cohort& cohort, const std::filesystem::path& tiles_csv);
void save_outcomes(std::span<const PatientOutcome> outcomes, const std::filesystem::path& outcomes_csv);

struct SplitPlan {
  std::size_t fold = 0;
  std::vector<std::int64_t> train;
  std::vector<std::int64_t> validation;
  std::vector<std::int64_t> test;
};

// Random patient-level partitions, one per fold, each drawn from its own seeded stream.
// Set sizes are round(f_train * n), round(f_val * n) and the remainder.
std::vector<SplitPlan> split_by_patient(std::span<const std::int64_t> patient_ids,
                                        std::array<double, 3> fractions, std::uint64_t seed,
                                        std::size_t n_folds);

// Rows of `tiles` as a matrix (tile order preserved).
Matrix feature_matrix(std::span<const TileRecord> tiles);

// Tiles whose patient is in `patients`.
std::vector<TileRecord> tiles_of_patients(std::span<const TileRecord> tiles,
                                          std::span<const std::int64_t> patients);

}  // namespace condssl
