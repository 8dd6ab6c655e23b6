#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "condssl/cohort.hpp"
#include "condssl/contrastive.hpp"
#include "condssl/survival.hpp"

namespace condssl {

// Everything one experiment needs. Parsed from a plain-text file of
// `key = value` lines; `#` starts a comment, lists are comma separated.
// See README.md for the full key list.
struct ExperimentConfig {
  CohortConfig cohort;
  // When set, tiles come from this embedding CSV instead of the simulator.
  std::optional<std::filesystem::path> embeddings_csv;
  std::optional<std::filesystem::path> outcomes_csv;

  TrainConfig train;

  std::vector<std::size_t> k_grid = {10, 50, 100};
  double gmm_tolerance = 1e-6;
  std::size_t gmm_max_iter = 100;
  std::size_t gmm_seedings = 4;

  std::vector<double> alpha_grid = {1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0};
  std::size_t cox_max_iter = 100;  // 0 disables fitting: beta = 0
  double brier_horizon = 4.0;      // 6-month units

  NetConfig e2e_net{{32}, 200, 0.01, 0.1, 3};
  NetConfig mil_net{{16}, 200, 0.01, 0.1, 5};
  std::size_t mil_attention_dim = 16;

  std::size_t folds = 5;
  std::array<double, 3> split_fractions = {0.7, 0.1, 0.2};
  std::uint64_t seed = 1;  // splits, training, clustering and network streams
  bool shuffle_outcomes = false;
  std::size_t probe_max_slides = 64;
  std::size_t threads = 1;  // fold-level workers; 0 uses every hardware thread

  std::filesystem::path output_dir = "out";

  // Throws InvalidArgument naming the offending field.
  void validate() const;
};

// Throws ParseError with the line number on unknown keys or malformed values.
// Relative data paths are resolved against `base_dir`.
ExperimentConfig parse_config(const std::string& text, const std::string& source_name,
                              const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

// Canonical text form: every key, fixed order, round-trip precision. Parsing it
// gives back an equal config; its SHA-256 identifies the experiment.
std::string to_config_text(const ExperimentConfig& config);

std::string sha256_hex(const std::string& data);

}  // namespace condssl
