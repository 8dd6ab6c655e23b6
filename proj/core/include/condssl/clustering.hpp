#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "condssl/linalg.hpp"

namespace condssl {

// Gaussian mixture with diagonal covariances.
struct GmmModel {
  std::vector<double> weights;  // k, on the simplex
  Matrix means;                 // k x dim
  Matrix variances;             // k x dim, every entry >= the variance floor
  std::vector<double> log_likelihood_trace;  // total log-likelihood before each M-step
  std::size_t iterations = 0;

  std::size_t k() const { return weights.size(); }
  std::size_t dim() const { return means.cols; }
};

struct GmmOptions {
  std::size_t k = 50;
  double tolerance = 1e-6;  // stop when relative log-likelihood gain falls below this; 0 disables
  std::size_t max_iter = 100;
  double variance_floor = 1e-6;
  std::size_t n_seedings = 4;  // independent k-means++ seedings; the lowest potential wins
  std::uint64_t seed = 0;
};

// EM from the best of n_seedings greedy k-means++ seedings, after one
// hard-assignment M-step.
GmmModel fit_gmm(const Matrix& embeddings, const GmmOptions& options);

// p(z | x) for every component, computed in the log domain.
std::vector<double> posterior(const GmmModel& model, std::span<const double> embedding);

// Per-component log(pi_z) + log N(x | mu_z, sigma_z^2).
std::vector<double> component_log_densities(const GmmModel& model, std::span<const double> embedding);

// Normalizes log-weights into probabilities with max subtraction.
std::vector<double> softmax_from_logs(std::span<const double> logs);

// Total log-likelihood of the rows under the mixture.
double gmm_log_likelihood(const GmmModel& model, const Matrix& embeddings);

// Average of the per-tile posteriors of one slide.
struct SlideFeature {
  std::int64_t slide_id = 0;
  std::vector<double> v;
};

SlideFeature pool_slide(const GmmModel& model, std::int64_t slide_id, const Matrix& slide_tiles);

// Mean of already computed posterior rows (rows of `posteriors`).
std::vector<double> mean_rows(const Matrix& posteriors);

// argmax_z p(z | x) for each row.
std::vector<int> hard_assignments(const GmmModel& model, const Matrix& embeddings);

double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

// Text layout: "condssl-gmm 1", "k <k> dim <d>", then per component
// "component <z>", "weight <w>", "mean <d values>", "variance <d values>".
void save_gmm(const GmmModel& model, const std::filesystem::path& path);
GmmModel load_gmm(const std::filesystem::path& path);

}  // namespace condssl
