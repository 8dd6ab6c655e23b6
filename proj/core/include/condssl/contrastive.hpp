#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "condssl/cohort.hpp"
#include "condssl/linalg.hpp"
#include "condssl/mlp.hpp"
#include "condssl/rng.hpp"
#include "condssl/sampling.hpp"

namespace condssl {

// Feature-space augmentation applied independently to each view of a tile:
// coordinate dropout, a global scale factor drawn from U(1 - jitter, 1 + jitter),
// then additive Gaussian noise.
struct AugmentConfig {
  double noise_scale = 0.05;
  double dropout_prob = 0.1;
  double scale_jitter = 0.1;

  void validate() const;
};

std::vector<double> augment(std::span<const double> features, const AugmentConfig& config, Rng& rng);

// Fixed-capacity FIFO of unit-norm key embeddings. Index 0 is the oldest entry.
class NegativeQueue {
 public:
  NegativeQueue() = default;
  NegativeQueue(std::size_t capacity, std::size_t dim);

  void push(std::span<const double> key);
  std::size_t size() const { return count_; }
  std::size_t capacity() const { return storage_.rows; }
  std::size_t dim() const { return storage_.cols; }
  std::span<const double> at(std::size_t i) const;
  // Entries oldest to newest.
  Matrix contents() const;

  friend bool operator==(const NegativeQueue& a, const NegativeQueue& b) {
    return a.contents() == b.contents() && a.capacity() == b.capacity();
  }

 private:
  Matrix storage_;
  std::size_t head_ = 0;  // next write slot
  std::size_t count_ = 0;
};

struct EncoderState {
  Mlp query;  // trained by gradient descent
  Mlp key;    // exponential moving average of query
  NegativeQueue queue;
  double temperature = 0.07;
  double momentum = 0.999;
  std::size_t epoch = 0;

  // Query weights drawn from rng, key weights copied from them, empty queue.
  static EncoderState create(std::size_t input_dim, std::size_t hidden_dim, std::size_t embedding_dim,
                             std::size_t queue_size, double temperature, double momentum, Rng& rng);
};

// Forward map of the encoder followed by L2 normalization.
std::vector<double> encode(const Mlp& weights, std::span<const double> features);
Matrix encode_all(const Mlp& weights, const Matrix& features);

// -log softmax of the positive logit among {q.k+, q.k-_1, ...} / tau.
double info_nce_loss(std::span<const double> q, std::span<const double> k_pos, const Matrix& negatives,
                     double temperature);

// Two augmented views per tile; row i of each matrix belongs to the same tile.
struct BatchViews {
  Matrix query_views;
  Matrix key_views;
};

struct LossGradient {
  double loss = 0.0;                // mean InfoNCE over the batch queries
  std::vector<double> gradient;     // d loss / d query parameters
  Matrix keys;                      // key embeddings, to be enqueued after the step
};

// Negatives for query i are the other batch keys plus every queued key. Keys and
// queue entries are constants: no gradient flows into the key encoder.
LossGradient loss_and_gradient(const EncoderState& state, const BatchViews& views);

// key <- mu * key + (1 - mu) * query, elementwise.
void momentum_update(std::span<double> key_params, std::span<const double> query_params, double mu);

enum class LrSchedule { Constant, Cosine };

struct TrainConfig {
  std::size_t epochs = 50;
  double learning_rate = 0.05;
  LrSchedule schedule = LrSchedule::Cosine;
  BatchSpec batch;
  std::size_t queue_size = 1024;
  std::size_t hidden_dim = 64;
  std::size_t embedding_dim = 128;
  double temperature = 0.07;
  double momentum = 0.999;
  AugmentConfig augment;
  std::uint64_t seed = 7;

  void validate() const;
};

struct TrainResult {
  EncoderState state;
  std::vector<double> loss_trace;  // mean loss per epoch
  std::size_t steps = 0;
};

// MoCo-style training with plain SGD. epochs == 0 returns the initialized state.
// Throws NumericalError on a non-finite loss or when the epoch loss stays above
// ten times the first epoch's loss for three consecutive epochs.
TrainResult train(std::span<const TileRecord> tiles, const TrainConfig& config);

// Decimal text checkpoint; doubles are written with 17 significant digits.
void save_checkpoint(const EncoderState& state, const std::filesystem::path& path);
EncoderState load_checkpoint(const std::filesystem::path& path);

struct ProbeResult {
  double accuracy = 0.0;
  double chance = 0.0;
  std::size_t n_slides = 0;
  std::size_t n_test = 0;
};

// Multinomial logistic regression predicting slide identity from frozen embeddings.
// Each slide's tiles are split 50/50 into train and held-out halves; accuracy is on
// the held-out half. Slides with a single tile are dropped with a warning.
ProbeResult slide_probe(const Matrix& embeddings, std::span<const std::int64_t> slide_ids,
                        std::uint64_t seed);

}  // namespace condssl
