#include "condssl/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "condssl/error.hpp"
#include "condssl/log.hpp"

namespace condssl {

void AugmentConfig::validate() const {
  if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale)) {
    throw InvalidArgument("augmentation noise scale must be finite and >= 0");
  }
  if (!(dropout_prob >= 0.0 && dropout_prob < 1.0)) {
    throw InvalidArgument("augmentation dropout probability must lie in [0, 1)");
  }
  if (!(scale_jitter >= 0.0 && scale_jitter < 1.0)) {
    throw InvalidArgument("augmentation scale jitter must lie in [0, 1)");
  }
}

std::vector<double> augment(std::span<const double> features, const AugmentConfig& config, Rng& rng) {
  std::vector<double> out(features.begin(), features.end());
  if (config.dropout_prob > 0.0) {
    std::bernoulli_distribution drop(config.dropout_prob);
    for (double& v : out) {
      if (drop(rng)) v = 0.0;
    }
  }
  if (config.scale_jitter > 0.0) {
    std::uniform_real_distribution<double> scale(1.0 - config.scale_jitter, 1.0 + config.scale_jitter);
    const double s = scale(rng);
    for (double& v : out) v *= s;
  }
  if (config.noise_scale > 0.0) {
    std::normal_distribution<double> noise(0.0, config.noise_scale);
    for (double& v : out) v += noise(rng);
  }
  return out;
}

NegativeQueue::NegativeQueue(std::size_t capacity, std::size_t dim) : storage_(capacity, dim) {}

void NegativeQueue::push(std::span<const double> key) {
  if (capacity() == 0) return;
  if (key.size() != dim()) throw InvalidArgument("queue key has wrong dimension");
  std::copy(key.begin(), key.end(), storage_.row(head_).begin());
  head_ = (head_ + 1) % capacity();
  count_ = std::min(count_ + 1, capacity());
}

std::span<const double> NegativeQueue::at(std::size_t i) const {
  const std::size_t oldest = (head_ + capacity() - count_) % capacity();
  return storage_.row((oldest + i) % capacity());
}

Matrix NegativeQueue::contents() const {
  Matrix out(count_, dim());
  for (std::size_t i = 0; i < count_; ++i) {
    const auto r = at(i);
    std::copy(r.begin(), r.end(), out.row(i).begin());
  }
  return out;
}

EncoderState EncoderState::create(std::size_t input_dim, std::size_t hidden_dim,
                                  std::size_t embedding_dim, std::size_t queue_size, double temperature,
                                  double momentum, Rng& rng) {
  if (!(temperature > 0.0)) throw InvalidArgument("temperature must be positive");
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw InvalidArgument("momentum must lie in [0, 1]");
  EncoderState state;
  state.query = Mlp({input_dim, hidden_dim, embedding_dim});
  state.query.init_random(rng);
  state.key = state.query;
  state.queue = NegativeQueue(queue_size, embedding_dim);
  state.temperature = temperature;
  state.momentum = momentum;
  return state;
}

namespace {

void normalize_in_place(std::span<double> z) {
  const double r = norm2(z);
  if (!(r > 0.0) || !std::isfinite(r)) throw NumericalError("encoder output has zero or non-finite norm");
  for (double& v : z) v /= r;
}

}  // namespace

std::vector<double> encode(const Mlp& weights, std::span<const double> features) {
  if (features.size() != weights.input_dim()) {
    throw InvalidArgument("feature dimension " + std::to_string(features.size()) +
                          " does not match encoder input " + std::to_string(weights.input_dim()));
  }
  std::vector<double> z = weights.forward(features);
  normalize_in_place(z);
  return z;
}

Matrix encode_all(const Mlp& weights, const Matrix& features) {
  Matrix out(features.rows, weights.output_dim());
  Mlp::Workspace ws;
  for (std::size_t i = 0; i < features.rows; ++i) {
    const auto z = weights.forward(features.row(i), ws);
    std::copy(z.begin(), z.end(), out.row(i).begin());
    normalize_in_place(out.row(i));
  }
  return out;
}

double info_nce_loss(std::span<const double> q, std::span<const double> k_pos, const Matrix& negatives,
                     double temperature) {
  if (!(temperature > 0.0)) throw InvalidArgument("temperature must be positive");
  if (negatives.rows == 0) throw InvalidArgument("InfoNCE needs at least one negative");
  if (k_pos.size() != q.size() || negatives.cols != q.size()) {
    throw InvalidArgument("InfoNCE embeddings have mismatched dimensions");
  }
  std::vector<double> logits(negatives.rows + 1);
  logits[0] = dot(q, k_pos) / temperature;
  for (std::size_t j = 0; j < negatives.rows; ++j) logits[j + 1] = dot(q, negatives.row(j)) / temperature;
  return log_sum_exp(logits) - logits[0];
}

LossGradient loss_and_gradient(const EncoderState& state, const BatchViews& views) {
  const std::size_t m = views.query_views.rows;
  if (m < 2 && state.queue.size() == 0) throw InvalidArgument("contrastive step needs negatives");
  if (views.key_views.rows != m) throw InvalidArgument("query and key views differ in batch size");
  const Mlp& net = state.query;
  const std::size_t dim = net.output_dim();
  const double inv_tau = 1.0 / state.temperature;

  LossGradient out;
  out.keys = encode_all(state.key, views.key_views);
  out.gradient.assign(net.num_params(), 0.0);

  const Matrix queue = state.queue.contents();
  const std::size_t n_logits = m + queue.rows;
  std::vector<double> logits(n_logits);
  std::vector<double> grad_e(dim), grad_z(dim);
  Mlp::Workspace ws;
  double total = 0.0;

  for (std::size_t i = 0; i < m; ++i) {
    const auto z = net.forward(views.query_views.row(i), ws);
    const double r = norm2(z);
    if (!(r > 0.0) || !std::isfinite(r)) throw NumericalError("query embedding has zero or non-finite norm");
    std::vector<double> q(z.begin(), z.end());
    for (double& v : q) v /= r;

    // logits[0..m) are batch keys (index i is the positive), then the queue.
    for (std::size_t j = 0; j < m; ++j) logits[j] = dot(q, out.keys.row(j)) * inv_tau;
    for (std::size_t j = 0; j < queue.rows; ++j) logits[m + j] = dot(q, queue.row(j)) * inv_tau;
    const double lse = log_sum_exp(logits);
    const double loss_i = lse - logits[i];
    if (!std::isfinite(loss_i)) throw NumericalError("non-finite InfoNCE loss in batch row " + std::to_string(i));
    total += loss_i;

    // d loss_i / d q = (sum_c p_c k_c - k_i) / tau
    std::fill(grad_e.begin(), grad_e.end(), 0.0);
    for (std::size_t j = 0; j < n_logits; ++j) {
      const double p = std::exp(logits[j] - lse);
      const auto k = j < m ? out.keys.row(j) : queue.row(j - m);
      for (std::size_t c = 0; c < dim; ++c) grad_e[c] += p * k[c];
    }
    const auto k_pos = out.keys.row(i);
    for (std::size_t c = 0; c < dim; ++c) grad_e[c] = (grad_e[c] - k_pos[c]) * inv_tau / static_cast<double>(m);

    // Through the normalization: dz = (I - q q^T) de / |z|
    const double proj = dot(q, grad_e);
    for (std::size_t c = 0; c < dim; ++c) grad_z[c] = (grad_e[c] - q[c] * proj) / r;
    net.backward(ws, grad_z, out.gradient);
  }
  out.loss = total / static_cast<double>(m);
  return out;
}

void momentum_update(std::span<double> key_params, std::span<const double> query_params, double mu) {
  if (key_params.size() != query_params.size()) throw InvalidArgument("momentum update shape mismatch");
  for (std::size_t i = 0; i < key_params.size(); ++i) {
    key_params[i] = mu * key_params[i] + (1.0 - mu) * query_params[i];
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument("learning rate must be positive");
  }
  if (!(temperature > 0.0)) throw InvalidArgument("temperature must be positive");
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw InvalidArgument("momentum must lie in [0, 1]");
  if (hidden_dim == 0 || embedding_dim == 0) throw InvalidArgument("encoder sizes must be positive");
  batch.validate();
  augment.validate();
}

TrainResult train(std::span<const TileRecord> tiles, const TrainConfig& config) {
  config.validate();
  if (tiles.empty()) throw InvalidArgument("cannot train on an empty cohort");
  const Matrix features = feature_matrix(tiles);

  Rng init_rng = make_rng(config.seed, {0xE1C0});
  Rng sample_rng = make_rng(config.seed, {0x5A3B});
  Rng augment_rng = make_rng(config.seed, {0xA06});

  TrainResult result;
  result.state = EncoderState::create(features.cols, config.hidden_dim, config.embedding_dim,
                                      config.queue_size, config.temperature, config.momentum, init_rng);
  EncoderState& state = result.state;
  const SlideIndex index(tiles);

  std::size_t above_threshold = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const std::vector<Batch> schedule = epoch_schedule(index, config.batch, sample_rng);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < schedule.size(); ++b) {
      const Batch& batch = schedule[b];
      BatchViews views{Matrix(batch.positions.size(), features.cols),
                       Matrix(batch.positions.size(), features.cols)};
      for (std::size_t i = 0; i < batch.positions.size(); ++i) {
        const auto x = features.row(batch.positions[i]);
        const auto v1 = augment(x, config.augment, augment_rng);
        const auto v2 = augment(x, config.augment, augment_rng);
        std::copy(v1.begin(), v1.end(), views.query_views.row(i).begin());
        std::copy(v2.begin(), v2.end(), views.key_views.row(i).begin());
      }
      const LossGradient step = loss_and_gradient(state, views);

      double lr = config.learning_rate;
      if (config.schedule == LrSchedule::Cosine) {
        const double progress = (static_cast<double>(epoch) + static_cast<double>(b) / schedule.size()) /
                                static_cast<double>(config.epochs);
        lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
      }
      auto params = state.query.params();
      for (std::size_t p = 0; p < params.size(); ++p) params[p] -= lr * step.gradient[p];
      momentum_update(state.key.params(), state.query.params(), state.momentum);
      for (std::size_t i = 0; i < step.keys.rows; ++i) state.queue.push(step.keys.row(i));

      epoch_loss += step.loss;
      ++result.steps;
    }
    epoch_loss /= static_cast<double>(schedule.size());
    result.loss_trace.push_back(epoch_loss);
    state.epoch = epoch + 1;

    if (epoch_loss > 10.0 * result.loss_trace.front()) {
      if (++above_threshold >= 3) {
        std::ostringstream msg;
        msg << "contrastive training diverged; loss trace:";
        for (double l : result.loss_trace) msg << ' ' << l;
        throw NumericalError(msg.str());
      }
    } else {
      above_threshold = 0;
    }
  }
  return result;
}

namespace {

void write_values(std::ostream& out, std::span<const double> values) {
  char buf[40];
  for (double v : values) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf << '\n';
  }
}

std::vector<double> read_values(std::istream& in, std::size_t n, const std::string& path) {
  std::vector<double> out(n);
  for (double& v : out) {
    if (!(in >> v)) throw ParseError(path, 0, "truncated value block");
  }
  return out;
}

void expect_token(std::istream& in, const std::string& token, const std::string& path) {
  std::string got;
  if (!(in >> got) || got != token) throw ParseError(path, 0, "expected '" + token + "', got '" + got + "'");
}

}  // namespace

void save_checkpoint(const EncoderState& state, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  char buf[40];
  out << "condssl-encoder 1\n";
  out << "layers";
  for (std::size_t s : state.query.layer_sizes()) out << ' ' << s;
  out << '\n';
  std::snprintf(buf, sizeof buf, "%.17g", state.temperature);
  out << "temperature " << buf << '\n';
  std::snprintf(buf, sizeof buf, "%.17g", state.momentum);
  out << "momentum " << buf << '\n';
  out << "epoch " << state.epoch << '\n';
  out << "query " << state.query.num_params() << '\n';
  write_values(out, state.query.params());
  out << "key " << state.key.num_params() << '\n';
  write_values(out, state.key.params());
  const Matrix q = state.queue.contents();
  out << "queue " << state.queue.capacity() << ' ' << q.rows << '\n';
  write_values(out, q.data);
  if (!out) throw IoError("write failed for " + path.string());
}

EncoderState load_checkpoint(const std::filesystem::path& path) {
  const std::string p = path.string();
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + p);
  std::string line;
  std::getline(in, line);
  if (line != "condssl-encoder 1") throw ParseError(p, 1, "not an encoder checkpoint");
  std::getline(in, line);
  std::istringstream layers(line);
  std::string tag;
  layers >> tag;
  if (tag != "layers") throw ParseError(p, 2, "expected layers");
  std::vector<std::size_t> sizes;
  for (std::size_t s; layers >> s;) sizes.push_back(s);

  EncoderState state;
  state.query = Mlp(sizes);
  state.key = Mlp(sizes);
  expect_token(in, "temperature", p);
  in >> state.temperature;
  expect_token(in, "momentum", p);
  in >> state.momentum;
  expect_token(in, "epoch", p);
  in >> state.epoch;
  std::size_t n = 0;
  expect_token(in, "query", p);
  in >> n;
  if (n != state.query.num_params()) throw ParseError(p, 0, "query parameter count mismatch");
  auto qv = read_values(in, n, p);
  std::copy(qv.begin(), qv.end(), state.query.params().begin());
  expect_token(in, "key", p);
  in >> n;
  if (n != state.key.num_params()) throw ParseError(p, 0, "key parameter count mismatch");
  auto kv = read_values(in, n, p);
  std::copy(kv.begin(), kv.end(), state.key.params().begin());
  std::size_t capacity = 0, count = 0;
  expect_token(in, "queue", p);
  in >> capacity >> count;
  if (count > capacity) throw ParseError(p, 0, "queue holds more entries than its capacity");
  state.queue = NegativeQueue(capacity, state.query.output_dim());
  const auto entries = read_values(in, count * state.query.output_dim(), p);
  for (std::size_t i = 0; i < count; ++i) {
    state.queue.push(std::span<const double>(entries).subspan(i * state.query.output_dim(),
                                                              state.query.output_dim()));
  }
  return state;
}

ProbeResult slide_probe(const Matrix& embeddings, std::span<const std::int64_t> slide_ids,
                        std::uint64_t seed) {
  if (embeddings.rows != slide_ids.size()) throw InvalidArgument("probe: one slide id per embedding row");
  std::map<std::int64_t, std::vector<std::size_t>> by_slide;
  for (std::size_t i = 0; i < slide_ids.size(); ++i) by_slide[slide_ids[i]].push_back(i);

  Rng rng = make_rng(seed, {0x960BE});
  std::vector<std::size_t> train_rows, test_rows;
  std::vector<std::size_t> train_label, test_label;
  std::size_t n_classes = 0;
  for (auto& [slide, rows] : by_slide) {
    if (rows.size() < 2) {
      log_warning("slide probe: slide " + std::to_string(slide) + " has a single tile and is excluded");
      continue;
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    const std::size_t n_train = (rows.size() + 1) / 2;
    for (std::size_t j = 0; j < rows.size(); ++j) {
      (j < n_train ? train_rows : test_rows).push_back(rows[j]);
      (j < n_train ? train_label : test_label).push_back(n_classes);
    }
    ++n_classes;
  }
  if (n_classes < 2) throw InvalidArgument("slide probe needs at least two slides with two tiles each");

  // Full-batch Adam on softmax cross-entropy with a small L2 penalty.
  const std::size_t dim = embeddings.cols;
  const std::size_t n_params = n_classes * (dim + 1);
  std::vector<double> w(n_params, 0.0), g(n_params), m1(n_params, 0.0), m2(n_params, 0.0);
  const double lr = 0.05, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, l2 = 1e-4;
  const std::size_t iterations = 300;
  std::vector<double> logits(n_classes);
  auto compute_logits = [&](std::span<const double> x) {
    for (std::size_t c = 0; c < n_classes; ++c) {
      const double* wc = w.data() + c * (dim + 1);
      double s = wc[dim];
      for (std::size_t j = 0; j < dim; ++j) s += wc[j] * x[j];
      logits[c] = s;
    }
  };
  for (std::size_t it = 1; it <= iterations; ++it) {
    std::fill(g.begin(), g.end(), 0.0);
    for (std::size_t r = 0; r < train_rows.size(); ++r) {
      const auto x = embeddings.row(train_rows[r]);
      compute_logits(x);
      const double lse = log_sum_exp(logits);
      for (std::size_t c = 0; c < n_classes; ++c) {
        const double d = (std::exp(logits[c] - lse) - (c == train_label[r] ? 1.0 : 0.0)) /
                         static_cast<double>(train_rows.size());
        double* gc = g.data() + c * (dim + 1);
        for (std::size_t j = 0; j < dim; ++j) gc[j] += d * x[j];
        gc[dim] += d;
      }
    }
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(it));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(it));
    for (std::size_t p = 0; p < n_params; ++p) {
      const double gp = g[p] + l2 * w[p];
      m1[p] = beta1 * m1[p] + (1.0 - beta1) * gp;
      m2[p] = beta2 * m2[p] + (1.0 - beta2) * gp * gp;
      w[p] -= lr * (m1[p] / c1) / (std::sqrt(m2[p] / c2) + eps);
    }
  }

  std::size_t correct = 0;
  for (std::size_t r = 0; r < test_rows.size(); ++r) {
    compute_logits(embeddings.row(test_rows[r]));
    const auto best = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (best == test_label[r]) ++correct;
  }
  ProbeResult result;
  result.n_slides = n_classes;
  result.n_test = test_rows.size();
  result.accuracy = static_cast<double>(correct) / static_cast<double>(test_rows.size());
  result.chance = 1.0 / static_cast<double>(n_classes);
  return result;
}

}  // namespace condssl
