#include "condssl/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "condssl/error.hpp"
#include "condssl/log.hpp"
#include "condssl/rng.hpp"

namespace condssl {
namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

// Greedy k-means++: each new center is the best of 2 + floor(ln k) D^2-weighted
// candidates, judged by the resulting potential.
Matrix kmeans_plus_plus(const Matrix& x, std::size_t k, Rng& rng, double& potential_out) {
  Matrix centers(k, x.cols);
  std::uniform_int_distribution<std::size_t> first(0, x.rows - 1);
  std::size_t pick = first(rng);
  std::copy(x.row(pick).begin(), x.row(pick).end(), centers.row(0).begin());
  std::vector<double> nearest(x.rows), trial(x.rows), best(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) nearest[i] = squared_distance(x.row(i), centers.row(0));
  const std::size_t n_trials = 2 + static_cast<std::size_t>(std::log(static_cast<double>(k)));
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double d : nearest) total += d;
    if (!(total > 0.0)) {
      pick = first(rng);
      std::copy(x.row(pick).begin(), x.row(pick).end(), centers.row(c).begin());
      continue;
    }
    std::discrete_distribution<std::size_t> draw(nearest.begin(), nearest.end());
    double best_potential = INFINITY;
    for (std::size_t t = 0; t < n_trials; ++t) {
      const std::size_t candidate = draw(rng);
      double potential = 0.0;
      for (std::size_t i = 0; i < x.rows; ++i) {
        trial[i] = std::min(nearest[i], squared_distance(x.row(i), x.row(candidate)));
        potential += trial[i];
      }
      if (potential < best_potential) {
        best_potential = potential;
        pick = candidate;
        best.swap(trial);
      }
    }
    std::copy(x.row(pick).begin(), x.row(pick).end(), centers.row(c).begin());
    nearest.swap(best);
  }
  potential_out = 0.0;
  for (double d : nearest) potential_out += d;
  return centers;
}

struct Precomputed {
  std::vector<double> log_const;  // log pi - 0.5 * (d log 2pi + sum log var)
  Matrix inv_var;
};

Precomputed precompute(const GmmModel& model) {
  Precomputed p;
  const std::size_t k = model.k(), d = model.dim();
  p.log_const.resize(k);
  p.inv_var = Matrix(k, d);
  for (std::size_t z = 0; z < k; ++z) {
    double log_det = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      log_det += std::log(model.variances(z, j));
      p.inv_var(z, j) = 1.0 / model.variances(z, j);
    }
    p.log_const[z] = std::log(model.weights[z]) -
                     0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + log_det);
  }
  return p;
}

void log_densities_into(const GmmModel& model, const Precomputed& pre, std::span<const double> x,
                        std::span<double> out) {
  const std::size_t d = model.dim();
  for (std::size_t z = 0; z < model.k(); ++z) {
    const double* mu = model.means.data.data() + z * d;
    const double* iv = pre.inv_var.data.data() + z * d;
    double q = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = x[j] - mu[j];
      q += diff * diff * iv[j];
    }
    out[z] = pre.log_const[z] - 0.5 * q;
  }
}

void check_dim(const GmmModel& model, std::span<const double> x) {
  if (x.size() != model.dim()) {
    throw InvalidArgument("embedding dimension " + std::to_string(x.size()) + " does not match GMM dimension " +
                          std::to_string(model.dim()));
  }
  for (double v : x) {
    if (!std::isfinite(v)) throw InvalidArgument("non-finite embedding passed to GMM");
  }
}

}  // namespace

std::vector<double> softmax_from_logs(std::span<const double> logs) {
  const double lse = log_sum_exp(logs);
  std::vector<double> p(logs.size());
  double total = 0.0;
  for (std::size_t z = 0; z < logs.size(); ++z) {
    p[z] = std::exp(logs[z] - lse);
    total += p[z];
  }
  for (double& v : p) v /= total;
  return p;
}

std::vector<double> component_log_densities(const GmmModel& model, std::span<const double> embedding) {
  check_dim(model, embedding);
  std::vector<double> out(model.k());
  log_densities_into(model, precompute(model), embedding, out);
  return out;
}

std::vector<double> posterior(const GmmModel& model, std::span<const double> embedding) {
  return softmax_from_logs(component_log_densities(model, embedding));
}

double gmm_log_likelihood(const GmmModel& model, const Matrix& embeddings) {
  const Precomputed pre = precompute(model);
  std::vector<double> logs(model.k());
  double total = 0.0;
  for (std::size_t i = 0; i < embeddings.rows; ++i) {
    log_densities_into(model, pre, embeddings.row(i), logs);
    total += log_sum_exp(logs);
  }
  return total;
}

GmmModel fit_gmm(const Matrix& x, const GmmOptions& options) {
  const std::size_t n = x.rows, d = x.cols, k = options.k;
  if (k == 0) throw InvalidArgument("GMM needs k >= 1");
  if (k > n) {
    throw InvalidArgument("GMM with k = " + std::to_string(k) + " needs at least k samples, got " +
                          std::to_string(n));
  }
  if (d == 0) throw InvalidArgument("GMM needs a positive embedding dimension");
  for (double v : x.data) {
    if (!std::isfinite(v)) throw InvalidArgument("non-finite embedding passed to GMM");
  }
  const double floor = options.variance_floor;

  if (options.n_seedings == 0) throw InvalidArgument("GMM needs at least one seeding");
  Rng rng = make_rng(options.seed, {0x6A11});
  Matrix centers;
  double best_potential = INFINITY;
  for (std::size_t s = 0; s < options.n_seedings; ++s) {
    double potential = 0.0;
    Matrix candidate = kmeans_plus_plus(x, k, rng, potential);
    if (potential < best_potential) {
      best_potential = potential;
      centers = std::move(candidate);
    }
  }

  std::vector<double> global_mean(d, 0.0), global_var(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) global_mean[j] += x(i, j);
  }
  for (double& v : global_mean) v /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = x(i, j) - global_mean[j];
      global_var[j] += diff * diff;
    }
  }
  for (double& v : global_var) v = std::max(v / static_cast<double>(n), floor);

  // Hard-assignment M-step from the seeds.
  GmmModel model;
  model.weights.assign(k, 0.0);
  model.means = Matrix(k, d);
  model.variances = Matrix(k, d);
  {
    std::vector<std::size_t> label(n);
    std::vector<double> count(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = INFINITY;
      for (std::size_t z = 0; z < k; ++z) {
        const double dist = squared_distance(x.row(i), centers.row(z));
        if (dist < best_d) {
          best_d = dist;
          best = z;
        }
      }
      label[i] = best;
      count[best] += 1.0;
      for (std::size_t j = 0; j < d; ++j) model.means(best, j) += x(i, j);
    }
    for (std::size_t z = 0; z < k; ++z) {
      if (count[z] == 0.0) {
        std::copy(centers.row(z).begin(), centers.row(z).end(), model.means.row(z).begin());
      } else {
        for (std::size_t j = 0; j < d; ++j) model.means(z, j) /= count[z];
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = x(i, j) - model.means(label[i], j);
        model.variances(label[i], j) += diff * diff;
      }
    }
    double weight_total = 0.0;
    for (std::size_t z = 0; z < k; ++z) {
      for (std::size_t j = 0; j < d; ++j) {
        model.variances(z, j) =
            count[z] > 1.0 ? std::max(model.variances(z, j) / count[z], floor) : global_var[j];
      }
      model.weights[z] = std::max(count[z], 1.0);
      weight_total += model.weights[z];
    }
    for (double& w : model.weights) w /= weight_total;
  }

  Matrix resp(n, k);
  std::vector<double> logs(k);
  bool warned_floor = false, warned_collapse = false;
  double previous = -INFINITY;

  for (std::size_t it = 0;; ++it) {
    // E-step.
    const Precomputed pre = precompute(model);
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      log_densities_into(model, pre, x.row(i), logs);
      const double lse = log_sum_exp(logs);
      ll += lse;
      auto r = resp.row(i);
      for (std::size_t z = 0; z < k; ++z) r[z] = std::exp(logs[z] - lse);
    }
    model.log_likelihood_trace.push_back(ll);
    if (it >= options.max_iter) break;
    if (options.tolerance > 0.0 && it > 0) {
      const double gain = (ll - previous) / std::max(std::abs(previous), 1e-300);
      if (gain < options.tolerance) break;
    }
    previous = ll;

    // M-step with a deterministic, ordered reduction over samples.
    std::vector<double> nz(k, 0.0);
    Matrix sum_x(k, d), sum_xx(k, d);
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = resp.row(i);
      const auto xi = x.row(i);
      for (std::size_t z = 0; z < k; ++z) {
        const double w = r[z];
        if (w == 0.0) continue;
        nz[z] += w;
        double* sx = sum_x.data.data() + z * d;
        for (std::size_t j = 0; j < d; ++j) sx[j] += w * xi[j];
      }
    }
    for (std::size_t z = 0; z < k; ++z) {
      if (nz[z] < 1e-10) continue;
      for (std::size_t j = 0; j < d; ++j) sum_x(z, j) /= nz[z];  // now the new mean
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = resp.row(i);
      const auto xi = x.row(i);
      for (std::size_t z = 0; z < k; ++z) {
        const double w = r[z];
        if (w == 0.0 || nz[z] < 1e-10) continue;
        double* sxx = sum_xx.data.data() + z * d;
        const double* mu = sum_x.data.data() + z * d;
        for (std::size_t j = 0; j < d; ++j) {
          const double diff = xi[j] - mu[j];
          sxx[j] += w * diff * diff;
        }
      }
    }
    double weight_total = 0.0;
    for (std::size_t z = 0; z < k; ++z) {
      if (nz[z] < 1e-10) {
        // Component lost all mass: keep its parameters, shrink its weight.
        if (!warned_collapse) {
          log_warning("GMM component " + std::to_string(z) + " collapsed; keeping its previous parameters");
          warned_collapse = true;
        }
      } else {
        for (std::size_t j = 0; j < d; ++j) {
          model.means(z, j) = sum_x(z, j);
          double v = sum_xx(z, j) / nz[z];
          if (v < floor) {
            if (!warned_floor) {
              log_warning("GMM component " + std::to_string(z) + " variance reset to floor " +
                          std::to_string(floor));
              warned_floor = true;
            }
            v = floor;
          }
          model.variances(z, j) = v;
        }
      }
      model.weights[z] = nz[z] / static_cast<double>(n);
      weight_total += model.weights[z];
    }
    for (double& w : model.weights) w /= weight_total;
    for (double& w : model.weights) w = std::max(w, 1e-300);
    ++model.iterations;
  }
  return model;
}

SlideFeature pool_slide(const GmmModel& model, std::int64_t slide_id, const Matrix& slide_tiles) {
  if (slide_tiles.rows == 0) throw InvalidArgument("cannot pool an empty slide " + std::to_string(slide_id));
  Matrix post(slide_tiles.rows, model.k());
  const Precomputed pre = precompute(model);
  std::vector<double> logs(model.k());
  for (std::size_t i = 0; i < slide_tiles.rows; ++i) {
    check_dim(model, slide_tiles.row(i));
    log_densities_into(model, pre, slide_tiles.row(i), logs);
    const auto p = softmax_from_logs(logs);
    std::copy(p.begin(), p.end(), post.row(i).begin());
  }
  return {slide_id, mean_rows(post)};
}

std::vector<double> mean_rows(const Matrix& posteriors) {
  std::vector<double> v(posteriors.cols, 0.0);
  for (std::size_t i = 0; i < posteriors.rows; ++i) {
    for (std::size_t z = 0; z < posteriors.cols; ++z) v[z] += posteriors(i, z);
  }
  for (double& x : v) x /= static_cast<double>(posteriors.rows);
  return v;
}

std::vector<int> hard_assignments(const GmmModel& model, const Matrix& embeddings) {
  const Precomputed pre = precompute(model);
  std::vector<double> logs(model.k());
  std::vector<int> out(embeddings.rows);
  for (std::size_t i = 0; i < embeddings.rows; ++i) {
    log_densities_into(model, pre, embeddings.row(i), logs);
    out[i] = static_cast<int>(std::max_element(logs.begin(), logs.end()) - logs.begin());
  }
  return out;
}

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw InvalidArgument("ARI label vectors differ in length");
  const double n = static_cast<double>(a.size());
  if (a.size() < 2) return 1.0;
  std::map<std::pair<int, int>, double> table;
  std::map<int, double> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    table[{a[i], b[i]}] += 1.0;
    rows[a[i]] += 1.0;
    cols[b[i]] += 1.0;
  }
  auto choose2 = [](double x) { return x * (x - 1.0) / 2.0; };
  double index = 0.0, sum_rows = 0.0, sum_cols = 0.0;
  for (const auto& [key, c] : table) index += choose2(c);
  for (const auto& [key, c] : rows) sum_rows += choose2(c);
  for (const auto& [key, c] : cols) sum_cols += choose2(c);
  const double expected = sum_rows * sum_cols / choose2(n);
  const double max_index = 0.5 * (sum_rows + sum_cols);
  if (max_index == expected) return 1.0;  // both partitions trivial and identical in shape
  return (index - expected) / (max_index - expected);
}

void save_gmm(const GmmModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  char buf[40];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << ' ' << buf;
  };
  out << "condssl-gmm 1\n";
  out << "k " << model.k() << " dim " << model.dim() << '\n';
  for (std::size_t z = 0; z < model.k(); ++z) {
    out << "component " << z << '\n';
    out << "weight";
    put(model.weights[z]);
    out << "\nmean";
    for (double v : model.means.row(z)) put(v);
    out << "\nvariance";
    for (double v : model.variances.row(z)) put(v);
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

GmmModel load_gmm(const std::filesystem::path& path) {
  const std::string p = path.string();
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + p);
  std::string tag;
  int version = 0;
  if (!(in >> tag >> version) || tag != "condssl-gmm" || version != 1) throw ParseError(p, 1, "not a GMM model file");
  std::size_t k = 0, d = 0;
  std::string kt, dt;
  if (!(in >> kt >> k >> dt >> d) || kt != "k" || dt != "dim" || k == 0 || d == 0) {
    throw ParseError(p, 2, "expected 'k <k> dim <d>'");
  }
  GmmModel model;
  model.weights.resize(k);
  model.means = Matrix(k, d);
  model.variances = Matrix(k, d);
  for (std::size_t z = 0; z < k; ++z) {
    std::size_t idx = 0;
    if (!(in >> tag >> idx) || tag != "component" || idx != z) throw ParseError(p, 0, "expected component " + std::to_string(z));
    if (!(in >> tag >> model.weights[z]) || tag != "weight") throw ParseError(p, 0, "expected weight");
    if (!(in >> tag) || tag != "mean") throw ParseError(p, 0, "expected mean");
    for (std::size_t j = 0; j < d; ++j) {
      if (!(in >> model.means(z, j))) throw ParseError(p, 0, "truncated mean");
    }
    if (!(in >> tag) || tag != "variance") throw ParseError(p, 0, "expected variance");
    for (std::size_t j = 0; j < d; ++j) {
      if (!(in >> model.variances(z, j)) || !(model.variances(z, j) > 0.0)) {
        throw ParseError(p, 0, "bad variance");
      }
    }
  }
  return model;
}

}  // namespace condssl
