#include "condssl/cohort.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>

#include "condssl/error.hpp"
#include "condssl/rng.hpp"

namespace condssl {

void CohortConfig::validate() const {
  if (feature_dim == 0) throw InvalidArgument("feature_dim must be positive");
  if (n_true_clusters == 0) throw InvalidArgument("n_true_clusters must be positive");
  if (n_true_clusters > feature_dim) {
    throw InvalidArgument("n_true_clusters (" + std::to_string(n_true_clusters) +
                          ") exceeds the number of representable clusters (feature_dim = " +
                          std::to_string(feature_dim) + ")");
  }
  if (slides_per_patient == 0 || tiles_per_slide == 0) {
    throw InvalidArgument("slides_per_patient and tiles_per_slide must be positive");
  }
  if (batch_effect_dims > feature_dim) throw InvalidArgument("batch_effect_dims exceeds feature_dim");
  if (!std::isfinite(batch_effect_scale) || batch_effect_scale < 0.0) {
    throw InvalidArgument("batch_effect_scale must be finite and non-negative");
  }
  if (!std::isfinite(noise_scale) || noise_scale <= 0.0) {
    throw InvalidArgument("noise_scale must be finite and positive");
  }
  if (!std::isfinite(cluster_separation) || cluster_separation < 0.0) {
    throw InvalidArgument("cluster_separation must be finite and non-negative");
  }
  if (true_hazard_coefficients.size() != n_true_clusters) {
    throw InvalidArgument("true_hazard_coefficients must have n_true_clusters entries");
  }
  for (double b : true_hazard_coefficients) {
    if (!std::isfinite(b)) throw InvalidArgument("true_hazard_coefficients must be finite");
  }
  if (!(baseline_rate > 0.0) || !std::isfinite(baseline_rate)) {
    throw InvalidArgument("baseline_rate must be finite and positive");
  }
  if (!(censoring_rate >= 0.0 && censoring_rate < 1.0)) {
    throw InvalidArgument("censoring_rate must lie in [0, 1)");
  }
}

namespace {

constexpr int kMaxTime = 1000;

// Expected censored fraction when C ~ U(0, t_max) and T_i ~ Exp(rate_i).
double expected_censored_fraction(std::span<const double> rates, double t_max) {
  double acc = 0.0;
  for (double r : rates) {
    const double x = r * t_max;
    acc += x < 1e-12 ? 1.0 : -std::expm1(-x) / x;
  }
  return acc / static_cast<double>(rates.size());
}

double solve_censoring_horizon(std::span<const double> rates, double target) {
  double lo = -30.0, hi = 30.0;  // bisection on log(t_max)
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (expected_censored_fraction(rates, std::exp(mid)) > target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return std::exp(0.5 * (lo + hi));
}

}  // namespace

Cohort generate_cohort(const CohortConfig& config) {
  config.validate();
  Cohort cohort;
  const std::size_t n = config.n_patients;
  if (n == 0) return cohort;

  const std::size_t d = config.feature_dim;
  const std::size_t k = config.n_true_clusters;
  const std::size_t offset_begin = config.batch_effect_dims == 0 ? 0 : d - config.batch_effect_dims;
  const double axis_scale = config.cluster_separation / std::sqrt(2.0);

  Rng rng = make_rng(config.seed, {0xC0407});
  std::normal_distribution<double> standard_normal(0.0, 1.0);
  std::gamma_distribution<double> gamma1(1.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  cohort.tiles.reserve(n * config.slides_per_patient * config.tiles_per_slide);
  cohort.true_proportions.resize(n);
  std::vector<double> rates(n);

  std::int64_t next_tile = 0, next_slide = 0;
  for (std::size_t p = 0; p < n; ++p) {
    // Symmetric Dirichlet(1) mixture for this patient.
    std::vector<double>& props = cohort.true_proportions[p];
    props.resize(k);
    for (double& w : props) w = gamma1(rng);
    const double total = std::accumulate(props.begin(), props.end(), 0.0);
    for (double& w : props) w /= total;
    std::discrete_distribution<int> pick_cluster(props.begin(), props.end());

    for (std::size_t s = 0; s < config.slides_per_patient; ++s) {
      std::vector<double> slide_offset(d, 0.0);
      for (std::size_t j = offset_begin; j < d; ++j) {
        slide_offset[j] = config.batch_effect_scale * standard_normal(rng);
      }
      const std::int64_t slide_id = next_slide++;
      for (std::size_t t = 0; t < config.tiles_per_slide; ++t) {
        TileRecord tile;
        tile.tile_id = next_tile++;
        tile.slide_id = slide_id;
        tile.patient_id = static_cast<std::int64_t>(p);
        const int z = pick_cluster(rng);
        tile.true_cluster = z;
        tile.features.resize(d);
        for (std::size_t j = 0; j < d; ++j) {
          double v = slide_offset[j] + config.noise_scale * standard_normal(rng);
          if (j == static_cast<std::size_t>(z)) v += axis_scale;
          tile.features[j] = static_cast<double>(static_cast<float>(v));
        }
        cohort.tiles.push_back(std::move(tile));
      }
    }
    double eta = 0.0;
    for (std::size_t z = 0; z < k; ++z) eta += config.true_hazard_coefficients[z] * props[z];
    rates[p] = config.baseline_rate * std::exp(eta);
  }

  const double t_max = config.censoring_rate > 0.0
                           ? solve_censoring_horizon(rates, config.censoring_rate)
                           : INFINITY;
  cohort.outcomes.resize(n);
  for (std::size_t p = 0; p < n; ++p) {
    std::exponential_distribution<double> event_time(rates[p]);
    const double t_event = event_time(rng);
    const double t_censor = std::isfinite(t_max) ? t_max * unit(rng) : INFINITY;
    PatientOutcome& o = cohort.outcomes[p];
    o.patient_id = static_cast<std::int64_t>(p);
    o.event = t_event <= t_censor;
    const double observed = std::min(t_event, t_censor);
    o.time = static_cast<int>(std::min<double>(std::floor(observed), kMaxTime));
  }
  return cohort;
}

namespace {

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

template <typename T>
T parse_number(std::string_view field, const std::string& path, std::size_t line, const char* what) {
  field = trim(field);
  T value{};
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
    throw ParseError(path, line, std::string("invalid ") + what + " '" + std::string(field) + "'");
  }
  return value;
}

std::string format_feature(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

Cohort load_embeddings(const std::filesystem::path& tiles_csv,
                       const std::optional<std::filesystem::path>& outcomes_csv) {
  const std::string path = tiles_csv.string();
  std::ifstream in(tiles_csv);
  if (!in) throw IoError("cannot open " + path);

  Cohort cohort;
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path, 1, "missing header");
  const auto header = split_csv(trim(line));
  if (header.size() < 3 || trim(header[0]) != "tile_id" || trim(header[1]) != "slide_id" ||
      trim(header[2]) != "patient_id") {
    throw ParseError(path, 1, "header must start with tile_id,slide_id,patient_id");
  }
  const std::size_t d = header.size() - 3;
  for (std::size_t j = 0; j < d; ++j) {
    if (trim(header[3 + j]) != "f" + std::to_string(j)) {
      throw ParseError(path, 1, "expected feature column f" + std::to_string(j));
    }
  }
  if (d == 0) throw ParseError(path, 1, "header declares no feature columns");

  std::unordered_set<std::int64_t> seen_tiles;
  std::unordered_map<std::int64_t, std::int64_t> slide_owner;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view row = trim(line);
    if (row.empty()) continue;
    const auto fields = split_csv(row);
    if (fields.size() != header.size()) {
      throw ParseError(path, line_no, "expected " + std::to_string(d) + " features, found " +
                                          std::to_string(fields.size() < 3 ? 0 : fields.size() - 3));
    }
    TileRecord tile;
    tile.tile_id = parse_number<std::int64_t>(fields[0], path, line_no, "tile_id");
    tile.slide_id = parse_number<std::int64_t>(fields[1], path, line_no, "slide_id");
    tile.patient_id = parse_number<std::int64_t>(fields[2], path, line_no, "patient_id");
    tile.features.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
      // Single-precision parse: values written with 9 significant digits round-trip exactly.
      const float v = parse_number<float>(fields[3 + j], path, line_no, "feature");
      if (!std::isfinite(v)) throw ParseError(path, line_no, "non-finite feature value");
      tile.features[j] = v;
    }
    if (!seen_tiles.insert(tile.tile_id).second) {
      throw ParseError(path, line_no, "duplicate tile_id " + std::to_string(tile.tile_id));
    }
    const auto [it, inserted] = slide_owner.emplace(tile.slide_id, tile.patient_id);
    if (!inserted && it->second != tile.patient_id) {
      throw ParseError(path, line_no,
                       "slide " + std::to_string(tile.slide_id) + " assigned to patient " +
                           std::to_string(tile.patient_id) + " but earlier to patient " +
                           std::to_string(it->second));
    }
    cohort.tiles.push_back(std::move(tile));
  }

  if (!outcomes_csv) return cohort;

  const std::string opath = outcomes_csv->string();
  std::ifstream oin(*outcomes_csv);
  if (!oin) throw IoError("cannot open " + opath);
  if (!std::getline(oin, line)) throw ParseError(opath, 1, "missing header");
  if (trim(line) != "patient_id,event,time_6mo") {
    throw ParseError(opath, 1, "header must be patient_id,event,time_6mo");
  }
  std::map<std::int64_t, std::size_t> outcome_line;
  line_no = 1;
  while (std::getline(oin, line)) {
    ++line_no;
    const std::string_view row = trim(line);
    if (row.empty()) continue;
    const auto fields = split_csv(row);
    if (fields.size() != 3) throw ParseError(opath, line_no, "expected 3 fields");
    PatientOutcome o;
    o.patient_id = parse_number<std::int64_t>(fields[0], opath, line_no, "patient_id");
    const int event = parse_number<int>(fields[1], opath, line_no, "event");
    if (event != 0 && event != 1) throw ParseError(opath, line_no, "event must be 0 or 1");
    o.event = event == 1;
    o.time = parse_number<int>(fields[2], opath, line_no, "time_6mo");
    if (o.time < 0) throw ParseError(opath, line_no, "negative time_6mo");
    if (!outcome_line.emplace(o.patient_id, line_no).second) {
      throw ParseError(opath, line_no, "duplicate patient_id " + std::to_string(o.patient_id));
    }
    cohort.outcomes.push_back(o);
  }
  // Every slide's patient must have an outcome row.
  for (const auto& [slide, patient] : slide_owner) {
    if (!outcome_line.count(patient)) {
      throw ParseError(path, 0, "orphan slide " + std::to_string(slide) + ": patient " +
                                    std::to_string(patient) + " has no row in " + opath);
    }
  }
  return cohort;
}

void save_embeddings(const Cohort& cohort, const std::filesystem::path& tiles_csv) {
  std::ofstream out(tiles_csv, std::ios::trunc);
  if (!out) throw IoError("cannot write " + tiles_csv.string());
  const std::size_t d = cohort.feature_dim();
  out << "tile_id,slide_id,patient_id";
  for (std::size_t j = 0; j < d; ++j) out << ",f" << j;
  out << '\n';
  for (const TileRecord& t : cohort.tiles) {
    if (t.features.size() != d) throw InvalidArgument("inconsistent feature dimension in cohort");
    out << t.tile_id << ',' << t.slide_id << ',' << t.patient_id;
    for (double v : t.features) out << ',' << format_feature(v);
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + tiles_csv.string());
}

void save_outcomes(std::span<const PatientOutcome> outcomes, const std::filesystem::path& outcomes_csv) {
  std::ofstream out(outcomes_csv, std::ios::trunc);
  if (!out) throw IoError("cannot write " + outcomes_csv.string());
  out << "patient_id,event,time_6mo\n";
  for (const PatientOutcome& o : outcomes) {
    out << o.patient_id << ',' << (o.event ? 1 : 0) << ',' << o.time << '\n';
  }
  if (!out) throw IoError("write failed for " + outcomes_csv.string());
}

std::vector<SplitPlan> split_by_patient(std::span<const std::int64_t> patient_ids,
                                        std::array<double, 3> fractions, std::uint64_t seed,
                                        std::size_t n_folds) {
  if (n_folds == 0) throw InvalidArgument("n_folds must be at least 1");
  for (double f : fractions) {
    if (!(f >= 0.0)) throw InvalidArgument("split fractions must be non-negative");
  }
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
    throw InvalidArgument("split fractions must sum to 1");
  }
  std::vector<std::int64_t> ids(patient_ids.begin(), patient_ids.end());
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw InvalidArgument("duplicate patient id in split input");
  }
  const std::size_t n = ids.size();
  if (n < n_folds) {
    throw InvalidArgument("cannot make " + std::to_string(n_folds) + " folds from " +
                          std::to_string(n) + " patients");
  }
  const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
  const auto n_val = std::min(n - n_train,
                              static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n))));

  std::vector<SplitPlan> plans;
  for (std::size_t fold = 0; fold < n_folds; ++fold) {
    Rng rng = make_rng(seed, {0x5B1F, fold});
    std::vector<std::int64_t> order = ids;
    std::shuffle(order.begin(), order.end(), rng);
    SplitPlan plan;
    plan.fold = fold;
    plan.train.assign(order.begin(), order.begin() + n_train);
    plan.validation.assign(order.begin() + n_train, order.begin() + n_train + n_val);
    plan.test.assign(order.begin() + n_train + n_val, order.end());
    std::sort(plan.train.begin(), plan.train.end());
    std::sort(plan.validation.begin(), plan.validation.end());
    std::sort(plan.test.begin(), plan.test.end());
    plans.push_back(std::move(plan));
  }
  return plans;
}

Matrix feature_matrix(std::span<const TileRecord> tiles) {
  if (tiles.empty()) return {};
  Matrix m(tiles.size(), tiles.front().features.size());
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    if (tiles[i].features.size() != m.cols) throw InvalidArgument("inconsistent feature dimension");
    std::copy(tiles[i].features.begin(), tiles[i].features.end(), m.row(i).begin());
  }
  return m;
}

std::vector<TileRecord> tiles_of_patients(std::span<const TileRecord> tiles,
                                          std::span<const std::int64_t> patients) {
  const std::unordered_set<std::int64_t> keep(patients.begin(), patients.end());
  std::vector<TileRecord> out;
  for (const TileRecord& t : tiles) {
    if (keep.count(t.patient_id)) out.push_back(t);
  }
  return out;
}

}  // namespace condssl
