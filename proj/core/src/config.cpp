#include "condssl/config.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string_view>

#include "condssl/error.hpp"

namespace condssl {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(trim(s.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

// Thrown by value parsers; rethrown as ParseError with file and line.
struct BadValue {
  std::string what;
};

template <typename T>
T number(std::string_view s) {
  T value{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw BadValue{"not a number: '" + std::string(s) + "'"};
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(value)) throw BadValue{"not a finite number: '" + std::string(s) + "'"};
  }
  return value;
}

bool boolean(std::string_view s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw BadValue{"expected true or false, got '" + std::string(s) + "'"};
}

template <typename T>
std::vector<T> number_list(std::string_view s) {
  std::vector<T> out;
  for (std::string_view item : split_list(s)) out.push_back(number<T>(item));
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename T>
std::string fmt_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += fmt(v[i]);
  }
  return out;
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, std::string_view, const std::filesystem::path&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

// `ref` is a generic lambda returning a reference to the field.
template <typename T, typename Ref>
Field num(std::string key, Ref ref) {
  return {std::move(key),
          [ref](ExperimentConfig& c, std::string_view v, const std::filesystem::path&) { ref(c) = number<T>(v); },
          [ref](const ExperimentConfig& c) { return fmt(ref(c)); }};
}

#define CONDSSL_NUM(key, type, expr) num<type>(key, [](auto& c) -> auto& { return expr; })

Field net_hidden(std::string key, NetConfig ExperimentConfig::*net) {
  return {std::move(key),
          [net](ExperimentConfig& c, std::string_view v, const std::filesystem::path&) {
            (c.*net).hidden = number_list<std::size_t>(v);
          },
          [net](const ExperimentConfig& c) { return fmt_list((c.*net).hidden); }};
}

Field optional_path(std::string key, std::optional<std::filesystem::path> ExperimentConfig::*member) {
  return {std::move(key),
          [member](ExperimentConfig& c, std::string_view v, const std::filesystem::path& base) {
            if (v.empty()) {
              c.*member = std::nullopt;
              return;
            }
            std::filesystem::path p{std::string(v)};
            c.*member = p.is_relative() && !base.empty() ? base / p : p;
          },
          [member](const ExperimentConfig& c) { return c.*member ? (c.*member)->string() : std::string(); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(CONDSSL_NUM("cohort.n_patients", std::size_t, c.cohort.n_patients));
    f.push_back(CONDSSL_NUM("cohort.slides_per_patient", std::size_t, c.cohort.slides_per_patient));
    f.push_back(CONDSSL_NUM("cohort.tiles_per_slide", std::size_t, c.cohort.tiles_per_slide));
    f.push_back(CONDSSL_NUM("cohort.feature_dim", std::size_t, c.cohort.feature_dim));
    f.push_back(CONDSSL_NUM("cohort.n_true_clusters", std::size_t, c.cohort.n_true_clusters));
    f.push_back(CONDSSL_NUM("cohort.cluster_separation", double, c.cohort.cluster_separation));
    f.push_back(CONDSSL_NUM("cohort.batch_effect_scale", double, c.cohort.batch_effect_scale));
    f.push_back(CONDSSL_NUM("cohort.batch_effect_dims", std::size_t, c.cohort.batch_effect_dims));
    f.push_back(CONDSSL_NUM("cohort.noise_scale", double, c.cohort.noise_scale));
    f.push_back({"cohort.hazard_coefficients",
                 [](ExperimentConfig& c, std::string_view v, const std::filesystem::path&) {
                   c.cohort.true_hazard_coefficients = number_list<double>(v);
                 },
                 [](const ExperimentConfig& c) { return fmt_list(c.cohort.true_hazard_coefficients); }});
    f.push_back(CONDSSL_NUM("cohort.baseline_rate", double, c.cohort.baseline_rate));
    f.push_back(CONDSSL_NUM("cohort.censoring_rate", double, c.cohort.censoring_rate));
    f.push_back(CONDSSL_NUM("cohort.seed", std::uint64_t, c.cohort.seed));
    f.push_back(optional_path("data.embeddings", &ExperimentConfig::embeddings_csv));
    f.push_back(optional_path("data.outcomes", &ExperimentConfig::outcomes_csv));

    f.push_back({"sampler",
                 [](ExperimentConfig& c, std::string_view v, const std::filesystem::path&) {
                   try {
                     const BatchSpec spec = BatchSpec::parse(v, c.train.batch.batch_size);
                     c.train.batch.mode = spec.mode;
                     c.train.batch.slides_per_batch = spec.slides_per_batch;
                   } catch (const InvalidArgument& e) {
                     throw BadValue{e.what()};
                   }
                 },
                 [](const ExperimentConfig& c) { return c.train.batch.to_string(); }});
    f.push_back(CONDSSL_NUM("train.batch_size", std::size_t, c.train.batch.batch_size));
    f.push_back(CONDSSL_NUM("train.epochs", std::size_t, c.train.epochs));
    f.push_back(CONDSSL_NUM("train.learning_rate", double, c.train.learning_rate));
    f.push_back({"train.schedule",
                 [](ExperimentConfig& c, std::string_view v, const std::filesystem::path&) {
                   if (v == "cosine") c.train.schedule = LrSchedule::Cosine;
                   else if (v == "constant") c.train.schedule = LrSchedule::Constant;
                   else throw BadValue{"schedule must be cosine or constant, got '" + std::string(v) + "'"};
                 },
                 [](const ExperimentConfig& c) {
                   return std::string(c.train.schedule == LrSchedule::Cosine ? "cosine" : "constant");
                 }});
    f.push_back(CONDSSL_NUM("train.queue_size", std::size_t, c.train.queue_size));
    f.push_back(CONDSSL_NUM("train.hidden_dim", std::size_t, c.train.hidden_dim));
    f.push_back(CONDSSL_NUM("train.embedding_dim", std::size_t, c.train.embedding_dim));
    f.push_back(CONDSSL_NUM("train.temperature", double, c.train.temperature));
    f.push_back(CONDSSL_NUM("train.momentum", double, c.train.momentum));
    f.push_back(CONDSSL_NUM("augment.noise_scale", double, c.train.augment.noise_scale));
    f.push_back(CONDSSL_NUM("augment.dropout", double, c.train.augment.dropout_prob));
    f.push_back(CONDSSL_NUM("augment.scale_jitter", double, c.train.augment.scale_jitter));

    f.push_back({"cluster.k",
                 [](ExperimentConfig& c, std::string_view v, const std::filesystem::path&) {
                   c.k_grid = number_list<std::size_t>(v);
                 },
                 [](const ExperimentConfig& c) { return fmt_list(c.k_grid); }});
    f.push_back(CONDSSL_NUM("cluster.tolerance", double, c.gmm_tolerance));
    f.push_back(CONDSSL_NUM("cluster.max_iter", std::size_t, c.gmm_max_iter));
    f.push_back(CONDSSL_NUM("cluster.seedings", std::size_t, c.gmm_seedings));

    f.push_back({"survival.alpha",
                 [](ExperimentConfig& c, std::string_view v, const std::filesystem::path&) {
                   c.alpha_grid = number_list<double>(v);
                 },
                 [](const ExperimentConfig& c) { return fmt_list(c.alpha_grid); }});
    f.push_back(CONDSSL_NUM("survival.cox_max_iter", std::size_t, c.cox_max_iter));
    f.push_back(CONDSSL_NUM("survival.brier_horizon", double, c.brier_horizon));

    f.push_back(net_hidden("e2e.hidden", &ExperimentConfig::e2e_net));
    f.push_back(CONDSSL_NUM("e2e.epochs", std::size_t, c.e2e_net.epochs));
    f.push_back(CONDSSL_NUM("e2e.learning_rate", double, c.e2e_net.learning_rate));
    f.push_back(CONDSSL_NUM("e2e.l2", double, c.e2e_net.l2));
    f.push_back(net_hidden("mil.hidden", &ExperimentConfig::mil_net));
    f.push_back(CONDSSL_NUM("mil.epochs", std::size_t, c.mil_net.epochs));
    f.push_back(CONDSSL_NUM("mil.learning_rate", double, c.mil_net.learning_rate));
    f.push_back(CONDSSL_NUM("mil.l2", double, c.mil_net.l2));
    f.push_back(CONDSSL_NUM("mil.attention_dim", std::size_t, c.mil_attention_dim));

    f.push_back(CONDSSL_NUM("folds", std::size_t, c.folds));
    f.push_back({"split.fractions",
                 [](ExperimentConfig& c, std::string_view v, const std::filesystem::path&) {
                   const auto list = number_list<double>(v);
                   if (list.size() != 3) throw BadValue{"split.fractions needs train,validation,test"};
                   c.split_fractions = {list[0], list[1], list[2]};
                 },
                 [](const ExperimentConfig& c) {
                   return fmt_list(std::vector<double>(c.split_fractions.begin(), c.split_fractions.end()));
                 }});
    f.push_back(CONDSSL_NUM("seed", std::uint64_t, c.seed));
    f.push_back({"shuffle_outcomes",
                 [](ExperimentConfig& c, std::string_view v, const std::filesystem::path&) {
                   c.shuffle_outcomes = boolean(v);
                 },
                 [](const ExperimentConfig& c) { return fmt(c.shuffle_outcomes); }});
    f.push_back(CONDSSL_NUM("probe.max_slides", std::size_t, c.probe_max_slides));
    f.push_back(CONDSSL_NUM("threads", std::size_t, c.threads));
    f.push_back({"output_dir",
                 [](ExperimentConfig& c, std::string_view v, const std::filesystem::path&) {
                   c.output_dir = std::string(v);
                 },
                 [](const ExperimentConfig& c) { return c.output_dir.string(); }});
    return f;
  }();
  return table;
}

#undef CONDSSL_NUM

void check_net(const NetConfig& net, const std::string& name) {
  if (!(net.learning_rate > 0.0)) throw InvalidArgument(name + ".learning_rate must be positive");
  if (!(net.l2 >= 0.0)) throw InvalidArgument(name + ".l2 must be >= 0");
  for (std::size_t h : net.hidden) {
    if (h == 0) throw InvalidArgument(name + ".hidden sizes must be positive");
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  if (embeddings_csv) {
    if (!std::filesystem::exists(*embeddings_csv)) {
      throw InvalidArgument("data.embeddings does not exist: " + embeddings_csv->string());
    }
    if (!outcomes_csv) throw InvalidArgument("data.outcomes is required with data.embeddings");
    if (!std::filesystem::exists(*outcomes_csv)) {
      throw InvalidArgument("data.outcomes does not exist: " + outcomes_csv->string());
    }
  } else {
    if (outcomes_csv) throw InvalidArgument("data.outcomes given without data.embeddings");
    cohort.validate();
  }
  train.validate();
  if (k_grid.empty()) throw InvalidArgument("cluster.k needs at least one value");
  for (std::size_t k : k_grid) {
    if (k == 0) throw InvalidArgument("cluster.k values must be positive");
  }
  if (!(gmm_tolerance >= 0.0)) throw InvalidArgument("cluster.tolerance must be >= 0");
  if (gmm_max_iter == 0) throw InvalidArgument("cluster.max_iter must be positive");
  if (gmm_seedings == 0) throw InvalidArgument("cluster.seedings must be positive");
  if (alpha_grid.empty()) throw InvalidArgument("survival.alpha needs at least one value");
  for (double a : alpha_grid) {
    if (!(a >= 0.0)) throw InvalidArgument("survival.alpha values must be >= 0");
  }
  if (!(brier_horizon > 0.0)) throw InvalidArgument("survival.brier_horizon must be positive");
  check_net(e2e_net, "e2e");
  check_net(mil_net, "mil");
  if (mil_attention_dim == 0) throw InvalidArgument("mil.attention_dim must be positive");
  if (folds == 0) throw InvalidArgument("folds must be positive");
  double total = 0.0;
  for (double f : split_fractions) {
    if (!(f >= 0.0)) throw InvalidArgument("split.fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument("split.fractions must sum to 1");
  if (split_fractions[0] <= 0.0 || split_fractions[2] <= 0.0) {
    throw InvalidArgument("split.fractions needs non-empty train and test parts");
  }
  if (probe_max_slides < 2) throw InvalidArgument("probe.max_slides must be at least 2");
}

ExperimentConfig parse_config(const std::string& text, const std::string& source_name,
                              const std::filesystem::path& base_dir) {
  ExperimentConfig config;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line(raw);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(source_name, line_no, "expected 'key = value'");
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
    if (it == table.end()) throw ParseError(source_name, line_no, "unknown key '" + std::string(key) + "'");
    try {
      it->set(config, value, base_dir);
    } catch (const BadValue& e) {
      throw ParseError(source_name, line_no, std::string(key) + ": " + e.what);
    }
  }
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string(), path.parent_path());
}

std::string to_config_text(const ExperimentConfig& config) {
  std::string out;
  for (const Field& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

}  // namespace condssl
