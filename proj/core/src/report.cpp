#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "condssl/config.hpp"
#include "condssl/error.hpp"
#include "condssl/pipeline.hpp"

namespace condssl {
namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

std::string file_stem(const std::string& name) {
  std::string out;
  for (char c : name) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') out += c;
    else if (c == '=' || c == '[') out += '_';
  }
  return out;
}

class Writer {
 public:
  explicit Writer(std::filesystem::path dir) : dir_(std::move(dir)) {}

  void write(const std::string& relative, const std::string& content) {
    const std::filesystem::path target = dir_ / relative;
    std::error_code ec;
    std::filesystem::create_directories(target.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + target.parent_path().string() + ": " + ec.message());
    std::filesystem::path tmp = target;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
      out << content;
      out.flush();
      if (!out) throw IoError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, target, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " to " + target.string() + ": " + ec.message());
    files_.push_back(relative);
  }

  const std::vector<std::string>& files() const { return files_; }

 private:
  std::filesystem::path dir_;
  std::vector<std::string> files_;
};

// Minimal SVG canvas with a single plotting area.
class Plot {
 public:
  Plot(std::string title, std::string x_label, std::string y_label, double x0, double x1, double y0, double y1)
      : x0_(x0), x1_(x1 > x0 ? x1 : x0 + 1.0), y0_(y0), y1_(y1 > y0 ? y1 : y0 + 1.0) {
    body_ << "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title << "</text>\n";
    body_ << "<text x=\"320\" y=\"470\" text-anchor=\"middle\" font-size=\"12\">" << x_label << "</text>\n";
    body_ << "<text x=\"16\" y=\"240\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 240)\">"
          << y_label << "</text>\n";
    body_ << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kRight - kLeft << "\" height=\""
          << kBottom - kTop << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int i = 0; i <= 4; ++i) {
      const double xv = x0_ + (x1_ - x0_) * i / 4.0, yv = y0_ + (y1_ - y0_) * i / 4.0;
      body_ << "<text x=\"" << px(xv) << "\" y=\"" << kBottom + 16 << "\" text-anchor=\"middle\" font-size=\"10\">"
            << short_num(xv) << "</text>\n";
      body_ << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(yv) + 3 << "\" text-anchor=\"end\" font-size=\"10\">"
            << short_num(yv) << "</text>\n";
    }
  }

  double px(double x) const { return kLeft + (x - x0_) / (x1_ - x0_) * (kRight - kLeft); }
  double py(double y) const { return kBottom - (y - y0_) / (y1_ - y0_) * (kBottom - kTop); }

  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& color) {
    if (pts.empty()) return;
    body_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : pts) body_ << short_coord(px(x)) << ',' << short_coord(py(y)) << ' ';
    body_ << "\"/>\n";
  }

  void dot(double x, double y, const std::string& color) {
    body_ << "<circle cx=\"" << short_coord(px(x)) << "\" cy=\"" << short_coord(py(y)) << "\" r=\"2.5\" fill=\""
          << color << "\"/>\n";
  }

  void bar(double x_center, double width, double value, const std::string& color) {
    const double top = py(std::max(value, y0_)), base = py(y0_);
    body_ << "<rect x=\"" << short_coord(px(x_center - width / 2)) << "\" y=\"" << short_coord(top)
          << "\" width=\"" << short_coord(px(x_center + width / 2) - px(x_center - width / 2)) << "\" height=\""
          << short_coord(base - top) << "\" fill=\"" << color << "\"/>\n";
  }

  void segment(double xa, double ya, double xb, double yb, const std::string& color) {
    body_ << "<line x1=\"" << short_coord(px(xa)) << "\" y1=\"" << short_coord(py(ya)) << "\" x2=\""
          << short_coord(px(xb)) << "\" y2=\"" << short_coord(py(yb)) << "\" stroke=\"" << color << "\"/>\n";
  }

  void label(double x, double y, const std::string& text, const std::string& anchor = "middle") {
    body_ << "<text x=\"" << short_coord(px(x)) << "\" y=\"" << short_coord(py(y)) << "\" text-anchor=\"" << anchor
          << "\" font-size=\"10\">" << text << "</text>\n";
  }

  void legend(std::size_t slot, const std::string& text, const std::string& color) {
    const int y = kTop + 14 + static_cast<int>(slot) * 14;
    body_ << "<rect x=\"" << kRight - 120 << "\" y=\"" << y - 8 << "\" width=\"10\" height=\"10\" fill=\"" << color
          << "\"/><text x=\"" << kRight - 105 << "\" y=\"" << y + 1 << "\" font-size=\"10\">" << text << "</text>\n";
  }

  void note(const std::string& text) {
    body_ << "<text x=\"320\" y=\"240\" text-anchor=\"middle\" font-size=\"14\" fill=\"#888\">" << text
          << "</text>\n";
  }

  std::string str() const {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" viewBox=\"0 0 640 480\">\n"
           "<rect width=\"640\" height=\"480\" fill=\"white\"/>\n" +
           body_.str() + "</svg>\n";
  }

 private:
  static constexpr int kLeft = 70, kRight = 610, kTop = 40, kBottom = 440;

  static std::string short_coord(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
  }

  double x0_, x1_, y0_, y1_;
  std::ostringstream body_;
};

const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % 10];
}

std::string metrics_csv(const ExperimentReport& r) {
  std::string s = "method,fold,c_index,brier_2y\n";
  for (const MetricRow& m : r.metrics) {
    s += csv_field(m.method) + "," + std::to_string(m.fold) + "," + num(m.c_index) + "," + num(m.brier) + "\n";
  }
  for (const AggregateRow& a : r.aggregates) {
    s += csv_field(a.method) + ",mean," + num(a.c_index_mean) + "," + num(a.brier_mean) + "\n";
  }
  return s;
}

std::string summary_csv(const ExperimentReport& r) {
  std::string s = "method,n_folds,c_index_mean,c_index_ci95,brier_2y_mean,brier_2y_ci95\n";
  for (const AggregateRow& a : r.aggregates) {
    s += csv_field(a.method) + "," + std::to_string(a.n_folds) + "," + num(a.c_index_mean) + "," +
         num(a.c_index_ci95) + "," + num(a.brier_mean) + "," + num(a.brier_ci95) + "\n";
  }
  return s;
}

std::string hazard_csv(const ExperimentReport& r) {
  std::string s = "cluster,exp_beta\n";
  for (const auto& [cluster, hr] : r.hazard_ratios) s += std::to_string(cluster) + "," + num(hr) + "\n";
  return s;
}

std::string km_csv(const ExperimentReport& r) {
  std::string s = "group,time,at_risk,events,censored,survival\n";
  for (const KmStratum& k : r.km_strata) {
    for (std::size_t i = 0; i < k.curve.times.size(); ++i) {
      s += k.label + "," + std::to_string(k.curve.times[i]) + "," + std::to_string(k.curve.at_risk[i]) + "," +
           std::to_string(k.curve.events[i]) + "," + std::to_string(k.curve.censored[i]) + "," +
           num(k.curve.survival[i]) + "\n";
    }
  }
  return s;
}

std::string probe_csv(const ExperimentReport& r) {
  std::string s = "method,fold,accuracy,chance,n_slides,n_test\n";
  for (const ProbeRow& p : r.probes) {
    s += csv_field(p.method) + "," + std::to_string(p.fold) + "," + num(p.result.accuracy) + "," +
         num(p.result.chance) + "," + std::to_string(p.result.n_slides) + "," + std::to_string(p.result.n_test) +
         "\n";
  }
  return s;
}

std::string selection_csv(const ExperimentReport& r) {
  std::string s = "method,fold,k,alpha,validation_c_index\n";
  for (const SelectionRow& x : r.selections) {
    s += csv_field(x.method) + "," + std::to_string(x.fold) + "," + std::to_string(x.k) + "," + num(x.alpha) + "," +
         num(x.validation_c_index) + "\n";
  }
  return s;
}

std::string errors_csv(const ExperimentReport& r) {
  std::string s = "method,fold,stage,message\n";
  for (const FoldError& e : r.errors) {
    s += csv_field(e.method) + "," + std::to_string(e.fold) + "," + csv_field(e.stage) + "," + csv_field(e.message) +
         "\n";
  }
  return s;
}

std::string projection_csv(const ExperimentReport& r) {
  std::string s = "slide_id,pc1,pc2\n";
  for (const ProjectionPoint& p : r.projection) {
    s += std::to_string(p.slide_id) + "," + num(p.x) + "," + num(p.y) + "\n";
  }
  return s;
}

std::string trace_csv(const LossTrace& t) {
  std::string s = "epoch,loss\n";
  for (std::size_t i = 0; i < t.values.size(); ++i) s += std::to_string(i + 1) + "," + num(t.values[i]) + "\n";
  return s;
}

std::string km_svg(const ExperimentReport& r) {
  int t_max = 1;
  for (const KmStratum& k : r.km_strata) {
    if (!k.curve.times.empty()) t_max = std::max(t_max, k.curve.times.back());
  }
  Plot plot("Recurrence-free survival by predicted risk", "time (6-month units)", "survival", 0, t_max, 0, 1);
  if (r.km_strata.empty()) plot.note("no data");
  for (std::size_t i = 0; i < r.km_strata.size(); ++i) {
    const KmStratum& k = r.km_strata[i];
    std::vector<std::pair<double, double>> pts{{0.0, 1.0}};
    double s = 1.0;
    for (std::size_t j = 0; j < k.curve.times.size(); ++j) {
      pts.push_back({static_cast<double>(k.curve.times[j]), s});
      s = k.curve.survival[j];
      pts.push_back({static_cast<double>(k.curve.times[j]), s});
    }
    const std::string color = k.label == "high" ? "#d62728" : "#1f77b4";
    plot.polyline(pts, color);
    plot.legend(i, k.label + " risk (n=" + std::to_string(k.n) + ")", color);
  }
  return plot.str();
}

std::string hazard_svg(const ExperimentReport& r) {
  double hi = 1.0;
  for (const auto& [c, hr] : r.hazard_ratios) hi = std::max(hi, hr);
  const double n = static_cast<double>(std::max<std::size_t>(r.hazard_ratios.size(), 1));
  Plot plot("Cluster hazard ratios exp(beta)", "cluster (sorted)", "exp(beta)", 0, n, 0, hi * 1.05);
  if (r.hazard_ratios.empty()) plot.note("no data");
  for (std::size_t i = 0; i < r.hazard_ratios.size(); ++i) {
    const double hr = r.hazard_ratios[i].second;
    plot.bar(i + 0.5, 0.8, hr, hr >= 1.0 ? "#d62728" : "#1f77b4");
  }
  if (!r.hazard_ratios.empty()) plot.segment(0, 1.0, n, 1.0, "#000");
  return plot.str();
}

std::string methods_svg(const ExperimentReport& r) {
  const double n = static_cast<double>(std::max<std::size_t>(r.aggregates.size(), 1));
  Plot plot("Test C-index by method (mean, 0.95 interval)", "method", "C-index", 0, n, 0, 1);
  if (r.aggregates.empty()) plot.note("no data");
  for (std::size_t i = 0; i < r.aggregates.size(); ++i) {
    const AggregateRow& a = r.aggregates[i];
    plot.bar(i + 0.5, 0.6, a.c_index_mean, palette(i));
    if (std::isfinite(a.c_index_ci95)) {
      plot.segment(i + 0.5, a.c_index_mean - a.c_index_ci95, i + 0.5, a.c_index_mean + a.c_index_ci95, "#000");
    }
    plot.label(i + 0.5, 0.03, a.method);
  }
  plot.segment(0, 0.5, n, 0.5, "#888");
  return plot.str();
}

std::string loss_svg(const ExperimentReport& r) {
  std::vector<const LossTrace*> ssl;
  for (const LossTrace& t : r.loss_traces) {
    if (t.name.rfind("ssl", 0) == 0 && !t.values.empty()) ssl.push_back(&t);
  }
  double lo = 0.0, hi = 1.0, len = 1.0;
  if (!ssl.empty()) {
    lo = hi = ssl.front()->values.front();
    for (const LossTrace* t : ssl) {
      for (double v : t->values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      len = std::max(len, static_cast<double>(t->values.size()));
    }
  }
  Plot plot("Contrastive loss per epoch", "epoch", "mean InfoNCE", 1, len, lo, hi);
  if (ssl.empty()) plot.note("no data");
  for (std::size_t i = 0; i < ssl.size(); ++i) {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t e = 0; e < ssl[i]->values.size(); ++e) pts.push_back({e + 1.0, ssl[i]->values[e]});
    plot.polyline(pts, palette(i));
    if (i < 20) plot.legend(i, ssl[i]->name + " fold " + std::to_string(ssl[i]->fold), palette(i));
  }
  return plot.str();
}

std::string projection_svg(const ExperimentReport& r) {
  double x0 = -1, x1 = 1, y0 = -1, y1 = 1;
  if (!r.projection.empty()) {
    x0 = x1 = r.projection.front().x;
    y0 = y1 = r.projection.front().y;
    for (const ProjectionPoint& p : r.projection) {
      x0 = std::min(x0, p.x);
      x1 = std::max(x1, p.x);
      y0 = std::min(y0, p.y);
      y1 = std::max(y1, p.y);
    }
  }
  Plot plot("Test-tile embeddings, first two principal components", "PC1", "PC2", x0, x1, y0, y1);
  if (r.projection.empty()) plot.note("no data");
  std::map<std::int64_t, std::size_t> color_of;
  for (const ProjectionPoint& p : r.projection) {
    const auto [it, inserted] = color_of.emplace(p.slide_id, color_of.size());
    if (inserted) plot.legend(it->second, "slide " + std::to_string(p.slide_id), palette(it->second));
    plot.dot(p.x, p.y, palette(it->second));
  }
  return plot.str();
}

nlohmann::json maybe(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json report_json(const ExperimentReport& r) {
  using nlohmann::json;
  json j;
  j["kind"] = r.kind;
  j["metrics"] = json::array();
  for (const MetricRow& m : r.metrics) {
    j["metrics"].push_back({{"method", m.method}, {"fold", m.fold}, {"c_index", maybe(m.c_index)},
                            {"brier_2y", maybe(m.brier)}});
  }
  j["aggregates"] = json::array();
  for (const AggregateRow& a : r.aggregates) {
    j["aggregates"].push_back({{"method", a.method},
                               {"n_folds", a.n_folds},
                               {"c_index_mean", maybe(a.c_index_mean)},
                               {"c_index_sd", maybe(a.c_index_sd)},
                               {"c_index_ci95", maybe(a.c_index_ci95)},
                               {"brier_2y_mean", maybe(a.brier_mean)},
                               {"brier_2y_sd", maybe(a.brier_sd)},
                               {"brier_2y_ci95", maybe(a.brier_ci95)}});
  }
  j["hazard_ratios"] = json::array();
  for (const auto& [c, hr] : r.hazard_ratios) j["hazard_ratios"].push_back({{"cluster", c}, {"exp_beta", maybe(hr)}});
  j["probes"] = json::array();
  for (const ProbeRow& p : r.probes) {
    j["probes"].push_back({{"method", p.method}, {"fold", p.fold}, {"accuracy", p.result.accuracy},
                           {"chance", p.result.chance}, {"n_slides", p.result.n_slides}, {"n_test", p.result.n_test}});
  }
  j["selections"] = json::array();
  for (const SelectionRow& s : r.selections) {
    j["selections"].push_back({{"method", s.method}, {"fold", s.fold}, {"k", s.k}, {"alpha", s.alpha},
                               {"validation_c_index", maybe(s.validation_c_index)}});
  }
  j["errors"] = json::array();
  for (const FoldError& e : r.errors) {
    j["errors"].push_back({{"method", e.method}, {"fold", e.fold}, {"stage", e.stage}, {"message", e.message}});
  }
  j["loss_traces"] = json::array();
  for (const LossTrace& t : r.loss_traces) {
    j["loss_traces"].push_back({{"name", t.name}, {"fold", t.fold}, {"epochs", t.values.size()},
                                {"first", t.values.empty() ? json(nullptr) : maybe(t.values.front())},
                                {"last", t.values.empty() ? json(nullptr) : maybe(t.values.back())}});
  }
  return j;
}

}  // namespace

void emit_report(const ExperimentReport& report, const std::filesystem::path& dir) {
  Writer w(dir);
  w.write("metrics.csv", metrics_csv(report));
  w.write("summary.csv", summary_csv(report));
  w.write("hazard_ratios.csv", hazard_csv(report));
  w.write("km_strata.csv", km_csv(report));
  w.write("probe.csv", probe_csv(report));
  w.write("selection.csv", selection_csv(report));
  w.write("errors.csv", errors_csv(report));
  w.write("projection.csv", projection_csv(report));
  for (const LossTrace& t : report.loss_traces) {
    w.write("loss/" + file_stem(t.name) + "_fold" + std::to_string(t.fold) + ".csv", trace_csv(t));
  }
  w.write("plots/km_strata.svg", km_svg(report));
  w.write("plots/hazard_ratios.svg", hazard_svg(report));
  w.write("plots/methods.svg", methods_svg(report));
  w.write("plots/ssl_loss.svg", loss_svg(report));
  w.write("plots/embedding_pca.svg", projection_svg(report));
  w.write("config.txt", report.config_text);
  w.write("report.json", report_json(report).dump(2) + "\n");

  nlohmann::json manifest;
  manifest["inputs"] = report.inputs;
  manifest["config_sha256"] = sha256_hex(report.config_text);
  manifest["seeds"] = nlohmann::json::object();
  for (const auto& [name, seed] : report.seeds) manifest["seeds"][name] = seed;
  manifest["files"] = w.files();
  w.write("manifest.json", manifest.dump(2) + "\n");
}

}  // namespace condssl
