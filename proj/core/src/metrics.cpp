#include "ssar/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <sstream>

#include "ssar/errors.hpp"
#include "ssar/text.hpp"

namespace ssar {

namespace {

void check_pair(std::span<const double> y, std::span<const double> yhat, const char* op) {
  if (y.empty() || yhat.empty()) throw DataError(std::string(op) + ": empty input");
  if (y.size() != yhat.size()) {
    throw DataError(std::string(op) + ": " + std::to_string(y.size()) + " targets vs " + std::to_string(yhat.size()) +
                    " predictions");
  }
}

bool in_bin(double age, const AgeBin& bin, bool last) {
  return age >= bin.lo && (age < bin.hi || (last && age == bin.hi));
}

std::string mae_cell(double value) { return std::isnan(value) ? "n/a" : format_fixed(value, 2); }

}  // namespace

double mae(std::span<const double> y, std::span<const double> yhat) {
  check_pair(y, yhat, "mae");
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) total += std::abs(y[i] - yhat[i]);
  return total / static_cast<double>(y.size());
}

double cs(std::span<const double> y, std::span<const double> yhat, double alpha) {
  check_pair(y, yhat, "cs");
  if (!(alpha >= 0.0)) throw ConfigError("cs: alpha must be non-negative");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (std::abs(y[i] - yhat[i]) <= alpha) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(y.size());
}

std::vector<AgeBin> parse_bins(const std::string& text) {
  std::vector<AgeBin> bins;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto dash = item.find('-', 1);
    if (dash == std::string::npos) throw ConfigError("age bin '" + item + "' must look like lo-hi");
    AgeBin b;
    try {
      b.lo = std::stod(item.substr(0, dash));
      b.hi = std::stod(item.substr(dash + 1));
    } catch (const std::exception&) {
      throw ConfigError("age bin '" + item + "' has non-numeric bounds");
    }
    b.label = item;
    bins.push_back(b);
  }
  if (bins.empty()) throw ConfigError("no age bins given");
  return bins;
}

GroupTable group_mae(std::span<const double> y, std::span<const double> yhat, const std::vector<AgeBin>& bins) {
  check_pair(y, yhat, "group_mae");
  if (bins.empty()) throw ConfigError("group_mae: empty bin list");
  for (const auto& b : bins) {
    if (!(b.lo < b.hi)) throw ConfigError("age bin " + b.label + " must have lo < hi");
  }
  auto sorted = bins;
  std::sort(sorted.begin(), sorted.end(), [](const AgeBin& a, const AgeBin& b) { return a.lo < b.lo; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i].lo < sorted[i - 1].hi) {
      throw ConfigError("age bins " + sorted[i - 1].label + " and " + sorted[i].label + " overlap");
    }
  }
  const double top = sorted.back().hi;

  GroupTable table;
  std::vector<double> totals(bins.size(), 0.0);
  table.groups.resize(bins.size());
  for (std::size_t b = 0; b < bins.size(); ++b) table.groups[b].bin = bins[b];
  for (std::size_t i = 0; i < y.size(); ++i) {
    bool placed = false;
    for (std::size_t b = 0; b < bins.size() && !placed; ++b) {
      if (in_bin(y[i], bins[b], bins[b].hi == top)) {
        totals[b] += std::abs(y[i] - yhat[i]);
        ++table.groups[b].count;
        placed = true;
      }
    }
    if (!placed) ++table.outside;
  }
  for (std::size_t b = 0; b < bins.size(); ++b) {
    auto& g = table.groups[b];
    g.mae = g.count ? totals[b] / static_cast<double>(g.count) : std::numeric_limits<double>::quiet_NaN();
  }
  return table;
}

std::vector<CsSample> cs_curve(std::span<const double> y, std::span<const double> yhat, double alpha_max,
                               double step) {
  check_pair(y, yhat, "cs_curve");
  if (!(step > 0.0)) throw ConfigError("cs_curve: step must be positive");
  if (!(alpha_max >= 0.0)) throw ConfigError("cs_curve: alpha_max must be non-negative");
  const auto samples = static_cast<std::size_t>(std::floor(alpha_max / step + 1e-9)) + 1;
  std::vector<CsSample> curve;
  curve.reserve(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    // Round to 12 decimals so i * step lands on the intended grid value (0.3, not 0.30000000000000004).
    const double alpha = std::round(static_cast<double>(i) * step * 1e12) / 1e12;
    curve.push_back({alpha, cs(y, yhat, alpha)});
  }
  return curve;
}

EvalReport make_report(const std::string& model, std::span<const double> y, std::span<const double> yhat,
                       const std::vector<AgeBin>& bins, double alpha_max, double step) {
  EvalReport r;
  r.model = model;
  r.n = y.size();
  r.overall_mae = mae(y, yhat);
  r.groups = group_mae(y, yhat, bins);
  double total = 0.0;
  std::size_t nonempty = 0;
  for (const auto& g : r.groups.groups) {
    if (g.count) {
      total += g.mae;
      ++nonempty;
    }
  }
  r.mean_group_mae = nonempty ? total / static_cast<double>(nonempty) : std::numeric_limits<double>::quiet_NaN();
  r.cs_samples = cs_curve(y, yhat, alpha_max, step);
  return r;
}

std::string report_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["model"] = report.model;
  j["n"] = report.n;
  j["overall_mae"] = report.overall_mae;
  j["mean_group_mae"] = std::isnan(report.mean_group_mae) ? nlohmann::ordered_json() : nlohmann::ordered_json(report.mean_group_mae);
  auto groups = nlohmann::ordered_json::array();
  for (const auto& g : report.groups.groups) {
    nlohmann::ordered_json e;
    e["label"] = g.bin.label;
    e["lo"] = g.bin.lo;
    e["hi"] = g.bin.hi;
    e["count"] = g.count;
    e["mae"] = g.count ? nlohmann::ordered_json(g.mae) : nlohmann::ordered_json("n/a");
    groups.push_back(e);
  }
  j["group_mae"] = groups;
  j["outside_bins"] = report.groups.outside;
  auto curve = nlohmann::ordered_json::array();
  for (const auto& s : report.cs_samples) {
    nlohmann::ordered_json e;
    e["alpha"] = s.alpha;
    e["cs_percent"] = std::round(s.percent * 100.0) / 100.0;
    curve.push_back(e);
  }
  j["cs_samples"] = curve;
  return j.dump(2) + "\n";
}

std::string cs_curve_csv(const std::vector<CsSample>& curve) {
  std::string out = "alpha,cs_percent\n";
  for (const auto& s : curve) out += format_fixed(s.alpha, 2) + "," + format_fixed(s.percent, 2) + "\n";
  return out;
}

std::string group_long_csv(const EvalReport& report) {
  std::string out = "group,lo,hi,count,mae\n";
  for (const auto& g : report.groups.groups) {
    out += g.bin.label + "," + format_shortest(g.bin.lo) + "," + format_shortest(g.bin.hi) + "," +
           std::to_string(g.count) + "," + (g.count ? format_shortest(g.mae) : std::string("n/a")) + "\n";
  }
  return out;
}

std::string group_table_csv(const std::vector<EvalReport>& reports) {
  if (reports.empty()) return {};
  std::string out = "method";
  for (const auto& g : reports.front().groups.groups) out += "," + g.bin.label;
  out += ",average,average_of_groups\n";
  for (const auto& r : reports) {
    out += r.model;
    for (const auto& g : r.groups.groups) out += "," + mae_cell(g.mae);
    out += "," + mae_cell(r.overall_mae) + "," + mae_cell(r.mean_group_mae) + "\n";
  }
  return out;
}

}  // namespace ssar
