#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ssar {

/// (1/N) sum |y_i - yhat_i|
double mae(std::span<const double> y, std::span<const double> yhat);

/// Percentage of subjects with |y_i - yhat_i| <= alpha (inclusive).
double cs(std::span<const double> y, std::span<const double> yhat, double alpha);

/// Half-open age range [lo, hi); the last bin of a table also includes hi.
struct AgeBin {
  double lo = 0.0;
  double hi = 0.0;
  std::string label;
};

/// Parses "0-1,1-2,2-3"; labels keep the text as written.
std::vector<AgeBin> parse_bins(const std::string& text);

struct GroupMae {
  AgeBin bin;
  std::size_t count = 0;
  double mae = 0.0;  // NaN when the bin is empty
};

struct GroupTable {
  std::vector<GroupMae> groups;
  /// Subjects whose true age falls in no bin.
  std::size_t outside = 0;
};

/// Bins must be non-empty, non-overlapping and have lo < hi.
GroupTable group_mae(std::span<const double> y, std::span<const double> yhat, const std::vector<AgeBin>& bins);

struct CsSample {
  double alpha = 0.0;
  double percent = 0.0;
};

/// CS at alpha = 0, step, 2*step, ..., alpha_max.
std::vector<CsSample> cs_curve(std::span<const double> y, std::span<const double> yhat, double alpha_max = 2.0,
                               double step = 0.1);

struct EvalReport {
  std::string model;
  std::size_t n = 0;
  /// Subject-weighted MAE over every evaluated subject.
  double overall_mae = 0.0;
  /// Unweighted mean of the non-empty group MAEs.
  double mean_group_mae = 0.0;
  GroupTable groups;
  std::vector<CsSample> cs_samples;
};

EvalReport make_report(const std::string& model, std::span<const double> y, std::span<const double> yhat,
                       const std::vector<AgeBin>& bins, double alpha_max = 2.0, double step = 0.1);

std::string report_json(const EvalReport& report);
/// `alpha,cs_percent`, percentages to two decimals.
std::string cs_curve_csv(const std::vector<CsSample>& curve);
/// `group,lo,hi,count,mae`; empty groups print "n/a".
std::string group_long_csv(const EvalReport& report);
/// Age-group table, one row per model:
/// `method,<bin labels...>,average,average_of_groups`, MAE to two decimals.
std::string group_table_csv(const std::vector<EvalReport>& reports);

}  // namespace ssar
