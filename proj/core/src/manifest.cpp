#include "ssar/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "ssar/errors.hpp"

namespace ssar {

namespace {
constexpr const char* kHeader = "subject_id,volume_path,age_years,cohort,split";

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}
}  // namespace

std::string to_string(Split split) { return split == Split::Train ? "train" : "test"; }

Split parse_split(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "test") return Split::Test;
  throw DataError("invalid split label '" + text + "' (expected train or test)");
}

std::filesystem::path Manifest::resolve(const ManifestRow& row) const {
  std::filesystem::path p(row.volume_path);
  return p.is_absolute() ? p : base_dir / p;
}

std::vector<ManifestRow> Manifest::select(Split split) const {
  std::vector<ManifestRow> out;
  std::copy_if(rows.begin(), rows.end(), std::back_inserter(out), [&](const auto& r) { return r.split == split; });
  return out;
}

void Manifest::validate() const {
  std::set<std::string> seen;
  for (const auto& r : rows) {
    if (r.subject_id.empty()) throw DataError("manifest row with empty subject_id");
    if (!seen.insert(r.subject_id).second) throw DataError("duplicate subject_id '" + r.subject_id + "' in manifest");
    if (!(r.age_years >= 0.0 && r.age_years <= 120.0)) {
      throw DataError("subject " + r.subject_id + ": age outside [0, 120]");
    }
  }
}

Manifest read_manifest(const std::filesystem::path& path, bool check_paths) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("manifest " + path.string() + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHeader) throw DataError("manifest " + path.string() + " must start with header '" + kHeader + "'");

  Manifest m;
  m.base_dir = path.parent_path();
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != 5) {
      throw DataError("manifest " + path.string() + " line " + std::to_string(line_no) + ": expected 5 fields");
    }
    ManifestRow row;
    row.subject_id = fields[0];
    row.volume_path = fields[1];
    try {
      std::size_t pos = 0;
      row.age_years = std::stod(fields[2], &pos);
      if (pos != fields[2].size()) throw std::invalid_argument(fields[2]);
    } catch (const std::exception&) {
      throw DataError("manifest " + path.string() + " line " + std::to_string(line_no) + ": bad age '" + fields[2] +
                      "'");
    }
    row.cohort = fields[3];
    row.split = parse_split(fields[4]);
    m.rows.push_back(std::move(row));
  }
  m.validate();
  if (check_paths) {
    for (const auto& r : m.rows) {
      if (!std::filesystem::exists(m.resolve(r))) {
        throw DataError("manifest " + path.string() + ": volume for " + r.subject_id + " not found at " +
                        m.resolve(r).string());
      }
    }
  }
  return m;
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  manifest.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << kHeader << '\n';
  out.precision(17);
  for (const auto& r : manifest.rows) {
    for (const auto* field : {&r.subject_id, &r.volume_path, &r.cohort}) {
      if (field->find(',') != std::string::npos || field->find('\n') != std::string::npos) {
        throw DataError("manifest field '" + *field + "' contains a comma or newline");
      }
    }
    out << r.subject_id << ',' << r.volume_path << ',' << r.age_years << ',' << r.cohort << ','
        << to_string(r.split) << '\n';
  }
}

Manifest split_manifest(const Manifest& manifest, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ConfigError("train_frac must lie strictly between 0 and 1");
  const std::size_t n = manifest.rows.size();
  if (n < 2) throw DataError("cannot split fewer than 2 subjects");
  manifest.validate();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  // The epsilon absorbs representation error such as 0.29 * 100 = 28.999...
  auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_frac + 1e-9));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

  Manifest out = manifest;
  for (std::size_t i = 0; i < n; ++i) out.rows[order[i]].split = i < n_train ? Split::Train : Split::Test;
  return out;
}

}  // namespace ssar
