#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pedscan/common.hpp"

namespace pedscan {

// Per-person trait values and covariates; NaN marks a missing cell.
struct TraitTable {
  std::vector<std::string> person_ids;  // file row order
  std::vector<std::string> trait_names;
  std::vector<std::string> covariate_names;
  Eigen::MatrixXd values;      // n x T
  Eigen::MatrixXd covariates;  // n x C

  int n() const { return static_cast<int>(person_ids.size()); }
  int n_traits() const { return static_cast<int>(trait_names.size()); }
  static bool observed(double v) { return std::isfinite(v); }
};

// First column is the person id; requested trait/covariate columns are
// located by header name. Missing cells are empty or NA.
inline TraitTable read_traits_csv(const std::string& path,
                                  const std::vector<std::string>& trait_cols,
                                  const std::vector<std::string>& covar_cols) {
  if (trait_cols.empty()) throw config_error("at least one trait column is required");
  std::ifstream in(path);
  if (!in) throw data_error("cannot open phenotype file: " + path);
  std::string line;
  if (!std::getline(in, line) || trim(line).empty())
    throw data_error("phenotype file has no header row: " + path);
  auto header = split_trimmed(line, ',');

  auto locate = [&](const std::string& name) {
    for (size_t i = 1; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw data_error("phenotype file is missing requested column '" + name + "'");
  };
  std::vector<int> trait_idx, covar_idx;
  for (const auto& c : trait_cols) trait_idx.push_back(locate(c));
  for (const auto& c : covar_cols) covar_idx.push_back(locate(c));

  TraitTable t;
  t.trait_names = trait_cols;
  t.covariate_names = covar_cols;
  std::vector<std::vector<double>> vals, covs;
  size_t line_no = 1;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto f = split_trimmed(line, ',');
    if (f.size() < header.size())
      throw data_error("phenotype file line " + std::to_string(line_no) + ": too few fields");
    t.person_ids.push_back(f[0]);
    auto parse_cell = [&](int idx, const std::string& col) {
      if (is_missing_token(f[idx])) return nan;
      double v;
      if (!parse_double(f[idx], v))
        throw data_error("phenotype file line " + std::to_string(line_no) + ", column " + col +
                         ": cannot parse '" + f[idx] + "' as a number");
      return v;
    };
    std::vector<double> row_v, row_c;
    for (size_t j = 0; j < trait_idx.size(); ++j) row_v.push_back(parse_cell(trait_idx[j], trait_cols[j]));
    for (size_t j = 0; j < covar_idx.size(); ++j) row_c.push_back(parse_cell(covar_idx[j], covar_cols[j]));
    vals.push_back(std::move(row_v));
    covs.push_back(std::move(row_c));
  }

  const int n = t.n();
  t.values.resize(n, static_cast<int>(trait_cols.size()));
  t.covariates.resize(n, static_cast<int>(covar_cols.size()));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < t.values.cols(); ++j) t.values(i, j) = vals[i][j];
    for (int j = 0; j < t.covariates.cols(); ++j) t.covariates(i, j) = covs[i][j];
  }
  return t;
}

inline void write_traits_csv(const std::string& path, const TraitTable& t) {
  auto out = open_output(path);
  out << "PersonID";
  for (const auto& c : t.trait_names) out << ',' << c;
  for (const auto& c : t.covariate_names) out << ',' << c;
  out << '\n';
  for (int i = 0; i < t.n(); ++i) {
    out << t.person_ids[i];
    for (int j = 0; j < t.values.cols(); ++j)
      out << ',' << (TraitTable::observed(t.values(i, j)) ? format_g(t.values(i, j), 17) : "NA");
    for (int j = 0; j < t.covariates.cols(); ++j)
      out << ',' << (TraitTable::observed(t.covariates(i, j)) ? format_g(t.covariates(i, j), 17) : "NA");
    out << '\n';
  }
}

}  // namespace pedscan
