#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "pedscan/common.hpp"
#include "pedscan/genotype.hpp"
#include "pedscan/stats.hpp"

namespace pedscan {

struct CallRateFilterResult {
  GenotypeMatrix filtered;
  std::vector<size_t> kept_snps;         // original indices
  std::vector<size_t> kept_individuals;  // original indices
  std::vector<std::pair<std::string, double>> dropped_snps;         // name, call rate
  std::vector<std::pair<std::string, double>> dropped_individuals;  // id, call rate
};

// Two passes: SNPs are filtered against all individuals first, then
// individuals against the retained SNPs only.
inline CallRateFilterResult call_rate_filter(const GenotypeMatrix& g, double min_call_rate) {
  CallRateFilterResult res;
  const size_t n = g.n_individuals();
  const size_t s_count = g.n_snps();
  if (n == 0 || s_count == 0) throw data_error("call-rate filter received an empty genotype set");

  for (size_t s = 0; s < s_count; ++s) {
    const double rate = 1.0 - static_cast<double>(g.count_missing_in_snp(s)) / n;
    if (rate >= min_call_rate)
      res.kept_snps.push_back(s);
    else
      res.dropped_snps.emplace_back(g.snps()[s].name, rate);
  }
  if (res.kept_snps.empty())
    throw data_error("call-rate filter removed every SNP");

  std::vector<size_t> missing_per_ind(n, 0);
  std::vector<std::uint8_t> codes(n);
  for (size_t s : res.kept_snps) {
    g.decode_snp(s, codes.data());
    for (size_t i = 0; i < n; ++i)
      if (codes[i] == GenotypeMatrix::kMissing) ++missing_per_ind[i];
  }
  for (size_t i = 0; i < n; ++i) {
    const double rate =
        1.0 - static_cast<double>(missing_per_ind[i]) / static_cast<double>(res.kept_snps.size());
    if (rate >= min_call_rate)
      res.kept_individuals.push_back(i);
    else
      res.dropped_individuals.emplace_back(g.individual_ids()[i], rate);
  }
  if (res.kept_individuals.empty())
    throw data_error("call-rate filter removed every individual");

  res.filtered = g.subset(res.kept_snps, res.kept_individuals);
  return res;
}

// Exact Hardy-Weinberg test on genotype counts: the full conditional
// distribution of the heterozygote count given the allele counts, two-sided
// by probability mass.
inline double hwe_exact_p(long n_het, long n_hom1, long n_hom2) {
  if (n_het < 0 || n_hom1 < 0 || n_hom2 < 0)
    throw data_error("negative genotype count in the exact test");
  const long n = n_het + n_hom1 + n_hom2;
  if (n == 0) return 1.0;
  const long rare = 2 * std::min(n_hom1, n_hom2) + n_het;
  if (rare == 0) return 1.0;

  std::vector<double> probs(static_cast<size_t>(rare) + 1, 0.0);
  long mid = static_cast<long>(static_cast<double>(rare) * (2.0 * n - rare) / (2.0 * n));
  if ((mid % 2) != (rare % 2)) ++mid;

  probs[static_cast<size_t>(mid)] = 1.0;
  double sum = 1.0;
  // Downward: P(h-2) = P(h) h (h-1) / (4 (homr+1) (homc+1)).
  long homr = (rare - mid) / 2;
  long homc = n - mid - homr;
  for (long h = mid; h > 1; h -= 2) {
    probs[static_cast<size_t>(h - 2)] =
        probs[static_cast<size_t>(h)] * h * (h - 1) / (4.0 * (homr + 1) * (homc + 1));
    sum += probs[static_cast<size_t>(h - 2)];
    ++homr;
    ++homc;
  }
  // Upward: P(h+2) = P(h) 4 homr homc / ((h+1)(h+2)).
  homr = (rare - mid) / 2;
  homc = n - mid - homr;
  for (long h = mid; h <= rare - 2; h += 2) {
    probs[static_cast<size_t>(h + 2)] =
        probs[static_cast<size_t>(h)] * 4.0 * homr * homc / ((h + 1.0) * (h + 2.0));
    sum += probs[static_cast<size_t>(h + 2)];
    --homr;
    --homc;
  }

  const double target = probs[static_cast<size_t>(n_het)] * (1.0 + 1e-12);
  double p = 0.0;
  for (double q : probs)
    if (q <= target) p += q;
  return std::min(1.0, p / sum);
}

// Frequency of allele 1 (the dosage-counted allele). On X, males carry a
// single copy; male heterozygote codes are skipped as undefined.
inline double allele1_frequency(const std::vector<std::uint8_t>& codes,
                                const std::vector<char>& male, bool x_linked) {
  double copies = 0.0, total = 0.0;
  for (size_t i = 0; i < codes.size(); ++i) {
    const std::uint8_t c = codes[i];
    if (c == GenotypeMatrix::kMissing) continue;
    if (x_linked && male[i]) {
      if (c == 1) continue;
      copies += c / 2;
      total += 1.0;
    } else {
      copies += c;
      total += 2.0;
    }
  }
  if (total == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return copies / total;
}

inline double minor_allele_frequency(double allele1_freq) {
  if (!std::isfinite(allele1_freq)) return allele1_freq;
  return std::min(allele1_freq, 1.0 - allele1_freq);
}

// lambda_GC on the 1-df scale: median observed quantile over the chi-square(1)
// median, regardless of the tests' own degrees of freedom.
inline double genomic_inflation(const std::vector<double>& pvals) {
  if (pvals.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> stats;
  stats.reserve(pvals.size());
  for (double p : pvals)
    stats.push_back(chisq_quantile_from_upper_p(std::min(1.0, std::max(p, 1e-300)), 1));
  return median(std::move(stats)) / chisq1_median();
}

}  // namespace pedscan
