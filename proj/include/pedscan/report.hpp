#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pedscan/common.hpp"
#include "pedscan/dataset.hpp"
#include "pedscan/genotype.hpp"
#include "pedscan/qc.hpp"
#include "pedscan/scan.hpp"
#include "pedscan/vcmodel.hpp"

namespace pedscan {

// -log10 with the floor that keeps zero p-values plottable.
inline double neglog10(double p) { return -std::log10(std::max(p, 1e-300)); }

inline void write_scan_results(const std::string& path, const GenotypeMatrix& genotypes,
                               const ScanSummary& scan) {
  auto out = open_output(path);
  out << "snp\tchr\tbp\tmaf_all\tmaf_founders\thwe_p\tstat\tp\ttested\treason\n";
  for (size_t s = 0; s < scan.rows.size(); ++s) {
    const SnpInfo& info = genotypes.snps()[s];
    const SnpScanRow& row = scan.rows[s];
    out << info.name << '\t' << info.chromosome << '\t' << info.base_pair << '\t'
        << format_g(row.maf_all, 6) << '\t' << format_g(row.maf_founders, 6) << '\t'
        << format_g(row.hwe_p, 6) << '\t' << format_g(row.score.stat) << '\t'
        << format_g(row.score.p) << '\t' << (row.score.tested ? 1 : 0) << '\t'
        << (row.score.reason.empty() ? "." : row.score.reason) << '\n';
  }
}

inline void write_top_hits(const std::string& path, const GenotypeMatrix& genotypes,
                           const ScanSummary& scan) {
  auto out = open_output(path);
  out << "rank\tsnp\tchr\tbp\tmaf_all\tscore_stat\tscore_p\tlrt_stat\tlrt_p\tlrt_converged\tp\n";
  int rank = 1;
  for (size_t s : scan.top) {
    const SnpInfo& info = genotypes.snps()[s];
    const SnpScanRow& row = scan.rows[s];
    out << rank++ << '\t' << info.name << '\t' << info.chromosome << '\t' << info.base_pair
        << '\t' << format_g(row.maf_all, 6) << '\t' << format_g(row.score.stat) << '\t'
        << format_g(row.score.p) << '\t'
        << (row.refined ? format_g(row.lrt.stat) : ".") << '\t'
        << (row.refined ? format_g(row.lrt.p) : ".") << '\t'
        << (row.refined ? (row.lrt.converged ? "1" : "0") : ".") << '\t'
        << format_g(row.final_p()) << '\n';
  }
}

inline void write_outliers(const std::string& path, const std::vector<BlockOutlier>& rows) {
  auto out = open_output(path);
  out << "block\tcells\tquad\tp\n";
  for (const auto& r : rows)
    out << r.label << '\t' << r.cells << '\t' << format_g(r.quad) << '\t' << format_g(r.p_value)
        << '\n';
}

inline void write_null_model(const std::string& path, const FitResult& fit,
                             const std::vector<std::string>& trait_names,
                             const std::string& kinship_mode, const std::string& rng_name) {
  auto out = open_output(path);
  out << "loglikelihood\t" << format_g(fit.loglik, 12) << "\n";
  out << "converged\t" << (fit.converged ? 1 : 0) << "\n";
  out << "iterations\t" << fit.iterations << "\n";
  out << "observed_cells\t" << fit.n_cells << "\n";
  out << "kinship_mode\t" << kinship_mode << "\n";
  out << "rng\t" << rng_name << "\n";
  out << "traits\t" << join(trait_names, ",") << "\n";
  const int t_count = fit.sigma.empty() ? 0 : static_cast<int>(fit.sigma.front().rows());
  for (size_t k = 0; k < fit.sigma.size(); ++k) {
    out << "\ncomponent\t" << fit.component_names[k] << "\n";
    for (int a = 0; a < t_count; ++a) {
      for (int b = 0; b < t_count; ++b) out << (b ? "\t" : "") << format_g(fit.sigma[k](a, b));
      out << "\n";
    }
  }
  out << "\nfixed_effects\n";
  out << "name\testimate\tse\n";
  // Free-coefficient scale; a shared effect appears once here and repeats
  // per trait in the expanded section below.
  const Eigen::VectorXd& g = fit.gamma;
  for (int i = 0; i < g.size(); ++i) {
    out << "g" << i + 1 << '\t' << format_g(g[i]) << '\t'
        << format_g(std::sqrt(std::max(0.0, fit.gamma_cov(i, i)))) << '\n';
  }
  out << "\nexpanded_effects\n";
  out << "name\testimate\tse\n";
  for (size_t i = 0; i < fit.beta_names.size(); ++i)
    out << fit.beta_names[i] << '\t' << format_g(fit.beta[static_cast<Eigen::Index>(i)]) << '\t'
        << format_g(std::sqrt(std::max(0.0, fit.beta_cov(static_cast<Eigen::Index>(i),
                                                         static_cast<Eigen::Index>(i)))))
        << '\n';
}

inline void write_qc_report(const std::string& path, size_t snps_in, size_t individuals_in,
                            const CallRateFilterResult& call_rate, const Dataset& ds,
                            double min_call_rate) {
  auto out = open_output(path);
  out << "snps_in\t" << snps_in << "\n";
  out << "individuals_in\t" << individuals_in << "\n";
  out << "min_call_rate\t" << format_g(min_call_rate, 6) << "\n";
  out << "snps_kept\t" << call_rate.kept_snps.size() << "\n";
  out << "individuals_kept\t" << call_rate.kept_individuals.size() << "\n";
  out << "individuals_analyzed\t" << ds.person_ids.size() << "\n";
  out << "\ndropped_snps\t" << call_rate.dropped_snps.size() << "\n";
  for (const auto& [name, rate] : call_rate.dropped_snps)
    out << name << "\tcall_rate\t" << format_g(rate, 6) << "\n";
  out << "\ndropped_individuals\t" << call_rate.dropped_individuals.size() << "\n";
  for (const auto& [id, rate] : call_rate.dropped_individuals)
    out << id << "\tcall_rate\t" << format_g(rate, 6) << "\n";
  out << "\njoin_drops\t" << ds.drops.size() << "\n";
  for (const auto& d : ds.drops) out << d.person_id << '\t' << d.reason << "\n";
}

inline void write_timing_log(const std::string& path,
                             const std::vector<std::pair<std::string, double>>& stages) {
  auto out = open_output(path);
  double total = 0.0;
  for (const auto& [name, seconds] : stages) {
    out << name << '\t' << format_g(seconds, 6) << "\n";
    total += seconds;
  }
  out << "total\t" << format_g(total, 6) << "\n";
}

namespace svgdetail {

inline std::string num(double v) { return format_g(v, 6); }

inline void svg_header(std::ofstream& out, int width, int height) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  out << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
}

inline void axis_line(std::ofstream& out, double x1, double y1, double x2, double y2) {
  out << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2)
      << "\" y2=\"" << num(y2) << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
}

inline void text_at(std::ofstream& out, double x, double y, const std::string& s,
                    const std::string& anchor = "middle", int size = 11) {
  out << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-size=\"" << size
      << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\">" << s << "</text>\n";
}

}  // namespace svgdetail

// Genome-wide -log10(p) by position, chromosomes laid end to end in first
// appearance order with alternating colors; dashed line at the significance
// threshold when one is given.
inline void manhattan_svg(const std::string& path, const GenotypeMatrix& genotypes,
                          const ScanSummary& scan, double threshold_p = 0.0) {
  using namespace svgdetail;
  const int width = 1000, height = 420;
  const double left = 60, right = 20, top = 30, bottom = 50;

  // Chromosome layout: cumulative base-pair offsets with a fixed gap.
  std::vector<std::string> chrom_order;
  std::map<std::string, long long> chrom_max;
  for (size_t s = 0; s < scan.rows.size(); ++s) {
    if (!scan.rows[s].score.tested) continue;
    const SnpInfo& info = genotypes.snps()[s];
    if (!chrom_max.count(info.chromosome)) chrom_order.push_back(info.chromosome);
    chrom_max[info.chromosome] = std::max(chrom_max[info.chromosome], info.base_pair);
  }
  std::map<std::string, double> chrom_offset;
  double genome_len = 0.0;
  for (const auto& c : chrom_order) {
    chrom_offset[c] = genome_len;
    genome_len += static_cast<double>(chrom_max[c]) + 1.0;
  }
  if (genome_len <= 0.0) genome_len = 1.0;

  double y_max = threshold_p > 0.0 ? neglog10(threshold_p) : 0.0;
  for (size_t s = 0; s < scan.rows.size(); ++s)
    if (scan.rows[s].score.tested) y_max = std::max(y_max, neglog10(scan.rows[s].score.p));
  y_max = std::max(1.0, y_max) * 1.05;

  auto x_of = [&](const std::string& chrom, long long bp) {
    return left + (chrom_offset[chrom] + static_cast<double>(bp)) / genome_len *
                      (width - left - right);
  };
  auto y_of = [&](double v) { return height - bottom - v / y_max * (height - top - bottom); };

  auto out = open_output(path);
  svg_header(out, width, height);
  axis_line(out, left, height - bottom, width - right, height - bottom);
  axis_line(out, left, top, left, height - bottom);
  for (int tick = 0; tick <= static_cast<int>(y_max); ++tick) {
    if (y_max > 12 && tick % 2) continue;
    axis_line(out, left - 4, y_of(tick), left, y_of(tick));
    text_at(out, left - 8, y_of(tick) + 4, std::to_string(tick), "end");
  }
  text_at(out, left - 40, (top + height - bottom) / 2.0, "-log10(p)", "middle");
  static const char* palette[2] = {"#44709d", "#8ab0d9"};
  int color = 0;
  for (const auto& c : chrom_order) {
    for (size_t s = 0; s < scan.rows.size(); ++s) {
      if (!scan.rows[s].score.tested) continue;
      const SnpInfo& info = genotypes.snps()[s];
      if (info.chromosome != c) continue;
      out << "<circle cx=\"" << num(x_of(c, info.base_pair)) << "\" cy=\""
          << num(y_of(neglog10(scan.rows[s].score.p))) << "\" r=\"2\" fill=\"" << palette[color]
          << "\"/>\n";
    }
    const double mid = x_of(c, chrom_max[c] / 2);
    text_at(out, mid, height - bottom + 16, c);
    color ^= 1;
  }
  if (threshold_p > 0.0) {
    const double y = y_of(neglog10(threshold_p));
    out << "<line x1=\"" << num(left) << "\" y1=\"" << num(y) << "\" x2=\"" << num(width - right)
        << "\" y2=\"" << num(y)
        << "\" stroke=\"#c03030\" stroke-width=\"1\" stroke-dasharray=\"6 4\"/>\n";
  }
  text_at(out, (left + width - right) / 2.0, 18, "genome scan", "middle", 13);
  out << "</svg>\n";
}

// Observed vs expected -log10(p) with the identity line and the inflation
// factor in the corner.
inline void qq_plot_svg(const std::string& path, std::vector<double> pvals, double lambda) {
  using namespace svgdetail;
  const int width = 420, height = 420;
  const double left = 56, right = 20, top = 30, bottom = 48;
  std::sort(pvals.begin(), pvals.end());
  const size_t m = pvals.size();

  double axis_max = 1.0;
  for (size_t i = 0; i < m; ++i) {
    axis_max = std::max(axis_max, neglog10(pvals[i]));
    axis_max = std::max(axis_max, neglog10((i + 0.5) / static_cast<double>(m)));
  }
  axis_max *= 1.05;

  auto x_of = [&](double v) { return left + v / axis_max * (width - left - right); };
  auto y_of = [&](double v) { return height - bottom - v / axis_max * (height - top - bottom); };

  auto out = open_output(path);
  svg_header(out, width, height);
  axis_line(out, left, height - bottom, width - right, height - bottom);
  axis_line(out, left, top, left, height - bottom);
  out << "<line x1=\"" << num(x_of(0)) << "\" y1=\"" << num(y_of(0)) << "\" x2=\""
      << num(x_of(axis_max / 1.05)) << "\" y2=\"" << num(y_of(axis_max / 1.05))
      << "\" stroke=\"#999999\" stroke-width=\"1\"/>\n";
  for (size_t i = 0; i < m; ++i) {
    const double expected = neglog10((m - static_cast<double>(i) - 0.5) / static_cast<double>(m));
    const double observed = neglog10(pvals[m - 1 - i]);
    out << "<circle cx=\"" << num(x_of(expected)) << "\" cy=\"" << num(y_of(observed))
        << "\" r=\"2.2\" fill=\"#44709d\"/>\n";
  }
  text_at(out, (left + width - right) / 2.0, height - 14, "expected -log10(p)");
  text_at(out, 16, (top + height - bottom) / 2.0, "obs", "middle");
  if (std::isfinite(lambda))
    text_at(out, width - right - 8, top + 14, "lambda = " + format_g(lambda, 4), "end", 12);
  out << "</svg>\n";
}

}  // namespace pedscan
