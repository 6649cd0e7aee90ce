#pragma once

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "pedscan/dataset.hpp"
#include "pedscan/qc.hpp"
#include "pedscan/stats.hpp"
#include "pedscan/vcmodel.hpp"

namespace pedscan {

// Male heterozygote calls are undefined on X; recode them to missing.
inline void x_linked_dosage(std::vector<std::uint8_t>& codes, const std::vector<char>& male) {
  for (size_t i = 0; i < codes.size(); ++i)
    if (male[i] && codes[i] == 1) codes[i] = GenotypeMatrix::kMissing;
}

struct ScoreTest {
  double stat = std::numeric_limits<double>::quiet_NaN();
  double p = std::numeric_limits<double>::quiet_NaN();
  bool tested = false;
  std::string reason;  // "monomorphic" / "collinear" when untested
};

struct LrtResult {
  double stat = std::numeric_limits<double>::quiet_NaN();
  double p = std::numeric_limits<double>::quiet_NaN();
  double loglik = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
};

// Score test against a fitted null: everything SNP-independent (block
// factorizations, projected design, residual solves) is computed once here,
// so each SNP costs only triangular solves and small matrix products.
class ScanEngine {
 public:
  ScanEngine(const VcProblem& problem, const FitResult& fit)
      : problem_(&problem), t_(problem.n_traits()) {
    std::vector<Eigen::MatrixXd> sigma = fit.sigma;
    const auto& blocks = problem.blocks();
    factor_.resize(blocks.size());
    inv_ac_.resize(blocks.size());
    u_.resize(blocks.size());
    const int r = problem.n_gamma();
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(r, r);
    trait_persons_.assign(t_, {});
    for (size_t bi = 0; bi < blocks.size(); ++bi) {
      const VcBlock& b = blocks[bi];
      const int m = b.cells();
      Eigen::MatrixXd omega(m, m);
      for (int c1 = 0; c1 < m; ++c1)
        for (int c2 = 0; c2 <= c1; ++c2) {
          double v = 0.0;
          for (int k = 0; k < problem.n_components(); ++k)
            v += sigma[k](b.cell_trait[c1], b.cell_trait[c2]) *
                 b.kernels[k](b.cell_person[c1], b.cell_person[c2]);
          omega(c1, c2) = omega(c2, c1) = v;
        }
      factor_[bi].compute(omega);
      if (factor_[bi].info() != Eigen::Success)
        throw numeric_error("fitted covariance is not positive definite");
      inv_ac_[bi] = factor_[bi].solve(b.AC);
      u_[bi] = factor_[bi].solve(b.y) - inv_ac_[bi] * fit.gamma;
      info.noalias() += b.AC.transpose() * inv_ac_[bi];
      for (int c = 0; c < m; ++c)
        trait_persons_[b.cell_trait[c]].push_back(b.person_begin + b.cell_person[c]);
    }
    m_ldlt_.compute(info);
  }

  struct Prepared {
    bool monomorphic = false;
    Eigen::MatrixXd g_cols;  // raw-person x T (rotated basis when applicable)
  };

  // Mean-imputed per-trait dosage columns from analysis-order codes.
  Prepared prepare(const std::vector<std::uint8_t>& codes) const {
    Prepared prep;
    const Eigen::Index n = static_cast<Eigen::Index>(codes.size());

    double overall_sum = 0.0;
    long overall_count = 0;
    std::uint8_t first = GenotypeMatrix::kMissing;
    bool varies = false;
    std::vector<double> mean(t_, 0.0);
    for (int t = 0; t < t_; ++t) {
      double sum = 0.0;
      long count = 0;
      for (int i : trait_persons_[t]) {
        const std::uint8_t c = codes[static_cast<size_t>(i)];
        if (c == GenotypeMatrix::kMissing) continue;
        sum += c;
        ++count;
        if (first == GenotypeMatrix::kMissing)
          first = c;
        else if (c != first)
          varies = true;
      }
      mean[t] = count > 0 ? sum / count : std::numeric_limits<double>::quiet_NaN();
      overall_sum += sum;
      overall_count += count;
    }
    if (overall_count == 0 || !varies) {
      prep.monomorphic = true;
      return prep;
    }
    const double overall_mean = overall_sum / overall_count;
    for (int t = 0; t < t_; ++t)
      if (!std::isfinite(mean[t])) mean[t] = overall_mean;

    if (problem_->rotated()) {
      Eigen::VectorXd g(n);
      for (Eigen::Index i = 0; i < n; ++i)
        g[i] = codes[static_cast<size_t>(i)] == GenotypeMatrix::kMissing
                   ? mean[0]
                   : codes[static_cast<size_t>(i)];
      const Eigen::VectorXd g_rot = problem_->rotation().transpose() * g;
      prep.g_cols = g_rot.replicate(1, t_);
    } else {
      prep.g_cols.resize(n, t_);
      for (int t = 0; t < t_; ++t)
        for (Eigen::Index i = 0; i < n; ++i)
          prep.g_cols(i, t) = codes[static_cast<size_t>(i)] == GenotypeMatrix::kMissing
                                  ? mean[t]
                                  : codes[static_cast<size_t>(i)];
    }
    return prep;
  }

  ScoreTest test(const Prepared& prep) const {
    ScoreTest res;
    if (prep.monomorphic) {
      res.reason = "monomorphic";
      return res;
    }
    const auto& blocks = problem_->blocks();
    const int r = problem_->n_gamma();
    Eigen::VectorXd score = Eigen::VectorXd::Zero(t_);
    Eigen::MatrixXd v1 = Eigen::MatrixXd::Zero(t_, t_);
    Eigen::MatrixXd x1 = Eigen::MatrixXd::Zero(t_, r);
    Eigen::MatrixXd g_block;
    for (size_t bi = 0; bi < blocks.size(); ++bi) {
      const VcBlock& b = blocks[bi];
      const int m = b.cells();
      g_block.setZero(m, t_);
      for (int c = 0; c < m; ++c)
        g_block(c, b.cell_trait[c]) =
            prep.g_cols(b.person_begin + b.cell_person[c], b.cell_trait[c]);
      const Eigen::MatrixXd solved = factor_[bi].solve(g_block);
      score.noalias() += g_block.transpose() * u_[bi];
      v1.noalias() += g_block.transpose() * solved;
      x1.noalias() += solved.transpose() * b.AC;
    }
    Eigen::MatrixXd v = v1 - x1 * m_ldlt_.solve(x1.transpose());
    v = 0.5 * (v + v.transpose()).eval();

    Eigen::LDLT<Eigen::MatrixXd> v_ldlt(v);
    const double pivot_max = v_ldlt.vectorD().maxCoeff();
    if (v_ldlt.info() != Eigen::Success || !v_ldlt.isPositive() ||
        v_ldlt.vectorD().minCoeff() <= 1e-10 * std::max(1.0, pivot_max)) {
      res.reason = "collinear";
      return res;
    }
    res.stat = std::max(0.0, score.dot(v_ldlt.solve(score)));
    res.p = chisq_upper_p(res.stat, t_);
    res.tested = true;
    return res;
  }

  ScoreTest test(const std::vector<std::uint8_t>& codes) const { return test(prepare(codes)); }

 private:
  const VcProblem* problem_;
  int t_;
  std::vector<Eigen::LLT<Eigen::MatrixXd>> factor_;
  std::vector<Eigen::MatrixXd> inv_ac_;
  std::vector<Eigen::VectorXd> u_;
  Eigen::LDLT<Eigen::MatrixXd> m_ldlt_;
  std::vector<std::vector<int>> trait_persons_;  // raw persons with an observed cell, per trait
};

// Full maximum-likelihood refit with the SNP as a free per-trait effect,
// warm-started at the null's variance parameters.
inline LrtResult lrt_refine(const VcProblem& null_problem, const CovarianceModel& cov,
                            const Eigen::MatrixXd& traits, const FitResult& null_fit,
                            const Eigen::MatrixXd& g_cols, const std::string& name = "snp") {
  const VcProblem alt = null_problem.with_added_effect(g_cols, name);
  FitOptions options;
  options.initial_theta = null_fit.theta;
  const FitResult fit = fit_model(alt, cov, traits, options);
  LrtResult res;
  res.converged = fit.converged;
  res.loglik = fit.loglik;
  res.stat = std::max(0.0, 2.0 * (fit.loglik - null_fit.loglik));
  res.p = chisq_upper_p(res.stat, null_problem.n_traits());
  return res;
}

struct ScanOptions {
  double maf_min = 0.03;
  int top_k = 10;
  bool refine_top = true;
  int n_threads = 1;
  double sig_level = 0.05;
  double fdr_q = 0.05;
};

struct SnpScanRow {
  double maf_all = std::numeric_limits<double>::quiet_NaN();
  double maf_founders = std::numeric_limits<double>::quiet_NaN();
  double hwe_p = std::numeric_limits<double>::quiet_NaN();
  ScoreTest score;
  bool refined = false;
  LrtResult lrt;

  // LRT refinement replaces the screening p-value only when it converged.
  double final_p() const { return refined && lrt.converged ? lrt.p : score.p; }
};

struct ScanSummary {
  std::vector<SnpScanRow> rows;  // indexed by SNP
  std::vector<size_t> top;       // ranked by final p-value
  size_t n_tested = 0;
  double lambda = std::numeric_limits<double>::quiet_NaN();
  double bonferroni_threshold = std::numeric_limits<double>::quiet_NaN();
  double fdr_threshold = std::numeric_limits<double>::quiet_NaN();
};

inline ScanSummary genome_scan(const Dataset& ds, const GenotypeMatrix& genotypes,
                               const VcProblem& null_problem, const CovarianceModel& cov,
                               const Eigen::MatrixXd& traits, const FitResult& null_fit,
                               const ScanOptions& options = {}) {
  const size_t n_snps = genotypes.n_snps();
  ScanSummary out;
  out.rows.resize(n_snps);
  if (n_snps == 0) return out;

  const ScanEngine engine(null_problem, null_fit);

  std::vector<char> analysis_male(ds.person_ids.size());
  for (size_t i = 0; i < ds.person_ids.size(); ++i)
    analysis_male[i] = ds.sex[i] == Sex::male ? 1 : 0;

  // Genotyped founders carry the allele-frequency and Hardy-Weinberg
  // reporting, independent of phenotype-based drops.
  std::unordered_map<std::string, size_t> geno_row;
  for (size_t i = 0; i < genotypes.individual_ids().size(); ++i)
    geno_row[genotypes.individual_ids()[i]] = i;
  std::vector<size_t> founder_rows;
  std::vector<char> founder_male;
  for (const auto& ped : ds.pedigrees)
    for (const auto& member : ped.members) {
      if (member.father >= 0) continue;
      auto it = geno_row.find(member.id);
      if (it == geno_row.end()) continue;
      founder_rows.push_back(it->second);
      founder_male.push_back(member.sex == Sex::male ? 1 : 0);
    }

  const int threads = std::max(1, options.n_threads);
  std::exception_ptr first_error;
  std::mutex error_mutex;

  auto work = [&](size_t begin, size_t end) {
    try {
      std::vector<std::uint8_t> all(genotypes.n_individuals());
      std::vector<std::uint8_t> analysis(ds.person_ids.size());
      std::vector<std::uint8_t> founder(founder_rows.size());
      for (size_t s = begin; s < end; ++s) {
        SnpScanRow& row = out.rows[s];
        const bool x_linked = genotypes.snps()[s].is_x_linked;
        genotypes.decode_snp(s, all.data());
        for (size_t i = 0; i < ds.genotype_row.size(); ++i) analysis[i] = all[ds.genotype_row[i]];
        for (size_t i = 0; i < founder_rows.size(); ++i) founder[i] = all[founder_rows[i]];
        if (x_linked) x_linked_dosage(analysis, analysis_male);

        row.maf_all =
            minor_allele_frequency(allele1_frequency(analysis, analysis_male, x_linked));
        row.maf_founders =
            minor_allele_frequency(allele1_frequency(founder, founder_male, x_linked));
        long nhet = 0, nhom1 = 0, nhom0 = 0;
        for (size_t i = 0; i < founder.size(); ++i) {
          if (x_linked && founder_male[i]) continue;  // hemizygotes carry no HW signal
          switch (founder[i]) {
            case 2: ++nhom1; break;
            case 1: ++nhet; break;
            case 0: ++nhom0; break;
            default: break;
          }
        }
        row.hwe_p = hwe_exact_p(nhet, nhom1, nhom0);

        if (!std::isfinite(row.maf_all)) {
          row.score.reason = "monomorphic";
          continue;
        }
        if (row.maf_all < options.maf_min) {
          row.score.reason = "low_maf";
          continue;
        }
        row.score = engine.test(analysis);
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!first_error) first_error = std::current_exception();
    }
  };

  if (threads == 1) {
    work(0, n_snps);
  } else {
    std::vector<std::thread> pool;
    const size_t chunk = (n_snps + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const size_t b = std::min(n_snps, static_cast<size_t>(t) * chunk);
      const size_t e = std::min(n_snps, b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  std::vector<double> tested_p;
  std::vector<size_t> tested_idx;
  for (size_t s = 0; s < n_snps; ++s)
    if (out.rows[s].score.tested) {
      tested_p.push_back(out.rows[s].score.p);
      tested_idx.push_back(s);
    }
  out.n_tested = tested_idx.size();
  if (out.n_tested > 0) {
    out.lambda = genomic_inflation(tested_p);
    out.bonferroni_threshold = options.sig_level / static_cast<double>(out.n_tested);
    out.fdr_threshold = bh_threshold(tested_p, options.fdr_q);
  }

  std::sort(tested_idx.begin(), tested_idx.end(), [&](size_t a, size_t b) {
    if (out.rows[a].score.p != out.rows[b].score.p) return out.rows[a].score.p < out.rows[b].score.p;
    return a < b;
  });
  const size_t keep = std::min<size_t>(std::max(0, options.top_k), tested_idx.size());
  out.top.assign(tested_idx.begin(), tested_idx.begin() + static_cast<long>(keep));

  if (options.refine_top) {
    std::vector<std::uint8_t> all(genotypes.n_individuals());
    std::vector<std::uint8_t> analysis(ds.person_ids.size());
    for (size_t s : out.top) {
      genotypes.decode_snp(s, all.data());
      for (size_t i = 0; i < ds.genotype_row.size(); ++i) analysis[i] = all[ds.genotype_row[i]];
      if (genotypes.snps()[s].is_x_linked) x_linked_dosage(analysis, analysis_male);
      const ScanEngine::Prepared prep = engine.prepare(analysis);
      if (prep.monomorphic) continue;
      try {
        out.rows[s].lrt = lrt_refine(null_problem, cov, traits, null_fit, prep.g_cols,
                                     genotypes.snps()[s].name);
        out.rows[s].refined = true;
      } catch (const numeric_error&) {
        // a hit whose joint design defeats the refit keeps its screen p-value
      }
    }
    std::sort(out.top.begin(), out.top.end(), [&](size_t a, size_t b) {
      if (out.rows[a].final_p() != out.rows[b].final_p())
        return out.rows[a].final_p() < out.rows[b].final_p();
      return a < b;
    });
  }
  return out;
}

}  // namespace pedscan
