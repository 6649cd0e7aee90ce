#pragma once

#include <cmath>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "pedscan/common.hpp"
#include "pedscan/kinship.hpp"
#include "pedscan/pedigree.hpp"
#include "pedscan/rng.hpp"
#include "pedscan/scan.hpp"
#include "pedscan/vcmodel.hpp"

namespace pedscan {

// Drop one biallelic variant through a pedigree: founder alleles are i.i.d.
// Bernoulli(allele1_freq), children inherit a uniformly chosen allele from
// each parent. On X, sons receive only a maternal allele and are coded like
// homozygotes (0/2).
inline std::vector<std::uint8_t> gene_drop(const Pedigree& ped, double allele1_freq,
                                           bool x_linked, Rng& rng) {
  if (!(allele1_freq >= 0.0 && allele1_freq <= 1.0))
    throw config_error("allele frequency must be in [0,1]");
  const int n = ped.size();
  std::vector<std::uint8_t> a(n), b(n), codes(n);
  for (int i = 0; i < n; ++i) {
    const int fa = ped.members[i].father, mo = ped.members[i].mother;
    const bool male = ped.members[i].sex == Sex::male;
    if (x_linked) {
      if (fa < 0) {
        a[i] = rng.bernoulli(allele1_freq) ? 1 : 0;
        b[i] = male ? a[i] : (rng.bernoulli(allele1_freq) ? 1 : 0);
      } else if (male) {
        a[i] = b[i] = rng.bernoulli(0.5) ? a[mo] : b[mo];
      } else {
        a[i] = rng.bernoulli(0.5) ? a[fa] : b[fa];  // father passes his single X
        b[i] = rng.bernoulli(0.5) ? a[mo] : b[mo];
      }
      codes[i] = male ? static_cast<std::uint8_t>(2 * a[i])
                      : static_cast<std::uint8_t>(a[i] + b[i]);
    } else {
      if (fa < 0) {
        a[i] = rng.bernoulli(allele1_freq) ? 1 : 0;
        b[i] = rng.bernoulli(allele1_freq) ? 1 : 0;
      } else {
        a[i] = rng.bernoulli(0.5) ? a[fa] : b[fa];
        b[i] = rng.bernoulli(0.5) ? a[mo] : b[mo];
      }
      codes[i] = static_cast<std::uint8_t>(a[i] + b[i]);
    }
  }
  return codes;
}

inline std::vector<std::uint8_t> gene_drop_all(const std::vector<Pedigree>& pedigrees,
                                               double allele1_freq, bool x_linked, Rng& rng) {
  std::vector<std::uint8_t> codes;
  for (const auto& ped : pedigrees) {
    const auto part = gene_drop(ped, allele1_freq, x_linked, rng);
    codes.insert(codes.end(), part.begin(), part.end());
  }
  return codes;
}

// Y = reshape(X beta) + sum_s g_s beta_s' + block-structured Gaussian noise
// with covariance sum_k Sigma_k (x) K_k. beta is effect-major; each SNP
// effect pairs a dosage vector with a per-trait coefficient vector.
inline Eigen::MatrixXd simulate_traits(
    const Eigen::MatrixXd& x_design, const Eigen::VectorXd& beta,
    const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& snp_effects,
    const CovarianceModel& cov, const std::vector<Eigen::MatrixXd>& sigma, Rng& rng) {
  const int n = static_cast<int>(x_design.rows());
  const int p = static_cast<int>(x_design.cols());
  const int t_count = sigma.empty() ? 0 : static_cast<int>(sigma.front().rows());
  if (static_cast<int>(beta.size()) != p * t_count)
    throw config_error("coefficient vector does not match the design and trait count");
  if (cov.n() != n) throw data_error("kernel size does not match the design");

  Eigen::MatrixXd y(n, t_count);
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < t_count; ++t) {
      double v = 0.0;
      for (int j = 0; j < p; ++j) v += x_design(i, j) * beta[j * t_count + t];
      y(i, t) = v;
    }
  for (const auto& [g, effect] : snp_effects) {
    if (g.size() != n || effect.size() != t_count)
      throw config_error("SNP effect dimensions do not match the design");
    y.noalias() += g * effect.transpose();
  }

  const int k_count = cov.n_components();
  for (auto [begin, end] : cov.blocks) {
    const int nb = end - begin;
    const int m = nb * t_count;
    Eigen::MatrixXd w(m, m);
    for (int c1 = 0; c1 < m; ++c1) {
      const int t1 = c1 / nb, i1 = c1 % nb;
      for (int c2 = 0; c2 <= c1; ++c2) {
        const int t2 = c2 / nb, i2 = c2 % nb;
        double v = 0.0;
        for (int k = 0; k < k_count; ++k)
          v += sigma[k](t1, t2) * cov.kernels[k].values(begin + i1, begin + i2);
        w(c1, c2) = w(c2, c1) = v;
      }
    }
    Eigen::VectorXd z(m);
    for (int c = 0; c < m; ++c) z[c] = rng.normal();
    Eigen::LLT<Eigen::MatrixXd> llt(w);
    Eigen::VectorXd noise;
    if (llt.info() == Eigen::Success) {
      noise = llt.matrixL() * z;
    } else {  // singular requested covariance: eigenvalue square root
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(w);
      noise = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * z;
    }
    for (int c = 0; c < m; ++c) y(begin + c % nb, c / nb) += noise[c];
  }
  return y;
}

struct PowerPoint {
  double pct_var = 0.0;
  double beta = 0.0;
  int rejections = 0;
  int replicates = 0;
  double power = 0.0;
  double se = 0.0;  // binomial standard error
};

struct PowerStudyOptions {
  int replicates = 200;
  double maf = 0.3;
  std::vector<double> pct_var{0.01};
  double alpha = 0.05;
  std::uint64_t seed = 1;
  int n_threads = 1;
};

// Monte Carlo power of the score screen for a causal variant explaining a
// given share of the first trait's variance. Each replicate draws one
// gene-dropped variant and one trait panel; the same draw is reused across
// the effect-size grid so the curve is a paired comparison.
inline std::vector<PowerPoint> power_study(const std::vector<Pedigree>& pedigrees,
                                           const MeanModel& mean, const CovarianceModel& cov,
                                           const std::vector<Eigen::MatrixXd>& sigma,
                                           const PowerStudyOptions& options) {
  const int n = cov.n();
  const int t_count = mean.n_traits;
  const double p_freq = options.maf;
  const double geno_var = 2.0 * p_freq * (1.0 - p_freq);
  if (geno_var <= 0.0) throw config_error("power study needs a polymorphic causal variant");

  double base_var = 0.0;  // trait-1 variance without the causal SNP
  for (const auto& s : sigma) base_var += s(0, 0);

  std::vector<double> betas;
  for (double v : options.pct_var) {
    if (!(v >= 0.0 && v < 1.0))
      throw config_error("explained variance share must be in [0,1)");
    betas.push_back(std::sqrt(v * base_var / ((1.0 - v) * geno_var)));
  }

  const Eigen::VectorXd beta0 = Eigen::VectorXd::Zero(mean.n_effects() * t_count);
  const int grid = static_cast<int>(betas.size());
  std::vector<std::vector<int>> hits(options.n_threads > 1 ? options.n_threads : 1,
                                     std::vector<int>(grid, 0));

  auto run = [&](int slot, int rep_begin, int rep_end) {
    for (int rep = rep_begin; rep < rep_end; ++rep) {
      Rng rng = Rng::stream(options.seed, static_cast<std::uint64_t>(rep));
      const auto codes = gene_drop_all(pedigrees, p_freq, false, rng);
      Eigen::VectorXd g(n);
      for (int i = 0; i < n; ++i) g[i] = codes[static_cast<size_t>(i)];
      const Eigen::MatrixXd y0 = simulate_traits(mean.X, beta0, {}, cov, sigma, rng);
      for (int v = 0; v < grid; ++v) {
        Eigen::MatrixXd y = y0;
        y.col(0) += betas[static_cast<size_t>(v)] * g;
        const VcProblem problem(mean, cov, y);
        const FitResult fit = fit_model(problem, cov, y);
        const ScanEngine engine(problem, fit);
        std::vector<std::uint8_t> snp(codes);
        const ScoreTest t = engine.test(snp);
        if (t.tested && t.p < options.alpha) ++hits[static_cast<size_t>(slot)][v];
      }
    }
  };

  const int threads = std::max(1, options.n_threads);
  if (threads == 1) {
    run(0, 0, options.replicates);
  } else {
    std::vector<std::thread> pool;
    const int chunk = (options.replicates + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const int b = std::min(options.replicates, t * chunk);
      const int e = std::min(options.replicates, b + chunk);
      if (b < e) pool.emplace_back(run, t, b, e);
    }
    for (auto& th : pool) th.join();
  }

  std::vector<PowerPoint> out;
  for (int v = 0; v < grid; ++v) {
    PowerPoint pt;
    pt.pct_var = options.pct_var[static_cast<size_t>(v)];
    pt.beta = betas[static_cast<size_t>(v)];
    for (const auto& h : hits) pt.rejections += h[static_cast<size_t>(v)];
    pt.replicates = options.replicates;
    pt.power = options.replicates > 0 ? static_cast<double>(pt.rejections) / options.replicates : 0.0;
    pt.se = options.replicates > 0 ? std::sqrt(pt.power * (1.0 - pt.power) / options.replicates) : 0.0;
    out.push_back(pt);
  }
  return out;
}

}  // namespace pedscan
