#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "pedscan/common.hpp"
#include "pedscan/dataset.hpp"
#include "pedscan/kinship.hpp"
#include "pedscan/stats.hpp"

namespace pedscan {

// Fixed effects. Each effect has one column in X and, unless marked shared,
// a free coefficient per trait. beta is effect-major: beta[j*T + t].
struct MeanModel {
  Eigen::MatrixXd X;  // n x p, intercept first
  std::vector<std::string> effect_names;
  std::vector<char> shared;  // per effect: one coefficient across all traits?
  int n_traits = 1;

  int n_effects() const { return static_cast<int>(X.cols()); }
  Eigen::MatrixXd constraint() const;
};

// Constraint matrix C (beta = C gamma): shared effects get a single column of
// ones over their T slots, free effects an identity block.
inline Eigen::MatrixXd time_constraint_matrix(int n_traits, const std::vector<char>& shared) {
  const int p = static_cast<int>(shared.size());
  int r = 0;
  for (char s : shared) r += s ? 1 : n_traits;
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p) * n_traits, r);
  int col = 0;
  for (int j = 0; j < p; ++j) {
    if (shared[j]) {
      for (int t = 0; t < n_traits; ++t) c(j * n_traits + t, col) = 1.0;
      ++col;
    } else {
      for (int t = 0; t < n_traits; ++t) c(j * n_traits + t, col + t) = 1.0;
      col += n_traits;
    }
  }
  return c;
}

inline Eigen::MatrixXd MeanModel::constraint() const {
  return time_constraint_matrix(n_traits, std::vector<char>(shared.begin(), shared.end()));
}

inline MeanModel build_mean_model(
    const Dataset& ds, const std::vector<std::string>& covariates,
    const std::vector<std::pair<std::string, std::string>>& interactions,
    const std::vector<std::string>& shared_effects, int n_traits = -1) {
  MeanModel m;
  m.n_traits = n_traits > 0 ? n_traits : ds.n_traits();
  const int n = ds.n();
  const int p = 1 + static_cast<int>(covariates.size() + interactions.size());
  m.X.resize(n, p);
  m.X.col(0).setOnes();
  m.effect_names.push_back("intercept");

  auto column_of = [&](const std::string& name) -> Eigen::VectorXd {
    for (size_t c = 0; c < ds.covariate_names.size(); ++c)
      if (ds.covariate_names[c] == name) return ds.covariates.col(static_cast<Eigen::Index>(c));
    throw config_error("unknown covariate '" + name + "' in mean model");
  };
  int at = 1;
  for (const auto& name : covariates) {
    m.X.col(at++) = column_of(name);
    m.effect_names.push_back(name);
  }
  for (const auto& [a, b] : interactions) {
    m.X.col(at++) = column_of(a).cwiseProduct(column_of(b));
    m.effect_names.push_back(a + "*" + b);
  }

  m.shared.assign(p, 0);
  for (const auto& name : shared_effects) {
    bool found = false;
    for (int j = 0; j < p; ++j)
      if (m.effect_names[j] == name) {
        m.shared[j] = 1;
        found = true;
      }
    if (!found) throw config_error("shared effect '" + name + "' is not in the mean model");
  }
  return m;
}

// Named variance components over a common analysis layout; blocks is the
// coarsest contiguous partition compatible with every kernel.
struct CovarianceModel {
  std::vector<std::string> names;
  std::vector<KernelMatrix> kernels;
  std::vector<std::pair<int, int>> blocks;

  int n() const { return kernels.empty() ? 0 : kernels.front().n(); }
  int n_components() const { return static_cast<int>(kernels.size()); }
};

inline CovarianceModel make_covariance_model(
    std::vector<std::pair<std::string, KernelMatrix>> components) {
  CovarianceModel cov;
  for (auto& [name, k] : components) {
    cov.names.push_back(name);
    cov.kernels.push_back(std::move(k));
  }
  if (cov.kernels.empty()) throw config_error("covariance model needs at least one component");
  std::vector<const KernelMatrix*> ptrs;
  for (const auto& k : cov.kernels) ptrs.push_back(&k);
  cov.blocks = merge_block_partitions(ptrs, cov.n());
  return cov;
}

// Column-stacked (trait-major within block) observed-cell representation of
// one factorization block, with kernels restricted to the block's people.
struct VcBlock {
  int person_begin = 0;  // analysis-order offset of the block's people
  int n_persons = 0;
  std::vector<int> cell_person;  // block-local person offset per cell
  std::vector<int> cell_trait;
  std::vector<Eigen::MatrixXd> kernels;  // per component
  Eigen::MatrixXd A;   // cells x (p*T)
  Eigen::MatrixXd AC;  // cells x r
  Eigen::VectorXd y;

  int cells() const { return static_cast<int>(cell_person.size()); }
};

// theta packs the lower triangles of the per-component Cholesky factors
// (row-major within a component): Sigma_k = L_k L_k'.
inline int chol_param_count(int n_components, int n_traits) {
  return n_components * n_traits * (n_traits + 1) / 2;
}

inline std::vector<Eigen::MatrixXd> unpack_chol(const Eigen::VectorXd& theta, int n_components,
                                                int n_traits) {
  std::vector<Eigen::MatrixXd> ls(n_components, Eigen::MatrixXd::Zero(n_traits, n_traits));
  int at = 0;
  for (int k = 0; k < n_components; ++k)
    for (int a = 0; a < n_traits; ++a)
      for (int b = 0; b <= a; ++b) ls[k](a, b) = theta[at++];
  return ls;
}

inline Eigen::VectorXd pack_chol(const std::vector<Eigen::MatrixXd>& ls) {
  const int n_traits = ls.empty() ? 0 : static_cast<int>(ls.front().rows());
  Eigen::VectorXd theta(chol_param_count(static_cast<int>(ls.size()), n_traits));
  int at = 0;
  for (const auto& l : ls)
    for (int a = 0; a < n_traits; ++a)
      for (int b = 0; b <= a; ++b) theta[at++] = l(a, b);
  return theta;
}

// Assembled likelihood problem: blocks plus the constraint. When the model
// is a single dense block with exactly {kernel, identity} components and no
// missing cells, the kernel's eigenbasis turns the problem into singleton
// pseudo-individual blocks (the rotation is stored for per-SNP reuse).
class VcProblem {
 public:
  VcProblem() = default;

  VcProblem(const MeanModel& mean, const CovarianceModel& cov, const Eigen::MatrixXd& traits,
            bool allow_rotation = true) {
    n_traits_ = mean.n_traits;
    n_components_ = cov.n_components();
    n_effects_ = mean.n_effects();
    if (traits.cols() != n_traits_)
      throw config_error("trait matrix does not match the mean model's trait count");
    if (cov.n() != traits.rows()) throw data_error("kernel size does not match individual count");
    constraint_ = mean.constraint();
    effect_names_ = mean.effect_names;

    const bool complete = traits.allFinite();
    int identity_at = -1;
    for (int k = 0; k < n_components_; ++k)
      if (cov.kernels[k].kind == KernelKind::identity) identity_at = k;
    if (allow_rotation && complete && n_components_ == 2 && identity_at >= 0 &&
        cov.blocks.size() == 1) {
      build_rotated(mean, cov, traits, identity_at);
    } else {
      build_blocks(mean, cov, traits);
    }
    check_design_rank();
  }

  int n_traits() const { return n_traits_; }
  int n_components() const { return n_components_; }
  int n_effects() const { return n_effects_; }
  int n_theta() const { return chol_param_count(n_components_, n_traits_); }
  int n_gamma() const { return static_cast<int>(constraint_.cols()); }
  int total_cells() const {
    int m = 0;
    for (const auto& b : blocks_) m += b.cells();
    return m;
  }
  const Eigen::MatrixXd& constraint() const { return constraint_; }
  const std::vector<VcBlock>& blocks() const { return blocks_; }
  const std::vector<std::string>& effect_names() const { return effect_names_; }
  bool rotated() const { return rotated_; }
  const Eigen::MatrixXd& rotation() const { return rotation_; }

  // Same layout with one appended free effect whose per-trait columns come
  // from g_cols (n x T, already rotated when rotated() is true).
  VcProblem with_added_effect(const Eigen::MatrixXd& g_cols, const std::string& name) const {
    VcProblem alt(*this);
    ++alt.n_effects_;
    alt.effect_names_.push_back(name);
    const int t_count = n_traits_;
    const auto& c0 = constraint_;
    alt.constraint_ = Eigen::MatrixXd::Zero(c0.rows() + t_count, c0.cols() + t_count);
    alt.constraint_.topLeftCorner(c0.rows(), c0.cols()) = c0;
    alt.constraint_.bottomRightCorner(t_count, t_count).setIdentity();
    for (auto& b : alt.blocks_) {
      const int m = b.cells();
      Eigen::MatrixXd a(m, b.A.cols() + t_count);
      a.leftCols(b.A.cols()) = b.A;
      a.rightCols(t_count).setZero();
      for (int c = 0; c < m; ++c) {
        const int person = b.person_begin + b.cell_person[c];
        a(c, b.A.cols() + b.cell_trait[c]) = g_cols(person, b.cell_trait[c]);
      }
      b.A = std::move(a);
      b.AC = b.A * alt.constraint_;
    }
    return alt;
  }

  struct Eval {
    bool ok = false;
    double loglik = 0.0;
    Eigen::VectorXd grad;
    Eigen::VectorXd gamma;
    Eigen::MatrixXd gamma_info;  // r x r
    std::vector<double> block_quad;
  };

  Eval evaluate(const std::vector<Eigen::MatrixXd>& chol_factors, bool want_grad,
                bool want_block_quad = false) const {
    Eval ev;
    const int t_count = n_traits_, k_count = n_components_;
    std::vector<Eigen::MatrixXd> sigma(k_count);
    for (int k = 0; k < k_count; ++k)
      sigma[k] = chol_factors[k] * chol_factors[k].transpose();

    const int r = n_gamma();
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(r, r);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(r);
    double logdet = 0.0, y_omega_y = 0.0;

    const size_t n_blocks = blocks_.size();
    std::vector<Eigen::LLT<Eigen::MatrixXd>> factors(n_blocks);
    std::vector<Eigen::MatrixXd> inv_ac(n_blocks);
    std::vector<Eigen::VectorXd> inv_y(n_blocks);

    for (size_t bi = 0; bi < n_blocks; ++bi) {
      const VcBlock& b = blocks_[bi];
      const int m = b.cells();
      Eigen::MatrixXd omega(m, m);
      for (int c1 = 0; c1 < m; ++c1)
        for (int c2 = 0; c2 <= c1; ++c2) {
          double v = 0.0;
          for (int k = 0; k < k_count; ++k)
            v += sigma[k](b.cell_trait[c1], b.cell_trait[c2]) *
                 b.kernels[k](b.cell_person[c1], b.cell_person[c2]);
          omega(c1, c2) = omega(c2, c1) = v;
        }
      factors[bi].compute(omega);
      if (factors[bi].info() != Eigen::Success) return ev;
      logdet += 2.0 * factors[bi].matrixLLT().diagonal().array().log().sum();
      inv_ac[bi] = factors[bi].solve(b.AC);
      inv_y[bi] = factors[bi].solve(b.y);
      info.noalias() += b.AC.transpose() * inv_ac[bi];
      rhs.noalias() += b.AC.transpose() * inv_y[bi];
      y_omega_y += b.y.dot(inv_y[bi]);
    }
    if (!std::isfinite(logdet)) return ev;

    Eigen::LDLT<Eigen::MatrixXd> info_ldlt(info);
    const Eigen::VectorXd pivots = info_ldlt.vectorD();
    if (info_ldlt.info() != Eigen::Success ||
        pivots.minCoeff() <= 1e-14 * std::max(1.0, pivots.maxCoeff()))
      return ev;  // information collapsed at this covariance; reject the step
    ev.gamma = info_ldlt.solve(rhs);
    ev.gamma_info = info;
    const double quad = y_omega_y - rhs.dot(ev.gamma);
    ev.loglik = -0.5 * (logdet + quad);
    if (!std::isfinite(ev.loglik)) return ev;
    ev.ok = true;

    if (want_block_quad) ev.block_quad.assign(n_blocks, 0.0);
    if (!want_grad && !want_block_quad) return ev;

    // Residual-based trace/quadratic accumulators; the gradient of the
    // profile likelihood equals the partial gradient at the GLS optimum.
    std::vector<Eigen::MatrixXd> s_sum, u_sum;
    if (want_grad) {
      s_sum.assign(k_count, Eigen::MatrixXd::Zero(t_count, t_count));
      u_sum.assign(k_count, Eigen::MatrixXd::Zero(t_count, t_count));
    }
    for (size_t bi = 0; bi < n_blocks; ++bi) {
      const VcBlock& b = blocks_[bi];
      const int m = b.cells();
      const Eigen::VectorXd u = inv_y[bi] - inv_ac[bi] * ev.gamma;
      if (want_block_quad) {
        const Eigen::VectorXd res = b.y - b.AC * ev.gamma;
        ev.block_quad[bi] = res.dot(u);
      }
      if (!want_grad) continue;
      const Eigen::MatrixXd omega_inv =
          factors[bi].solve(Eigen::MatrixXd::Identity(m, m));
      for (int c1 = 0; c1 < m; ++c1) {
        const int t1 = b.cell_trait[c1], p1 = b.cell_person[c1];
        for (int c2 = 0; c2 < m; ++c2) {
          const int t2 = b.cell_trait[c2], p2 = b.cell_person[c2];
          const double w = omega_inv(c1, c2);
          const double uu = u[c1] * u[c2];
          for (int k = 0; k < k_count; ++k) {
            const double kv = b.kernels[k](p1, p2);
            s_sum[k](t1, t2) += w * kv;
            u_sum[k](t1, t2) += uu * kv;
          }
        }
      }
    }

    if (want_grad) {
      // dL/dl_ab = <U - S, E_ab L' + L E_ab'> / 2 = (U - S).row(a) . L.col(b)
      // using the symmetry of U and S.
      ev.grad.resize(n_theta());
      int at = 0;
      for (int k = 0; k < k_count; ++k) {
        const Eigen::MatrixXd diff = u_sum[k] - s_sum[k];
        for (int a = 0; a < t_count; ++a)
          for (int bcol = 0; bcol <= a; ++bcol)
            ev.grad[at++] = diff.row(a).dot(chol_factors[k].col(bcol));
      }
    }
    return ev;
  }

 private:
  // Structural identifiability: with a positive-definite covariance the GLS
  // information is singular exactly when the stacked design is rank deficient.
  void check_design_rank() const {
    int cells = 0;
    for (const auto& b : blocks_) cells += b.cells();
    Eigen::MatrixXd ac(cells, constraint_.cols());
    int at = 0;
    for (const auto& b : blocks_) {
      ac.middleRows(at, b.cells()) = b.AC;
      at += b.cells();
    }
    if (Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(ac).rank() < constraint_.cols())
      throw numeric_error("fixed-effect design is rank deficient");
  }

  void build_blocks(const MeanModel& mean, const CovarianceModel& cov,
                    const Eigen::MatrixXd& traits) {
    const int t_count = n_traits_;
    for (auto [begin, end] : cov.blocks) {
      VcBlock b;
      b.person_begin = begin;
      b.n_persons = end - begin;
      for (int t = 0; t < t_count; ++t)
        for (int i = begin; i < end; ++i)
          if (std::isfinite(traits(i, t))) {
            b.cell_person.push_back(i - begin);
            b.cell_trait.push_back(t);
          }
      if (b.cell_person.empty()) continue;
      const int m = b.cells();
      for (int k = 0; k < n_components_; ++k)
        b.kernels.push_back(cov.kernels[k].values.block(begin, begin, b.n_persons, b.n_persons));
      b.A.setZero(m, static_cast<Eigen::Index>(n_effects_) * t_count);
      b.y.resize(m);
      for (int c = 0; c < m; ++c) {
        const int i = begin + b.cell_person[c];
        const int t = b.cell_trait[c];
        b.y[c] = traits(i, t);
        for (int j = 0; j < n_effects_; ++j) b.A(c, j * t_count + t) = mean.X(i, j);
      }
      b.AC = b.A * constraint_;
      blocks_.push_back(std::move(b));
    }
    if (blocks_.empty()) throw data_error("no observed trait cells to fit");
  }

  void build_rotated(const MeanModel& mean, const CovarianceModel& cov,
                     const Eigen::MatrixXd& traits, int identity_at) {
    const int n = static_cast<int>(traits.rows());
    const int t_count = n_traits_;
    const int other = identity_at == 0 ? 1 : 0;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov.kernels[other].values);
    if (es.info() != Eigen::Success)
      throw numeric_error("kernel eigendecomposition failed");
    rotated_ = true;
    rotation_ = es.eigenvectors();
    const Eigen::VectorXd d = es.eigenvalues();
    const Eigen::MatrixXd y_rot = rotation_.transpose() * traits;
    const Eigen::MatrixXd x_rot = rotation_.transpose() * mean.X;

    blocks_.reserve(n);
    for (int i = 0; i < n; ++i) {
      VcBlock b;
      b.person_begin = i;
      b.n_persons = 1;
      b.cell_person.assign(t_count, 0);
      b.cell_trait.resize(t_count);
      b.kernels.assign(n_components_, Eigen::MatrixXd::Ones(1, 1));
      b.kernels[other](0, 0) = d[i];
      b.A.setZero(t_count, static_cast<Eigen::Index>(n_effects_) * t_count);
      b.y.resize(t_count);
      for (int t = 0; t < t_count; ++t) {
        b.cell_trait[t] = t;
        b.y[t] = y_rot(i, t);
        for (int j = 0; j < n_effects_; ++j) b.A(t, j * t_count + t) = x_rot(i, j);
      }
      b.AC = b.A * constraint_;
      blocks_.push_back(std::move(b));
    }
  }

  int n_traits_ = 1, n_components_ = 0, n_effects_ = 0;
  Eigen::MatrixXd constraint_;
  std::vector<std::string> effect_names_;
  std::vector<VcBlock> blocks_;
  bool rotated_ = false;
  Eigen::MatrixXd rotation_;
};

struct FitOptions {
  int max_iterations = 1000;
  double rel_tolerance = 1e-8;
  std::optional<Eigen::VectorXd> initial_theta;  // warm start
};

struct FitResult {
  bool converged = false;
  int iterations = 0;
  double loglik = 0.0;
  std::vector<std::string> component_names;
  std::vector<Eigen::MatrixXd> sigma;  // per component, T x T
  Eigen::VectorXd theta;               // packed Cholesky parameters
  Eigen::VectorXd gamma;
  Eigen::MatrixXd gamma_cov;
  Eigen::VectorXd beta;  // expanded, effect-major
  Eigen::MatrixXd beta_cov;
  std::vector<std::string> beta_names;
  std::vector<double> block_quad;  // residual quadratic form per block
  std::vector<int> block_cells;
  int n_cells = 0;
};

// Pairwise-complete sample covariance, clipped to be safely positive
// definite (used only to seed the optimizer).
inline Eigen::MatrixXd trait_covariance_seed(const Eigen::MatrixXd& traits) {
  const int t_count = static_cast<int>(traits.cols());
  const int n = static_cast<int>(traits.rows());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(t_count);
  for (int t = 0; t < t_count; ++t) {
    double sum = 0;
    int cnt = 0;
    for (int i = 0; i < n; ++i)
      if (std::isfinite(traits(i, t))) {
        sum += traits(i, t);
        ++cnt;
      }
    mean[t] = cnt > 0 ? sum / cnt : 0.0;
  }
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(t_count, t_count);
  for (int t = 0; t < t_count; ++t)
    for (int u = 0; u <= t; ++u) {
      double sum = 0;
      int cnt = 0;
      for (int i = 0; i < n; ++i)
        if (std::isfinite(traits(i, t)) && std::isfinite(traits(i, u))) {
          sum += (traits(i, t) - mean[t]) * (traits(i, u) - mean[u]);
          ++cnt;
        }
      s(t, u) = s(u, t) = cnt > 1 ? sum / (cnt - 1) : (t == u ? 1.0 : 0.0);
    }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
  const double floor = std::max(1e-6, 1e-6 * es.eigenvalues().maxCoeff());
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(floor);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline std::vector<Eigen::MatrixXd> initial_chol_factors(const CovarianceModel& cov,
                                                         const Eigen::MatrixXd& traits) {
  const Eigen::MatrixXd seed = trait_covariance_seed(traits);
  const int t_count = static_cast<int>(traits.cols());
  std::vector<Eigen::MatrixXd> ls;
  for (const auto& k : cov.kernels) {
    Eigen::MatrixXd target;
    switch (k.kind) {
      case KernelKind::identity:
        target = 0.5 * seed;
        break;
      case KernelKind::theoretical_kinship:
      case KernelKind::grm_kinship:
      case KernelKind::mom_kinship:
      case KernelKind::x_kinship:
        target = 0.25 * seed;
        break;
      default:
        target = 0.01 * Eigen::MatrixXd::Identity(t_count, t_count);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(target);
    if (llt.info() != Eigen::Success)
      llt.compute(target + 1e-6 * Eigen::MatrixXd::Identity(t_count, t_count));
    ls.push_back(llt.matrixL());
  }
  return ls;
}

// Profile-likelihood BFGS over the Cholesky parameters with exact GLS for
// the fixed effects at every evaluation. Non-convergence is reported via the
// flag, never thrown.
inline FitResult fit_model(const VcProblem& problem, const CovarianceModel& cov,
                           const Eigen::MatrixXd& traits, const FitOptions& options = {}) {
  const int t_count = problem.n_traits();
  const int dim = problem.n_theta();

  Eigen::VectorXd theta;
  if (options.initial_theta)
    theta = *options.initial_theta;
  else
    theta = pack_chol(initial_chol_factors(cov, traits));

  auto eval_at = [&](const Eigen::VectorXd& th, bool grad) {
    return problem.evaluate(unpack_chol(th, problem.n_components(), t_count), grad);
  };

  VcProblem::Eval cur = eval_at(theta, true);
  if (!cur.ok) {
    // A degenerate warm start should not kill the fit; fall back to defaults.
    theta = pack_chol(initial_chol_factors(cov, traits));
    cur = eval_at(theta, true);
    if (!cur.ok) throw numeric_error("likelihood is not finite at the starting values");
  }

  Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(dim, dim);
  bool converged = false;
  int iter = 0;
  for (; iter < options.max_iterations; ++iter) {
    const Eigen::VectorXd g = -cur.grad;  // minimize f = -loglik
    Eigen::VectorXd dir = -(h_inv * g);
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      h_inv.setIdentity();
      dir = -g;
      slope = g.dot(dir);
      if (!(slope < 0.0)) {  // zero gradient
        converged = true;
        break;
      }
    }

    double step = 1.0;
    VcProblem::Eval next;
    bool accepted = false;
    for (int half = 0; half < 60; ++half) {
      next = eval_at(theta + step * dir, true);
      if (next.ok && -next.loglik <= -cur.loglik + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      converged = g.lpNorm<Eigen::Infinity>() <= 1e-6 * (1.0 + std::abs(cur.loglik));
      break;
    }

    const Eigen::VectorXd s = step * dir;
    const Eigen::VectorXd yv = -next.grad - g;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      const Eigen::VectorXd hy = h_inv * yv;
      const double yhy = yv.dot(hy);
      h_inv += ((sy + yhy) / (sy * sy)) * (s * s.transpose()) -
               (hy * s.transpose() + s * hy.transpose()) / sy;
    }

    const double improvement = next.loglik - cur.loglik;
    theta += s;
    cur = next;
    if (improvement <= options.rel_tolerance * (1.0 + std::abs(next.loglik))) {
      converged = true;
      ++iter;
      break;
    }
  }

  const auto ls = unpack_chol(theta, problem.n_components(), t_count);
  VcProblem::Eval fin = problem.evaluate(ls, false, true);
  if (!fin.ok) throw numeric_error("likelihood is not finite at the fitted values");

  FitResult fit;
  fit.converged = converged;
  fit.iterations = iter;
  fit.loglik = fin.loglik;
  fit.component_names = cov.names;
  for (const auto& l : ls) fit.sigma.push_back(l * l.transpose());
  fit.theta = theta;
  fit.gamma = fin.gamma;
  Eigen::LDLT<Eigen::MatrixXd> info(fin.gamma_info);
  fit.gamma_cov = info.solve(Eigen::MatrixXd::Identity(problem.n_gamma(), problem.n_gamma()));
  fit.beta = problem.constraint() * fit.gamma;
  fit.beta_cov = problem.constraint() * fit.gamma_cov * problem.constraint().transpose();
  fit.block_quad = fin.block_quad;
  fit.n_cells = problem.total_cells();
  for (const auto& b : problem.blocks()) fit.block_cells.push_back(b.cells());
  for (int j = 0; j < problem.n_effects(); ++j)
    for (int t = 0; t < t_count; ++t)
      fit.beta_names.push_back(problem.effect_names()[j] +
                               (t_count > 1 ? ":" + std::to_string(t + 1) : ""));
  return fit;
}

inline FitResult fit_null(const MeanModel& mean, const CovarianceModel& cov,
                          const Eigen::MatrixXd& traits, const FitOptions& options = {}) {
  VcProblem problem(mean, cov, traits);
  return fit_model(problem, cov, traits, options);
}

// Residual quadratic form per factorization block against its cell count:
// large values flag pedigrees the fitted model explains poorly.
struct BlockOutlier {
  std::string label;
  int cells = 0;
  double quad = 0.0;
  double p_value = 1.0;
};

inline std::vector<BlockOutlier> block_outlier_report(const FitResult& fit,
                                                      const std::vector<std::string>& labels) {
  std::vector<BlockOutlier> out;
  for (size_t b = 0; b < fit.block_quad.size(); ++b) {
    BlockOutlier row;
    row.label = b < labels.size() ? labels[b] : std::to_string(b);
    row.cells = fit.block_cells[b];
    row.quad = fit.block_quad[b];
    row.p_value = chisq_upper_p(row.quad, row.cells);
    out.push_back(row);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const BlockOutlier& a, const BlockOutlier& b) { return a.p_value < b.p_value; });
  return out;
}

}  // namespace pedscan
