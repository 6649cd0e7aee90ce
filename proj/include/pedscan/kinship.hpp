#pragma once

#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "pedscan/common.hpp"
#include "pedscan/genotype.hpp"
#include "pedscan/pedigree.hpp"

namespace pedscan {

enum class KernelKind {
  theoretical_kinship,
  grm_kinship,
  mom_kinship,
  delta7,
  household,
  identity,
  x_kinship,
};

inline const char* kernel_kind_name(KernelKind k) {
  switch (k) {
    case KernelKind::theoretical_kinship: return "theoretical_kinship";
    case KernelKind::grm_kinship: return "grm_kinship";
    case KernelKind::mom_kinship: return "mom_kinship";
    case KernelKind::delta7: return "delta7";
    case KernelKind::household: return "household";
    case KernelKind::identity: return "identity";
    case KernelKind::x_kinship: return "x_kinship";
  }
  return "?";
}

// Symmetric n x n structure kernel. blocks, when non-empty, partitions the
// index range into contiguous [begin, end) slices with zero cross entries.
struct KernelMatrix {
  KernelKind kind = KernelKind::identity;
  Eigen::MatrixXd values;
  std::vector<std::pair<int, int>> blocks;

  int n() const { return static_cast<int>(values.rows()); }
};

// Kinship recursion in topological order: parents are already filled in when
// a child is reached. All matrices are on the kinship scale (outbred self 1/2).
inline Eigen::MatrixXd kinship_matrix(const Pedigree& ped) {
  const int n = ped.size();
  Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    const int fa = ped.members[i].father, mo = ped.members[i].mother;
    for (int j = 0; j < i; ++j) {
      const double v = fa < 0 ? 0.0 : 0.5 * (phi(fa, j) + phi(mo, j));
      phi(i, j) = phi(j, i) = v;
    }
    phi(i, i) = fa < 0 ? 0.5 : 0.5 + 0.5 * phi(fa, mo);
  }
  return phi;
}

// X-linked recursion: males are hemizygous (self coefficient 1, inherit only
// the maternal X), females follow the autosomal recursion halved over parents.
inline Eigen::MatrixXd x_kinship_matrix(const Pedigree& ped) {
  const int n = ped.size();
  Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    const int fa = ped.members[i].father, mo = ped.members[i].mother;
    const bool male = ped.members[i].sex == Sex::male;
    for (int j = 0; j < i; ++j) {
      double v;
      if (fa < 0)
        v = 0.0;
      else if (male)
        v = phi(mo, j);
      else
        v = 0.5 * (phi(mo, j) + phi(fa, j));
      phi(i, j) = phi(j, i) = v;
    }
    if (male)
      phi(i, i) = 1.0;
    else
      phi(i, i) = fa < 0 ? 0.5 : 0.5 * (1.0 + phi(mo, fa));
  }
  return phi;
}

inline bool pedigree_is_inbred(const Pedigree& ped, double tol = 1e-12) {
  const Eigen::MatrixXd phi = kinship_matrix(ped);
  for (int i = 0; i < ped.size(); ++i)
    if (phi(i, i) > 0.5 + tol) return true;
  return false;
}

// Condensed identity coefficient Delta7 for non-inbred pedigrees:
// Delta7_ij = phi(m_i,m_j) phi(f_i,f_j) + phi(m_i,f_j) phi(f_i,m_j), diag 1.
// Founders get phantom parents so the formula applies to every pair.
inline Eigen::MatrixXd delta7_matrix(const Pedigree& ped) {
  if (pedigree_is_inbred(ped))
    throw data_error("pedigree " + ped.id +
                     " is inbred; dominance coefficients support only non-inbred structures");
  const int n = ped.size();

  // Augmented pedigree: two phantom founders per founder, prepended.
  Pedigree aug;
  std::vector<int> fa(n), mo(n);
  int next = 0;
  auto push_phantom = [&](Sex s) {
    PersonRecord p;
    p.id = "_phantom" + std::to_string(next);
    p.sex = s;
    aug.members.push_back(p);
    return next++;
  };
  std::vector<int> map_real(n);
  for (int i = 0; i < n; ++i) {
    if (ped.members[i].father < 0) {
      fa[i] = push_phantom(Sex::male);
      mo[i] = push_phantom(Sex::female);
    }
  }
  for (int i = 0; i < n; ++i) {
    PersonRecord p = ped.members[i];
    if (p.father >= 0) {
      p.father = map_real[p.father];
      p.mother = map_real[p.mother];
    } else {
      p.father = fa[i];
      p.mother = mo[i];
    }
    map_real[i] = next++;
    aug.members.push_back(p);
  }
  const Eigen::MatrixXd phi = kinship_matrix(aug);

  Eigen::MatrixXd d7 = Eigen::MatrixXd::Identity(n, n);
  for (int i = 0; i < n; ++i) {
    const int mi = aug.members[map_real[i]].mother, fi = aug.members[map_real[i]].father;
    for (int j = 0; j < i; ++j) {
      const int mj = aug.members[map_real[j]].mother, fj = aug.members[map_real[j]].father;
      const double v = phi(mi, mj) * phi(fi, fj) + phi(mi, fj) * phi(fi, mj);
      d7(i, j) = d7(j, i) = v;
    }
  }
  return d7;
}

inline KernelMatrix theoretical_kinship(const Pedigree& ped) {
  return {KernelKind::theoretical_kinship, kinship_matrix(ped), {{0, ped.size()}}};
}

inline KernelMatrix x_linked_kinship(const Pedigree& ped) {
  return {KernelKind::x_kinship, x_kinship_matrix(ped), {{0, ped.size()}}};
}

inline KernelMatrix delta7(const Pedigree& ped) {
  return {KernelKind::delta7, delta7_matrix(ped), {{0, ped.size()}}};
}

// Block-diagonal assembly of per-pedigree kernels (individuals unrelated
// across pedigrees by definition).
inline KernelMatrix assemble_global_kernel(const std::vector<KernelMatrix>& per_ped) {
  if (per_ped.empty()) throw data_error("no kernels to assemble");
  int n = 0;
  for (const auto& k : per_ped) n += k.n();
  KernelMatrix out;
  out.kind = per_ped.front().kind;
  out.values = Eigen::MatrixXd::Zero(n, n);
  int at = 0;
  for (const auto& k : per_ped) {
    out.values.block(at, at, k.n(), k.n()) = k.values;
    out.blocks.emplace_back(at, at + k.n());
    at += k.n();
  }
  return out;
}

// Mode (b): keep a global empirical estimate only within pedigree blocks.
inline KernelMatrix restrict_to_blocks(const KernelMatrix& k,
                                       const std::vector<std::pair<int, int>>& blocks) {
  KernelMatrix out;
  out.kind = k.kind;
  out.blocks = blocks;
  out.values = Eigen::MatrixXd::Zero(k.n(), k.n());
  for (auto [b, e] : blocks)
    out.values.block(b, b, e - b, e - b) = k.values.block(b, b, e - b, e - b);
  return out;
}

// h_ij = 1 iff same non-empty household id; diagonal 1.
inline KernelMatrix household_matrix(const std::vector<std::string>& household_ids) {
  const int n = static_cast<int>(household_ids.size());
  KernelMatrix out;
  out.kind = KernelKind::household;
  out.values = Eigen::MatrixXd::Identity(n, n);
  std::unordered_map<std::string, std::vector<int>> groups;
  for (int i = 0; i < n; ++i)
    if (!household_ids[i].empty()) groups[household_ids[i]].push_back(i);
  for (const auto& [id, idx] : groups)
    for (size_t a = 0; a < idx.size(); ++a)
      for (size_t b = a + 1; b < idx.size(); ++b)
        out.values(idx[a], idx[b]) = out.values(idx[b], idx[a]) = 1.0;
  return out;
}

inline KernelMatrix identity_kernel(int n) {
  KernelMatrix out;
  out.kind = KernelKind::identity;
  out.values = Eigen::MatrixXd::Identity(n, n);
  // A diagonal kernel is compatible with any partition.
  for (int i = 0; i < n; ++i) out.blocks.emplace_back(i, i + 1);
  return out;
}

inline double min_eigenvalue(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

// Sampling noise can push empirical kernels slightly indefinite; clip
// negative eigenvalues at zero when the smallest is below -1e-8.
inline void project_psd(Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.eigenvalues().minCoeff() >= -1e-8) return;
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
  m = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  m = 0.5 * (m + m.transpose()).eval();
}

// GRM on the kinship scale: phi_ij = mean_s over polymorphic SNPs of
// (g_is - 2p_s)(g_js - 2p_s) / (4 p_s (1-p_s)), missing cells mean-imputed.
inline KernelMatrix grm_kinship(const GenotypeMatrix& g,
                                const std::vector<size_t>* snp_subset = nullptr,
                                int n_threads = 1) {
  const size_t n = g.n_individuals();
  std::vector<size_t> all;
  if (!snp_subset) {
    all.resize(g.n_snps());
    for (size_t s = 0; s < all.size(); ++s) all[s] = s;
    snp_subset = &all;
  }

  const int threads = std::max(1, n_threads);
  std::vector<Eigen::MatrixXd> partial(threads, Eigen::MatrixXd::Zero(n, n));
  std::vector<long long> used_count(threads, 0);

  auto work = [&](int t, size_t begin, size_t end) {
    std::vector<std::uint8_t> codes(n);
    Eigen::VectorXd x(n);
    for (size_t k = begin; k < end; ++k) {
      const size_t s = (*snp_subset)[k];
      g.decode_snp(s, codes.data());
      double sum = 0;
      size_t obs = 0;
      for (size_t i = 0; i < n; ++i)
        if (codes[i] != GenotypeMatrix::kMissing) {
          sum += codes[i];
          ++obs;
        }
      if (obs == 0) continue;
      const double p = sum / (2.0 * static_cast<double>(obs));
      if (p <= 0.0 || p >= 1.0) continue;  // monomorphic, 0/0 term
      const double denom = std::sqrt(4.0 * p * (1.0 - p));
      for (size_t i = 0; i < n; ++i)
        x[static_cast<Eigen::Index>(i)] =
            codes[i] == GenotypeMatrix::kMissing ? 0.0 : (codes[i] - 2.0 * p) / denom;
      partial[t].selfadjointView<Eigen::Lower>().rankUpdate(x, 1.0);
      ++used_count[t];
    }
  };

  const size_t total = snp_subset->size();
  if (threads == 1) {
    work(0, 0, total);
  } else {
    std::vector<std::thread> pool;
    const size_t chunk = (total + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const size_t b = std::min(total, static_cast<size_t>(t) * chunk);
      const size_t e = std::min(total, b + chunk);
      pool.emplace_back(work, t, b, e);
    }
    for (auto& th : pool) th.join();
  }

  long long used = 0;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n, n);
  for (int t = 0; t < threads; ++t) {  // fixed order keeps the sum reproducible
    acc += partial[t];
    used += used_count[t];
  }
  if (used == 0) throw data_error("all SNPs are monomorphic; cannot estimate kinship");
  acc /= static_cast<double>(used);
  acc.triangularView<Eigen::Upper>() = acc.transpose().triangularView<Eigen::Upper>();

  KernelMatrix out;
  out.kind = KernelKind::grm_kinship;
  out.values = std::move(acc);
  project_psd(out.values);
  return out;
}

// Method-of-moments estimator: per pair, the allele
// match proportion recentred by sum(p^2+q^2) over SNPs where both genotypes
// are observed.
inline KernelMatrix mom_kinship(const GenotypeMatrix& g, int n_threads = 1) {
  const size_t n = g.n_individuals();
  const int threads = std::max(1, n_threads);
  // Accumulators per pair: e_ij, sum of (p^2+q^2), and the pair count.
  std::vector<Eigen::MatrixXd> e_part(threads, Eigen::MatrixXd::Zero(n, n));
  std::vector<Eigen::MatrixXd> c_part(threads, Eigen::MatrixXd::Zero(n, n));
  std::vector<Eigen::MatrixXd> s_part(threads, Eigen::MatrixXd::Zero(n, n));

  auto work = [&](int t, size_t begin, size_t end) {
    std::vector<std::uint8_t> codes(n);
    Eigen::VectorXd gv(n), hv(n), mask(n);
    for (size_t s = begin; s < end; ++s) {
      g.decode_snp(s, codes.data());
      double sum = 0;
      size_t obs = 0;
      for (size_t i = 0; i < n; ++i)
        if (codes[i] != GenotypeMatrix::kMissing) {
          sum += codes[i];
          ++obs;
        }
      if (obs == 0) continue;
      const double p = sum / (2.0 * static_cast<double>(obs));
      if (p <= 0.0 || p >= 1.0) continue;
      const double pq2 = p * p + (1.0 - p) * (1.0 - p);
      for (size_t i = 0; i < n; ++i) {
        const bool miss = codes[i] == GenotypeMatrix::kMissing;
        mask[static_cast<Eigen::Index>(i)] = miss ? 0.0 : 1.0;
        gv[static_cast<Eigen::Index>(i)] = miss ? 0.0 : 0.5 * codes[i];
        hv[static_cast<Eigen::Index>(i)] = miss ? 0.0 : 0.5 * (2.0 - codes[i]);
      }
      // e contribution (1/4)(g_i g_j + (2-g_i)(2-g_j)) = gv_i gv_j + hv_i hv_j.
      e_part[t].selfadjointView<Eigen::Lower>().rankUpdate(gv, 1.0);
      e_part[t].selfadjointView<Eigen::Lower>().rankUpdate(hv, 1.0);
      c_part[t].selfadjointView<Eigen::Lower>().rankUpdate(mask, pq2);
      s_part[t].selfadjointView<Eigen::Lower>().rankUpdate(mask, 1.0);
    }
  };

  const size_t total = g.n_snps();
  if (threads == 1) {
    work(0, 0, total);
  } else {
    std::vector<std::thread> pool;
    const size_t chunk = (total + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const size_t b = std::min(total, static_cast<size_t>(t) * chunk);
      const size_t e = std::min(total, b + chunk);
      pool.emplace_back(work, t, b, e);
    }
    for (auto& th : pool) th.join();
  }

  Eigen::MatrixXd e = Eigen::MatrixXd::Zero(n, n), c = e, cnt = e;
  for (int t = 0; t < threads; ++t) {
    e += e_part[t];
    c += c_part[t];
    cnt += s_part[t];
  }

  KernelMatrix out;
  out.kind = KernelKind::mom_kinship;
  out.values.resize(n, n);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j <= i; ++j) {
      const double denom = cnt(i, j) - c(i, j);
      if (denom <= 0.0)
        throw data_error("method-of-moments kinship denominator is not positive for pair (" +
                         std::to_string(i) + "," + std::to_string(j) + ")");
      const double v = (e(i, j) - c(i, j)) / denom;
      out.values(i, j) = out.values(j, i) = v;
    }
  }
  project_psd(out.values);
  return out;
}

// Lower-triangle text export: id1 id2 value, one row per pair with i >= j.
// Pairs across blocks are structurally zero and omitted for block kernels.
inline void write_kernel_tsv(const std::string& path, const KernelMatrix& k,
                             const std::vector<std::string>& ids) {
  auto out = open_output(path);
  out << "#kind=" << kernel_kind_name(k.kind) << "\n";
  out << "id1\tid2\tvalue\n";
  std::vector<std::pair<int, int>> blocks = k.blocks;
  if (blocks.empty()) blocks.emplace_back(0, k.n());
  for (auto [begin, end] : blocks)
    for (int i = begin; i < end; ++i)
      for (int j = begin; j <= i; ++j)
        out << ids[i] << '\t' << ids[j] << '\t' << format_g(k.values(i, j)) << '\n';
}

}  // namespace pedscan
