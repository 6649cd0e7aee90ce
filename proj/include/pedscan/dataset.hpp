#pragma once

#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "pedscan/common.hpp"
#include "pedscan/genotype.hpp"
#include "pedscan/kinship.hpp"
#include "pedscan/pedigree.hpp"
#include "pedscan/traits_table.hpp"

namespace pedscan {

struct DropRecord {
  std::string person_id;
  std::string reason;
};

// Analysis-ready view of the joined inputs. Individuals are laid out
// contiguously per pedigree (topological order within), and pedigrees that
// share a household are adjacent so every covariance block is a contiguous
// index range.
struct Dataset {
  std::vector<std::string> person_ids;  // analysis order
  std::vector<int> person_pedigree;
  std::vector<std::string> household;
  std::vector<Sex> sex;
  std::vector<size_t> genotype_row;  // row in the genotype matrix
  Eigen::MatrixXd traits;            // n x T, NaN when unobserved
  Eigen::MatrixXd covariates;        // n x C
  std::vector<std::string> trait_names;
  std::vector<std::string> covariate_names;

  std::vector<Pedigree> pedigrees;                 // all input pedigrees
  std::vector<std::vector<int>> analyzed_members;  // kept member indices, per pedigree
  std::vector<int> block_pedigree;                 // pedigree index per laid-out block
  std::vector<std::pair<int, int>> ped_blocks;     // ranges in analysis order
  std::vector<std::pair<int, int>> household_blocks;  // ped blocks merged by shared household

  std::vector<DropRecord> drops;

  int n() const { return static_cast<int>(person_ids.size()); }
  int n_traits() const { return static_cast<int>(trait_names.size()); }
};

namespace detail {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) {
    for (int i = 0; i < n; ++i) parent[i] = i;
  }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace detail

inline Dataset build_dataset(std::vector<Pedigree> pedigrees, const GenotypeMatrix& genotypes,
                             const TraitTable& traits) {
  Dataset ds;
  ds.pedigrees = std::move(pedigrees);
  ds.trait_names = traits.trait_names;
  ds.covariate_names = traits.covariate_names;

  std::unordered_map<std::string, size_t> geno_row;
  for (size_t i = 0; i < genotypes.individual_ids().size(); ++i)
    geno_row[genotypes.individual_ids()[i]] = i;
  std::unordered_map<std::string, size_t> trait_row;
  for (size_t i = 0; i < traits.person_ids.size(); ++i) trait_row[traits.person_ids[i]] = i;

  // Every genotyped individual must have a pedigree entry; the reverse is a drop.
  std::unordered_set<std::string> ped_ids;
  for (const auto& p : ds.pedigrees)
    for (const auto& m : p.members) ped_ids.insert(m.id);
  std::vector<std::string> orphans;
  for (const auto& id : genotypes.individual_ids())
    if (!ped_ids.count(id)) orphans.push_back(id);
  if (!orphans.empty()) {
    std::string msg = "genotyped individuals missing from the pedigree file:";
    for (size_t i = 0; i < orphans.size() && i < 10; ++i) msg += " " + orphans[i];
    if (orphans.size() > 10)
      msg += " (and " + std::to_string(orphans.size() - 10) + " more)";
    throw data_error(msg);
  }

  const int n_ped = static_cast<int>(ds.pedigrees.size());
  const int n_traits = static_cast<int>(traits.trait_names.size());
  const int n_cov = static_cast<int>(traits.covariate_names.size());

  ds.analyzed_members.assign(n_ped, {});
  for (int p = 0; p < n_ped; ++p) {
    const Pedigree& ped = ds.pedigrees[p];
    for (int m = 0; m < ped.size(); ++m) {
      const std::string& id = ped.members[m].id;
      if (!geno_row.count(id)) {
        ds.drops.push_back({id, "not_genotyped"});
        continue;
      }
      auto it = trait_row.find(id);
      if (it == trait_row.end()) {
        ds.drops.push_back({id, "no_phenotype"});
        continue;
      }
      const Eigen::Index r = static_cast<Eigen::Index>(it->second);
      bool cov_missing = false;
      for (int c = 0; c < n_cov; ++c)
        if (!std::isfinite(traits.covariates(r, c))) cov_missing = true;
      if (cov_missing) {
        ds.drops.push_back({id, "missing_covariate"});
        continue;
      }
      bool any_trait = false;
      for (int t = 0; t < n_traits; ++t)
        if (std::isfinite(traits.values(r, t))) any_trait = true;
      if (!any_trait) {
        ds.drops.push_back({id, "all_traits_missing"});
        continue;
      }
      ds.analyzed_members[p].push_back(m);
    }
  }

  // Merge pedigrees that share a household so covariance blocks stay contiguous.
  detail::UnionFind uf(n_ped);
  {
    std::unordered_map<std::string, int> owner;
    for (int p = 0; p < n_ped; ++p)
      for (int m : ds.analyzed_members[p]) {
        const std::string& hh = ds.pedigrees[p].members[m].household;
        if (hh.empty()) continue;
        auto [it, fresh] = owner.emplace(hh, p);
        if (!fresh) uf.unite(it->second, p);
      }
  }
  std::vector<std::vector<int>> groups(n_ped);
  for (int p = 0; p < n_ped; ++p)
    if (!ds.analyzed_members[p].empty()) groups[uf.find(p)].push_back(p);

  int total = 0;
  for (int g = 0; g < n_ped; ++g) {
    if (groups[g].empty()) continue;
    const int group_begin = total;
    for (int p : groups[g]) {
      const int block_begin = total;
      for (int m : ds.analyzed_members[p]) {
        const PersonRecord& person = ds.pedigrees[p].members[m];
        ds.person_ids.push_back(person.id);
        ds.person_pedigree.push_back(p);
        ds.household.push_back(person.household);
        ds.sex.push_back(person.sex);
        ds.genotype_row.push_back(geno_row.at(person.id));
        ++total;
      }
      ds.block_pedigree.push_back(p);
      ds.ped_blocks.emplace_back(block_begin, total);
    }
    ds.household_blocks.emplace_back(group_begin, total);
  }
  if (total == 0) throw data_error("no individuals remain after joining inputs");

  ds.traits.resize(total, n_traits);
  ds.covariates.resize(total, n_cov);
  for (int i = 0; i < total; ++i) {
    const Eigen::Index r = static_cast<Eigen::Index>(trait_row.at(ds.person_ids[i]));
    for (int t = 0; t < n_traits; ++t) ds.traits(i, t) = traits.values(r, t);
    for (int c = 0; c < n_cov; ++c) ds.covariates(i, c) = traits.covariates(r, c);
  }
  return ds;
}

// Build a kernel by evaluating per_ped_matrix on each full pedigree and
// restricting it to the analyzed members in layout order.
template <class Fn>
inline KernelMatrix assemble_from_pedigrees(const Dataset& ds, KernelKind kind,
                                            Fn&& per_ped_matrix) {
  KernelMatrix out;
  out.kind = kind;
  out.values = Eigen::MatrixXd::Zero(ds.n(), ds.n());
  out.blocks = ds.ped_blocks;
  for (size_t b = 0; b < ds.ped_blocks.size(); ++b) {
    const int p = ds.block_pedigree[b];
    const Eigen::MatrixXd full = per_ped_matrix(ds.pedigrees[p]);
    const auto& idx = ds.analyzed_members[p];
    const auto [begin, end] = ds.ped_blocks[b];
    const int k = end - begin;
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) out.values(begin + i, begin + j) = full(idx[i], idx[j]);
  }
  return out;
}

// Extract the analyzed individuals' dosages for one SNP in analysis order.
inline void analyzed_codes(const Dataset& ds, const GenotypeMatrix& genotypes, size_t snp,
                           std::vector<std::uint8_t>& all, std::vector<std::uint8_t>& out) {
  all.resize(genotypes.n_individuals());
  genotypes.decode_snp(snp, all.data());
  out.resize(ds.person_ids.size());
  for (size_t i = 0; i < ds.genotype_row.size(); ++i) out[i] = all[ds.genotype_row[i]];
}

// Coarsest contiguous partition compatible with every kernel (a kernel with
// no block list is treated as dense).
inline std::vector<std::pair<int, int>> merge_block_partitions(
    const std::vector<const KernelMatrix*>& kernels, int n) {
  for (const auto* k : kernels)
    if (k->blocks.empty()) return {{0, n}};
  // Sweep over cut points: position c stays a boundary only if every kernel
  // has a block boundary there.
  std::vector<std::pair<int, int>> merged;
  std::vector<char> is_cut(static_cast<size_t>(n) + 1, 1);
  for (const auto* k : kernels) {
    std::vector<char> cuts(static_cast<size_t>(n) + 1, 0);
    cuts[0] = cuts[n] = 1;
    for (auto [b, e] : k->blocks) {
      cuts[b] = 1;
      cuts[e] = 1;
    }
    for (int c = 0; c <= n; ++c) is_cut[c] = is_cut[c] && cuts[c];
  }
  int begin = 0;
  for (int c = 1; c <= n; ++c)
    if (is_cut[c]) {
      merged.emplace_back(begin, c);
      begin = c;
    }
  return merged;
}

}  // namespace pedscan
