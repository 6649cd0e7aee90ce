#include <catch2/catch_amalgamated.hpp>

#include "pedscan/dataset.hpp"
#include "support/oracles.hpp"

using namespace pedscan;
using oracle::add_person;

namespace {

// Two trio pedigrees plus one singleton; household "shared" ties P2 to P3.
std::vector<Pedigree> three_pedigrees() {
  Pedigree p1, p2, p3;
  p1.id = "P1";
  add_person(p1, "d1", -1, -1, Sex::male, "h1");
  add_person(p1, "m1", -1, -1, Sex::female, "h1");
  add_person(p1, "k1", 0, 1, Sex::female, "h1");
  p2.id = "P2";
  add_person(p2, "d2", -1, -1, Sex::male, "shared");
  add_person(p2, "m2", -1, -1, Sex::female, "shared");
  add_person(p2, "k2", 0, 1, Sex::male, "shared");
  p3.id = "P3";
  add_person(p3, "solo", -1, -1, Sex::female, "shared");
  return {p1, p2, p3};
}

TraitTable make_traits(const std::vector<std::string>& ids,
                       const std::vector<std::vector<double>>& values,
                       const std::vector<std::vector<double>>& covs = {}) {
  TraitTable t;
  t.person_ids = ids;
  const int n = static_cast<int>(ids.size());
  const int n_tr = values.empty() ? 0 : static_cast<int>(values[0].size());
  for (int j = 0; j < n_tr; ++j) t.trait_names.push_back("y" + std::to_string(j + 1));
  t.values.resize(n, n_tr);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n_tr; ++j) t.values(i, j) = values[i][j];
  const int n_cov = covs.empty() ? 0 : static_cast<int>(covs[0].size());
  for (int j = 0; j < n_cov; ++j) t.covariate_names.push_back("c" + std::to_string(j + 1));
  t.covariates.resize(n, n_cov);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n_cov; ++j) t.covariates(i, j) = covs[i][j];
  return t;
}

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

}  // namespace

TEST_CASE("dataset join: drops with reasons, in pedigree order") {
  auto peds = three_pedigrees();
  // genotypes: everyone except m1 (-> not_genotyped)
  auto g = oracle::make_genotypes({{0, 1, 2, 1, 0, 1}}, {"d1", "k1", "d2", "m2", "k2", "solo"});
  // traits: d2 absent (-> no_phenotype), m2 all traits missing, k2 missing covariate
  auto t = make_traits({"d1", "k1", "m2", "k2", "solo"},
                       {{1.0}, {2.0}, {kNan}, {3.0}, {4.0}},
                       {{0.0}, {1.0}, {1.0}, {kNan}, {0.5}});
  const auto ds = build_dataset(peds, g, t);

  REQUIRE(ds.drops.size() == 4);
  CHECK(ds.drops[0].person_id == "m1");
  CHECK(ds.drops[0].reason == "not_genotyped");
  CHECK(ds.drops[1].person_id == "d2");
  CHECK(ds.drops[1].reason == "no_phenotype");
  CHECK(ds.drops[2].person_id == "m2");
  CHECK(ds.drops[2].reason == "all_traits_missing");
  CHECK(ds.drops[3].person_id == "k2");
  CHECK(ds.drops[3].reason == "missing_covariate");

  CHECK(ds.person_ids == std::vector<std::string>{"d1", "k1", "solo"});
  CHECK(ds.n() == 3);
  CHECK(ds.n_traits() == 1);
  CHECK(ds.traits(2, 0) == 4.0);
  CHECK(ds.covariates(1, 0) == 1.0);
  CHECK(ds.genotype_row == std::vector<size_t>{0, 1, 5});
  CHECK(ds.sex[2] == Sex::female);
}

TEST_CASE("dataset join: genotyped orphan is fatal") {
  auto peds = three_pedigrees();
  auto g = oracle::make_genotypes({{0, 1}}, {"d1", "stranger"});
  auto t = make_traits({"d1"}, {{1.0}});
  CHECK_THROWS_WITH(build_dataset(peds, g, t),
                    Catch::Matchers::ContainsSubstring("stranger"));
}

TEST_CASE("dataset join: nothing left is fatal") {
  auto peds = three_pedigrees();
  auto g = oracle::make_genotypes({{0}}, {"d1"});
  auto t = make_traits({"k1"}, {{1.0}});  // d1 has no phenotype, k1 no genotype
  CHECK_THROWS_WITH(build_dataset(peds, g, t),
                    Catch::Matchers::ContainsSubstring("no individuals remain"));
}

TEST_CASE("dataset join: household-linked pedigrees are laid out adjacently") {
  auto peds = three_pedigrees();
  auto g = oracle::make_genotypes({{0, 1, 2, 1, 0, 1, 2}},
                                  {"d1", "m1", "k1", "d2", "m2", "k2", "solo"});
  auto t = make_traits({"d1", "m1", "k1", "d2", "m2", "k2", "solo"},
                       {{1.0}, {1.5}, {2.0}, {2.5}, {3.0}, {3.5}, {4.0}});
  const auto ds = build_dataset(peds, g, t);

  // P2 and P3 share household "shared": they form one household block.
  REQUIRE(ds.ped_blocks.size() == 3);
  CHECK(ds.ped_blocks[0] == std::pair<int, int>{0, 3});
  CHECK(ds.ped_blocks[1] == std::pair<int, int>{3, 6});
  CHECK(ds.ped_blocks[2] == std::pair<int, int>{6, 7});
  REQUIRE(ds.household_blocks.size() == 2);
  CHECK(ds.household_blocks[0] == std::pair<int, int>{0, 3});
  CHECK(ds.household_blocks[1] == std::pair<int, int>{3, 7});
  CHECK(ds.block_pedigree == std::vector<int>{0, 1, 2});
  CHECK(ds.person_ids.back() == "solo");
}

TEST_CASE("assemble_from_pedigrees restricts to analyzed members") {
  auto peds = three_pedigrees();
  // m1 not genotyped: P1's kernel must be the (d1,k1) submatrix.
  auto g = oracle::make_genotypes({{0, 1, 2, 1, 0, 1}}, {"d1", "k1", "d2", "m2", "k2", "solo"});
  auto t = make_traits({"d1", "k1", "d2", "m2", "k2", "solo"},
                       {{1.0}, {2.0}, {2.5}, {3.0}, {3.5}, {4.0}});
  const auto ds = build_dataset(peds, g, t);
  const auto k = assemble_from_pedigrees(ds, KernelKind::theoretical_kinship,
                                         [](const Pedigree& p) { return kinship_matrix(p); });
  REQUIRE(k.n() == ds.n());
  CHECK(k.values(0, 0) == 0.5);
  CHECK(k.values(1, 0) == 0.25);  // d1-k1 parent-offspring survives the restriction
  CHECK(k.values(2, 0) == 0.0);   // cross-pedigree zero
  CHECK(k.blocks == ds.ped_blocks);
}

TEST_CASE("analyzed_codes maps genotype rows into analysis order") {
  auto peds = three_pedigrees();
  auto g = oracle::make_genotypes({{2, 1, 0, 1, 3, 0}}, {"k2", "d1", "k1", "m2", "d2", "solo"});
  auto t = make_traits({"d1", "k1", "d2", "m2", "k2", "solo"},
                       {{1.0}, {2.0}, {2.5}, {3.0}, {3.5}, {4.0}});
  const auto ds = build_dataset(peds, g, t);
  std::vector<std::uint8_t> all, out;
  analyzed_codes(ds, g, 0, all, out);
  REQUIRE(out.size() == ds.person_ids.size());
  for (size_t i = 0; i < out.size(); ++i) {
    const auto& id = ds.person_ids[i];
    const int want = id == "d1"   ? 1
                     : id == "k1" ? 0
                     : id == "d2" ? 3
                     : id == "m2" ? 1
                     : id == "k2" ? 2
                                  : 0;
    const int have = out[i] == GenotypeMatrix::kMissing ? 3 : out[i];
    CHECK(have == want);
  }
}

TEST_CASE("merge_block_partitions") {
  KernelMatrix a, b, dense;
  a.blocks = {{0, 2}, {2, 5}, {5, 6}};
  b.blocks = {{0, 2}, {2, 3}, {3, 5}, {5, 6}};
  dense.blocks = {};

  SECTION("intersection keeps only shared boundaries") {
    const auto m = merge_block_partitions({&a, &b}, 6);
    REQUIRE(m.size() == 3);
    CHECK(m[0] == std::pair<int, int>{0, 2});
    CHECK(m[1] == std::pair<int, int>{2, 5});
    CHECK(m[2] == std::pair<int, int>{5, 6});
  }
  SECTION("any dense kernel collapses the partition") {
    const auto m = merge_block_partitions({&a, &dense}, 6);
    REQUIRE(m.size() == 1);
    CHECK(m[0] == std::pair<int, int>{0, 6});
  }
  SECTION("identity's singleton blocks never coarsen others") {
    const auto id = identity_kernel(6);
    const auto m = merge_block_partitions({&a, &id}, 6);
    REQUIRE(m.size() == 3);
    CHECK(m[1] == std::pair<int, int>{2, 5});
  }
}
