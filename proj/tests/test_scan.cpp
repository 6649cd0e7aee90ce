#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "pedscan/scan.hpp"
#include "support/oracles.hpp"

using namespace pedscan;
using oracle::add_person;

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::vector<Pedigree> trio_pair_pedigrees() {
  Pedigree p1, p2;
  p1.id = "A";
  add_person(p1, "d", -1, -1, Sex::male);
  add_person(p1, "m", -1, -1, Sex::female);
  add_person(p1, "k", 0, 1, Sex::female);
  p2.id = "B";
  add_person(p2, "u", -1, -1, Sex::male);
  add_person(p2, "v", -1, -1, Sex::female);
  return {p1, p2};
}

CovarianceModel additive_identity(const std::vector<Pedigree>& peds, int n) {
  std::vector<KernelMatrix> kin;
  for (const auto& p : peds) kin.push_back(theoretical_kinship(p));
  KernelMatrix additive = assemble_global_kernel(kin);
  additive.values *= 2.0;
  return make_covariance_model({{"additive", std::move(additive)},
                                {"environment", identity_kernel(n)}});
}

MeanModel intercept_model(int n, int n_traits) {
  MeanModel m;
  m.X = Eigen::MatrixXd::Ones(n, 1);
  m.effect_names = {"intercept"};
  m.shared = {0};
  m.n_traits = n_traits;
  return m;
}

}  // namespace

TEST_CASE("x-linked dosage blanks male heterozygotes") {
  std::vector<std::uint8_t> codes = {0, 1, 2, 1, GenotypeMatrix::kMissing};
  x_linked_dosage(codes, {0, 1, 0, 1, 1});
  CHECK(codes[0] == 0);
  CHECK(codes[1] == GenotypeMatrix::kMissing);
  CHECK(codes[2] == 2);
  CHECK(codes[3] == GenotypeMatrix::kMissing);
  CHECK(codes[4] == GenotypeMatrix::kMissing);
}

TEST_CASE("score test matches the dense oracle") {
  const auto peds = trio_pair_pedigrees();
  const auto cov = additive_identity(peds, 5);
  Eigen::MatrixXd y(5, 2);
  y << 0.31, -0.44, -1.20, 0.95, 0.82, kNan, 2.11, 1.37, kNan, -0.58;
  const auto mean = intercept_model(5, 2);
  const VcProblem problem(mean, cov, y);
  REQUIRE_FALSE(problem.rotated());  // missing cells force the block path
  const auto fit = fit_model(problem, cov, y);
  const ScanEngine engine(problem, fit);

  SECTION("complete dosages") {
    const std::vector<std::uint8_t> codes = {0, 1, 2, 1, 0};
    const auto prep = engine.prepare(codes);
    REQUIRE_FALSE(prep.monomorphic);
    const auto st = engine.test(prep);
    REQUIRE(st.tested);
    CHECK(st.p == Catch::Approx(chisq_upper_p(st.stat, 2)));

    const auto dense = oracle::build_dense(mean, cov.kernels, fit.sigma, y);
    const auto ofit = oracle::dense_fit(dense);
    const double want = oracle::dense_score_stat(dense, ofit, prep.g_cols);
    CHECK(st.stat == Catch::Approx(want).epsilon(1e-8));
  }
  SECTION("missing dosages fill with per-trait means") {
    const std::vector<std::uint8_t> codes = {0, 1, GenotypeMatrix::kMissing, 1, 0};
    const auto prep = engine.prepare(codes);
    // trait 1 observes persons 0,1,2,3; trait 2 observes 0,1,3,4
    CHECK(prep.g_cols(2, 0) == Catch::Approx((0.0 + 1 + 1) / 3.0));
    CHECK(prep.g_cols(2, 1) == Catch::Approx((0.0 + 1 + 1 + 0) / 4.0));
    CHECK(prep.g_cols(0, 0) == 0.0);
    CHECK(prep.g_cols(3, 1) == 1.0);

    const auto st = engine.test(prep);
    REQUIRE(st.tested);
    const auto dense = oracle::build_dense(mean, cov.kernels, fit.sigma, y);
    const auto ofit = oracle::dense_fit(dense);
    const double want = oracle::dense_score_stat(dense, ofit, prep.g_cols);
    CHECK(st.stat == Catch::Approx(want).epsilon(1e-8));
  }
  SECTION("constant and empty dosages are monomorphic") {
    CHECK(engine.test({2, 2, 2, 2, 2}).reason == "monomorphic");
    const std::vector<std::uint8_t> gone(5, GenotypeMatrix::kMissing);
    CHECK(engine.test(gone).reason == "monomorphic");
    // constant after the only varying person drops to missing
    const std::vector<std::uint8_t> nearly = {1, 1, GenotypeMatrix::kMissing, 1, 1};
    CHECK(engine.test(nearly).reason == "monomorphic");
  }
}

TEST_CASE("dosage collinear with the design is reported, not tested") {
  const auto peds = trio_pair_pedigrees();
  const auto cov = additive_identity(peds, 5);
  Eigen::MatrixXd y(5, 1);
  y << 0.3, -1.2, 0.8, 2.1, -0.5;
  std::vector<std::uint8_t> codes = {0, 1, 2, 1, 0};

  MeanModel m;
  m.X.resize(5, 2);
  m.X.col(0).setOnes();
  for (int i = 0; i < 5; ++i) m.X(i, 1) = codes[static_cast<size_t>(i)];
  m.effect_names = {"intercept", "dose"};
  m.shared = {0, 0};
  m.n_traits = 1;

  const VcProblem problem(m, cov, y, /*allow_rotation=*/false);
  const auto fit = fit_model(problem, cov, y);
  const ScanEngine engine(problem, fit);
  const auto st = engine.test(codes);
  CHECK_FALSE(st.tested);
  CHECK(st.reason == "collinear");
}

TEST_CASE("eigenbasis engine agrees with the block engine") {
  Pedigree ped;
  ped.id = "R";
  add_person(ped, "d", -1, -1, Sex::male);
  add_person(ped, "m", -1, -1, Sex::female);
  add_person(ped, "k1", 0, 1, Sex::female);
  add_person(ped, "k2", 0, 1, Sex::male);
  add_person(ped, "k3", 0, 1, Sex::male);
  const auto cov = additive_identity({ped}, 5);
  Eigen::MatrixXd y(5, 2);
  y << 0.4, -0.2, 1.1, 0.7, -0.3, 0.9, 0.8, -1.4, 0.05, 0.33;
  const auto mean = intercept_model(5, 2);

  const VcProblem fast(mean, cov, y);
  const VcProblem plain(mean, cov, y, false);
  REQUIRE(fast.rotated());
  const auto fit_fast = fit_model(fast, cov, y);
  const auto fit_plain = fit_model(plain, cov, y);
  const ScanEngine ef(fast, fit_fast);
  const ScanEngine ep(plain, fit_plain);

  for (const auto& codes : std::vector<std::vector<std::uint8_t>>{
           {0, 1, 2, 1, 0}, {2, 1, 0, GenotypeMatrix::kMissing, 1}}) {
    const auto a = ef.test(codes);
    const auto b = ep.test(codes);
    REQUIRE(a.tested);
    REQUIRE(b.tested);
    CHECK(a.stat == Catch::Approx(b.stat).epsilon(1e-6));
    CHECK(a.p == Catch::Approx(b.p).epsilon(1e-6));
  }
}

TEST_CASE("likelihood-ratio refinement is anchored to the null") {
  const auto peds = trio_pair_pedigrees();
  const auto cov = additive_identity(peds, 5);
  Eigen::MatrixXd y(5, 1);
  y << 0.3, -1.2, 0.8, 2.1, -0.5;
  const auto mean = intercept_model(5, 1);
  const VcProblem problem(mean, cov, y, false);
  const auto fit = fit_model(problem, cov, y);

  Eigen::MatrixXd g(5, 1);
  g << 0, 1, 2, 1, 0;
  const auto lrt = lrt_refine(problem, cov, y, fit, g, "s1");
  CHECK(lrt.converged);
  CHECK(lrt.loglik >= fit.loglik - 1e-9);
  CHECK(lrt.stat == Catch::Approx(std::max(0.0, 2.0 * (lrt.loglik - fit.loglik))));
  CHECK(lrt.p == Catch::Approx(chisq_upper_p(lrt.stat, 1)));
}

TEST_CASE("final p-value falls back to the screen unless the refit converged") {
  SnpScanRow row;
  row.score.p = 0.01;
  row.score.tested = true;
  row.lrt.p = 0.5;
  CHECK(row.final_p() == 0.01);
  row.refined = true;
  row.lrt.converged = false;
  CHECK(row.final_p() == 0.01);
  row.lrt.converged = true;
  CHECK(row.final_p() == 0.5);
}

TEST_CASE("genome scan classifies, counts and ranks") {
  Pedigree p1, p2, p3;
  p1.id = "P1";
  add_person(p1, "f1", -1, -1, Sex::male);
  add_person(p1, "m1", -1, -1, Sex::female);
  add_person(p1, "c1", 0, 1, Sex::female);
  p2.id = "P2";
  add_person(p2, "f2", -1, -1, Sex::male);
  add_person(p2, "m2", -1, -1, Sex::female);
  add_person(p2, "c2", 0, 1, Sex::male);
  p3.id = "P3";
  add_person(p3, "u1", -1, -1, Sex::male);
  add_person(p3, "u2", -1, -1, Sex::female);
  const std::vector<Pedigree> peds = {p1, p2, p3};
  const std::vector<std::string> ids = {"f1", "m1", "c1", "f2", "m2", "c2", "u1", "u2"};

  auto g = oracle::make_genotypes({{0, 1, 1, 2, 0, 1, 2, 0},
                                   {1, 1, 1, 1, 1, 1, 1, 1},
                                   {0, 0, 0, 1, 0, 0, 0, 0},
                                   {1, 0, 2, 0, 1, 2, 1, 0},
                                   {2, 1, 0, 1, 2, 0, 1, 1},
                                   {3, 3, 3, 3, 3, 3, 3, 3}},
                                  ids);
  g.snps()[3].chromosome = "X";
  g.snps()[3].is_x_linked = true;

  TraitTable t;
  t.person_ids = ids;
  t.trait_names = {"y"};
  t.values.resize(8, 1);
  t.values << 0.2, -0.8, 1.4, 0.1, -1.1, 0.7, 2.0, -0.4;
  t.covariates.resize(8, 0);
  const auto ds = build_dataset(peds, g, t);

  const auto cov = additive_identity(peds, 8);
  const auto mean = intercept_model(8, 1);
  const VcProblem problem(mean, cov, ds.traits);
  const auto fit = fit_null(mean, cov, ds.traits);

  ScanOptions opt;
  opt.maf_min = 0.1;
  const auto scan = genome_scan(ds, g, problem, cov, ds.traits, fit, opt);
  REQUIRE(scan.rows.size() == 6);

  CHECK(scan.rows[0].score.tested);
  CHECK(scan.rows[0].maf_all == Catch::Approx(7.0 / 16.0));
  CHECK(scan.rows[0].maf_founders == Catch::Approx(5.0 / 12.0));
  CHECK(scan.rows[0].hwe_p == Catch::Approx(hwe_exact_p(1, 2, 3)));

  CHECK_FALSE(scan.rows[1].score.tested);
  CHECK(scan.rows[1].score.reason == "monomorphic");  // every call a het
  CHECK(scan.rows[1].maf_all == Catch::Approx(0.5));

  CHECK(scan.rows[2].score.reason == "low_maf");
  CHECK(scan.rows[2].maf_all == Catch::Approx(1.0 / 16.0));
  CHECK(scan.rows[2].hwe_p == Catch::Approx(hwe_exact_p(1, 0, 5)));

  // X SNP: male hets dropped, single male copies, founder females carry HW.
  // Founder alleles: f2 0/1, m1 0/2, m2 1/2, u2 0/2 (f1 and u1 are male hets).
  CHECK(scan.rows[3].score.tested);
  CHECK(scan.rows[3].maf_all == Catch::Approx(0.4));
  CHECK(scan.rows[3].maf_founders == Catch::Approx(1.0 / 7.0));
  CHECK(scan.rows[3].hwe_p == Catch::Approx(hwe_exact_p(1, 0, 2)));

  CHECK(scan.rows[4].score.tested);
  CHECK(std::isnan(scan.rows[5].maf_all));
  CHECK(scan.rows[5].score.reason == "monomorphic");

  CHECK(scan.n_tested == 3);
  CHECK(scan.bonferroni_threshold == Catch::Approx(0.05 / 3.0));
  const std::vector<double> tested_p = {scan.rows[0].score.p, scan.rows[3].score.p,
                                        scan.rows[4].score.p};
  CHECK(scan.lambda == Catch::Approx(genomic_inflation(tested_p)));
  CHECK(scan.fdr_threshold == Catch::Approx(bh_threshold(tested_p, 0.05)));

  REQUIRE(scan.top.size() == 3);
  for (size_t i = 0; i < scan.top.size(); ++i) {
    const auto& row = scan.rows[scan.top[i]];
    CHECK(row.refined);
    CHECK(row.lrt.converged);
    if (i > 0) CHECK(scan.rows[scan.top[i - 1]].final_p() <= row.final_p());
  }

  SECTION("thread partitioning changes nothing") {
    ScanOptions opt3 = opt;
    opt3.n_threads = 3;
    const auto scan3 = genome_scan(ds, g, problem, cov, ds.traits, fit, opt3);
    REQUIRE(scan3.rows.size() == scan.rows.size());
    for (size_t s = 0; s < scan.rows.size(); ++s) {
      CHECK(scan3.rows[s].score.tested == scan.rows[s].score.tested);
      CHECK(scan3.rows[s].score.reason == scan.rows[s].score.reason);
      if (scan.rows[s].score.tested) {
        CHECK(scan3.rows[s].score.stat == scan.rows[s].score.stat);
        CHECK(scan3.rows[s].score.p == scan.rows[s].score.p);
      }
    }
    CHECK(scan3.top == scan.top);
  }

  SECTION("no refinement when disabled") {
    ScanOptions off = opt;
    off.refine_top = false;
    const auto plain = genome_scan(ds, g, problem, cov, ds.traits, fit, off);
    for (const auto& row : plain.rows) CHECK_FALSE(row.refined);
    REQUIRE(plain.top.size() == 3);
    // ranked by the screening p-value
    CHECK(plain.rows[plain.top[0]].score.p <= plain.rows[plain.top[1]].score.p);
  }

  SECTION("top list caps at top_k") {
    ScanOptions one = opt;
    one.top_k = 1;
    const auto capped = genome_scan(ds, g, problem, cov, ds.traits, fit, one);
    CHECK(capped.top.size() == 1);
    CHECK(capped.top[0] == scan.top[0]);
  }
}
