#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "pedscan/report.hpp"
#include "support/oracles.hpp"

using namespace pedscan;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string tmp_path(const std::string& stem) {
  return "/tmp/pedscan_report_" + stem + "_" + std::to_string(::getpid());
}

ScanSummary two_row_summary() {
  ScanSummary scan;
  scan.rows.resize(2);
  scan.rows[0].maf_all = 0.4375;
  scan.rows[0].maf_founders = 0.25;
  scan.rows[0].hwe_p = 0.5;
  scan.rows[0].score.stat = 5.5;
  scan.rows[0].score.p = 0.019;
  scan.rows[0].score.tested = true;
  scan.rows[1].maf_all = 0.0625;
  scan.rows[1].maf_founders = 0.1;
  scan.rows[1].hwe_p = 1.0;
  scan.rows[1].score.reason = "low_maf";
  scan.top = {0};
  scan.n_tested = 1;
  return scan;
}

}  // namespace

TEST_CASE("negative log10 has a plotting floor") {
  CHECK(neglog10(0.01) == Catch::Approx(2.0));
  CHECK(neglog10(1.0) == 0.0);
  CHECK(neglog10(0.0) == Catch::Approx(300.0));
  CHECK(neglog10(1e-320) == Catch::Approx(300.0));
}

TEST_CASE("scan results table prints one classified row per SNP") {
  const auto g = oracle::make_genotypes({{0, 1}, {2, 0}});
  const auto scan = two_row_summary();
  const std::string path = tmp_path("scan.tsv");
  write_scan_results(path, g, scan);
  CHECK(slurp(path) ==
        "snp\tchr\tbp\tmaf_all\tmaf_founders\thwe_p\tstat\tp\ttested\treason\n"
        "s1\t1\t1000\t0.4375\t0.25\t0.5\t5.5\t0.019\t1\t.\n"
        "s2\t1\t2000\t0.0625\t0.1\t1\tnan\tnan\t0\tlow_maf\n");
  std::remove(path.c_str());
}

TEST_CASE("top hits table marks unrefined entries with dots") {
  const auto g = oracle::make_genotypes({{0, 1}, {2, 0}});
  ScanSummary scan = two_row_summary();
  scan.rows[1].score.tested = true;
  scan.rows[1].score.stat = 7.25;
  scan.rows[1].score.p = 0.0071;
  scan.rows[1].score.reason.clear();
  scan.rows[1].refined = true;
  scan.rows[1].lrt.stat = 8.5;
  scan.rows[1].lrt.p = 0.0035;
  scan.rows[1].lrt.converged = true;
  scan.top = {1, 0};

  const std::string path = tmp_path("top.txt");
  write_top_hits(path, g, scan);
  CHECK(slurp(path) ==
        "rank\tsnp\tchr\tbp\tmaf_all\tscore_stat\tscore_p\tlrt_stat\tlrt_p\tlrt_converged\tp\n"
        "1\ts2\t1\t2000\t0.0625\t7.25\t0.0071\t8.5\t0.0035\t1\t0.0035\n"
        "2\ts1\t1\t1000\t0.4375\t5.5\t0.019\t.\t.\t.\t0.019\n");
  std::remove(path.c_str());
}

TEST_CASE("outlier table carries label, size and tail probability") {
  std::vector<BlockOutlier> rows(2);
  rows[0] = {"pedB", 4, 25.0, chisq_upper_p(25.0, 4)};
  rows[1] = {"pedA", 2, 1.0, chisq_upper_p(1.0, 2)};
  const std::string path = tmp_path("outliers.tsv");
  write_outliers(path, rows);
  const std::string text = slurp(path);
  CHECK(text.rfind("block\tcells\tquad\tp\n", 0) == 0);
  CHECK(text.find("pedB\t4\t25\t") != std::string::npos);
  CHECK(text.find("pedA\t2\t1\t" + format_g(chisq_upper_p(1.0, 2))) != std::string::npos);
  std::remove(path.c_str());
}

TEST_CASE("null model report lists components and both effect scales") {
  FitResult fit;
  fit.converged = true;
  fit.iterations = 17;
  fit.loglik = -12.25;
  fit.n_cells = 9;
  fit.component_names = {"additive", "environment"};
  fit.sigma = {Eigen::MatrixXd::Constant(1, 1, 0.75), Eigen::MatrixXd::Constant(1, 1, 0.5)};
  fit.gamma = Eigen::VectorXd::Constant(1, 1.5);
  fit.gamma_cov = Eigen::MatrixXd::Constant(1, 1, 0.04);
  fit.beta = Eigen::VectorXd::Constant(1, 1.5);
  fit.beta_cov = Eigen::MatrixXd::Constant(1, 1, 0.04);
  fit.beta_names = {"intercept"};

  const std::string path = tmp_path("null.txt");
  write_null_model(path, fit, {"y"}, "grm:pedigree", Rng::algorithm);
  const std::string text = slurp(path);
  CHECK(text.rfind("loglikelihood\t-12.25\n", 0) == 0);
  CHECK(text.find("converged\t1\n") != std::string::npos);
  CHECK(text.find("iterations\t17\n") != std::string::npos);
  CHECK(text.find("observed_cells\t9\n") != std::string::npos);
  CHECK(text.find("kinship_mode\tgrm:pedigree\n") != std::string::npos);
  CHECK(text.find("rng\tsplitmix64+xoshiro256++\n") != std::string::npos);
  CHECK(text.find("traits\ty\n") != std::string::npos);
  CHECK(text.find("component\tadditive\n0.75\n") != std::string::npos);
  CHECK(text.find("component\tenvironment\n0.5\n") != std::string::npos);
  CHECK(text.find("fixed_effects\nname\testimate\tse\ng1\t1.5\t0.2\n") != std::string::npos);
  CHECK(text.find("expanded_effects\nname\testimate\tse\nintercept\t1.5\t0.2\n") !=
        std::string::npos);
  std::remove(path.c_str());
}

TEST_CASE("qc report tallies every filter stage") {
  CallRateFilterResult cr;
  cr.kept_snps = {0, 1, 2};
  cr.kept_individuals = {0, 2};
  cr.dropped_snps = {{"s9", 0.6}};
  cr.dropped_individuals = {{"g2", 0.5}};
  Dataset ds;
  ds.person_ids = {"a", "b"};
  ds.drops = {{"c", "no_phenotype"}};

  const std::string path = tmp_path("qc.txt");
  write_qc_report(path, 4, 3, cr, ds, 0.75);
  const std::string text = slurp(path);
  CHECK(text.rfind("snps_in\t4\n", 0) == 0);
  CHECK(text.find("individuals_in\t3\n") != std::string::npos);
  CHECK(text.find("min_call_rate\t0.75\n") != std::string::npos);
  CHECK(text.find("snps_kept\t3\n") != std::string::npos);
  CHECK(text.find("individuals_kept\t2\n") != std::string::npos);
  CHECK(text.find("individuals_analyzed\t2\n") != std::string::npos);
  CHECK(text.find("dropped_snps\t1\ns9\tcall_rate\t0.6\n") != std::string::npos);
  CHECK(text.find("dropped_individuals\t1\ng2\tcall_rate\t0.5\n") != std::string::npos);
  CHECK(text.find("join_drops\t1\nc\tno_phenotype\n") != std::string::npos);
  std::remove(path.c_str());
}

TEST_CASE("timing log ends with the stage total") {
  const std::string path = tmp_path("timing.log");
  write_timing_log(path, {{"ingest", 1.5}, {"scan", 0.25}});
  CHECK(slurp(path) == "ingest\t1.5\nscan\t0.25\ntotal\t1.75\n");
  std::remove(path.c_str());
}

TEST_CASE("manhattan plot lays chromosomes end to end") {
  auto g = oracle::make_genotypes({{0, 1, 2}, {1, 1, 0}, {2, 0, 1}, {0, 2, 2}});
  g.snps()[2].chromosome = "2";
  g.snps()[3].chromosome = "2";
  ScanSummary scan;
  scan.rows.resize(4);
  const double ps[4] = {0.04, 0.5, 1e-6, 0.2};
  for (int s = 0; s < 4; ++s) {
    scan.rows[static_cast<size_t>(s)].score.tested = s != 1;  // one untested row
    scan.rows[static_cast<size_t>(s)].score.p = ps[s];
  }

  const std::string path = tmp_path("manhattan.svg");
  manhattan_svg(path, g, scan, 1.62e-8);
  const std::string text = slurp(path);
  CHECK(text.rfind("<svg xmlns=\"http://www.w3.org/2000/svg\"", 0) == 0);
  CHECK(text.find("stroke-dasharray=\"6 4\"") != std::string::npos);  // threshold line
  CHECK(text.find(">1</text>") != std::string::npos);
  CHECK(text.find(">2</text>") != std::string::npos);
  size_t circles = 0;
  for (size_t at = text.find("<circle"); at != std::string::npos;
       at = text.find("<circle", at + 1))
    ++circles;
  CHECK(circles == 3);  // untested SNPs are not plotted
  CHECK(text.find("</svg>") != std::string::npos);

  const std::string again = tmp_path("manhattan2.svg");
  manhattan_svg(again, g, scan, 1.62e-8);
  CHECK(slurp(again) == text);  // byte-identical rerun
  std::remove(path.c_str());
  std::remove(again.c_str());
}

TEST_CASE("qq plot pins the median point of a uniform draw") {
  const std::string path = tmp_path("qq.svg");
  qq_plot_svg(path, {0.5}, 1.0);
  const std::string text = slurp(path);

  // single point: expected and observed are both -log10(0.5) = 0.30103
  const double v = neglog10(0.5);
  CHECK(v == Catch::Approx(0.30103).margin(1e-5));
  const double axis_max = 1.0 * 1.05;
  const double x = 56 + v / axis_max * (420 - 56 - 20);
  const double y = 420 - 48 - v / axis_max * (420 - 30 - 48);
  const std::string want = "<circle cx=\"" + format_g(x, 6) + "\" cy=\"" + format_g(y, 6) +
                           "\" r=\"2.2\" fill=\"#44709d\"/>";
  CHECK(text.find(want) != std::string::npos);
  CHECK(text.find("lambda = 1") != std::string::npos);

  const std::string again = tmp_path("qq2.svg");
  qq_plot_svg(again, {0.5}, 1.0);
  CHECK(slurp(again) == text);
  std::remove(path.c_str());
  std::remove(again.c_str());
}
