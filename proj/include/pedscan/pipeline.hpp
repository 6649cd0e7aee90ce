#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <type_traits>
#include <utility>
#include <vector>

#include "pedscan/common.hpp"
#include "pedscan/control.hpp"
#include "pedscan/dataset.hpp"
#include "pedscan/genotype.hpp"
#include "pedscan/kinship.hpp"
#include "pedscan/pedigree.hpp"
#include "pedscan/qc.hpp"
#include "pedscan/report.hpp"
#include "pedscan/rng.hpp"
#include "pedscan/scan.hpp"
#include "pedscan/simulate.hpp"
#include "pedscan/traits_table.hpp"
#include "pedscan/vcmodel.hpp"

namespace pedscan {

// One registry for every subcommand so any control file round-trips through
// the echo unchanged in meaning.
inline Control standard_controls() {
  Control c;
  c.define("pedigree_file", "");
  c.define("genotype_prefix", "");
  c.define("trait_file", "");
  c.define("traits", "");       // comma list, or 'all' for every non-covariate column
  c.define("covariates", "");
  c.define("interactions", "");  // comma list of a*b terms
  c.define("shared_effects", "");
  c.define("kinship", "theoretical");    // theoretical | grm | mom
  c.define("kinship_scope", "pedigree");  // pedigree | global (empirical modes)
  c.define("dominance", "off");
  c.define("household", "off");
  c.define("x_kinship", "off");
  c.define("min_call_rate", "0.98");
  c.define("maf_min", "0.03");
  c.define("top_k", "10");
  c.define("refine", "on");
  c.define("sig_level", "0.05");
  c.define("fdr_q", "0.05");
  c.define("lambda_max", "1.1");
  c.define("hwe_min_p", "1e-8");
  c.define("threads", "1");
  c.define("seed", "1");
  c.define("output_dir", ".");
  c.define("power_replicates", "200");
  c.define("power_maf", "0.3");
  c.define("power_pct_var", "0.01");
  c.define("power_tests", "1000000");
  c.define("sim_alpha", "");  // overrides the Bonferroni default when set
  c.define("power_sigma_a", "0.5");
  c.define("power_sigma_d", "0");
  c.define("power_sigma_h", "0");
  c.define("power_sigma_e", "0.5");
  return c;
}

// Wall-clock accounting per stage; errors are re-thrown with the stage name
// prefixed so the message says where the run died.
class StageTimer {
 public:
  template <class Fn>
  auto run(const std::string& name, Fn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    if constexpr (std::is_void_v<decltype(fn())>) {
      try {
        fn();
      } catch (const config_error& e) {
        throw config_error(name + ": " + e.what());
      } catch (const data_error& e) {
        throw data_error(name + ": " + e.what());
      } catch (const numeric_error& e) {
        throw numeric_error(name + ": " + e.what());
      }
      record(name, t0);
    } else {
      try {
        auto result = fn();
        record(name, t0);
        return result;
      } catch (const config_error& e) {
        throw config_error(name + ": " + e.what());
      } catch (const data_error& e) {
        throw data_error(name + ": " + e.what());
      } catch (const numeric_error& e) {
        throw numeric_error(name + ": " + e.what());
      }
    }
  }

  const std::vector<std::pair<std::string, double>>& stages() const { return stages_; }

 private:
  void record(const std::string& name, std::chrono::steady_clock::time_point t0) {
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    stages_.emplace_back(name, dt.count());
  }
  std::vector<std::pair<std::string, double>> stages_;
};

namespace pipedetail {

inline std::string out_path(const Control& c, const std::string& name) {
  return (std::filesystem::path(c.str("output_dir")) / name).string();
}

inline void require_keys(const Control& c, const std::vector<std::string>& keys) {
  for (const auto& k : keys)
    if (!c.has(k)) throw config_error("control key '" + k + "' is required");
}

inline std::vector<std::pair<std::string, std::string>> parse_interactions(const Control& c) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& term : c.list("interactions")) {
    const auto parts = split_trimmed(term, '*');
    if (parts.size() != 2 || parts[0].empty() || parts[1].empty())
      throw config_error("interaction term must look like a*b: '" + term + "'");
    out.emplace_back(parts[0], parts[1]);
  }
  return out;
}

// 'all' expands to every trait-file column that is not the id or a covariate.
inline std::vector<std::string> resolve_trait_names(const std::string& path,
                                                    const std::vector<std::string>& requested,
                                                    const std::vector<std::string>& covariates) {
  if (requested.empty()) throw config_error("no traits requested");
  if (!(requested.size() == 1 && to_lower(requested[0]) == "all")) return requested;
  std::ifstream in(path);
  if (!in) throw data_error("cannot open trait file: " + path);
  std::string header;
  if (!std::getline(in, header)) throw data_error("trait file is empty: " + path);
  std::vector<std::string> out;
  const auto cols = split_trimmed(header, ',');
  for (size_t i = 1; i < cols.size(); ++i) {
    bool is_cov = false;
    for (const auto& cv : covariates)
      if (cv == cols[i]) is_cov = true;
    if (!is_cov) out.push_back(cols[i]);
  }
  if (out.empty()) throw data_error("trait file has no trait columns: " + path);
  return out;
}

inline Eigen::MatrixXd reindex_kernel(const Eigen::MatrixXd& full,
                                      const std::vector<size_t>& rows) {
  const int n = static_cast<int>(rows.size());
  Eigen::MatrixXd out(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      out(i, j) = full(static_cast<Eigen::Index>(rows[static_cast<size_t>(i)]),
                       static_cast<Eigen::Index>(rows[static_cast<size_t>(j)]));
  return out;
}

inline CovarianceModel build_covariance(const Control& c, const Dataset& ds,
                                        const GenotypeMatrix& filtered, int threads,
                                        std::string* mode_label) {
  const std::string mode = to_lower(c.str("kinship"));
  const std::string scope = to_lower(c.str("kinship_scope"));
  std::vector<std::pair<std::string, KernelMatrix>> comps;

  KernelMatrix additive;
  if (mode == "theoretical") {
    additive = assemble_from_pedigrees(ds, KernelKind::theoretical_kinship,
                                       [](const Pedigree& p) { return kinship_matrix(p); });
    if (mode_label) *mode_label = "theoretical";
  } else if (mode == "grm" || mode == "mom") {
    const KernelMatrix full =
        mode == "grm" ? grm_kinship(filtered, nullptr, threads) : mom_kinship(filtered, threads);
    KernelMatrix re;
    re.kind = full.kind;
    re.values = reindex_kernel(full.values, ds.genotype_row);
    if (scope == "pedigree") {
      re = restrict_to_blocks(re, ds.ped_blocks);
    } else if (scope != "global") {
      throw config_error("kinship_scope must be pedigree or global");
    }
    additive = std::move(re);
    if (mode_label) *mode_label = mode + ":" + scope;
  } else {
    throw config_error("kinship must be theoretical, grm, or mom");
  }
  additive.values *= 2.0;  // relationship scale: outbred self-relatedness 1
  comps.emplace_back("additive", std::move(additive));

  if (c.flag("dominance"))
    comps.emplace_back("dominance",
                       assemble_from_pedigrees(ds, KernelKind::delta7,
                                               [](const Pedigree& p) { return delta7_matrix(p); }));
  if (c.flag("household")) {
    KernelMatrix h = household_matrix(ds.household);
    h.blocks = ds.household_blocks;
    comps.emplace_back("household", std::move(h));
  }
  comps.emplace_back("environment", identity_kernel(ds.n()));
  return make_covariance_model(std::move(comps));
}

inline std::vector<std::string> block_labels(const VcProblem& problem, const Dataset& ds) {
  std::vector<std::string> labels;
  for (const auto& b : problem.blocks()) {
    std::vector<std::string> ids;
    int last = -1;
    for (int i = b.person_begin; i < b.person_begin + b.n_persons; ++i) {
      const int p = ds.person_pedigree[static_cast<size_t>(i)];
      if (p != last) {
        ids.push_back(ds.pedigrees[static_cast<size_t>(p)].id);
        last = p;
      }
    }
    labels.push_back(join(ids, "+"));
  }
  return labels;
}

inline void write_outlier_artifact(const std::string& path, const VcProblem& problem,
                                   const Dataset& ds, const FitResult& fit) {
  if (problem.rotated()) {
    // The eigenbasis mixes individuals; only the whole-sample row is meaningful.
    BlockOutlier all;
    all.label = "all";
    for (size_t b = 0; b < fit.block_quad.size(); ++b) {
      all.cells += fit.block_cells[b];
      all.quad += fit.block_quad[b];
    }
    all.p_value = chisq_upper_p(all.quad, all.cells);
    write_outliers(path, {all});
  } else {
    write_outliers(path, block_outlier_report(fit, block_labels(problem, ds)));
  }
}

struct LoadedInputs {
  std::vector<Pedigree> pedigrees;
  GenotypeMatrix genotypes;
  TraitTable traits;
};

inline LoadedInputs load_inputs(const Control& c) {
  LoadedInputs in;
  in.pedigrees = read_pedigree_csv(c.str("pedigree_file"));
  const std::string prefix = c.str("genotype_prefix");
  in.genotypes = GenotypeMatrix::read_bed(prefix + ".bed", prefix + ".bim", prefix + ".fam");
  const auto covariates = c.list("covariates");
  const auto traits = resolve_trait_names(c.str("trait_file"), c.list("traits"), covariates);
  in.traits = read_traits_csv(c.str("trait_file"), traits, covariates);
  return in;
}

}  // namespace pipedetail

struct RunInfo {
  size_t n_individuals = 0;
  size_t n_snps = 0;
  size_t n_tested = 0;
  double lambda = std::numeric_limits<double>::quiet_NaN();
  bool null_converged = true;
  size_t traits_done = 0, traits_failed = 0;
};

inline RunInfo run_scan(Control& control) {
  StageTimer timer;
  RunInfo info;

  timer.run("config", [&] {
    pipedetail::require_keys(control,
                             {"pedigree_file", "genotype_prefix", "trait_file", "traits"});
    std::filesystem::create_directories(control.str("output_dir"));
  });
  const int threads = static_cast<int>(control.integer("threads"));
  if (threads < 1) throw config_error("config: threads must be at least 1");

  auto inputs = timer.run("ingest", [&] { return pipedetail::load_inputs(control); });
  const size_t snps_in = inputs.genotypes.n_snps();
  const size_t individuals_in = inputs.genotypes.n_individuals();

  auto qc = timer.run("qc", [&] {
    return call_rate_filter(inputs.genotypes, control.num("min_call_rate"));
  });

  const Dataset ds = timer.run("join", [&] {
    return build_dataset(std::move(inputs.pedigrees), qc.filtered, inputs.traits);
  });
  info.n_individuals = ds.person_ids.size();
  info.n_snps = qc.filtered.n_snps();

  std::string kinship_label;
  const CovarianceModel cov = timer.run("kinship", [&] {
    return pipedetail::build_covariance(control, ds, qc.filtered, threads, &kinship_label);
  });

  const MeanModel mean = build_mean_model(ds, control.list("covariates"),
                                          pipedetail::parse_interactions(control),
                                          control.list("shared_effects"));
  VcProblem problem;
  FitResult fit;
  timer.run("fit_null", [&] {
    problem = VcProblem(mean, cov, ds.traits);
    fit = fit_model(problem, cov, ds.traits);
    write_null_model(pipedetail::out_path(control, "null_model.txt"), fit, ds.trait_names,
                     kinship_label, Rng::algorithm);
    pipedetail::write_outlier_artifact(pipedetail::out_path(control, "outliers.tsv"), problem,
                                       ds, fit);
  });
  info.null_converged = fit.converged;

  const ScanSummary scan = timer.run("scan", [&] {
    ScanOptions opt;
    opt.maf_min = control.num("maf_min");
    opt.top_k = static_cast<int>(control.integer("top_k"));
    opt.refine_top = control.flag("refine");
    opt.n_threads = threads;
    opt.sig_level = control.num("sig_level");
    opt.fdr_q = control.num("fdr_q");
    return genome_scan(ds, qc.filtered, problem, cov, ds.traits, fit, opt);
  });
  info.n_tested = scan.n_tested;
  info.lambda = scan.lambda;

  timer.run("report", [&] {
    write_scan_results(pipedetail::out_path(control, "scan_results.tsv"), qc.filtered, scan);
    write_top_hits(pipedetail::out_path(control, "top_hits.txt"), qc.filtered, scan);
    manhattan_svg(pipedetail::out_path(control, "manhattan.svg"), qc.filtered, scan,
                  scan.bonferroni_threshold);
    std::vector<double> tested_p;
    for (const auto& row : scan.rows)
      if (row.score.tested) tested_p.push_back(row.score.p);
    qq_plot_svg(pipedetail::out_path(control, "qq.svg"), tested_p, scan.lambda);
    write_qc_report(pipedetail::out_path(control, "qc_report.txt"), snps_in, individuals_in, qc,
                    ds, control.num("min_call_rate"));
    control.write_echo(pipedetail::out_path(control, "control_echo.txt"));
  });
  write_timing_log(pipedetail::out_path(control, "timing.log"), timer.stages());
  return info;
}

inline RunInfo run_batch(Control& control) {
  StageTimer timer;
  RunInfo info;

  timer.run("config", [&] {
    pipedetail::require_keys(control,
                             {"pedigree_file", "genotype_prefix", "trait_file", "traits"});
    std::filesystem::create_directories(control.str("output_dir"));
  });
  const int threads = static_cast<int>(control.integer("threads"));
  if (threads < 1) throw config_error("config: threads must be at least 1");

  auto inputs = timer.run("ingest", [&] { return pipedetail::load_inputs(control); });
  const size_t snps_in = inputs.genotypes.n_snps();
  const size_t individuals_in = inputs.genotypes.n_individuals();

  auto qc = timer.run("qc", [&] {
    return call_rate_filter(inputs.genotypes, control.num("min_call_rate"));
  });
  const Dataset ds = timer.run("join", [&] {
    return build_dataset(std::move(inputs.pedigrees), qc.filtered, inputs.traits);
  });
  info.n_individuals = ds.person_ids.size();
  info.n_snps = qc.filtered.n_snps();

  std::string kinship_label;
  const CovarianceModel cov = timer.run("kinship", [&] {
    return pipedetail::build_covariance(control, ds, qc.filtered, threads, &kinship_label);
  });

  const size_t n_traits = ds.trait_names.size();
  struct TraitOutcome {
    bool ok = false;
    std::string error;
    double lambda = std::numeric_limits<double>::quiet_NaN();
    size_t n_tested = 0;
    bool converged = false;
    ScanSummary scan;
  };
  std::vector<TraitOutcome> outcomes(n_traits);

  timer.run("scan", [&] {
    const auto covariate_names = control.list("covariates");
    const auto interactions = pipedetail::parse_interactions(control);
    ScanOptions opt;
    opt.maf_min = control.num("maf_min");
    opt.top_k = 0;           // aggregate selection happens across traits
    opt.refine_top = false;  // the batch screen stays score-only
    opt.n_threads = 1;       // parallelism is across traits
    opt.sig_level = control.num("sig_level");
    opt.fdr_q = control.num("fdr_q");

    auto work = [&](size_t begin, size_t end) {
      for (size_t t = begin; t < end; ++t) {
        TraitOutcome& res = outcomes[t];
        try {
          const MeanModel mean =
              build_mean_model(ds, covariate_names, interactions, control.list("shared_effects"),
                               /*n_traits=*/1);
          const Eigen::MatrixXd y = ds.traits.col(static_cast<Eigen::Index>(t));
          const VcProblem problem(mean, cov, y);
          const FitResult fit = fit_model(problem, cov, y);
          res.scan = genome_scan(ds, qc.filtered, problem, cov, y, fit, opt);
          res.lambda = res.scan.lambda;
          res.n_tested = res.scan.n_tested;
          res.converged = fit.converged;
          res.ok = true;
        } catch (const std::exception& e) {
          res.error = e.what();
        }
      }
    };
    if (threads == 1 || n_traits <= 1) {
      work(0, n_traits);
    } else {
      std::vector<std::thread> pool;
      const size_t chunk = (n_traits + threads - 1) / threads;
      for (int th = 0; th < threads; ++th) {
        const size_t b = std::min(n_traits, static_cast<size_t>(th) * chunk);
        const size_t e = std::min(n_traits, b + chunk);
        if (b < e) pool.emplace_back(work, b, e);
      }
      for (auto& th : pool) th.join();
    }
  });

  timer.run("report", [&] {
    const double lambda_max = control.num("lambda_max");
    const double hwe_min_p = control.num("hwe_min_p");
    const double maf_min = control.num("maf_min");

    // Union of tested SNPs across traits sets the comparison count.
    std::vector<char> tested_any(qc.filtered.n_snps(), 0);
    size_t traits_ok = 0;
    for (const auto& res : outcomes) {
      if (!res.ok) continue;
      ++traits_ok;
      for (size_t s = 0; s < res.scan.rows.size(); ++s)
        if (res.scan.rows[s].score.tested) tested_any[s] = 1;
    }
    size_t union_tested = 0;
    for (char f : tested_any) union_tested += f;
    const double threshold =
        traits_ok > 0 && union_tested > 0
            ? control.num("sig_level") / (static_cast<double>(traits_ok) *
                                          static_cast<double>(union_tested))
            : 0.0;

    auto hits = open_output(pipedetail::out_path(control, "batch_hits.tsv"));
    hits << "trait\tsnp\tchr\tbp\tmaf_all\thwe_p\tstat\tp\tlambda\n";
    for (size_t t = 0; t < n_traits; ++t) {
      const TraitOutcome& res = outcomes[t];
      if (!res.ok || !(res.lambda < lambda_max)) continue;
      for (size_t s = 0; s < res.scan.rows.size(); ++s) {
        const SnpScanRow& row = res.scan.rows[s];
        if (!row.score.tested || !(row.score.p < threshold)) continue;
        if (!(row.hwe_p > hwe_min_p) || !(row.maf_all > maf_min)) continue;
        const SnpInfo& snp = qc.filtered.snps()[s];
        hits << ds.trait_names[t] << '\t' << snp.name << '\t' << snp.chromosome << '\t'
             << snp.base_pair << '\t' << format_g(row.maf_all, 6) << '\t'
             << format_g(row.hwe_p, 6) << '\t' << format_g(row.score.stat) << '\t'
             << format_g(row.score.p) << '\t' << format_g(res.lambda, 6) << '\n';
      }
    }

    auto per_trait = open_output(pipedetail::out_path(control, "batch_traits.tsv"));
    per_trait << "trait\tstatus\tlambda\tn_tested\tnull_converged\n";
    for (size_t t = 0; t < n_traits; ++t) {
      const TraitOutcome& res = outcomes[t];
      per_trait << ds.trait_names[t] << '\t' << (res.ok ? "ok" : "failed") << '\t'
                << format_g(res.lambda, 6) << '\t' << res.n_tested << '\t'
                << (res.ok ? (res.converged ? "1" : "0") : ".") << '\n';
    }

    // Inflation histogram over successfully scanned traits, fixed 0.02 bins.
    std::vector<double> lambdas;
    for (const auto& res : outcomes)
      if (res.ok && std::isfinite(res.lambda)) lambdas.push_back(res.lambda);
    auto hist = open_output(pipedetail::out_path(control, "lambda_histogram.tsv"));
    hist << "bin_low\tbin_high\tcount\n";
    if (!lambdas.empty()) {
      const double width = 0.02;
      const double lo = std::floor(*std::min_element(lambdas.begin(), lambdas.end()) / width);
      const double hi = std::floor(*std::max_element(lambdas.begin(), lambdas.end()) / width);
      for (double b = lo; b <= hi; b += 1.0) {
        const double low = b * width, high = (b + 1.0) * width;
        size_t count = 0;
        for (double l : lambdas)
          if (l >= low && l < high) ++count;
        hist << format_g(low, 6) << '\t' << format_g(high, 6) << '\t' << count << '\n';
      }
    }

    auto log = open_output(pipedetail::out_path(control, "batch_log.txt"));
    for (size_t t = 0; t < n_traits; ++t)
      if (!outcomes[t].ok)
        log << ds.trait_names[t] << "\t" << outcomes[t].error << "\n";

    write_qc_report(pipedetail::out_path(control, "qc_report.txt"), snps_in, individuals_in, qc,
                    ds, control.num("min_call_rate"));
    control.write_echo(pipedetail::out_path(control, "control_echo.txt"));
  });
  write_timing_log(pipedetail::out_path(control, "timing.log"), timer.stages());

  for (const auto& res : outcomes) (res.ok ? info.traits_done : info.traits_failed)++;
  if (info.traits_done == 0) throw data_error("scan: every trait failed in the batch");
  return info;
}

inline RunInfo run_power(Control& control) {
  StageTimer timer;
  RunInfo info;

  timer.run("config", [&] {
    pipedetail::require_keys(control, {"pedigree_file"});
    std::filesystem::create_directories(control.str("output_dir"));
  });
  const int threads = static_cast<int>(control.integer("threads"));
  if (threads < 1) throw config_error("config: threads must be at least 1");

  const std::vector<Pedigree> pedigrees =
      timer.run("ingest", [&] { return read_pedigree_csv(control.str("pedigree_file")); });

  CovarianceModel cov;
  std::vector<Eigen::MatrixXd> sigma;
  MeanModel mean;
  timer.run("kinship", [&] {
    int n = 0;
    for (const auto& p : pedigrees) n += p.size();
    info.n_individuals = static_cast<size_t>(n);

    const double sa = control.num("power_sigma_a");
    const double sd = control.num("power_sigma_d");
    const double sh = control.num("power_sigma_h");
    const double se = control.num("power_sigma_e");
    if (!(se > 0.0)) throw config_error("power_sigma_e must be positive");

    std::vector<std::pair<std::string, KernelMatrix>> comps;
    std::vector<KernelMatrix> kin;
    for (const auto& p : pedigrees) kin.push_back(theoretical_kinship(p));
    KernelMatrix additive = assemble_global_kernel(kin);
    additive.values *= 2.0;
    comps.emplace_back("additive", std::move(additive));
    sigma.push_back(Eigen::MatrixXd::Constant(1, 1, sa));
    if (sd > 0.0) {
      std::vector<KernelMatrix> dom;
      for (const auto& p : pedigrees) dom.push_back(delta7(p));
      comps.emplace_back("dominance", assemble_global_kernel(dom));
      sigma.push_back(Eigen::MatrixXd::Constant(1, 1, sd));
    }
    if (sh > 0.0) {
      std::vector<std::string> households;
      for (const auto& p : pedigrees)
        for (const auto& m : p.members) households.push_back(m.household);
      KernelMatrix h = household_matrix(households);
      comps.emplace_back("household", std::move(h));
      sigma.push_back(Eigen::MatrixXd::Constant(1, 1, sh));
    }
    comps.emplace_back("environment", identity_kernel(n));
    sigma.push_back(Eigen::MatrixXd::Constant(1, 1, se));
    cov = make_covariance_model(std::move(comps));

    mean.X = Eigen::MatrixXd::Ones(n, 1);
    mean.effect_names = {"intercept"};
    mean.shared = {0};
    mean.n_traits = 1;
  });

  const std::vector<PowerPoint> points = timer.run("simulate", [&] {
    PowerStudyOptions opt;
    opt.replicates = static_cast<int>(control.integer("power_replicates"));
    opt.maf = control.num("power_maf");
    opt.pct_var.clear();
    for (const auto& v : control.list("power_pct_var")) {
      double x;
      if (!parse_double(v, x)) throw config_error("power_pct_var entry is not a number: " + v);
      opt.pct_var.push_back(x);
    }
    opt.alpha = control.has("sim_alpha")
                    ? control.num("sim_alpha")
                    : control.num("sig_level") / control.num("power_tests");
    opt.seed = static_cast<std::uint64_t>(control.integer("seed"));
    opt.n_threads = threads;
    return power_study(pedigrees, mean, cov, sigma, opt);
  });

  timer.run("report", [&] {
    auto out = open_output(pipedetail::out_path(control, "power.tsv"));
    out << "pct_var\tbeta\treplicates\trejections\tpower\tse\n";
    for (const auto& pt : points)
      out << format_g(pt.pct_var, 6) << '\t' << format_g(pt.beta) << '\t' << pt.replicates
          << '\t' << pt.rejections << '\t' << format_g(pt.power, 6) << '\t'
          << format_g(pt.se, 6) << '\n';
    control.write_echo(pipedetail::out_path(control, "control_echo.txt"));
  });
  write_timing_log(pipedetail::out_path(control, "timing.log"), timer.stages());
  return info;
}

inline RunInfo run_kinship_export(Control& control) {
  StageTimer timer;
  RunInfo info;

  timer.run("config", [&] {
    pipedetail::require_keys(control, {"pedigree_file"});
    const std::string mode = to_lower(control.str("kinship"));
    if (mode != "theoretical") pipedetail::require_keys(control, {"genotype_prefix"});
    std::filesystem::create_directories(control.str("output_dir"));
  });
  const int threads = static_cast<int>(control.integer("threads"));
  if (threads < 1) throw config_error("config: threads must be at least 1");
  const std::string mode = to_lower(control.str("kinship"));

  const std::vector<Pedigree> pedigrees =
      timer.run("ingest", [&] { return read_pedigree_csv(control.str("pedigree_file")); });

  timer.run("kinship", [&] {
    if (mode == "theoretical") {
      std::vector<std::string> ids;
      std::vector<KernelMatrix> kin, dom, xkin;
      for (const auto& p : pedigrees) {
        for (const auto& m : p.members) ids.push_back(m.id);
        kin.push_back(theoretical_kinship(p));
        if (control.flag("dominance")) dom.push_back(delta7(p));
        if (control.flag("x_kinship")) xkin.push_back(x_linked_kinship(p));
      }
      info.n_individuals = ids.size();
      write_kernel_tsv(pipedetail::out_path(control, "kinship_matrix.tsv"),
                       assemble_global_kernel(kin), ids);
      if (control.flag("dominance"))
        write_kernel_tsv(pipedetail::out_path(control, "dominance_matrix.tsv"),
                         assemble_global_kernel(dom), ids);
      if (control.flag("x_kinship"))
        write_kernel_tsv(pipedetail::out_path(control, "x_kinship_matrix.tsv"),
                         assemble_global_kernel(xkin), ids);
    } else if (mode == "grm" || mode == "mom") {
      const std::string prefix = control.str("genotype_prefix");
      const GenotypeMatrix genotypes =
          GenotypeMatrix::read_bed(prefix + ".bed", prefix + ".bim", prefix + ".fam");
      const auto qc = call_rate_filter(genotypes, control.num("min_call_rate"));
      info.n_individuals = qc.filtered.n_individuals();
      info.n_snps = qc.filtered.n_snps();
      const KernelMatrix k = mode == "grm" ? grm_kinship(qc.filtered, nullptr, threads)
                                           : mom_kinship(qc.filtered, threads);
      write_kernel_tsv(pipedetail::out_path(control, "kinship_matrix.tsv"), k,
                       qc.filtered.individual_ids());
    } else {
      throw config_error("kinship must be theoretical, grm, or mom");
    }
  });

  timer.run("report",
            [&] { control.write_echo(pipedetail::out_path(control, "control_echo.txt")); });
  write_timing_log(pipedetail::out_path(control, "timing.log"), timer.stages());
  return info;
}

}  // namespace pedscan
