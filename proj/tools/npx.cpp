#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "npx/genio.hpp"
#include "npx/interpret.hpp"
#include "npx/model.hpp"
#include "npx/pathway_features.hpp"
#include "npx/run_config.hpp"
#include "npx/synthgen.hpp"
#include "npx/trainer.hpp"

namespace fs = std::filesystem;

namespace {

std::uint64_t resolve_seed(const CLI::Option* flag, std::uint64_t flag_value,
                           std::uint64_t config_value) {
  if (flag && flag->count() > 0) return flag_value;
  if (const char* env = std::getenv("NPX_SEED")) return std::strtoull(env, nullptr, 10);
  return config_value;
}

int cmd_synth(const std::string& spec_path, const std::string& out,
              const CLI::Option* seed_flag, std::uint64_t seed_value) {
  npx::RunConfig cfg =
      spec_path.empty() ? npx::RunConfig{} : npx::RunConfig::from_file(spec_path);
  cfg.synth.seed = resolve_seed(seed_flag, seed_value, cfg.synth.seed);
  cfg.train.seed = cfg.synth.seed;
  cfg.out = out;
  auto cohort = npx::generate(cfg.synth);
  npx::write_cohort(cohort, out);
  cfg.write_resolved((fs::path(out) / "config.resolved").string());
  std::cout << "wrote synthetic cohort (" << cfg.synth.n_subjects << " subjects) to " << out
            << "\n";
  return 0;
}

int cmd_build_features(const std::string& genotypes, const std::string& gwas,
                       const std::string& genes, const std::string& gmt,
                       const std::string& exclude, const std::string& out, int window_kb) {
  auto geno = npx::parse_genotypes(genotypes);
  auto gw = npx::parse_gwas(gwas);
  auto gn = npx::parse_gene_annotations(genes);
  std::vector<std::string> exclusions;
  if (!exclude.empty()) exclusions = npx::parse_exclusions(exclude);
  auto pw = npx::parse_gmt(gmt, exclusions);
  if (pw.empty()) throw npx::ConfigError("no pathways retained");

  std::vector<int> all_idx(geno.subject_ids.size());
  for (std::size_t i = 0; i < all_idx.size(); ++i) all_idx[i] = static_cast<int>(i);
  auto res = npx::build_pathway_matrix(geno, gw, gn, pw, window_kb, all_idx);
  if (res.matrix.pathway_ids.empty()) throw npx::ConfigError("no pathways retained");

  fs::create_directories(out);
  npx::write_pathway_matrix(res.matrix, (fs::path(out) / "pathway_matrix.tsv").string());
  npx::write_drop_report(res.drops, (fs::path(out) / "drop_report.json").string());
  std::cout << "wrote " << res.matrix.pathway_ids.size() << " pathway scores for "
            << res.matrix.subject_ids.size() << " subjects to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const CLI::Option* epochs_flag, int epochs,
              const CLI::Option* seed_flag, std::uint64_t seed, const CLI::Option* jobs_flag,
              int jobs, const std::string& out_override) {
  npx::RunConfig cfg = npx::RunConfig::from_file(config_path);
  if (epochs_flag->count() > 0) cfg.train.epochs = epochs;
  cfg.train.seed = resolve_seed(seed_flag, seed, cfg.train.seed);
  if (jobs_flag->count() > 0) cfg.train.jobs = jobs;
  if (!out_override.empty()) cfg.out = out_override;
  for (const auto& [name, path] :
       {std::pair<const char*, const std::string&>{"genotypes", cfg.genotypes},
        {"gwas", cfg.gwas},
        {"genes", cfg.genes},
        {"gmt", cfg.gmt},
        {"imaging", cfg.imaging},
        {"labels", cfg.labels},
        {"out", cfg.out}})
    if (path.empty()) throw npx::ConfigError(std::string("config is missing '") + name + "'");

  npx::CvInputs inputs;
  inputs.genotypes = npx::parse_genotypes(cfg.genotypes);
  inputs.gwas = npx::parse_gwas(cfg.gwas);
  inputs.genes = npx::parse_gene_annotations(cfg.genes);
  std::vector<std::string> exclusions;
  if (!cfg.exclude.empty()) exclusions = npx::parse_exclusions(cfg.exclude);
  inputs.pathways = npx::parse_gmt(cfg.gmt, exclusions);
  if (inputs.pathways.empty()) throw npx::ConfigError("no pathways retained");
  inputs.imaging = npx::parse_imaging(cfg.imaging);
  inputs.labels = npx::parse_labels(cfg.labels);
  inputs.window_kb = cfg.window_kb;
  inputs.normalize_pathway_scores = cfg.normalize_pathways;
  if (!cfg.delta_auto) inputs.fixed_delta = cfg.model.delta;

  fs::create_directories(cfg.out);
  cfg.write_resolved((fs::path(cfg.out) / "config.resolved").string());
  auto result = npx::run_cv(inputs, cfg.model, cfg.train, cfg.out);
  std::cout << "cross-validation complete; mean AUC = "
            << (result.report.mean.auc ? std::to_string(*result.report.mean.auc) : "n/a")
            << "; outputs in " << cfg.out << "\n";
  return 0;
}

int cmd_interpret(const std::string& attn_dir, const std::string& labels, int k_path,
                  int k_roi, bool svg, const std::string& out) {
  auto group = npx::load_group_attention(attn_dir, labels);
  auto assoc = npx::top_associations(group, k_path, k_roi);
  npx::export_associations(assoc, out, svg);
  std::cout << "top-" << k_path << " pathway intersection size = " << assoc.intersection.size()
            << "; associations written to " << out << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& config_path, bool break_backward) {
  npx::ModelConfig cfg =
      config_path.empty() ? npx::ModelConfig{} : npx::RunConfig::from_file(config_path).model;
  cfg.n_pathways = 6;
  cfg.n_rois = 5;
  cfg.d = 4;
  cfg.dropout_p = 0.0;  // deterministic graph for finite differences
  cfg.validate();

  std::mt19937_64 init_rng(42);
  npx::ModelParams params = npx::ModelParams::init(cfg, init_rng);

  // fixed 4-subject micro-batch
  std::mt19937_64 data_rng(7);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Eigen::VectorXd> p_vecs;
  std::vector<Eigen::MatrixXd> imgs;
  std::vector<int> labels = {1, 0, 1, 0};
  for (int s = 0; s < 4; ++s) {
    Eigen::VectorXd p(cfg.n_pathways);
    for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = gauss(data_rng);
    Eigen::MatrixXd img(cfg.n_rois, cfg.d);
    for (Eigen::Index i = 0; i < img.rows(); ++i)
      for (Eigen::Index j = 0; j < img.cols(); ++j) img(i, j) = gauss(data_rng);
    p_vecs.push_back(p);
    imgs.push_back(img);
  }

  auto build_loss = [&]() {
    std::mt19937_64 rng(123);  // same subject selections every rebuild
    std::vector<npx::ad::Var> logits, attn;
    for (int s = 0; s < 4; ++s) {
      auto fwd = npx::forward_subject(p_vecs[s], imgs[s], params, cfg, true, rng);
      logits.push_back(fwd.logit);
      attn.push_back(fwd.attention);
    }
    auto pair_loss = npx::loss_path_similarity({attn[0], attn[2]}, {attn[1], attn[3]});
    return npx::loss_total(logits, labels, attn, pair_loss, cfg, rng);
  };

  npx::ad::set_break_backward(break_backward);
  auto report = npx::ad::grad_check(build_loss, params.named(), 1e-5, 1e-4);
  npx::ad::set_break_backward(false);

  for (const auto& e : report.entries)
    std::cout << "  " << e.name << ": max rel err " << e.max_rel_err << "\n";
  std::cout << "max relative error = " << report.max_rel_err << " ("
            << (report.passed ? "PASS" : "FAIL") << ")\n";
  return report.passed ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pathway-guided cross-attention imaging-genetics pipeline"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate a synthetic cohort");
  std::string synth_spec, synth_out;
  std::uint64_t synth_seed = 0;
  synth->add_option("--spec", synth_spec, "config file with synthesis keys");
  synth->add_option("--out", synth_out, "output directory")->required();
  auto* synth_seed_flag = synth->add_option("--seed", synth_seed, "RNG seed");

  auto* build = app.add_subcommand("build-features", "SNP -> gene -> pathway scores");
  std::string b_geno, b_gwas, b_genes, b_gmt, b_excl, b_out;
  int b_window = 50;
  build->add_option("--genotypes", b_geno, "genotypes.tsv")->required();
  build->add_option("--gwas", b_gwas, "gwas.tsv")->required();
  build->add_option("--genes", b_genes, "genes.tsv")->required();
  build->add_option("--gmt", b_gmt, "pathways.gmt")->required();
  build->add_option("--exclude", b_excl, "pathway exclusion list");
  build->add_option("--out", b_out, "output directory")->required();
  build->add_option("--window-kb", b_window, "SNP-to-gene window in kilobases");

  auto* train = app.add_subcommand("train", "stratified cross-validated training");
  std::string t_config, t_out;
  int t_epochs = 0, t_jobs = 1;
  std::uint64_t t_seed = 0;
  train->add_option("--config", t_config, "run config file")->required();
  auto* t_epochs_flag = train->add_option("--epochs", t_epochs, "override epoch count");
  auto* t_seed_flag = train->add_option("--seed", t_seed, "override RNG seed");
  auto* t_jobs_flag = train->add_option("--jobs", t_jobs, "parallel folds");
  train->add_option("--out", t_out, "override output directory");

  auto* interp = app.add_subcommand("interpret", "group attention and top associations");
  std::string i_attn, i_labels, i_out = ".";
  int i_kpath = 7, i_kroi = 4;
  bool i_svg = false;
  interp->add_option("--attn-dir", i_attn, "attention dump directory")->required();
  interp->add_option("--labels", i_labels, "labels.csv")->required();
  interp->add_option("--k-path", i_kpath, "top pathways per group");
  interp->add_option("--k-roi", i_kroi, "top ROIs per group");
  interp->add_flag("--svg", i_svg, "also draw a static SVG");
  interp->add_option("--out", i_out, "output directory");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  std::string g_config;
  bool g_break = false;
  gradcheck->add_option("--config", g_config, "run config file");
  gradcheck->add_flag("--break-backward", g_break, "debug: inject a wrong backward rule")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_spec, synth_out, synth_seed_flag, synth_seed);
    if (build->parsed())
      return cmd_build_features(b_geno, b_gwas, b_genes, b_gmt, b_excl, b_out, b_window);
    if (train->parsed())
      return cmd_train(t_config, t_epochs_flag, t_epochs, t_seed_flag, t_seed, t_jobs_flag,
                       t_jobs, t_out);
    if (interp->parsed()) return cmd_interpret(i_attn, i_labels, i_kpath, i_kroi, i_svg, i_out);
    if (gradcheck->parsed()) return cmd_gradcheck(g_config, g_break);
  } catch (const npx::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const npx::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
