#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "npx/genio.hpp"

namespace npx {

// Per gene i, the SNP columns whose position falls inside the gene body
// extended by +/- window_kb kilobases on the same chromosome. Sets may
// overlap across genes.
struct SnpGeneMap {
  int window_kb = 50;
  std::vector<std::vector<int>> snp_cols;  // one entry per gene, file order
};

// Per pathway k, the gene indices it aggregates. Only genes with at least
// one mapped SNP are retained; pathways left empty are removed.
struct GenePathwayMap {
  std::vector<std::string> pathway_ids;
  std::vector<std::vector<int>> gene_idx;  // indices into the gene list
};

struct NormStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;  // population
};

struct PathwayMatrix {
  std::vector<std::string> subject_ids;
  std::vector<std::string> pathway_ids;
  Eigen::MatrixXd scores;  // subjects x N_P
  bool zscored = false;
  NormStats stats;  // valid when zscored
};

struct DropReport {
  std::vector<std::pair<std::string, std::string>> genes;     // (symbol, reason)
  std::vector<std::pair<std::string, std::string>> pathways;  // (id, reason)
};

struct GeneScores {
  std::vector<std::string> gene_symbols;  // all genes, file order
  std::vector<bool> kept;                 // false for dropped genes
  Eigen::MatrixXd scores;                 // subjects x genes; dropped columns are zero
};

SnpGeneMap build_snp_gene_map(const std::vector<SnpRecord>& snps,
                              const std::vector<GeneRecord>& genes, int window_kb);

// Genes with at least one mapped SNP, keyed by symbol against the GMT
// definitions. Pathways whose gene set vanishes are dropped and reported.
GenePathwayMap build_gene_pathway_map(const std::vector<PathwayDef>& pathways,
                                      const std::vector<GeneRecord>& genes,
                                      const SnpGeneMap& map, DropReport* report = nullptr);

// Per-SNP mean dosage over the given (training) subjects, ignoring missing
// entries; all-missing columns get mean 0.
Eigen::VectorXd impute_means(const GenotypeTable& genotypes, const std::vector<int>& train_idx);

// g[n][i] = sum_{j in Omega_i with a GWAS beta} beta_j * dose(n, j), with
// missing dosages replaced by impute_means[j]. Genes whose effective set is
// empty are dropped and reported.
GeneScores gene_scores(const GenotypeTable& genotypes, const std::vector<GwasRecord>& gwas,
                       const std::vector<GeneRecord>& genes, const SnpGeneMap& map,
                       const Eigen::VectorXd& impute_means, DropReport* report = nullptr);

// p[n][k] = sum_{l in Gamma_k} g[n][l], restricted to kept genes; pathways
// emptied by gene drops are removed and reported.
PathwayMatrix pathway_scores(const GeneScores& gene_matrix, const GenePathwayMap& gp_map,
                             const std::vector<std::string>& subject_ids,
                             DropReport* report = nullptr);

NormStats column_stats(const Eigen::MatrixXd& m, const std::vector<int>& train_idx);

// Z-score every column with training-subject statistics; columns with
// std < 1e-8 are set to zero. Stats are stored on the returned matrix for
// reuse on held-out subjects.
PathwayMatrix normalize_pathways(const PathwayMatrix& matrix, const std::vector<int>& train_idx);

// One-call composition used by the CLI and the trainer.
struct FeaturePipelineResult {
  PathwayMatrix matrix;
  DropReport drops;
};
FeaturePipelineResult build_pathway_matrix(const GenotypeTable& genotypes,
                                           const std::vector<GwasRecord>& gwas,
                                           const std::vector<GeneRecord>& genes,
                                           const std::vector<PathwayDef>& pathways,
                                           int window_kb, const std::vector<int>& train_idx);

void write_pathway_matrix(const PathwayMatrix& m, const std::string& path);
PathwayMatrix parse_pathway_matrix(const std::string& path);
void write_drop_report(const DropReport& r, const std::string& path);

}  // namespace npx
