#include "npx/pathway_features.hpp"

#include <cstdio>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

namespace npx {

SnpGeneMap build_snp_gene_map(const std::vector<SnpRecord>& snps,
                              const std::vector<GeneRecord>& genes, int window_kb) {
  if (window_kb < 0) throw ConfigError("window_kb must be >= 0");
  SnpGeneMap map;
  map.window_kb = window_kb;
  map.snp_cols.resize(genes.size());
  const std::int64_t w = static_cast<std::int64_t>(window_kb) * 1000;
  for (std::size_t g = 0; g < genes.size(); ++g) {
    const auto& gene = genes[g];
    for (std::size_t j = 0; j < snps.size(); ++j) {
      const auto& snp = snps[j];
      if (snp.chrom == gene.chrom && snp.pos >= gene.start - w && snp.pos <= gene.end + w)
        map.snp_cols[g].push_back(static_cast<int>(j));
    }
  }
  return map;
}

GenePathwayMap build_gene_pathway_map(const std::vector<PathwayDef>& pathways,
                                      const std::vector<GeneRecord>& genes,
                                      const SnpGeneMap& map, DropReport* report) {
  std::unordered_map<std::string, int> gene_idx;
  for (std::size_t g = 0; g < genes.size(); ++g)
    gene_idx.emplace(genes[g].gene_symbol, static_cast<int>(g));

  GenePathwayMap out;
  for (const auto& p : pathways) {
    std::vector<int> idx;
    for (const auto& sym : p.gene_symbols) {
      auto it = gene_idx.find(sym);
      if (it == gene_idx.end()) continue;  // not annotated
      if (map.snp_cols[it->second].empty()) continue;  // reported via gene_scores
      idx.push_back(it->second);
    }
    if (idx.empty()) {
      if (report) report->pathways.emplace_back(p.pathway_id, "no gene with mapped SNPs");
      continue;
    }
    out.pathway_ids.push_back(p.pathway_id);
    out.gene_idx.push_back(std::move(idx));
  }
  return out;
}

Eigen::VectorXd impute_means(const GenotypeTable& genotypes, const std::vector<int>& train_idx) {
  if (train_idx.empty()) throw ConfigError("impute_means: empty training index set");
  const Eigen::Index n_snps = genotypes.dosages.cols();
  Eigen::VectorXd means = Eigen::VectorXd::Zero(n_snps);
  for (Eigen::Index j = 0; j < n_snps; ++j) {
    double sum = 0.0;
    int cnt = 0;
    for (int s : train_idx) {
      double v = genotypes.dosages(s, j);
      if (!is_missing(v)) {
        sum += v;
        ++cnt;
      }
    }
    means(j) = cnt > 0 ? sum / cnt : 0.0;
  }
  return means;
}

GeneScores gene_scores(const GenotypeTable& genotypes, const std::vector<GwasRecord>& gwas,
                       const std::vector<GeneRecord>& genes, const SnpGeneMap& map,
                       const Eigen::VectorXd& means, DropReport* report) {
  std::unordered_map<std::string, double> beta;
  for (const auto& r : gwas) beta.emplace(r.snp_id, r.effect_size);

  const Eigen::Index n_subj = genotypes.dosages.rows();
  GeneScores out;
  out.scores = Eigen::MatrixXd::Zero(n_subj, static_cast<Eigen::Index>(genes.size()));
  out.kept.resize(genes.size(), false);
  for (std::size_t g = 0; g < genes.size(); ++g) {
    out.gene_symbols.push_back(genes[g].gene_symbol);
    // effective set: mapped SNPs that also carry a GWAS beta, file order
    std::vector<std::pair<int, double>> eff;
    for (int j : map.snp_cols[g]) {
      auto it = beta.find(genotypes.snps[j].snp_id);
      if (it != beta.end()) eff.emplace_back(j, it->second);
    }
    if (eff.empty()) {
      if (report) report->genes.emplace_back(genes[g].gene_symbol, "no GWAS-weighted SNP");
      continue;
    }
    out.kept[g] = true;
    for (Eigen::Index n = 0; n < n_subj; ++n) {
      double acc = 0.0;
      for (auto [j, b] : eff) {
        double dose = genotypes.dosages(n, j);
        if (is_missing(dose)) dose = means(j);
        acc += b * dose;
      }
      out.scores(n, static_cast<Eigen::Index>(g)) = acc;
    }
  }
  return out;
}

PathwayMatrix pathway_scores(const GeneScores& gene_matrix, const GenePathwayMap& gp_map,
                             const std::vector<std::string>& subject_ids, DropReport* report) {
  const Eigen::Index n_subj = gene_matrix.scores.rows();
  PathwayMatrix out;
  out.subject_ids = subject_ids;
  std::vector<std::vector<int>> retained_sets;
  for (std::size_t k = 0; k < gp_map.pathway_ids.size(); ++k) {
    std::vector<int> idx;
    for (int g : gp_map.gene_idx[k])
      if (gene_matrix.kept[g]) idx.push_back(g);
    if (idx.empty()) {
      if (report)
        report->pathways.emplace_back(gp_map.pathway_ids[k], "all genes dropped");
      continue;
    }
    out.pathway_ids.push_back(gp_map.pathway_ids[k]);
    retained_sets.push_back(std::move(idx));
  }
  out.scores = Eigen::MatrixXd::Zero(n_subj, static_cast<Eigen::Index>(retained_sets.size()));
  for (std::size_t k = 0; k < retained_sets.size(); ++k)
    for (Eigen::Index n = 0; n < n_subj; ++n) {
      double acc = 0.0;
      for (int g : retained_sets[k]) acc += gene_matrix.scores(n, g);
      out.scores(n, static_cast<Eigen::Index>(k)) = acc;
    }
  return out;
}

NormStats column_stats(const Eigen::MatrixXd& m, const std::vector<int>& train_idx) {
  if (train_idx.empty()) throw ConfigError("column_stats: empty training index set");
  NormStats st;
  st.mean = Eigen::VectorXd::Zero(m.cols());
  st.std = Eigen::VectorXd::Zero(m.cols());
  const double n = static_cast<double>(train_idx.size());
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    double mu = 0.0;
    for (int s : train_idx) mu += m(s, c);
    mu /= n;
    double var = 0.0;
    for (int s : train_idx) var += (m(s, c) - mu) * (m(s, c) - mu);
    st.mean(c) = mu;
    st.std(c) = std::sqrt(var / n);
  }
  return st;
}

PathwayMatrix normalize_pathways(const PathwayMatrix& matrix, const std::vector<int>& train_idx) {
  PathwayMatrix out = matrix;
  out.stats = column_stats(matrix.scores, train_idx);
  out.zscored = true;
  for (Eigen::Index c = 0; c < out.scores.cols(); ++c) {
    if (out.stats.std(c) < 1e-8) {
      out.scores.col(c).setZero();
    } else {
      out.scores.col(c) =
          (matrix.scores.col(c).array() - out.stats.mean(c)) / out.stats.std(c);
    }
  }
  return out;
}

FeaturePipelineResult build_pathway_matrix(const GenotypeTable& genotypes,
                                           const std::vector<GwasRecord>& gwas,
                                           const std::vector<GeneRecord>& genes,
                                           const std::vector<PathwayDef>& pathways,
                                           int window_kb, const std::vector<int>& train_idx) {
  FeaturePipelineResult res;
  auto sg = build_snp_gene_map(genotypes.snps, genes, window_kb);
  auto gp = build_gene_pathway_map(pathways, genes, sg, &res.drops);
  auto means = impute_means(genotypes, train_idx);
  auto gm = gene_scores(genotypes, gwas, genes, sg, means, &res.drops);
  res.matrix = pathway_scores(gm, gp, genotypes.subject_ids, &res.drops);
  return res;
}

void write_pathway_matrix(const PathwayMatrix& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write: " + path);
  out << "subject_id";
  for (const auto& p : m.pathway_ids) out << '\t' << p;
  out << '\n';
  char buf[40];
  for (std::size_t s = 0; s < m.subject_ids.size(); ++s) {
    out << m.subject_ids[s];
    for (Eigen::Index c = 0; c < m.scores.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", m.scores(static_cast<Eigen::Index>(s), c));
      out << '\t' << buf;
    }
    out << '\n';
  }
}

PathwayMatrix parse_pathway_matrix(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  PathwayMatrix m;
  std::string line;
  long ln = 0;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++ln;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> tok;
    std::size_t start = 0, p;
    while ((p = line.find('\t', start)) != std::string::npos) {
      tok.push_back(line.substr(start, p - start));
      start = p + 1;
    }
    tok.push_back(line.substr(start));
    if (ln == 1) {
      if (tok.empty() || tok[0] != "subject_id")
        throw MalformedLine(path, ln, "expected subject_id header");
      m.pathway_ids.assign(tok.begin() + 1, tok.end());
      continue;
    }
    if (tok.size() != m.pathway_ids.size() + 1)
      throw MalformedLine(path, ln, "wrong field count");
    m.subject_ids.push_back(tok[0]);
    std::vector<double> row(m.pathway_ids.size());
    for (std::size_t c = 0; c < row.size(); ++c) {
      char* end = nullptr;
      row[c] = std::strtod(tok[c + 1].c_str(), &end);
      if (end != tok[c + 1].c_str() + tok[c + 1].size() || !std::isfinite(row[c]))
        throw MalformedValue(path, ln, "bad score '" + tok[c + 1] + "'");
    }
    rows.push_back(std::move(row));
  }
  m.scores.resize(static_cast<Eigen::Index>(rows.size()),
                  static_cast<Eigen::Index>(m.pathway_ids.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < m.pathway_ids.size(); ++c)
      m.scores(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return m;
}

void write_drop_report(const DropReport& r, const std::string& path) {
  nlohmann::ordered_json j;
  j["dropped_genes"] = nlohmann::ordered_json::array();
  for (const auto& [sym, reason] : r.genes)
    j["dropped_genes"].push_back({{"gene", sym}, {"reason", reason}});
  j["dropped_pathways"] = nlohmann::ordered_json::array();
  for (const auto& [id, reason] : r.pathways)
    j["dropped_pathways"].push_back({{"pathway", id}, {"reason", reason}});
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write: " + path);
  out << j.dump(2) << '\n';
}

}  // namespace npx
