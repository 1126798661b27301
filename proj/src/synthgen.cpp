#include "npx/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_set>

#include <json.hpp>

namespace npx {

namespace fs = std::filesystem;

namespace {

constexpr std::int64_t kGeneLength = 10000;
constexpr std::int64_t kWindowBp = 50000;
// disjoint +/-50 KB windows by construction
constexpr std::int64_t kGeneStride = kGeneLength + 2 * kWindowBp + 1000;
constexpr std::int64_t kChromosomeLength = 2000000000;

std::string padded(const std::string& prefix, int i, int width) {
  std::string num = std::to_string(i);
  if (static_cast<int>(num.size()) < width)
    num.insert(0, static_cast<std::size_t>(width) - num.size(), '0');
  return prefix + num;
}

}  // namespace

void SynthSpec::validate() const {
  if (n_subjects < 4) throw ConfigError("n_subjects must be >= 4");
  if (n_snps < 1 || n_genes < 1 || n_pathways < 1 || n_rois < 1 || d < 1)
    throw ConfigError("synth counts must be >= 1");
  if (n_causal_pathways < 0 || n_causal_pathways > n_pathways)
    throw ConfigError("n_causal_pathways out of range");
  if (n_causal_rois < 0 || n_causal_rois > n_rois)
    throw ConfigError("n_causal_rois out of range");
  if (effect_strength < 0.0) throw ConfigError("effect_strength must be >= 0");
  if (!(noise_sd > 0.0)) throw ConfigError("noise_sd must be positive");
  if (1 + static_cast<std::int64_t>(n_genes) * kGeneStride + kWindowBp > kChromosomeLength)
    throw ConfigError("genes overflow the synthetic chromosome");
}

SynthCohort generate(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  SynthCohort c;

  for (int s = 0; s < spec.n_subjects; ++s)
    c.labels.subject_ids.push_back(padded("S", s + 1, 4));
  c.genotypes.subject_ids = c.labels.subject_ids;
  c.imaging.subject_ids = c.labels.subject_ids;

  // genes tiled on one chromosome, windows disjoint
  for (int g = 0; g < spec.n_genes; ++g) {
    GeneRecord rec;
    rec.gene_symbol = padded("GENE", g + 1, 4);
    rec.chrom = "1";
    rec.start = 1 + static_cast<std::int64_t>(g) * kGeneStride;
    rec.end = rec.start + kGeneLength - 1;
    c.genes.push_back(rec);
  }

  // one pathway per gene, round-robin partition
  std::vector<std::vector<std::string>> pathway_genes(spec.n_pathways);
  for (int g = 0; g < spec.n_genes; ++g)
    pathway_genes[g % spec.n_pathways].push_back(c.genes[g].gene_symbol);
  for (int k = 0; k < spec.n_pathways; ++k) {
    if (pathway_genes[k].empty()) continue;
    PathwayDef p;
    p.pathway_id = padded("PW", k + 1, 3);
    p.description = "synthetic pathway " + std::to_string(k + 1);
    p.gene_symbols = pathway_genes[k];
    c.pathways.push_back(std::move(p));
  }

  for (int r = 0; r < spec.n_rois; ++r)
    c.imaging.roi_labels.push_back(padded("ROI", r + 1, 3));
  for (int j = 0; j < spec.d; ++j)
    c.imaging.feature_names.push_back("feat_" + std::to_string(j + 1));

  // causal pathway / ROI selection
  std::vector<int> path_order(spec.n_pathways), roi_order(spec.n_rois);
  std::iota(path_order.begin(), path_order.end(), 0);
  std::iota(roi_order.begin(), roi_order.end(), 0);
  std::shuffle(path_order.begin(), path_order.end(), rng);
  std::shuffle(roi_order.begin(), roi_order.end(), rng);
  std::unordered_set<int> causal_path(path_order.begin(),
                                      path_order.begin() + spec.n_causal_pathways);
  std::unordered_set<int> causal_roi(roi_order.begin(),
                                     roi_order.begin() + spec.n_causal_rois);
  for (int k : path_order)
    if (causal_path.count(k)) c.truth.causal_pathways.push_back(padded("PW", k + 1, 3));
  for (int r : roi_order)
    if (causal_roi.count(r)) c.truth.causal_rois.push_back(padded("ROI", r + 1, 3));
  std::sort(c.truth.causal_pathways.begin(), c.truth.causal_pathways.end());
  std::sort(c.truth.causal_rois.begin(), c.truth.causal_rois.end());

  // genotypes: SNPs dealt round-robin across gene bodies
  std::vector<int> snp_gene(spec.n_snps);
  for (int j = 0; j < spec.n_snps; ++j) {
    int g = j % spec.n_genes;
    snp_gene[j] = g;
    SnpRecord snp;
    snp.snp_id = "rs" + std::to_string(j + 1);
    snp.chrom = "1";
    snp.pos = c.genes[g].start + (static_cast<std::int64_t>(j) / spec.n_genes) % kGeneLength;
    c.genotypes.snps.push_back(std::move(snp));
  }
  std::uniform_real_distribution<double> maf_dist(0.05, 0.5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  c.genotypes.dosages.resize(spec.n_subjects, spec.n_snps);
  for (int j = 0; j < spec.n_snps; ++j) {
    const double maf = maf_dist(rng);
    for (int s = 0; s < spec.n_subjects; ++s) {
      int dose = (unit(rng) < maf) + (unit(rng) < maf);
      c.genotypes.dosages(s, j) = static_cast<double>(dose);
    }
  }

  // every SNP gets a beta; only causal-pathway SNPs feed the liability, so
  // pathway columns are statistically identical until the labels come in
  std::uniform_real_distribution<double> beta_dist(0.2, 1.0);
  std::vector<double> beta(spec.n_snps, 0.0);
  std::vector<bool> causal_snp(spec.n_snps, false);
  for (int j = 0; j < spec.n_snps; ++j) {
    const int pathway = snp_gene[j] % spec.n_pathways;
    beta[j] = beta_dist(rng);
    causal_snp[j] = causal_path.count(pathway) > 0;
    GwasRecord r;
    r.snp_id = c.genotypes.snps[j].snp_id;
    r.chrom = "1";
    r.pos = c.genotypes.snps[j].pos;
    r.effect_size = beta[j];
    c.gwas.push_back(std::move(r));
  }

  // liability from the standardized causal pathway sum
  Eigen::VectorXd causal_sum = Eigen::VectorXd::Zero(spec.n_subjects);
  for (int j = 0; j < spec.n_snps; ++j)
    if (causal_snp[j])
      causal_sum += beta[j] * c.genotypes.dosages.col(j);
  const double mu = causal_sum.mean();
  const double sd = std::sqrt((causal_sum.array() - mu).square().mean());
  Eigen::VectorXd z = Eigen::VectorXd::Zero(spec.n_subjects);
  if (sd > 1e-12) z = ((causal_sum.array() - mu) / sd).matrix();

  std::normal_distribution<double> noise(0.0, spec.noise_sd);
  c.truth.liability.resize(spec.n_subjects);
  for (int s = 0; s < spec.n_subjects; ++s)
    c.truth.liability[s] = spec.effect_strength * z(s) + noise(rng);

  // median-split labels
  std::vector<double> sorted = c.truth.liability;
  std::sort(sorted.begin(), sorted.end());
  const int n = spec.n_subjects;
  const double median =
      n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  for (int s = 0; s < n; ++s) c.labels.labels.push_back(c.truth.liability[s] > median);

  // imaging: unit noise everywhere, causal ROIs shifted by the liability
  std::normal_distribution<double> feat_noise(0.0, 1.0);
  for (int s = 0; s < n; ++s) {
    Eigen::MatrixXd block(spec.n_rois, spec.d);
    for (int r = 0; r < spec.n_rois; ++r)
      for (int j = 0; j < spec.d; ++j) {
        block(r, j) = feat_noise(rng);
        if (causal_roi.count(r)) block(r, j) += spec.effect_strength * c.truth.liability[s];
      }
    c.imaging.features.push_back(std::move(block));
  }
  return c;
}

void write_cohort(const SynthCohort& c, const std::string& out_dir) {
  fs::create_directories(out_dir);
  write_genotypes(c.genotypes, (fs::path(out_dir) / "genotypes.tsv").string());
  write_gwas(c.gwas, (fs::path(out_dir) / "gwas.tsv").string());
  write_gene_annotations(c.genes, (fs::path(out_dir) / "genes.tsv").string());
  write_gmt(c.pathways, (fs::path(out_dir) / "pathways.gmt").string());
  write_imaging(c.imaging, (fs::path(out_dir) / "imaging.csv").string());
  write_labels(c.labels, (fs::path(out_dir) / "labels.csv").string());
  {
    std::ofstream out((fs::path(out_dir) / "exclusions.txt").string(), std::ios::binary);
    if (!out) throw IoError("cannot write exclusions.txt");
  }
  nlohmann::ordered_json j;
  j["causal_pathways"] = c.truth.causal_pathways;
  j["causal_rois"] = c.truth.causal_rois;
  j["liability"] = c.truth.liability;
  std::ofstream out((fs::path(out_dir) / "ground_truth.json").string(), std::ios::binary);
  if (!out) throw IoError("cannot write ground_truth.json");
  out << j.dump(2) << '\n';
}

GroundTruth parse_ground_truth(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json j;
  in >> j;
  GroundTruth t;
  t.causal_pathways = j.at("causal_pathways").get<std::vector<std::string>>();
  t.causal_rois = j.at("causal_rois").get<std::vector<std::string>>();
  t.liability = j.at("liability").get<std::vector<double>>();
  return t;
}

RecoveryScore recovery_score(const AssociationSet& assoc, const GroundTruth& truth) {
  if (truth.causal_pathways.empty() && truth.causal_rois.empty())
    throw ConfigError("recovery_score: empty ground truth");
  RecoveryScore score;
  if (!truth.causal_pathways.empty()) {
    int hit = 0;
    for (const auto& p : truth.causal_pathways)
      hit += std::find(assoc.intersection.begin(), assoc.intersection.end(), p) !=
             assoc.intersection.end();
    score.pathways = static_cast<double>(hit) /
                     static_cast<double>(truth.causal_pathways.size());
  }
  if (!truth.causal_rois.empty()) {
    std::unordered_set<std::string> top(assoc.top_rois_pat.begin(),
                                        assoc.top_rois_pat.end());
    top.insert(assoc.top_rois_nc.begin(), assoc.top_rois_nc.end());
    int hit = 0;
    for (const auto& r : truth.causal_rois) hit += top.count(r) > 0;
    score.rois =
        static_cast<double>(hit) / static_cast<double>(truth.causal_rois.size());
  }
  return score;
}

}  // namespace npx
