#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "npx/errors.hpp"

namespace npx {

// Missing dosage sentinel. Imputation happens downstream, never here.
inline constexpr double kMissingDosage = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double x) { return std::isnan(x); }

struct SnpRecord {
  std::string snp_id;
  std::string chrom;
  std::int64_t pos = 0;  // 1-based
};

struct GwasRecord {
  std::string snp_id;
  std::string chrom;
  std::int64_t pos = 0;
  double effect_size = 0.0;
};

struct GeneRecord {
  std::string gene_symbol;
  std::string chrom;
  std::int64_t start = 0;
  std::int64_t end = 0;
};

struct PathwayDef {
  std::string pathway_id;
  std::string description;
  std::vector<std::string> gene_symbols;
};

struct GenotypeTable {
  std::vector<std::string> subject_ids;
  std::vector<SnpRecord> snps;
  // subjects x SNPs; entries in {0,1,2} or NaN for missing.
  Eigen::MatrixXd dosages;
};

struct ImagingTable {
  std::vector<std::string> subject_ids;
  std::vector<std::string> roi_labels;
  std::vector<std::string> feature_names;
  // one N_I x d block per subject
  std::vector<Eigen::MatrixXd> features;

  int n_rois() const { return static_cast<int>(roi_labels.size()); }
  int n_features() const { return static_cast<int>(feature_names.size()); }
};

struct LabelTable {
  std::vector<std::string> subject_ids;
  std::vector<int> labels;  // 1 = PAT, 0 = NC
};

GenotypeTable parse_genotypes(const std::string& path);
std::vector<GwasRecord> parse_gwas(const std::string& path);
std::vector<GeneRecord> parse_gene_annotations(const std::string& path);
std::vector<PathwayDef> parse_gmt(const std::string& path,
                                  const std::vector<std::string>& exclusion_list = {});
ImagingTable parse_imaging(const std::string& path);
LabelTable parse_labels(const std::string& path);
std::vector<std::string> parse_exclusions(const std::string& path);

// Canonical writers; write(parse(x)) round-trips bit-exact.
void write_genotypes(const GenotypeTable& t, const std::string& path);
void write_gwas(const std::vector<GwasRecord>& recs, const std::string& path);
void write_gene_annotations(const std::vector<GeneRecord>& recs, const std::string& path);
void write_gmt(const std::vector<PathwayDef>& pathways, const std::string& path);
void write_imaging(const ImagingTable& t, const std::string& path);
void write_labels(const LabelTable& t, const std::string& path);

struct AlignedCohort {
  GenotypeTable genotypes;
  ImagingTable imaging;
  LabelTable labels;
  // subjects present in some tables but not all
  std::vector<std::string> dropped_subjects;
};

// Restrict all three tables to the intersection of subject ids, re-ordered
// to the sorted intersection.
AlignedCohort align_cohort(const GenotypeTable& genotypes, const ImagingTable& imaging,
                           const LabelTable& labels);

}  // namespace npx
