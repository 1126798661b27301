#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "npx/genio.hpp"
#include "npx/interpret.hpp"

namespace npx {

struct SynthSpec {
  int n_subjects = 200;
  int n_snps = 2000;
  int n_genes = 200;
  int n_pathways = 40;
  int n_rois = 30;
  int d = 4;
  int n_causal_pathways = 3;
  int n_causal_rois = 4;
  double effect_strength = 1.0;
  double noise_sd = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GroundTruth {
  std::vector<std::string> causal_pathways;
  std::vector<std::string> causal_rois;
  std::vector<double> liability;  // per subject
};

struct SynthCohort {
  GenotypeTable genotypes;
  std::vector<GwasRecord> gwas;
  std::vector<GeneRecord> genes;
  std::vector<PathwayDef> pathways;
  ImagingTable imaging;
  LabelTable labels;
  GroundTruth truth;
};

// Planted-signal cohort: disjoint gene windows on one synthetic chromosome,
// GWAS betas on every SNP but a liability driven only by causal-pathway
// dosages, liability-shifted causal ROI features, median-split labels.
SynthCohort generate(const SynthSpec& spec);

// Writes the seven genio-format files plus ground_truth.json into out_dir.
void write_cohort(const SynthCohort& cohort, const std::string& out_dir);

GroundTruth parse_ground_truth(const std::string& path);

struct RecoveryScore {
  double pathways = 0.0;  // |top ∩ causal| / |causal|
  double rois = 0.0;
};

RecoveryScore recovery_score(const AssociationSet& assoc, const GroundTruth& truth);

}  // namespace npx
