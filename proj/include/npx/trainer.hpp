#pragma once

#include <Eigen/Dense>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "npx/genio.hpp"
#include "npx/model.hpp"
#include "npx/pathway_features.hpp"

namespace npx {

struct TrainConfig {
  double lr = 5e-5;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int batch_size = 128;
  int epochs = 100;
  int folds = 10;
  std::uint64_t seed = 0;
  int jobs = 1;
  // variant: sample the similarity pairs inside every batch instead of one
  // dedicated pass per epoch
  bool pair_per_batch = false;

  void validate() const;
};

struct AdamState {
  std::vector<Eigen::MatrixXd> m;
  std::vector<Eigen::MatrixXd> v;
};

// Decoupled weight decay applied separately from the bias-corrected Adam
// update; epsilon 1e-8. t is the 1-based step index.
void adamw_step(std::vector<std::pair<std::string, ad::Var>>& params, AdamState& state,
                const TrainConfig& cfg, long t);

struct FoldSplit {
  std::vector<int> train_idx;
  std::vector<int> test_idx;
};

struct CohortSplit {
  std::vector<FoldSplit> folds;
};

CohortSplit stratified_kfold(const std::vector<int>& labels, int k, std::uint64_t seed);

struct ImagingNormStats {
  Eigen::MatrixXd mean;  // N_I x d
  Eigen::MatrixXd std;   // population
};

struct NormalizedImaging {
  std::vector<Eigen::MatrixXd> features;  // per subject, N_I x d
  ImagingNormStats stats;
};

// Per (ROI, feature) z-score with training-subject statistics; zero-variance
// cells go to zero; stats reused verbatim for held-out subjects.
NormalizedImaging normalize_imaging(const ImagingTable& imaging,
                                    const std::vector<int>& train_idx);

struct Metrics {
  std::optional<double> accuracy;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> auc;
};

struct MetricsReport {
  std::vector<Metrics> per_fold;
  Metrics mean;
  Metrics stddev;
};

// Mann-Whitney rank AUC; ties contribute 1/2.
std::optional<double> rank_auc(const std::vector<double>& scores,
                               const std::vector<int>& labels);

Metrics compute_metrics(const std::vector<double>& scores, const std::vector<int>& labels,
                        double threshold = 0.5);

struct EpochRecord {
  int epoch = 0;
  double total = 0.0;
  double bce = 0.0;
  double sparsity = 0.0;   // raw, before lambda_sp
  double path_sim = 0.0;   // raw, before lambda_path
};

struct FoldData {
  Eigen::MatrixXd pathway_scores;          // subjects x N_P, already normalized
  std::vector<Eigen::MatrixXd> imaging;    // per subject, already normalized
  std::vector<int> labels;
};

struct TrainedFold {
  ModelParams params;
  std::vector<EpochRecord> history;
};

TrainedFold train_fold(const FoldData& train_data, const ModelConfig& cfg,
                       const TrainConfig& tc, std::uint64_t fold_seed);

struct EvalResult {
  Metrics metrics;
  std::vector<double> scores;                  // sigmoid(logit) per subject
  std::vector<Eigen::MatrixXd> attention;      // per subject, N_P x N_I
};

EvalResult evaluate(ModelParams& params, const FoldData& test_data, const ModelConfig& cfg,
                    double threshold = 0.5);

struct CvInputs {
  GenotypeTable genotypes;
  std::vector<GwasRecord> gwas;
  std::vector<GeneRecord> genes;
  std::vector<PathwayDef> pathways;
  ImagingTable imaging;
  LabelTable labels;
  int window_kb = 50;
  bool normalize_pathway_scores = true;
  // when unset, delta is recomputed per fold as the NC fraction of the
  // training subjects
  std::optional<double> fixed_delta;
};

struct CvResult {
  MetricsReport report;
  std::vector<std::string> pathway_ids;
  std::vector<std::string> roi_labels;
  // test-fold attention per subject, aligned with subject_ids/labels
  std::vector<std::string> subject_ids;
  std::vector<int> labels;
  std::vector<Eigen::MatrixXd> attention;
};

// Trains each fold independently with fold-local normalization and
// imputation, then persists metrics.json, history.csv, per-fold checkpoints
// and per-test-subject attention matrices under out_dir.
CvResult run_cv(const CvInputs& inputs, ModelConfig cfg, const TrainConfig& tc,
                const std::string& out_dir);

void write_metrics_json(const MetricsReport& report, const std::string& path);

}  // namespace npx
